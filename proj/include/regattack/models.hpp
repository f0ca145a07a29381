#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <memory>
#include <string>
#include <vector>

#include "regattack/common.hpp"

namespace regattack::models {

/// Training knobs for the MLP. Only validation_fraction comes from the paper
/// protocol; the rest are conventional defaults, materialized into every
/// config snapshot.
struct TrainConfig {
    double learning_rate = 1e-3;
    int max_epochs = 500;
    int patience = 20;
    int batch_size = 32;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// A trained victim model: scalar prediction plus the exact gradient of the
/// prediction with respect to the input. Immutable after construction and
/// safe to share across attack workers.
class RegressionModel {
public:
    virtual ~RegressionModel() = default;
    virtual double predict(const Eigen::VectorXd& x) const = 0;
    virtual Eigen::VectorXd input_gradient(const Eigen::VectorXd& x) const = 0;
    virtual int input_dim() const = 0;
    virtual std::string kind() const = 0;
    virtual nlohmann::json to_json() const = 0;

    /// Predictions for each row of X.
    Eigen::VectorXd predict_rows(const Eigen::MatrixXd& X) const;
};

/// Closed-form ridge regression with an unpenalized intercept.
class RidgeModel final : public RegressionModel {
public:
    Eigen::VectorXd weights;
    double intercept = 0.0;
    double ridge_lambda = 0.0;

    double predict(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd input_gradient(const Eigen::VectorXd& x) const override;
    int input_dim() const override { return static_cast<int>(weights.size()); }
    std::string kind() const override { return "ridge"; }
    nlohmann::json to_json() const override;
    static RidgeModel from_json(const nlohmann::json& j);
};

struct TrainMeta {
    std::uint64_t seed = 0;
    int epochs_run = 0;
    int best_epoch = 0;                   // epoch whose weights were restored
    std::vector<double> val_rmse_history;  // one entry per executed epoch
};

/// Fully connected network with ReLU hidden layers and a linear scalar
/// output. layer_weights[l] maps layer input to layer output (out x in).
class MlpModel final : public RegressionModel {
public:
    std::vector<Eigen::MatrixXd> layer_weights;
    std::vector<Eigen::VectorXd> layer_biases;
    TrainMeta train_meta;

    double predict(const Eigen::VectorXd& x) const override;
    Eigen::VectorXd input_gradient(const Eigen::VectorXd& x) const override;
    int input_dim() const override;
    std::string kind() const override { return "mlp"; }
    nlohmann::json to_json() const override;
    static MlpModel from_json(const nlohmann::json& j);

    /// Forward pass for a batch (rows = samples).
    Eigen::VectorXd forward_rows(const Eigen::MatrixXd& X) const;
};

/// Closed-form minimizer of ||Xw + b*1 - y||^2 + lambda*||w||^2 with the
/// intercept unpenalized. lambda = 0 requires a nonsingular system.
RidgeModel train_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda);

/// Adam on RMSE loss with early stopping on a held-out validation fraction;
/// best-validation weights are restored. Deterministic given cfg.seed.
MlpModel train_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TrainConfig& cfg,
                   const std::vector<int>& hidden_sizes = {50, 50});

std::unique_ptr<RegressionModel> model_from_json(const nlohmann::json& j);
void save_model(const RegressionModel& model, const std::string& path);
std::unique_ptr<RegressionModel> load_model(const std::string& path);

}  // namespace regattack::models
