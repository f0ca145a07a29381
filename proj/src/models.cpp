#include "regattack/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace regattack::models {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    // Row-major flat array plus dimensions.
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
    return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto flat = j.at("data").get<std::vector<double>>();
    check_input(static_cast<Eigen::Index>(flat.size()) == rows * cols,
                "model json: matrix size mismatch");
    Eigen::MatrixXd m(rows, cols);
    std::size_t p = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = flat[p++];
    return m;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto flat = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

}  // namespace

void TrainConfig::validate() const {
    check_input(learning_rate > 0.0, "train config: learning_rate must be positive");
    check_input(max_epochs >= 1, "train config: max_epochs must be >= 1");
    check_input(patience >= 1, "train config: patience must be >= 1");
    check_input(batch_size >= 1, "train config: batch_size must be >= 1");
    check_input(validation_fraction > 0.0 && validation_fraction < 1.0,
                "train config: validation_fraction must be in (0,1)");
}

nlohmann::json TrainConfig::to_json() const {
    return nlohmann::json{{"learning_rate", learning_rate}, {"max_epochs", max_epochs},
                          {"patience", patience},           {"batch_size", batch_size},
                          {"validation_fraction", validation_fraction}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.validation_fraction = j.at("validation_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

Eigen::VectorXd RegressionModel::predict_rows(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict(X.row(i).transpose());
    return out;
}

double RidgeModel::predict(const Eigen::VectorXd& x) const {
    check_input(x.size() == weights.size(), "ridge predict: dimension mismatch");
    return weights.dot(x) + intercept;
}

Eigen::VectorXd RidgeModel::input_gradient(const Eigen::VectorXd& x) const {
    check_input(x.size() == weights.size(), "ridge gradient: dimension mismatch");
    return weights;
}

nlohmann::json RidgeModel::to_json() const {
    return nlohmann::json{{"kind", "ridge"},
                          {"input_dim", weights.size()},
                          {"weights", vector_to_json(weights)},
                          {"intercept", intercept},
                          {"ridge_lambda", ridge_lambda}};
}

RidgeModel RidgeModel::from_json(const nlohmann::json& j) {
    check_input(j.at("kind") == "ridge", "model json: expected kind 'ridge'");
    RidgeModel m;
    m.weights = vector_from_json(j.at("weights"));
    m.intercept = j.at("intercept").get<double>();
    m.ridge_lambda = j.at("ridge_lambda").get<double>();
    check_input(j.at("input_dim").get<Eigen::Index>() == m.weights.size(),
                "model json: input_dim does not match weights");
    return m;
}

int MlpModel::input_dim() const {
    check_input(!layer_weights.empty(), "mlp: no layers");
    return static_cast<int>(layer_weights.front().cols());
}

double MlpModel::predict(const Eigen::VectorXd& x) const {
    check_input(!layer_weights.empty(), "mlp: no layers");
    check_input(x.size() == layer_weights.front().cols(), "mlp predict: dimension mismatch");
    Eigen::VectorXd a = x;
    for (std::size_t l = 0; l < layer_weights.size(); ++l) {
        Eigen::VectorXd z = layer_weights[l] * a + layer_biases[l];
        if (l + 1 < layer_weights.size()) z = z.cwiseMax(0.0);  // ReLU on hidden layers
        a = std::move(z);
    }
    check_input(a.size() == 1, "mlp: output layer must be scalar");
    return a(0);
}

Eigen::VectorXd MlpModel::forward_rows(const Eigen::MatrixXd& X) const {
    check_input(X.cols() == layer_weights.front().cols(), "mlp forward: dimension mismatch");
    Eigen::MatrixXd a = X;
    for (std::size_t l = 0; l < layer_weights.size(); ++l) {
        Eigen::MatrixXd z = (a * layer_weights[l].transpose()).rowwise() +
                            layer_biases[l].transpose();
        if (l + 1 < layer_weights.size()) z = z.cwiseMax(0.0);
        a = std::move(z);
    }
    return a.col(0);
}

Eigen::VectorXd MlpModel::input_gradient(const Eigen::VectorXd& x) const {
    check_input(x.size() == layer_weights.front().cols(), "mlp gradient: dimension mismatch");
    // Forward, keeping pre-activations.
    std::vector<Eigen::VectorXd> zs;
    Eigen::VectorXd a = x;
    for (std::size_t l = 0; l < layer_weights.size(); ++l) {
        Eigen::VectorXd z = layer_weights[l] * a + layer_biases[l];
        zs.push_back(z);
        if (l + 1 < layer_weights.size()) z = z.cwiseMax(0.0);
        a = std::move(z);
    }
    // Reverse pass: d starts as d(output)/d(output) = 1.
    Eigen::VectorXd d = Eigen::VectorXd::Ones(1);
    for (std::size_t l = layer_weights.size(); l-- > 0;) {
        Eigen::VectorXd upstream = layer_weights[l].transpose() * d;
        if (l > 0) {
            const Eigen::VectorXd& z = zs[l - 1];
            d = upstream;  // becomes gradient wrt activation of layer l-1
            for (Eigen::Index i = 0; i < d.size(); ++i)
                if (z(i) <= 0.0) d(i) = 0.0;
        } else {
            return upstream;
        }
    }
    return d;  // unreachable for non-empty networks
}

nlohmann::json MlpModel::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < layer_weights.size(); ++l)
        layers.push_back(nlohmann::json{{"weights", matrix_to_json(layer_weights[l])},
                                        {"biases", vector_to_json(layer_biases[l])}});
    return nlohmann::json{{"kind", "mlp"},
                          {"input_dim", layer_weights.front().cols()},
                          {"activation", "relu"},
                          {"layers", layers},
                          {"train_meta",
                           {{"seed", train_meta.seed},
                            {"epochs_run", train_meta.epochs_run},
                            {"best_epoch", train_meta.best_epoch},
                            {"val_rmse_history", train_meta.val_rmse_history}}}};
}

MlpModel MlpModel::from_json(const nlohmann::json& j) {
    check_input(j.at("kind") == "mlp", "model json: expected kind 'mlp'");
    check_input(j.at("activation") == "relu", "model json: unsupported activation");
    MlpModel m;
    for (const auto& layer : j.at("layers")) {
        m.layer_weights.push_back(matrix_from_json(layer.at("weights")));
        m.layer_biases.push_back(vector_from_json(layer.at("biases")));
    }
    check_input(!m.layer_weights.empty(), "model json: mlp has no layers");
    const auto& meta = j.at("train_meta");
    m.train_meta.seed = meta.at("seed").get<std::uint64_t>();
    m.train_meta.epochs_run = meta.at("epochs_run").get<int>();
    m.train_meta.best_epoch = meta.at("best_epoch").get<int>();
    m.train_meta.val_rmse_history = meta.at("val_rmse_history").get<std::vector<double>>();
    return m;
}

RidgeModel train_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda) {
    const auto n = X.rows();
    const auto k = X.cols();
    check_input(n >= 1 && k >= 1, "train_ridge: need n >= 1 and k >= 1");
    check_input(y.size() == n, "train_ridge: X and y row count mismatch");
    check_input(lambda >= 0.0, "train_ridge: lambda must be >= 0");

    // Unpenalized intercept: center, solve for w, recover b.
    const Eigen::RowVectorXd x_mean = X.colwise().mean();
    const double y_mean = y.mean();
    const Eigen::MatrixXd Xc = X.rowwise() - x_mean;
    const Eigen::VectorXd yc = y.array() - y_mean;

    Eigen::MatrixXd A = Xc.transpose() * Xc;
    A.diagonal().array() += lambda;

    if (lambda == 0.0) {
        const Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
        if (!lu.isInvertible())
            throw NumericError("train_ridge: singular normal equations with lambda = 0");
    }

    RidgeModel m;
    m.ridge_lambda = lambda;
    m.weights = A.ldlt().solve(Xc.transpose() * yc);
    m.intercept = y_mean - x_mean * m.weights;
    return m;
}

namespace {

struct AdamState {
    std::vector<Eigen::MatrixXd> mW, vW;
    std::vector<Eigen::VectorXd> mb, vb;
    long step = 0;
};

template <typename Mat>
void adam_update(Mat& param, Mat& m, Mat& v, const Mat& grad, double lr, long t) {
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad.array().square().matrix();
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
    param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + kAdamEps);
}

}  // namespace

MlpModel train_mlp(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const TrainConfig& cfg,
                   const std::vector<int>& hidden_sizes) {
    cfg.validate();
    const auto n = X.rows();
    const auto k = X.cols();
    check_input(n >= 2, "train_mlp: need at least 2 samples for a validation split");
    check_input(y.size() == n, "train_mlp: X and y row count mismatch");
    check_input(!hidden_sizes.empty(), "train_mlp: need at least one hidden layer");

    Rng rng(cfg.seed);

    // Validation split.
    auto n_val = static_cast<Eigen::Index>(std::lround(cfg.validation_fraction * static_cast<double>(n)));
    n_val = std::clamp<Eigen::Index>(n_val, 1, n - 1);
    const std::vector<int> perm = shuffled_indices(static_cast<int>(n), rng);
    std::vector<int> val_rows(perm.begin(), perm.begin() + n_val);
    std::vector<int> train_rows(perm.begin() + n_val, perm.end());

    auto gather = [&X, &y](const std::vector<int>& rows, Eigen::MatrixXd& Xo, Eigen::VectorXd& yo) {
        Xo.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
        yo.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            Xo.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
            yo(static_cast<Eigen::Index>(i)) = y(rows[i]);
        }
    };
    Eigen::MatrixXd Xtr, Xval;
    Eigen::VectorXd ytr, yval;
    gather(train_rows, Xtr, ytr);
    gather(val_rows, Xval, yval);

    // Layer sizes: k -> hidden... -> 1; init uniform scaled by 1/sqrt(fan_in).
    std::vector<int> sizes;
    sizes.push_back(static_cast<int>(k));
    sizes.insert(sizes.end(), hidden_sizes.begin(), hidden_sizes.end());
    sizes.push_back(1);

    MlpModel model;
    model.train_meta.seed = cfg.seed;
    AdamState adam;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int fan_in = sizes[l], fan_out = sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        Eigen::MatrixXd W(fan_out, fan_in);
        for (Eigen::Index i = 0; i < W.rows(); ++i)
            for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = rng.uniform(-bound, bound);
        model.layer_weights.push_back(std::move(W));
        model.layer_biases.push_back(Eigen::VectorXd::Zero(fan_out));
        adam.mW.push_back(Eigen::MatrixXd::Zero(fan_out, fan_in));
        adam.vW.push_back(Eigen::MatrixXd::Zero(fan_out, fan_in));
        adam.mb.push_back(Eigen::VectorXd::Zero(fan_out));
        adam.vb.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    const std::size_t n_layers = model.layer_weights.size();

    auto val_rmse = [&]() {
        const Eigen::VectorXd pred = model.forward_rows(Xval);
        return std::sqrt((pred - yval).squaredNorm() / static_cast<double>(yval.size()));
    };

    std::vector<Eigen::MatrixXd> best_weights = model.layer_weights;
    std::vector<Eigen::VectorXd> best_biases = model.layer_biases;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int epochs_without_improvement = 0;

    const auto n_train = static_cast<int>(Xtr.rows());
    std::vector<int> order(static_cast<std::size_t>(n_train));

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        order = shuffled_indices(n_train, rng);
        for (int start = 0; start < n_train; start += cfg.batch_size) {
            const int bs = std::min(cfg.batch_size, n_train - start);
            Eigen::MatrixXd Xb(bs, k);
            Eigen::VectorXd yb(bs);
            for (int i = 0; i < bs; ++i) {
                Xb.row(i) = Xtr.row(order[static_cast<std::size_t>(start + i)]);
                yb(i) = ytr(order[static_cast<std::size_t>(start + i)]);
            }

            // Forward pass keeping activations and pre-activations.
            std::vector<Eigen::MatrixXd> acts;  // acts[l] = input to layer l
            std::vector<Eigen::MatrixXd> zs;
            acts.push_back(Xb);
            for (std::size_t l = 0; l < n_layers; ++l) {
                Eigen::MatrixXd z = (acts.back() * model.layer_weights[l].transpose()).rowwise() +
                                    model.layer_biases[l].transpose();
                zs.push_back(z);
                if (l + 1 < n_layers) z = z.cwiseMax(0.0);
                acts.push_back(std::move(z));
            }
            const Eigen::VectorXd resid = acts.back().col(0) - yb;
            const double loss = std::sqrt(resid.squaredNorm() / static_cast<double>(bs));
            if (!std::isfinite(loss))
                throw NumericError("train_mlp: non-finite loss at epoch " + std::to_string(epoch));

            // RMSE loss: dL/dpred = resid / (bs * L); zero at an exact fit.
            Eigen::MatrixXd delta(bs, 1);
            if (loss > 0.0)
                delta.col(0) = resid / (static_cast<double>(bs) * loss);
            else
                delta.setZero();

            ++adam.step;
            for (std::size_t l = n_layers; l-- > 0;) {
                const Eigen::MatrixXd gW = delta.transpose() * acts[l];
                const Eigen::VectorXd gb = delta.colwise().sum().transpose();
                Eigen::MatrixXd upstream;
                if (l > 0) {
                    upstream = delta * model.layer_weights[l];
                    upstream = upstream.cwiseProduct(
                        (zs[l - 1].array() > 0.0).cast<double>().matrix());
                }
                adam_update(model.layer_weights[l], adam.mW[l], adam.vW[l], gW, cfg.learning_rate,
                            adam.step);
                adam_update(model.layer_biases[l], adam.mb[l], adam.vb[l], gb, cfg.learning_rate,
                            adam.step);
                if (l > 0) delta = std::move(upstream);
            }
        }

        const double v = val_rmse();
        if (!std::isfinite(v))
            throw NumericError("train_mlp: non-finite validation loss at epoch " + std::to_string(epoch));
        model.train_meta.val_rmse_history.push_back(v);
        model.train_meta.epochs_run = epoch;
        if (v < best_val) {
            best_val = v;
            best_epoch = epoch;
            best_weights = model.layer_weights;
            best_biases = model.layer_biases;
            epochs_without_improvement = 0;
        } else if (++epochs_without_improvement >= cfg.patience) {
            break;
        }
    }

    model.layer_weights = std::move(best_weights);
    model.layer_biases = std::move(best_biases);
    model.train_meta.best_epoch = best_epoch;
    return model;
}

std::unique_ptr<RegressionModel> model_from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "ridge") return std::make_unique<RidgeModel>(RidgeModel::from_json(j));
    if (kind == "mlp") return std::make_unique<MlpModel>(MlpModel::from_json(j));
    throw InputError("model json: unknown kind '" + kind + "'");
}

void save_model(const RegressionModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << model.to_json().dump(2) << '\n';
    if (!out) throw ParseError("write failed: " + path);
}

std::unique_ptr<RegressionModel> load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("model file " + path + ": " + e.what());
    }
    return model_from_json(j);
}

}  // namespace regattack::models
