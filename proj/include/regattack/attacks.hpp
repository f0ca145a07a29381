#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "regattack/common.hpp"
#include "regattack/models.hpp"

namespace regattack::attacks {

enum class Method { kBaseline, kCwR, kIfgsmR, kRandomNoise };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

/// CW-R: penalty-method optimization under a tanh box reparameterization,
/// with binary search over the trade-off constant c.
struct CwConfig {
    double t = 0.2;              // minimum output increase
    int M = 150;                 // gradient steps on omega per binary-search round
    int N = 9;                   // binary-search rounds
    double c0 = 0.01;            // trade-off constant for the first round
    double inner_lr = 0.02;      // step size on omega
    double c_upper_init = 1e4;
    double c_lower_init = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static CwConfig from_json(const nlohmann::json& j);
};

/// IFGSM-R: repeated signed-gradient steps of size alpha inside an
/// L-infinity ball of radius epsilon intersected with [0,1]^k.
struct IfgsmConfig {
    double t = 0.2;
    int M = 25;
    double epsilon = 0.03;
    double alpha = 0.001;
    std::vector<double> epsilon_grid;  // when non-empty: ascending grid search

    void validate() const;
    nlohmann::json to_json() const;
    static IfgsmConfig from_json(const nlohmann::json& j);
    /// {0.001, 0.002, ..., 0.03}
    static std::vector<double> default_grid();
};

struct AttackResult {
    Eigen::VectorXd x_original;
    Eigen::VectorXd x_adversarial;
    double output_before = 0.0;
    double output_after = 0.0;
    double t = 0.0;
    bool success = false;
    double distortion_l2 = 0.0;
    double distortion_linf = 0.0;
    int iterations_used = 0;
    Method method = Method::kBaseline;
};

/// Elementwise 0.5*(tanh(omega)+1); always in (0,1).
Eigen::VectorXd tanh_reparam(const Eigen::VectorXd& omega);

/// artanh(2x-1) on input clamped into [mu, 1-mu] with mu = 1e-6.
Eigen::VectorXd tanh_reparam_inv(const Eigen::VectorXd& x);

/// ||x_adv - x||_2 + c * max{g(x) + t - g(x_adv), 0}.
double cw_loss(const Eigen::VectorXd& x, const Eigen::VectorXd& x_adv, double t, double c,
               const models::RegressionModel& model);

/// Elementwise clamp of candidate into [x_i - eps, x_i + eps] intersected
/// with [0, 1].
Eigen::VectorXd clip_perturbation(const Eigen::VectorXd& x, const Eigen::VectorXd& candidate,
                                  double epsilon);

/// One (c, success) probe per binary-search round, for bracket diagnostics.
struct CwRound {
    double c = 0.0;
    double c_lower = 0.0;  // bracket when c was probed
    double c_upper = 0.0;
    bool succeeded = false;
};

AttackResult cw_r(const models::RegressionModel& model, const Eigen::VectorXd& x,
                  const CwConfig& cfg, std::vector<CwRound>* trace = nullptr);

AttackResult ifgsm_r(const models::RegressionModel& model, const Eigen::VectorXd& x,
                     const IfgsmConfig& cfg);

/// Runs ifgsm_r over cfg.epsilon_grid ascending; returns the first success
/// (smallest epsilon), or the result at the largest epsilon if none succeed.
AttackResult ifgsm_r_grid(const models::RegressionModel& model, const Eigen::VectorXd& x,
                          const IfgsmConfig& cfg);

/// x + iid N(0, sigma^2) noise, clamped into [0,1]^k; success judged against
/// the same g(x) + t predicate as the gradient attacks.
AttackResult gaussian_noise_attack(const models::RegressionModel& model, const Eigen::VectorXd& x,
                                   double t, double sigma, std::uint64_t seed);

/// CSV with columns: example_id, subject_id, method, success, output_before,
/// output_after, t, distortion_l2, distortion_linf, iterations_used.
void write_results_csv(const std::vector<AttackResult>& results,
                       const std::vector<std::string>& subject_ids,
                       const std::vector<int>& example_ids, const std::string& path);

/// Full results including adversarial vectors, for transfer studies.
void write_results_json(const std::vector<AttackResult>& results,
                        const std::vector<std::string>& subject_ids,
                        const std::vector<int>& example_ids, const std::string& path);

struct StoredResults {
    std::vector<AttackResult> results;
    std::vector<std::string> subject_ids;
    std::vector<int> example_ids;
};

StoredResults load_results_json(const std::string& path);

}  // namespace regattack::attacks
