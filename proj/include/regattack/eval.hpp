#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "regattack/attacks.hpp"
#include "regattack/common.hpp"
#include "regattack/data.hpp"
#include "regattack/models.hpp"

namespace regattack::eval {

enum class Scenario { kWithinSubject, kCrossSubject };
enum class ModelKind { kRidge, kMlp };

std::string scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);
std::string model_kind_name(ModelKind m);
ModelKind model_kind_from_name(const std::string& name);

/// sqrt(mean squared error).
double rmse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& targets);

/// Arithmetic mean of the predictions.
double mean_output(const Eigen::VectorXd& predictions);

/// Fraction of results with output_after >= output_before + t. All results
/// must share t.
double asr(const std::vector<attacks::AttackResult>& results, double t);

/// sigma = d_max / sqrt(k), so the expected pre-clamp noise L2 norm matches
/// the largest gradient-attack distortion.
double calibrate_noise_sigma(const std::vector<attacks::AttackResult>& results, int feature_dim);

/// One Table-1 cell: metrics for a (scenario, model, method) triple averaged
/// unweighted across subjects.
struct ExperimentReport {
    Scenario scenario = Scenario::kWithinSubject;
    std::string dataset_id;
    ModelKind model_kind = ModelKind::kRidge;
    attacks::Method method = attacks::Method::kBaseline;
    double rmse = 0.0;
    double mean_output = 0.0;
    double asr = 0.0;              // baseline rows: 0
    double mean_distortion = 0.0;  // baseline rows: 0
    int n_examples = 0;
    nlohmann::json config_snapshot;

    nlohmann::json to_json() const;
    static ExperimentReport from_json(const nlohmann::json& j);
};

struct TransferReport {
    ModelKind source_model = ModelKind::kRidge;
    ModelKind target_model = ModelKind::kRidge;
    double mean_output_source = 0.0;
    double mean_output_target = 0.0;
    double asr_on_target = 0.0;
    int n_examples = 0;
};

struct ExperimentConfig {
    Scenario scenario = Scenario::kWithinSubject;
    ModelKind model_kind = ModelKind::kRidge;
    std::vector<attacks::Method> methods;
    double t = 0.2;
    double ridge_lambda = 0.1;
    double train_fraction = 0.9;
    models::TrainConfig train_cfg;
    attacks::CwConfig cw_cfg;
    attacks::IfgsmConfig ifgsm_cfg;  // grid search when epsilon_grid non-empty
    int max_attack_per_subject = 100;  // 0 attacks every test example
    std::uint64_t seed = 0;
    std::string dataset_id = "dataset";

    ExperimentConfig() { ifgsm_cfg.epsilon_grid = attacks::IfgsmConfig::default_grid(); }

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
};

/// One trained per-subject unit: the victim model and its test set.
struct SubjectUnit {
    std::string subject_id;
    std::unique_ptr<models::RegressionModel> model;
    Eigen::MatrixXd test_X;
    Eigen::VectorXd test_y;
    std::vector<int> test_rows;    // rows of the subject's original data in the test set
    std::vector<int> attack_rows;  // rows of test_X that attacks run on
    std::uint64_t unit_seed = 0;
};

/// Seed for one subject's unit; mixing with a stable hash keeps results
/// independent of subject ordering and scheduling.
inline std::uint64_t subject_unit_seed(std::uint64_t experiment_seed, const std::string& subject_id) {
    return mix_seed(experiment_seed, fnv1a64(subject_id));
}

/// Deterministic choice of which test rows to attack (all of them when
/// cap <= 0 or n_test <= cap, else a seeded subsample).
std::vector<int> select_attack_rows(int n_test, int cap, std::uint64_t unit_seed);

/// Attacks the listed rows of test_X under one method; per-example seeds
/// derive from unit_seed. noise_sigma is only read for random_noise.
std::vector<attacks::AttackResult> attack_examples(const models::RegressionModel& model,
                                                   const Eigen::MatrixXd& test_X,
                                                   const std::vector<int>& rows,
                                                   attacks::Method method, double t,
                                                   const attacks::CwConfig& cw_cfg,
                                                   const attacks::IfgsmConfig& ifgsm_cfg,
                                                   double noise_sigma, std::uint64_t unit_seed);

struct ExperimentOutcome {
    std::vector<ExperimentReport> reports;
    std::vector<SubjectUnit> units;  // ordered by subject id
    /// results[method][unit] parallel to units.
    std::map<attacks::Method, std::vector<std::vector<attacks::AttackResult>>> results;

    std::vector<attacks::AttackResult> flat_results(attacks::Method m) const;
};

/// Unweighted average of per-subject attack metrics into one report row.
/// per_unit_targets[u] holds the true targets of unit u's attacked rows.
ExperimentReport aggregate_attack_cell(Scenario scenario, const std::string& dataset_id,
                                       ModelKind model_kind, attacks::Method method, double t,
                                       const std::vector<std::vector<attacks::AttackResult>>& per_unit,
                                       const std::vector<Eigen::VectorXd>& per_unit_targets);

/// Trains per subject (within) or per held-out subject (cross), attacks the
/// test examples with each method, aggregates per-subject metrics and
/// averages them across subjects. Deterministic given cfg.seed.
ExperimentOutcome run_experiment(const data::Dataset& dataset, const ExperimentConfig& cfg);

/// Re-evaluates stored adversarial vectors under a different model. ASR is
/// computed against the target model's own predictions on the originals.
TransferReport transferability(const std::vector<attacks::AttackResult>& source_results,
                               const models::RegressionModel& target_model, double t,
                               ModelKind source_kind);

void write_reports_csv(const std::vector<ExperimentReport>& reports, const std::string& path);
void write_reports_json(const std::vector<ExperimentReport>& reports, const std::string& path);
std::vector<ExperimentReport> load_reports_json(const std::string& path);

/// Table-1-shaped text grid: methods x metrics as rows, scenario x model as
/// columns.
std::string render_reports(const std::vector<ExperimentReport>& reports);

}  // namespace regattack::eval
