#include "regattack/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace regattack::eval {

namespace {

// Seed streams inside one experiment.
enum : std::uint64_t {
    kStreamSplit = 11,
    kStreamTrain = 12,
    kStreamSelect = 13,
    kStreamCw = 14,
    kStreamNoise = 15,
};

using attacks::AttackResult;
using attacks::Method;

}  // namespace

std::string scenario_name(Scenario s) {
    return s == Scenario::kWithinSubject ? "within_subject" : "cross_subject";
}

Scenario scenario_from_name(const std::string& name) {
    if (name == "within_subject" || name == "within") return Scenario::kWithinSubject;
    if (name == "cross_subject" || name == "cross") return Scenario::kCrossSubject;
    throw InputError("unknown scenario '" + name + "'");
}

std::string model_kind_name(ModelKind m) { return m == ModelKind::kRidge ? "ridge" : "mlp"; }

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "ridge") return ModelKind::kRidge;
    if (name == "mlp") return ModelKind::kMlp;
    throw InputError("unknown model kind '" + name + "'");
}

double rmse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& targets) {
    check_input(predictions.size() == targets.size(), "rmse: length mismatch");
    check_input(predictions.size() >= 1, "rmse: empty input");
    return std::sqrt((predictions - targets).squaredNorm() /
                     static_cast<double>(predictions.size()));
}

double mean_output(const Eigen::VectorXd& predictions) {
    check_input(predictions.size() >= 1, "mean_output: empty input");
    return predictions.mean();
}

double asr(const std::vector<AttackResult>& results, double t) {
    check_input(!results.empty(), "asr: empty result list");
    int successes = 0;
    for (const auto& r : results) {
        check_input(r.t == t, "asr: results with mixed t");
        if (r.output_after >= r.output_before + t) ++successes;
    }
    return static_cast<double>(successes) / static_cast<double>(results.size());
}

double calibrate_noise_sigma(const std::vector<AttackResult>& results, int feature_dim) {
    check_input(!results.empty(), "calibrate_noise_sigma: empty result list");
    check_input(feature_dim >= 1, "calibrate_noise_sigma: feature_dim must be >= 1");
    double d_max = 0.0;
    for (const auto& r : results) d_max = std::max(d_max, r.distortion_l2);
    return d_max / std::sqrt(static_cast<double>(feature_dim));
}

nlohmann::json ExperimentReport::to_json() const {
    return nlohmann::json{{"scenario", scenario_name(scenario)},
                          {"dataset_id", dataset_id},
                          {"model", model_kind_name(model_kind)},
                          {"method", attacks::method_name(method)},
                          {"rmse", rmse},
                          {"mean_output", mean_output},
                          {"asr", asr},
                          {"mean_distortion", mean_distortion},
                          {"n_examples", n_examples},
                          {"config_snapshot", config_snapshot}};
}

ExperimentReport ExperimentReport::from_json(const nlohmann::json& j) {
    ExperimentReport r;
    r.scenario = scenario_from_name(j.at("scenario").get<std::string>());
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.model_kind = model_kind_from_name(j.at("model").get<std::string>());
    r.method = attacks::method_from_name(j.at("method").get<std::string>());
    r.rmse = j.at("rmse").get<double>();
    r.mean_output = j.at("mean_output").get<double>();
    r.asr = j.at("asr").get<double>();
    r.mean_distortion = j.at("mean_distortion").get<double>();
    r.n_examples = j.at("n_examples").get<int>();
    r.config_snapshot = j.value("config_snapshot", nlohmann::json());
    return r;
}

void ExperimentConfig::validate() const {
    check_input(!methods.empty(), "experiment config: no methods requested");
    check_input(t > 0.0, "experiment config: t must be positive");
    check_input(ridge_lambda >= 0.0, "experiment config: ridge_lambda must be >= 0");
    check_input(train_fraction > 0.0 && train_fraction < 1.0,
                "experiment config: train_fraction must be in (0,1)");
    check_input(max_attack_per_subject >= 0,
                "experiment config: max_attack_per_subject must be >= 0");
    train_cfg.validate();
    bool has_gradient = false;
    for (Method m : methods)
        if (m == Method::kCwR || m == Method::kIfgsmR) has_gradient = true;
    for (Method m : methods)
        if (m == Method::kRandomNoise)
            check_input(has_gradient,
                        "experiment config: random_noise needs cw_r or ifgsm_r results in the "
                        "same run to calibrate sigma");
}

nlohmann::json ExperimentConfig::to_json() const {
    std::vector<std::string> method_names;
    for (Method m : methods) method_names.push_back(attacks::method_name(m));
    return nlohmann::json{{"scenario", scenario_name(scenario)},
                          {"model", model_kind_name(model_kind)},
                          {"methods", method_names},
                          {"t", t},
                          {"ridge_lambda", ridge_lambda},
                          {"train_fraction", train_fraction},
                          {"train_cfg", train_cfg.to_json()},
                          {"cw_cfg", cw_cfg.to_json()},
                          {"ifgsm_cfg", ifgsm_cfg.to_json()},
                          {"max_attack_per_subject", max_attack_per_subject},
                          {"seed", seed},
                          {"dataset_id", dataset_id}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.scenario = scenario_from_name(j.at("scenario").get<std::string>());
    c.model_kind = model_kind_from_name(j.at("model").get<std::string>());
    c.methods.clear();
    for (const auto& name : j.at("methods"))
        c.methods.push_back(attacks::method_from_name(name.get<std::string>()));
    c.t = j.at("t").get<double>();
    c.ridge_lambda = j.at("ridge_lambda").get<double>();
    c.train_fraction = j.at("train_fraction").get<double>();
    c.train_cfg = models::TrainConfig::from_json(j.at("train_cfg"));
    c.cw_cfg = attacks::CwConfig::from_json(j.at("cw_cfg"));
    c.ifgsm_cfg = attacks::IfgsmConfig::from_json(j.at("ifgsm_cfg"));
    c.max_attack_per_subject = j.at("max_attack_per_subject").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dataset_id = j.at("dataset_id").get<std::string>();
    return c;
}

std::vector<AttackResult> ExperimentOutcome::flat_results(Method m) const {
    std::vector<AttackResult> flat;
    const auto it = results.find(m);
    if (it == results.end()) return flat;
    for (const auto& unit : it->second) flat.insert(flat.end(), unit.begin(), unit.end());
    return flat;
}

namespace {

std::unique_ptr<models::RegressionModel> train_unit_model(const ExperimentConfig& cfg,
                                                          const Eigen::MatrixXd& X,
                                                          const Eigen::VectorXd& y,
                                                          std::uint64_t unit_seed) {
    if (cfg.model_kind == ModelKind::kRidge)
        return std::make_unique<models::RidgeModel>(models::train_ridge(X, y, cfg.ridge_lambda));
    models::TrainConfig tc = cfg.train_cfg;
    tc.seed = mix_seed(unit_seed, kStreamTrain);
    return std::make_unique<models::MlpModel>(models::train_mlp(X, y, tc));
}

}  // namespace

ExperimentReport aggregate_attack_cell(Scenario scenario, const std::string& dataset_id,
                                       ModelKind model_kind, Method method, double t,
                                       const std::vector<std::vector<AttackResult>>& per_unit,
                                       const std::vector<Eigen::VectorXd>& per_unit_targets) {
    check_input(!per_unit.empty(), "aggregate_attack_cell: no units");
    check_input(per_unit.size() == per_unit_targets.size(),
                "aggregate_attack_cell: units/targets length mismatch");
    ExperimentReport rep;
    rep.scenario = scenario;
    rep.dataset_id = dataset_id;
    rep.model_kind = model_kind;
    rep.method = method;
    double rmse_sum = 0.0, mo_sum = 0.0, asr_sum = 0.0, dist_sum = 0.0;
    int n_total = 0;
    for (std::size_t u = 0; u < per_unit.size(); ++u) {
        const auto& results = per_unit[u];
        const auto n = static_cast<Eigen::Index>(results.size());
        check_input(n >= 1 && n == per_unit_targets[u].size(),
                    "aggregate_attack_cell: unit result/target count mismatch");
        Eigen::VectorXd preds(n);
        double unit_dist = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            preds(i) = results[static_cast<std::size_t>(i)].output_after;
            unit_dist += results[static_cast<std::size_t>(i)].distortion_l2;
        }
        rmse_sum += rmse(preds, per_unit_targets[u]);
        mo_sum += mean_output(preds);
        asr_sum += asr(results, t);
        dist_sum += unit_dist / static_cast<double>(n);
        n_total += static_cast<int>(n);
    }
    const auto n_units = static_cast<double>(per_unit.size());
    rep.rmse = rmse_sum / n_units;
    rep.mean_output = mo_sum / n_units;
    rep.asr = asr_sum / n_units;
    rep.mean_distortion = dist_sum / n_units;
    rep.n_examples = n_total;
    return rep;
}

std::vector<int> select_attack_rows(int n_test, int cap, std::uint64_t unit_seed) {
    std::vector<int> rows;
    if (cap > 0 && n_test > cap) {
        Rng sel(mix_seed(unit_seed, kStreamSelect));
        const auto perm = shuffled_indices(n_test, sel);
        rows.assign(perm.begin(), perm.begin() + cap);
        std::sort(rows.begin(), rows.end());
    } else {
        rows.resize(static_cast<std::size_t>(n_test));
        for (int i = 0; i < n_test; ++i) rows[static_cast<std::size_t>(i)] = i;
    }
    return rows;
}

std::vector<attacks::AttackResult> attack_examples(const models::RegressionModel& model,
                                                   const Eigen::MatrixXd& test_X,
                                                   const std::vector<int>& rows,
                                                   attacks::Method method, double t,
                                                   const attacks::CwConfig& cw_cfg,
                                                   const attacks::IfgsmConfig& ifgsm_cfg,
                                                   double noise_sigma, std::uint64_t unit_seed) {
    std::vector<AttackResult> out;
    out.reserve(rows.size());
    for (int row : rows) {
        const Eigen::VectorXd x = test_X.row(row).transpose();
        const auto ri = static_cast<std::uint64_t>(row);
        switch (method) {
            case Method::kCwR: {
                attacks::CwConfig ac = cw_cfg;
                ac.t = t;
                ac.seed = mix_seed(unit_seed, kStreamCw, ri);
                out.push_back(attacks::cw_r(model, x, ac));
                break;
            }
            case Method::kIfgsmR: {
                attacks::IfgsmConfig ac = ifgsm_cfg;
                ac.t = t;
                out.push_back(ac.epsilon_grid.empty() ? attacks::ifgsm_r(model, x, ac)
                                                      : attacks::ifgsm_r_grid(model, x, ac));
                break;
            }
            case Method::kRandomNoise: {
                out.push_back(attacks::gaussian_noise_attack(
                    model, x, t, noise_sigma, mix_seed(unit_seed, kStreamNoise, ri)));
                break;
            }
            case Method::kBaseline:
                throw InputError("attack_examples: baseline is not an attack");
        }
    }
    return out;
}

ExperimentOutcome run_experiment(const data::Dataset& dataset, const ExperimentConfig& cfg) {
    cfg.validate();
    dataset.validate();
    check_input(dataset.normalization.has_value(), "run_experiment: dataset must be normalized");
    if (cfg.scenario == Scenario::kCrossSubject)
        check_input(dataset.subjects.size() >= 2, "run_experiment: cross-subject needs >= 2 subjects");

    // Units ordered by subject id so aggregation is schedule-independent.
    std::vector<std::string> ids;
    for (const auto& s : dataset.subjects) ids.push_back(s.subject_id);
    std::sort(ids.begin(), ids.end());

    ExperimentOutcome outcome;
    for (const auto& id : ids) {
        const auto& subject = dataset.subjects[static_cast<std::size_t>(dataset.subject_index(id))];
        SubjectUnit unit;
        unit.subject_id = id;
        unit.unit_seed = subject_unit_seed(cfg.seed, id);
        try {
            if (cfg.scenario == Scenario::kWithinSubject) {
                const auto split = data::split_within_subject(subject, cfg.train_fraction,
                                                              mix_seed(unit.unit_seed, kStreamSplit));
                unit.model = train_unit_model(cfg, split.train.features, split.train.targets,
                                              unit.unit_seed);
                unit.test_X = split.test.features;
                unit.test_y = split.test.targets;
                unit.test_rows = split.test_indices;
            } else {
                const auto split = data::split_cross_subject(dataset, id);
                unit.model = train_unit_model(cfg, split.train.features, split.train.targets,
                                              unit.unit_seed);
                unit.test_X = split.test.features;
                unit.test_y = split.test.targets;
                unit.test_rows.resize(static_cast<std::size_t>(unit.test_X.rows()));
                for (int i = 0; i < static_cast<int>(unit.test_X.rows()); ++i)
                    unit.test_rows[static_cast<std::size_t>(i)] = i;
            }
        } catch (const NumericError& e) {
            throw NumericError("subject " + id + ": " + e.what());
        }

        unit.attack_rows = select_attack_rows(static_cast<int>(unit.test_X.rows()),
                                              cfg.max_attack_per_subject, unit.unit_seed);
        outcome.units.push_back(std::move(unit));
    }

    // Gradient attacks first; the noise baseline needs their distortions to
    // calibrate sigma.
    for (Method method : cfg.methods) {
        if (method == Method::kBaseline || method == Method::kRandomNoise) continue;
        auto& per_unit = outcome.results[method];
        for (const auto& unit : outcome.units) {
            try {
                per_unit.push_back(attack_examples(*unit.model, unit.test_X, unit.attack_rows,
                                                   method, cfg.t, cfg.cw_cfg, cfg.ifgsm_cfg, 0.0,
                                                   unit.unit_seed));
            } catch (const NumericError& e) {
                throw NumericError("subject " + unit.subject_id + ": " + e.what());
            }
        }
    }

    double noise_sigma = 0.0;
    const bool wants_noise =
        std::find(cfg.methods.begin(), cfg.methods.end(), Method::kRandomNoise) != cfg.methods.end();
    if (wants_noise) {
        std::vector<AttackResult> gradient_results = outcome.flat_results(Method::kCwR);
        const auto ifgsm = outcome.flat_results(Method::kIfgsmR);
        gradient_results.insert(gradient_results.end(), ifgsm.begin(), ifgsm.end());
        check_input(!gradient_results.empty(),
                    "run_experiment: random_noise requires gradient-attack results for calibration");
        noise_sigma = calibrate_noise_sigma(gradient_results, dataset.feature_dim);
        auto& per_unit = outcome.results[Method::kRandomNoise];
        for (const auto& unit : outcome.units)
            per_unit.push_back(attack_examples(*unit.model, unit.test_X, unit.attack_rows,
                                               Method::kRandomNoise, cfg.t, cfg.cw_cfg,
                                               cfg.ifgsm_cfg, noise_sigma, unit.unit_seed));
    }

    // Aggregate: unweighted average of per-subject metrics, in method order.
    for (Method method : cfg.methods) {
        ExperimentReport rep;
        rep.scenario = cfg.scenario;
        rep.dataset_id = cfg.dataset_id;
        rep.model_kind = cfg.model_kind;
        rep.method = method;
        rep.config_snapshot = cfg.to_json();
        if (method == Method::kBaseline) {
            double rmse_sum = 0.0, mo_sum = 0.0;
            int n = 0;
            for (const auto& unit : outcome.units) {
                const Eigen::VectorXd preds = unit.model->predict_rows(unit.test_X);
                rmse_sum += rmse(preds, unit.test_y);
                mo_sum += mean_output(preds);
                n += static_cast<int>(preds.size());
            }
            const auto n_units = static_cast<double>(outcome.units.size());
            rep.rmse = rmse_sum / n_units;
            rep.mean_output = mo_sum / n_units;
            rep.n_examples = n;
        } else {
            std::vector<Eigen::VectorXd> per_unit_targets;
            for (const auto& unit : outcome.units) {
                Eigen::VectorXd targets(static_cast<Eigen::Index>(unit.attack_rows.size()));
                for (std::size_t i = 0; i < unit.attack_rows.size(); ++i)
                    targets(static_cast<Eigen::Index>(i)) = unit.test_y(unit.attack_rows[i]);
                per_unit_targets.push_back(std::move(targets));
            }
            const ExperimentReport cell =
                aggregate_attack_cell(cfg.scenario, cfg.dataset_id, cfg.model_kind, method, cfg.t,
                                      outcome.results.at(method), per_unit_targets);
            rep.rmse = cell.rmse;
            rep.mean_output = cell.mean_output;
            rep.asr = cell.asr;
            rep.mean_distortion = cell.mean_distortion;
            rep.n_examples = cell.n_examples;
        }
        outcome.reports.push_back(std::move(rep));
    }
    return outcome;
}

TransferReport transferability(const std::vector<AttackResult>& source_results,
                               const models::RegressionModel& target_model, double t,
                               ModelKind source_kind) {
    check_input(!source_results.empty(), "transferability: empty result list");
    check_input(t > 0.0, "transferability: t must be positive");

    const auto n = static_cast<Eigen::Index>(source_results.size());
    Eigen::VectorXd target_outputs(n), source_outputs(n);
    int successes = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = source_results[static_cast<std::size_t>(i)];
        check_input(r.x_adversarial.size() == target_model.input_dim() &&
                        r.x_original.size() == target_model.input_dim(),
                    "transferability: stored vectors do not match the target model's input "
                    "dimension");
        const double before = target_model.predict(r.x_original);
        const double after = target_model.predict(r.x_adversarial);
        target_outputs(i) = after;
        source_outputs(i) = r.output_after;
        if (after >= before + t) ++successes;
    }

    TransferReport rep;
    rep.source_model = source_kind;
    rep.target_model = model_kind_from_name(target_model.kind());
    rep.mean_output_source = mean_output(source_outputs);
    rep.mean_output_target = mean_output(target_outputs);
    rep.asr_on_target = static_cast<double>(successes) / static_cast<double>(n);
    rep.n_examples = static_cast<int>(n);
    return rep;
}

void write_reports_csv(const std::vector<ExperimentReport>& reports, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << "scenario,dataset_id,model,method,rmse,mean_output,asr,mean_distortion,n_examples\n";
    for (const auto& r : reports) {
        out << scenario_name(r.scenario) << ',' << r.dataset_id << ','
            << model_kind_name(r.model_kind) << ',' << attacks::method_name(r.method) << ','
            << format_double(r.rmse) << ',' << format_double(r.mean_output) << ','
            << format_double(r.asr) << ',' << format_double(r.mean_distortion) << ','
            << r.n_examples << '\n';
    }
    if (!out) throw ParseError("write failed: " + path);
}

void write_reports_json(const std::vector<ExperimentReport>& reports, const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(r.to_json());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << arr.dump(2) << '\n';
    if (!out) throw ParseError("write failed: " + path);
}

std::vector<ExperimentReport> load_reports_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open reports file: " + path);
    nlohmann::json arr;
    try {
        in >> arr;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("reports file " + path + ": " + e.what());
    }
    std::vector<ExperimentReport> reports;
    for (const auto& j : arr) reports.push_back(ExperimentReport::from_json(j));
    return reports;
}

std::string render_reports(const std::vector<ExperimentReport>& reports) {
    // Columns: (scenario, model) pairs in a fixed order; rows: method metrics.
    std::vector<std::pair<Scenario, ModelKind>> columns;
    for (Scenario s : {Scenario::kWithinSubject, Scenario::kCrossSubject})
        for (ModelKind m : {ModelKind::kRidge, ModelKind::kMlp})
            for (const auto& r : reports)
                if (r.scenario == s && r.model_kind == m) {
                    if (std::find(columns.begin(), columns.end(), std::make_pair(s, m)) ==
                        columns.end())
                        columns.emplace_back(s, m);
                }

    const std::vector<Method> method_order = {Method::kBaseline, Method::kCwR, Method::kIfgsmR,
                                              Method::kRandomNoise};
    auto find_report = [&reports](Scenario s, ModelKind m, Method method) -> const ExperimentReport* {
        for (const auto& r : reports)
            if (r.scenario == s && r.model_kind == m && r.method == method) return &r;
        return nullptr;
    };

    std::ostringstream os;
    os << std::left << std::setw(14) << "Scenario" << std::setw(10) << "";
    for (const auto& [s, m] : columns) os << std::setw(16) << scenario_name(s);
    os << '\n' << std::setw(14) << "Model" << std::setw(10) << "";
    for (const auto& [s, m] : columns) os << std::setw(16) << model_kind_name(m);
    os << '\n';

    auto fmt = [](double v) {
        std::ostringstream t;
        t << std::fixed << std::setprecision(4) << v;
        return t.str();
    };
    auto pct = [](double v) {
        std::ostringstream t;
        t << std::fixed << std::setprecision(2) << 100.0 * v << '%';
        return t.str();
    };

    for (Method method : method_order) {
        bool any = false;
        for (const auto& [s, m] : columns)
            if (find_report(s, m, method)) any = true;
        if (!any) continue;

        std::vector<std::pair<std::string, std::function<std::string(const ExperimentReport&)>>>
            metric_rows;
        metric_rows.emplace_back("RMSE", [&fmt](const ExperimentReport& r) { return fmt(r.rmse); });
        metric_rows.emplace_back("MO",
                                 [&fmt](const ExperimentReport& r) { return fmt(r.mean_output); });
        if (method != Method::kBaseline) {
            metric_rows.emplace_back("ASR", [&pct](const ExperimentReport& r) { return pct(r.asr); });
            metric_rows.emplace_back(
                "Distortion", [&fmt](const ExperimentReport& r) { return fmt(r.mean_distortion); });
        }
        for (std::size_t i = 0; i < metric_rows.size(); ++i) {
            os << std::setw(14) << (i == 0 ? attacks::method_name(method) : "") << std::setw(10)
               << metric_rows[i].first;
            for (const auto& [s, m] : columns) {
                const auto* r = find_report(s, m, method);
                os << std::setw(16) << (r ? metric_rows[i].second(*r) : "-");
            }
            os << '\n';
        }
    }
    return os.str();
}

}  // namespace regattack::eval
