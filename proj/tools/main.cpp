#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "regattack/attacks.hpp"
#include "regattack/common.hpp"
#include "regattack/data.hpp"
#include "regattack/eval.hpp"
#include "regattack/models.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace regattack;
using attacks::Method;
using eval::ModelKind;
using eval::Scenario;

namespace {

// Files written by the current command; discarded on failure so a failed run
// leaves no partial outputs behind.
struct OutputTracker {
    std::vector<fs::path> written;

    void write_text(const fs::path& path, const std::string& content) {
        if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ParseError("cannot open file for writing: " + path.string());
        out << content;
        if (!out) throw ParseError("write failed: " + path.string());
        written.push_back(path);
    }

    void note(const fs::path& path) { written.push_back(path); }

    void discard_all() {
        std::error_code ec;
        for (const auto& p : written) fs::remove(p, ec);
    }
};

json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ParseError("config file " + path + ": " + e.what());
    }
}

template <typename T>
void overlay(const CLI::App* cmd, const char* flag, const json& cfg, const char* key, T& value) {
    if (!cfg.is_null() && cfg.contains(key) && cmd->count(flag) == 0) value = cfg.at(key).get<T>();
}

std::string dataset_id_from_path(const std::string& path) {
    return fs::path(path).stem().string();
}

data::Dataset load_normalized_dataset(const std::string& path) {
    data::Dataset ds = data::load_csv(path);
    return data::normalize_features(ds);
}

std::string cell_tag(Scenario scenario, ModelKind model) {
    return eval::scenario_name(scenario) + "_" + eval::model_kind_name(model);
}

void write_json_file(OutputTracker& tracker, const fs::path& path, const json& j) {
    tracker.write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::string config;
    data::SynthSpec spec;
};

int run_synth(const SynthArgs& args) {
    args.spec.validate();
    if (args.out.empty()) throw InputError("synth: --out is required");
    const data::Dataset ds = data::synthesize_dataset(args.spec);

    OutputTracker tracker;
    try {
        const auto parent = fs::absolute(args.out).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        data::save_csv(ds, args.out);
        tracker.note(args.out);

        json snapshot = args.spec.to_json();
        snapshot["command"] = "synth";
        snapshot["out"] = args.out;
        write_json_file(tracker, args.out + ".spec.json", snapshot);
    } catch (...) {
        tracker.discard_all();
        throw;
    }
    std::cout << "wrote " << args.out << " (" << ds.subjects.size() << " subjects, "
              << ds.total_samples() << " samples, " << ds.feature_dim << " features)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string dataset;
    std::string run_dir;
    std::string scenario = "within";
    std::string model = "ridge";
    double ridge_lambda = 0.1;
    double train_fraction = 0.9;
    models::TrainConfig train_cfg;
    std::uint64_t seed = 0;
    std::string config;
};

json train_snapshot(const TrainArgs& args) {
    return json{{"command", "train"},
                {"dataset", args.dataset},
                {"run_dir", args.run_dir},
                {"scenario", eval::scenario_name(eval::scenario_from_name(args.scenario))},
                {"model", args.model},
                {"ridge_lambda", args.ridge_lambda},
                {"train_fraction", args.train_fraction},
                {"learning_rate", args.train_cfg.learning_rate},
                {"max_epochs", args.train_cfg.max_epochs},
                {"patience", args.train_cfg.patience},
                {"batch_size", args.train_cfg.batch_size},
                {"validation_fraction", args.train_cfg.validation_fraction},
                {"seed", args.seed}};
}

int run_train(const TrainArgs& args) {
    const Scenario scenario = eval::scenario_from_name(args.scenario);
    const ModelKind model_kind = eval::model_kind_from_name(args.model);
    const data::Dataset ds = load_normalized_dataset(args.dataset);

    eval::ExperimentConfig cfg;
    cfg.scenario = scenario;
    cfg.model_kind = model_kind;
    cfg.methods = {Method::kBaseline};
    cfg.ridge_lambda = args.ridge_lambda;
    cfg.train_fraction = args.train_fraction;
    cfg.train_cfg = args.train_cfg;
    cfg.seed = args.seed;
    cfg.dataset_id = dataset_id_from_path(args.dataset);

    const auto outcome = eval::run_experiment(ds, cfg);

    const fs::path run_dir(args.run_dir);
    const std::string tag = cell_tag(scenario, model_kind);
    OutputTracker tracker;
    try {
        const fs::path model_dir = run_dir / "models" / tag;
        fs::create_directories(model_dir);
        json split{{"scenario", eval::scenario_name(scenario)},
                   {"train_fraction", args.train_fraction},
                   {"seed", args.seed},
                   {"dataset_id", cfg.dataset_id}};
        json split_subjects = json::array();
        for (const auto& unit : outcome.units) {
            const fs::path model_path = model_dir / (unit.subject_id + ".json");
            models::save_model(*unit.model, model_path.string());
            tracker.note(model_path);
            split_subjects.push_back(json{{"id", unit.subject_id}, {"test_rows", unit.test_rows}});
        }
        split["subjects"] = split_subjects;
        write_json_file(tracker, model_dir / "split.json", split);

        std::vector<eval::ExperimentReport> reports = outcome.reports;
        for (auto& r : reports) r.config_snapshot = train_snapshot(args);
        fs::create_directories(run_dir / "reports");
        eval::write_reports_csv(reports,
                                (run_dir / "reports" / ("baseline_" + tag + ".csv")).string());
        tracker.note(run_dir / "reports" / ("baseline_" + tag + ".csv"));
        eval::write_reports_json(reports,
                                 (run_dir / "reports" / ("baseline_" + tag + ".json")).string());
        tracker.note(run_dir / "reports" / ("baseline_" + tag + ".json"));

        write_json_file(tracker, run_dir / "snapshots" / ("train_" + tag + ".json"),
                        train_snapshot(args));
    } catch (...) {
        tracker.discard_all();
        throw;
    }

    std::cout << eval::render_reports(outcome.reports);
    std::cout << "trained " << outcome.units.size() << " " << args.model << " model(s) into "
              << (run_dir / "models" / tag).string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

struct AttackArgs {
    std::string run_dir;
    std::string dataset;
    std::string scenario = "within";
    std::string model = "ridge";
    std::string method;
    double t = 0.2;
    attacks::CwConfig cw;
    attacks::IfgsmConfig ifgsm;
    bool no_grid = false;
    int cap = 100;
    double noise_sigma = -1.0;  // < 0: calibrate from gradient-attack results
    std::uint64_t seed = 0;
    std::string config;
};

json attack_snapshot(const AttackArgs& args, double resolved_sigma) {
    json j{{"command", "attack"},
           {"run_dir", args.run_dir},
           {"dataset", args.dataset},
           {"scenario", eval::scenario_name(eval::scenario_from_name(args.scenario))},
           {"model", args.model},
           {"method", args.method},
           {"t", args.t},
           {"cw_m", args.cw.M},
           {"cw_n", args.cw.N},
           {"c0", args.cw.c0},
           {"inner_lr", args.cw.inner_lr},
           {"c_upper_init", args.cw.c_upper_init},
           {"c_lower_init", args.cw.c_lower_init},
           {"ifgsm_m", args.ifgsm.M},
           {"epsilon", args.ifgsm.epsilon},
           {"alpha", args.ifgsm.alpha},
           {"epsilon_grid", args.ifgsm.epsilon_grid},
           {"cap", args.cap},
           {"seed", args.seed}};
    if (resolved_sigma >= 0.0) j["noise_sigma"] = resolved_sigma;
    return j;
}

struct LoadedUnit {
    std::string subject_id;
    std::unique_ptr<models::RegressionModel> model;
    Eigen::MatrixXd test_X;
    Eigen::VectorXd test_y;
    std::vector<int> test_rows;
};

std::vector<LoadedUnit> load_units(const fs::path& run_dir, Scenario scenario, ModelKind model_kind,
                                   const data::Dataset& ds) {
    const fs::path model_dir = run_dir / "models" / cell_tag(scenario, model_kind);
    const fs::path split_path = model_dir / "split.json";
    if (!fs::exists(split_path))
        throw InputError("no trained models found at " + model_dir.string() +
                         "; run the train command first");
    const json split = load_config_file(split_path.string());
    if (eval::scenario_from_name(split.at("scenario").get<std::string>()) != scenario)
        throw InputError("split.json scenario does not match the requested scenario");

    std::vector<LoadedUnit> units;
    for (const auto& subj : split.at("subjects")) {
        LoadedUnit unit;
        unit.subject_id = subj.at("id").get<std::string>();
        unit.test_rows = subj.at("test_rows").get<std::vector<int>>();
        const fs::path model_path = model_dir / (unit.subject_id + ".json");
        unit.model = models::load_model(model_path.string());

        const auto& subject =
            ds.subjects[static_cast<std::size_t>(ds.subject_index(unit.subject_id))];
        unit.test_X.resize(static_cast<Eigen::Index>(unit.test_rows.size()), ds.feature_dim);
        unit.test_y.resize(static_cast<Eigen::Index>(unit.test_rows.size()));
        for (std::size_t i = 0; i < unit.test_rows.size(); ++i) {
            const int row = unit.test_rows[i];
            check_input(row >= 0 && row < subject.n(),
                        "split.json test row out of range for subject " + unit.subject_id);
            unit.test_X.row(static_cast<Eigen::Index>(i)) = subject.features.row(row);
            unit.test_y(static_cast<Eigen::Index>(i)) = subject.targets(row);
        }
        check_input(unit.model->input_dim() == ds.feature_dim,
                    "model input dimension does not match the dataset");
        units.push_back(std::move(unit));
    }
    std::sort(units.begin(), units.end(),
              [](const LoadedUnit& a, const LoadedUnit& b) { return a.subject_id < b.subject_id; });
    return units;
}

double resolve_noise_sigma(const fs::path& run_dir, const std::string& tag, int feature_dim) {
    std::vector<attacks::AttackResult> gradient_results;
    for (const char* method : {"cw_r", "ifgsm_r"}) {
        const fs::path p = run_dir / "results" / (tag + "_" + method + ".vectors.json");
        if (!fs::exists(p)) continue;
        auto stored = attacks::load_results_json(p.string());
        gradient_results.insert(gradient_results.end(), stored.results.begin(),
                                stored.results.end());
    }
    if (gradient_results.empty())
        throw InputError("random_noise needs prior cw_r or ifgsm_r results in " +
                         (run_dir / "results").string() +
                         " to calibrate sigma; run those attacks first");
    return eval::calibrate_noise_sigma(gradient_results, feature_dim);
}

int run_attack(const AttackArgs& args) {
    const Scenario scenario = eval::scenario_from_name(args.scenario);
    const ModelKind model_kind = eval::model_kind_from_name(args.model);
    const Method method = attacks::method_from_name(args.method);
    if (method == Method::kBaseline)
        throw InputError("attack: method must be cw_r, ifgsm_r, or random_noise");

    const data::Dataset ds = load_normalized_dataset(args.dataset);
    const fs::path run_dir(args.run_dir);
    const std::string tag = cell_tag(scenario, model_kind);
    auto units = load_units(run_dir, scenario, model_kind, ds);

    double sigma = args.noise_sigma;
    if (method == Method::kRandomNoise && sigma < 0.0)
        sigma = resolve_noise_sigma(run_dir, tag, ds.feature_dim);

    attacks::CwConfig cw = args.cw;
    cw.t = args.t;
    attacks::IfgsmConfig ifgsm = args.ifgsm;
    ifgsm.t = args.t;
    if (args.no_grid) ifgsm.epsilon_grid.clear();

    std::vector<std::vector<attacks::AttackResult>> per_unit;
    std::vector<Eigen::VectorXd> per_unit_targets;
    std::vector<attacks::AttackResult> flat;
    std::vector<std::string> flat_subjects;
    std::vector<int> flat_ids;
    int failures = 0;

    for (const auto& unit : units) {
        const std::uint64_t unit_seed = eval::subject_unit_seed(args.seed, unit.subject_id);
        const auto rows =
            eval::select_attack_rows(static_cast<int>(unit.test_X.rows()), args.cap, unit_seed);
        std::vector<attacks::AttackResult> results;
        Eigen::VectorXd targets(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const int row = rows[i];
            targets(static_cast<Eigen::Index>(i)) = unit.test_y(row);
            try {
                auto one = eval::attack_examples(*unit.model, unit.test_X, {row}, method, args.t,
                                                 cw, ifgsm, sigma, unit_seed);
                results.push_back(std::move(one.front()));
            } catch (const NumericError& e) {
                // A numerical failure on one example is recorded against the
                // ASR denominator and the campaign continues.
                ++failures;
                std::cerr << json{{"warning", "attack failed"},
                                  {"subject", unit.subject_id},
                                  {"example", unit.test_rows[static_cast<std::size_t>(row)]},
                                  {"error", e.what()}}
                                 .dump()
                          << "\n";
                attacks::AttackResult placeholder;
                placeholder.method = method;
                placeholder.x_original = unit.test_X.row(row).transpose();
                placeholder.x_adversarial = placeholder.x_original;
                placeholder.output_before = unit.model->predict(placeholder.x_original);
                placeholder.output_after = placeholder.output_before;
                placeholder.t = args.t;
                placeholder.success = false;
                results.push_back(std::move(placeholder));
            }
            flat.push_back(results.back());
            flat_subjects.push_back(unit.subject_id);
            flat_ids.push_back(unit.test_rows[static_cast<std::size_t>(row)]);
        }
        per_unit.push_back(std::move(results));
        per_unit_targets.push_back(std::move(targets));
    }

    eval::ExperimentReport report =
        eval::aggregate_attack_cell(scenario, dataset_id_from_path(args.dataset), model_kind,
                                    method, args.t, per_unit, per_unit_targets);
    report.config_snapshot = attack_snapshot(args, method == Method::kRandomNoise ? sigma : -1.0);
    if (failures > 0) report.config_snapshot["attack_failures"] = failures;

    OutputTracker tracker;
    try {
        const std::string stem = tag + "_" + args.method;
        fs::create_directories(run_dir / "results");
        fs::create_directories(run_dir / "reports");
        attacks::write_results_csv(flat, flat_subjects, flat_ids,
                                   (run_dir / "results" / (stem + ".csv")).string());
        tracker.note(run_dir / "results" / (stem + ".csv"));
        attacks::write_results_json(flat, flat_subjects, flat_ids,
                                    (run_dir / "results" / (stem + ".vectors.json")).string());
        tracker.note(run_dir / "results" / (stem + ".vectors.json"));
        eval::write_reports_csv({report},
                                (run_dir / "reports" / ("attack_" + stem + ".csv")).string());
        tracker.note(run_dir / "reports" / ("attack_" + stem + ".csv"));
        eval::write_reports_json({report},
                                 (run_dir / "reports" / ("attack_" + stem + ".json")).string());
        tracker.note(run_dir / "reports" / ("attack_" + stem + ".json"));
        write_json_file(tracker, run_dir / "snapshots" / ("attack_" + stem + ".json"),
                        report.config_snapshot);
    } catch (...) {
        tracker.discard_all();
        throw;
    }

    std::cout << eval::render_reports({report});
    if (failures > 0) std::cout << failures << " example(s) failed numerically\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string run_dir;
    std::string out;
};

int run_evaluate(const EvaluateArgs& args) {
    const fs::path reports_dir = fs::path(args.run_dir) / "reports";
    if (!fs::exists(reports_dir))
        throw InputError("no reports directory at " + reports_dir.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(reports_dir))
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("no report files in " + reports_dir.string());

    std::vector<eval::ExperimentReport> all;
    for (const auto& f : files) {
        const auto reports = eval::load_reports_json(f.string());
        all.insert(all.end(), reports.begin(), reports.end());
    }
    std::cout << eval::render_reports(all);
    if (!args.out.empty()) {
        const auto parent = fs::absolute(args.out).parent_path();
        if (!parent.empty()) fs::create_directories(parent);
        eval::write_reports_csv(all, args.out);
        std::cout << "wrote " << args.out << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

struct TransferArgs {
    std::string run_dir;
    std::string scenario = "within";
    std::string source = "mlp";
    std::string target = "ridge";
    std::string method = "cw_r";
    std::string config;
};

int run_transfer(const TransferArgs& args) {
    const Scenario scenario = eval::scenario_from_name(args.scenario);
    const ModelKind source_kind = eval::model_kind_from_name(args.source);
    const ModelKind target_kind = eval::model_kind_from_name(args.target);
    const fs::path run_dir(args.run_dir);

    const std::string source_stem = cell_tag(scenario, source_kind) + "_" + args.method;
    const fs::path vectors_path = run_dir / "results" / (source_stem + ".vectors.json");
    if (!fs::exists(vectors_path))
        throw InputError("no stored adversarial vectors at " + vectors_path.string() +
                         "; re-run the attack command for the source model first");
    const auto stored = attacks::load_results_json(vectors_path.string());
    check_input(!stored.results.empty(), "stored results are empty: " + vectors_path.string());
    const double t = stored.results.front().t;

    const fs::path target_dir = run_dir / "models" / cell_tag(scenario, target_kind);
    if (!fs::exists(target_dir / "split.json"))
        throw InputError("no trained target models at " + target_dir.string() +
                         "; run the train command for the target model first");

    // Group stored results per subject and pair each group with that
    // subject's target model.
    std::map<std::string, std::vector<attacks::AttackResult>> by_subject;
    for (std::size_t i = 0; i < stored.results.size(); ++i)
        by_subject[stored.subject_ids[i]].push_back(stored.results[i]);

    std::ostringstream csv;
    csv << "scenario,source_model,target_model,method,subject,n_examples,mean_output_source,"
           "mean_output_target,asr_on_target\n";
    double asr_sum = 0.0, mos_sum = 0.0, mot_sum = 0.0;
    int n_total = 0;
    for (const auto& [subject_id, results] : by_subject) {
        const fs::path model_path = target_dir / (subject_id + ".json");
        if (!fs::exists(model_path))
            throw InputError("no target model for subject " + subject_id + " at " +
                             model_path.string());
        const auto target_model = models::load_model(model_path.string());
        const auto rep = eval::transferability(results, *target_model, t, source_kind);
        csv << eval::scenario_name(scenario) << ',' << eval::model_kind_name(rep.source_model)
            << ',' << eval::model_kind_name(rep.target_model) << ',' << args.method << ','
            << subject_id << ',' << rep.n_examples << ','
            << format_double(rep.mean_output_source) << ','
            << format_double(rep.mean_output_target) << ',' << format_double(rep.asr_on_target)
            << '\n';
        asr_sum += rep.asr_on_target;
        mos_sum += rep.mean_output_source;
        mot_sum += rep.mean_output_target;
        n_total += rep.n_examples;
    }
    const auto n_subjects = static_cast<double>(by_subject.size());
    csv << eval::scenario_name(scenario) << ',' << eval::model_kind_name(source_kind) << ','
        << eval::model_kind_name(target_kind) << ',' << args.method << ",(average)," << n_total
        << ',' << format_double(mos_sum / n_subjects) << ',' << format_double(mot_sum / n_subjects)
        << ',' << format_double(asr_sum / n_subjects) << '\n';

    const std::string out_stem = "transfer_" + eval::scenario_name(scenario) + "_" + args.source +
                                 "_to_" + args.target + "_" + args.method;
    OutputTracker tracker;
    try {
        tracker.write_text(run_dir / "reports" / (out_stem + ".csv"), csv.str());
        write_json_file(tracker, run_dir / "snapshots" / (out_stem + ".json"),
                        json{{"command", "transfer"},
                             {"run_dir", args.run_dir},
                             {"scenario", eval::scenario_name(scenario)},
                             {"source", args.source},
                             {"target", args.target},
                             {"method", args.method}});
    } catch (...) {
        tracker.discard_all();
        throw;
    }

    std::cout << csv.str();
    std::cout << "transfer ASR (" << args.source << " -> " << args.target
              << "): " << format_double(asr_sum / n_subjects) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"White-box target attacks on regression models: victim training, CW-R and "
                 "IFGSM-R attacks, noise baseline, and transfer evaluation"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-subject dataset");
    synth->add_option("--out", synth_args.out, "Output CSV path");
    synth->add_option("--subjects", synth_args.spec.n_subjects, "Number of subjects");
    synth->add_option("--samples", synth_args.spec.samples_per_subject, "Samples per subject");
    synth->add_option("--features", synth_args.spec.feature_dim, "Feature dimension");
    synth->add_option("--shift", synth_args.spec.subject_shift_scale, "Subject shift scale");
    synth->add_option("--noise", synth_args.spec.noise_scale, "Target noise scale");
    synth->add_option("--seed", synth_args.spec.seed, "Generator seed");
    synth->add_option("--config", synth_args.config, "JSON config file (flags override)");

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train victim models and write a baseline report");
    train->add_option("--dataset", train_args.dataset, "Dataset CSV");
    train->add_option("--run-dir", train_args.run_dir, "Run directory for outputs");
    train->add_option("--scenario", train_args.scenario, "within|cross");
    train->add_option("--model", train_args.model, "ridge|mlp");
    train->add_option("--lambda", train_args.ridge_lambda, "Ridge parameter");
    train->add_option("--train-fraction", train_args.train_fraction,
                      "Within-subject train fraction");
    train->add_option("--lr", train_args.train_cfg.learning_rate, "MLP learning rate");
    train->add_option("--max-epochs", train_args.train_cfg.max_epochs, "MLP epoch cap");
    train->add_option("--patience", train_args.train_cfg.patience, "Early-stopping patience");
    train->add_option("--batch-size", train_args.train_cfg.batch_size, "MLP batch size");
    train->add_option("--val-fraction", train_args.train_cfg.validation_fraction,
                      "Validation fraction for early stopping");
    train->add_option("--seed", train_args.seed, "Experiment seed");
    train->add_option("--config", train_args.config, "JSON config file (flags override)");

    AttackArgs attack_args;
    attack_args.ifgsm.epsilon_grid = attacks::IfgsmConfig::default_grid();
    auto* attack = app.add_subcommand("attack", "Attack the test examples of trained models");
    attack->add_option("--run-dir", attack_args.run_dir, "Run directory with trained models");
    attack->add_option("--dataset", attack_args.dataset, "Dataset CSV");
    attack->add_option("--scenario", attack_args.scenario, "within|cross");
    attack->add_option("--model", attack_args.model, "ridge|mlp");
    attack->add_option("--method", attack_args.method, "cw_r|ifgsm_r|random_noise");
    attack->add_option("--t", attack_args.t, "Minimum output increase");
    attack->add_option("--cw-m", attack_args.cw.M, "CW-R inner iterations per round");
    attack->add_option("--cw-n", attack_args.cw.N, "CW-R binary-search rounds");
    attack->add_option("--c0", attack_args.cw.c0, "CW-R initial trade-off constant");
    attack->add_option("--inner-lr", attack_args.cw.inner_lr, "CW-R step size on omega");
    attack->add_option("--c-upper", attack_args.cw.c_upper_init, "CW-R initial upper bracket");
    attack->add_option("--c-lower", attack_args.cw.c_lower_init, "CW-R initial lower bracket");
    attack->add_option("--ifgsm-m", attack_args.ifgsm.M, "IFGSM-R iterations");
    attack->add_option("--epsilon", attack_args.ifgsm.epsilon, "IFGSM-R L-infinity bound");
    attack->add_option("--alpha", attack_args.ifgsm.alpha, "IFGSM-R step size");
    attack->add_option("--epsilon-grid", attack_args.ifgsm.epsilon_grid,
                       "Ascending epsilon grid for IFGSM-R grid search");
    attack->add_flag("--no-grid", attack_args.no_grid, "Run IFGSM-R at --epsilon only");
    attack->add_option("--cap", attack_args.cap,
                       "Max attacked examples per subject (0 = all test examples)");
    attack->add_option("--noise-sigma", attack_args.noise_sigma,
                       "Noise sigma (default: calibrate from gradient-attack results)");
    attack->add_option("--seed", attack_args.seed, "Attack seed");
    attack->add_option("--config", attack_args.config, "JSON config file (flags override)");

    EvaluateArgs evaluate_args;
    auto* evaluate = app.add_subcommand("evaluate", "Render collected reports as a table");
    evaluate->add_option("--run-dir", evaluate_args.run_dir, "Run directory with reports");
    evaluate->add_option("--out", evaluate_args.out, "Optional combined CSV output path");

    TransferArgs transfer_args;
    auto* transfer = app.add_subcommand(
        "transfer", "Re-evaluate stored adversarial examples on another model");
    transfer->add_option("--run-dir", transfer_args.run_dir, "Run directory");
    transfer->add_option("--scenario", transfer_args.scenario, "within|cross");
    transfer->add_option("--source", transfer_args.source, "Source model kind (ridge|mlp)");
    transfer->add_option("--target", transfer_args.target, "Target model kind (ridge|mlp)");
    transfer->add_option("--method", transfer_args.method, "Attack method of the stored results");
    transfer->add_option("--config", transfer_args.config, "JSON config file (flags override)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            json cfg;
            if (!synth_args.config.empty()) cfg = load_config_file(synth_args.config);
            overlay(synth, "--out", cfg, "out", synth_args.out);
            overlay(synth, "--subjects", cfg, "n_subjects", synth_args.spec.n_subjects);
            overlay(synth, "--samples", cfg, "samples_per_subject",
                    synth_args.spec.samples_per_subject);
            overlay(synth, "--features", cfg, "feature_dim", synth_args.spec.feature_dim);
            overlay(synth, "--shift", cfg, "subject_shift_scale",
                    synth_args.spec.subject_shift_scale);
            overlay(synth, "--noise", cfg, "noise_scale", synth_args.spec.noise_scale);
            overlay(synth, "--seed", cfg, "seed", synth_args.spec.seed);
            return run_synth(synth_args);
        }
        if (train->parsed()) {
            json cfg;
            if (!train_args.config.empty()) cfg = load_config_file(train_args.config);
            overlay(train, "--dataset", cfg, "dataset", train_args.dataset);
            overlay(train, "--run-dir", cfg, "run_dir", train_args.run_dir);
            overlay(train, "--scenario", cfg, "scenario", train_args.scenario);
            overlay(train, "--model", cfg, "model", train_args.model);
            overlay(train, "--lambda", cfg, "ridge_lambda", train_args.ridge_lambda);
            overlay(train, "--train-fraction", cfg, "train_fraction", train_args.train_fraction);
            overlay(train, "--lr", cfg, "learning_rate", train_args.train_cfg.learning_rate);
            overlay(train, "--max-epochs", cfg, "max_epochs", train_args.train_cfg.max_epochs);
            overlay(train, "--patience", cfg, "patience", train_args.train_cfg.patience);
            overlay(train, "--batch-size", cfg, "batch_size", train_args.train_cfg.batch_size);
            overlay(train, "--val-fraction", cfg, "validation_fraction",
                    train_args.train_cfg.validation_fraction);
            overlay(train, "--seed", cfg, "seed", train_args.seed);
            if (train_args.dataset.empty()) throw InputError("train: --dataset is required");
            if (train_args.run_dir.empty()) throw InputError("train: --run-dir is required");
            return run_train(train_args);
        }
        if (attack->parsed()) {
            json cfg;
            if (!attack_args.config.empty()) cfg = load_config_file(attack_args.config);
            overlay(attack, "--run-dir", cfg, "run_dir", attack_args.run_dir);
            overlay(attack, "--dataset", cfg, "dataset", attack_args.dataset);
            overlay(attack, "--scenario", cfg, "scenario", attack_args.scenario);
            overlay(attack, "--model", cfg, "model", attack_args.model);
            overlay(attack, "--method", cfg, "method", attack_args.method);
            overlay(attack, "--t", cfg, "t", attack_args.t);
            overlay(attack, "--cw-m", cfg, "cw_m", attack_args.cw.M);
            overlay(attack, "--cw-n", cfg, "cw_n", attack_args.cw.N);
            overlay(attack, "--c0", cfg, "c0", attack_args.cw.c0);
            overlay(attack, "--inner-lr", cfg, "inner_lr", attack_args.cw.inner_lr);
            overlay(attack, "--c-upper", cfg, "c_upper_init", attack_args.cw.c_upper_init);
            overlay(attack, "--c-lower", cfg, "c_lower_init", attack_args.cw.c_lower_init);
            overlay(attack, "--ifgsm-m", cfg, "ifgsm_m", attack_args.ifgsm.M);
            overlay(attack, "--epsilon", cfg, "epsilon", attack_args.ifgsm.epsilon);
            overlay(attack, "--alpha", cfg, "alpha", attack_args.ifgsm.alpha);
            overlay(attack, "--epsilon-grid", cfg, "epsilon_grid", attack_args.ifgsm.epsilon_grid);
            overlay(attack, "--cap", cfg, "cap", attack_args.cap);
            overlay(attack, "--noise-sigma", cfg, "noise_sigma", attack_args.noise_sigma);
            overlay(attack, "--seed", cfg, "seed", attack_args.seed);
            if (attack_args.run_dir.empty()) throw InputError("attack: --run-dir is required");
            if (attack_args.dataset.empty()) throw InputError("attack: --dataset is required");
            if (attack_args.method.empty()) throw InputError("attack: --method is required");
            return run_attack(attack_args);
        }
        if (evaluate->parsed()) {
            if (evaluate_args.run_dir.empty()) throw InputError("evaluate: --run-dir is required");
            return run_evaluate(evaluate_args);
        }
        if (transfer->parsed()) {
            json cfg;
            if (!transfer_args.config.empty()) cfg = load_config_file(transfer_args.config);
            overlay(transfer, "--run-dir", cfg, "run_dir", transfer_args.run_dir);
            overlay(transfer, "--scenario", cfg, "scenario", transfer_args.scenario);
            overlay(transfer, "--source", cfg, "source", transfer_args.source);
            overlay(transfer, "--target", cfg, "target", transfer_args.target);
            overlay(transfer, "--method", cfg, "method", transfer_args.method);
            if (transfer_args.run_dir.empty()) throw InputError("transfer: --run-dir is required");
            return run_transfer(transfer_args);
        }
    } catch (const InputError& e) {
        std::cerr << json{{"error", e.what()}, {"type", "input"}}.dump() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << json{{"error", e.what()}, {"type", "parse"}}.dump() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << json{{"error", e.what()}, {"type", "numeric"}}.dump() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}, {"type", "internal"}}.dump() << "\n";
        return 4;
    }
    return 1;
}
