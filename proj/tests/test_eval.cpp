#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "regattack/eval.hpp"

using namespace regattack;
using namespace regattack::eval;
using attacks::AttackResult;
using attacks::Method;

namespace {

AttackResult fake_result(double before, double after, double t, double dist = 0.1) {
    AttackResult r;
    r.x_original = Eigen::VectorXd::Constant(2, 0.5);
    r.x_adversarial = Eigen::VectorXd::Constant(2, 0.5 + dist / std::sqrt(2.0));
    r.output_before = before;
    r.output_after = after;
    r.t = t;
    r.success = after >= before + t;
    r.distortion_l2 = dist;
    r.distortion_linf = dist / std::sqrt(2.0);
    r.method = Method::kCwR;
    return r;
}

data::Dataset small_synth(double shift = 0.3, int subjects = 4, int samples = 120, int k = 8,
                          std::uint64_t seed = 5) {
    data::SynthSpec spec;
    spec.n_subjects = subjects;
    spec.samples_per_subject = samples;
    spec.feature_dim = k;
    spec.subject_shift_scale = shift;
    spec.noise_scale = 0.05;
    spec.seed = seed;
    return data::synthesize_dataset(spec);
}

ExperimentConfig fast_config(Scenario scenario, ModelKind kind, std::vector<Method> methods) {
    ExperimentConfig cfg;
    cfg.scenario = scenario;
    cfg.model_kind = kind;
    cfg.methods = std::move(methods);
    cfg.t = 0.2;
    cfg.seed = 99;
    cfg.max_attack_per_subject = 0;  // attack everything; the test data is small
    cfg.train_cfg.max_epochs = 120;
    cfg.dataset_id = "unit-test";
    return cfg;
}

}  // namespace

TEST_CASE("rmse") {
    Eigen::VectorXd a(3), b(3);
    a << 1, 2, 3;
    b << 1, 2, 3;
    CHECK(rmse(a, b) == 0.0);

    Eigen::VectorXd zeros = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(2);
    CHECK(rmse(zeros, ones) == 1.0);

    b << 1, 2, 5;
    CHECK(rmse(a, b) == doctest::Approx(1.1547005383792515).epsilon(1e-15));

    CHECK_THROWS_AS(rmse(a, zeros), InputError);
    CHECK_THROWS_AS(rmse(Eigen::VectorXd(), Eigen::VectorXd()), InputError);
}

TEST_CASE("mean_output") {
    Eigen::VectorXd one(1);
    one << 0.5;
    CHECK(mean_output(one) == 0.5);
    Eigen::VectorXd two(2);
    two << 0.0, 1.0;
    CHECK(mean_output(two) == 0.5);
    Eigen::VectorXd three(3);
    three << 0.2, 0.3, 0.7;
    CHECK(mean_output(three) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK_THROWS_AS(mean_output(Eigen::VectorXd()), InputError);
}

TEST_CASE("asr") {
    std::vector<AttackResult> all = {fake_result(0.1, 0.5, 0.2), fake_result(0.2, 0.6, 0.2)};
    CHECK(asr(all, 0.2) == 1.0);

    std::vector<AttackResult> none = {fake_result(0.1, 0.15, 0.2), fake_result(0.2, 0.2, 0.2)};
    CHECK(asr(none, 0.2) == 0.0);

    std::vector<AttackResult> three_of_four = {fake_result(0.1, 0.5, 0.2),
                                               fake_result(0.1, 0.31, 0.2),
                                               fake_result(0.1, 0.4, 0.2),
                                               fake_result(0.1, 0.25, 0.2)};
    CHECK(asr(three_of_four, 0.2) == 0.75);

    CHECK_THROWS_AS(asr({}, 0.2), InputError);
    std::vector<AttackResult> mixed = {fake_result(0.1, 0.5, 0.2), fake_result(0.1, 0.5, 0.3)};
    CHECK_THROWS_AS(asr(mixed, 0.2), InputError);
}

TEST_CASE("calibrate_noise_sigma") {
    std::vector<AttackResult> zero = {fake_result(0.1, 0.5, 0.2, 0.0)};
    CHECK(calibrate_noise_sigma(zero, 10) == 0.0);

    std::vector<AttackResult> two = {fake_result(0.1, 0.5, 0.2, 1.0), fake_result(0.1, 0.5, 0.2, 2.0)};
    CHECK(calibrate_noise_sigma(two, 4) == 1.0);

    CHECK_THROWS_AS(calibrate_noise_sigma({}, 4), InputError);

    // Sampling check: with sigma = d_max/sqrt(k), the mean noise norm over
    // many draws approaches d_max.
    const int k = 100;
    const double d_max = 0.8;
    const double sigma = calibrate_noise_sigma({fake_result(0.1, 0.5, 0.2, d_max)}, k);
    double total = 0.0;
    const int n_draws = 1000;
    for (int s = 0; s < n_draws; ++s) {
        Rng rng(4000 + static_cast<std::uint64_t>(s));
        double sq = 0.0;
        for (int i = 0; i < k; ++i) {
            const double eta = sigma * rng.normal();
            sq += eta * eta;
        }
        total += std::sqrt(sq);
    }
    const double mean_norm = total / n_draws;
    CHECK(mean_norm > 0.95 * d_max);
    CHECK(mean_norm < 1.05 * d_max);
}

TEST_CASE("run_experiment baseline-only reports carry no attack columns") {
    const auto ds = small_synth();
    auto cfg = fast_config(Scenario::kWithinSubject, ModelKind::kRidge, {Method::kBaseline});
    const auto outcome = run_experiment(ds, cfg);
    REQUIRE(outcome.reports.size() == 1);
    const auto& rep = outcome.reports[0];
    CHECK(rep.method == Method::kBaseline);
    CHECK(std::isfinite(rep.rmse));
    CHECK(rep.rmse < 0.2);
    CHECK(rep.asr == 0.0);
    CHECK(rep.mean_distortion == 0.0);
    CHECK(rep.n_examples == 4 * 12);  // 10% of 120 per subject
}

TEST_CASE("run_experiment attack rows satisfy the paper-shaped properties") {
    // Full feature count: the sign attack's small L-infinity budget needs the
    // gradient mass of all 60 coordinates to reach a t = 0.2 output shift.
    const auto ds = small_synth(0.3, 3, 150, 60, 7);
    auto cfg = fast_config(Scenario::kWithinSubject, ModelKind::kRidge,
                           {Method::kBaseline, Method::kCwR, Method::kIfgsmR, Method::kRandomNoise});
    const auto outcome = run_experiment(ds, cfg);
    REQUIRE(outcome.reports.size() == 4);
    const auto& baseline = outcome.reports[0];
    const auto& cw = outcome.reports[1];
    const auto& ifgsm = outcome.reports[2];
    const auto& noise = outcome.reports[3];

    CHECK(cw.asr >= 0.95);
    // Post-attack mean output exceeds baseline by at least t*ASR for the
    // gradient methods.
    CHECK(cw.mean_output >= baseline.mean_output + cfg.t * cw.asr - 1e-9);
    CHECK(ifgsm.mean_output >= baseline.mean_output + cfg.t * ifgsm.asr - 1e-9);

    // Noise never beats the gradient attacks on the same examples.
    CHECK(noise.asr <= cw.asr);
    CHECK(noise.asr <= ifgsm.asr);

    // CW-R needs less distortion than the sign-step method.
    CHECK(cw.mean_distortion < ifgsm.mean_distortion);

    // Every adversarial example stays inside the box.
    for (Method m : {Method::kCwR, Method::kIfgsmR, Method::kRandomNoise}) {
        for (const auto& r : outcome.flat_results(m)) {
            CHECK(r.x_adversarial.minCoeff() >= 0.0);
            CHECK(r.x_adversarial.maxCoeff() <= 1.0);
        }
    }
}

TEST_CASE("run_experiment noise-only is rejected (needs calibration results)") {
    const auto ds = small_synth();
    auto cfg = fast_config(Scenario::kWithinSubject, ModelKind::kRidge, {Method::kRandomNoise});
    CHECK_THROWS_AS(run_experiment(ds, cfg), InputError);
}

TEST_CASE("run_experiment requires a normalized dataset") {
    data::Dataset raw;
    raw.feature_dim = 1;
    raw.feature_names = {"x"};
    data::SubjectData s;
    s.subject_id = "s";
    s.features = Eigen::MatrixXd::Constant(4, 1, 2.0);
    s.targets = Eigen::VectorXd::Zero(4);
    raw.subjects = {s};
    auto cfg = fast_config(Scenario::kWithinSubject, ModelKind::kRidge, {Method::kBaseline});
    CHECK_THROWS_AS(run_experiment(raw, cfg), InputError);
}

TEST_CASE("run_experiment is deterministic") {
    const auto ds = small_synth(0.3, 3, 60, 5);
    auto cfg = fast_config(Scenario::kCrossSubject, ModelKind::kRidge,
                           {Method::kBaseline, Method::kCwR});
    cfg.max_attack_per_subject = 20;
    const auto a = run_experiment(ds, cfg);
    const auto b = run_experiment(ds, cfg);
    REQUIRE(a.reports.size() == b.reports.size());
    for (std::size_t i = 0; i < a.reports.size(); ++i) {
        CHECK(a.reports[i].rmse == b.reports[i].rmse);
        CHECK(a.reports[i].mean_output == b.reports[i].mean_output);
        CHECK(a.reports[i].asr == b.reports[i].asr);
        CHECK(a.reports[i].mean_distortion == b.reports[i].mean_distortion);
        CHECK(a.reports[i].to_json().dump() == b.reports[i].to_json().dump());
    }
}

TEST_CASE("transferability") {
    const auto ds = small_synth();
    auto cfg = fast_config(Scenario::kWithinSubject, ModelKind::kRidge, {Method::kCwR});
    const auto outcome = run_experiment(ds, cfg);

    SUBCASE("self-transfer reproduces the source ASR exactly") {
        for (std::size_t u = 0; u < outcome.units.size(); ++u) {
            const auto& unit_results = outcome.results.at(Method::kCwR)[u];
            const TransferReport rep = transferability(unit_results, *outcome.units[u].model,
                                                       cfg.t, ModelKind::kRidge);
            CHECK(rep.asr_on_target == asr(unit_results, cfg.t));
        }
    }

    SUBCASE("constant target model yields zero transfer ASR") {
        models::RidgeModel constant;
        constant.weights = Eigen::VectorXd::Zero(ds.feature_dim);
        constant.intercept = 0.5;
        const auto flat = outcome.flat_results(Method::kCwR);
        const TransferReport rep = transferability(flat, constant, cfg.t, ModelKind::kRidge);
        CHECK(rep.asr_on_target == 0.0);
        CHECK(rep.n_examples == static_cast<int>(flat.size()));
    }

    SUBCASE("dimension mismatch is rejected") {
        models::RidgeModel wrong;
        wrong.weights = Eigen::VectorXd::Zero(ds.feature_dim + 1);
        CHECK_THROWS_AS(transferability(outcome.flat_results(Method::kCwR), wrong, cfg.t,
                                        ModelKind::kRidge),
                        InputError);
    }

    SUBCASE("empty results are rejected") {
        models::RidgeModel m;
        m.weights = Eigen::VectorXd::Zero(2);
        CHECK_THROWS_AS(transferability({}, m, cfg.t, ModelKind::kRidge), InputError);
    }
}

TEST_CASE("cross-model transfer beats the noise baseline on synthetic data") {
    const auto ds = small_synth(0.3, 3, 100, 6, 11);
    auto ridge_cfg = fast_config(Scenario::kWithinSubject, ModelKind::kRidge,
                                 {Method::kBaseline, Method::kCwR});
    auto mlp_cfg = fast_config(Scenario::kWithinSubject, ModelKind::kMlp,
                               {Method::kBaseline, Method::kCwR});
    const auto ridge_run = run_experiment(ds, ridge_cfg);
    const auto mlp_run = run_experiment(ds, mlp_cfg);

    auto mean_transfer = [&](const ExperimentOutcome& src, const ExperimentOutcome& dst,
                             ModelKind src_kind) {
        double asr_sum = 0.0, shift_sum = 0.0;
        for (std::size_t u = 0; u < src.units.size(); ++u) {
            const auto& results = src.results.at(Method::kCwR)[u];
            const auto rep = transferability(results, *dst.units[u].model, 0.2, src_kind);
            const Eigen::VectorXd base_preds =
                dst.units[u].model->predict_rows(dst.units[u].test_X);
            asr_sum += rep.asr_on_target;
            shift_sum += rep.mean_output_target - mean_output(base_preds);
        }
        return std::make_pair(asr_sum / static_cast<double>(src.units.size()),
                              shift_sum / static_cast<double>(src.units.size()));
    };

    const auto [ridge_to_mlp_asr, ridge_to_mlp_shift] =
        mean_transfer(ridge_run, mlp_run, ModelKind::kRidge);
    const auto [mlp_to_ridge_asr, mlp_to_ridge_shift] =
        mean_transfer(mlp_run, ridge_run, ModelKind::kMlp);

    CHECK(ridge_to_mlp_asr > 0.0);
    CHECK(mlp_to_ridge_asr > 0.0);
    CHECK(ridge_to_mlp_shift > 0.05);
    CHECK(mlp_to_ridge_shift > 0.05);
}

TEST_CASE("report serialization and rendering") {
    ExperimentReport rep;
    rep.scenario = Scenario::kWithinSubject;
    rep.dataset_id = "d";
    rep.model_kind = ModelKind::kRidge;
    rep.method = Method::kCwR;
    rep.rmse = 0.25;
    rep.mean_output = 0.58;
    rep.asr = 0.9959;
    rep.mean_distortion = 1.0 / 3.0;
    rep.n_examples = 1500;
    rep.config_snapshot = nlohmann::json{{"t", 0.2}};

    const auto path = std::filesystem::temp_directory_path() / "regattack_reports.json";
    write_reports_json({rep}, path.string());
    const auto back = load_reports_json(path.string());
    REQUIRE(back.size() == 1);
    CHECK(back[0].rmse == rep.rmse);
    CHECK(back[0].mean_distortion == rep.mean_distortion);
    CHECK(back[0].config_snapshot == rep.config_snapshot);
    std::filesystem::remove(path);

    const std::string table = render_reports({rep});
    CHECK(table.find("cw_r") != std::string::npos);
    CHECK(table.find("99.59%") != std::string::npos);
    CHECK(table.find("within_subject") != std::string::npos);
}
