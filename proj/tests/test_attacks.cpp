#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "regattack/attacks.hpp"

using namespace regattack;
using namespace regattack::attacks;
using regattack::models::MlpModel;
using regattack::models::RidgeModel;

namespace {

RidgeModel ridge_1d(double w, double b = 0.0) {
    RidgeModel m;
    m.weights.resize(1);
    m.weights << w;
    m.intercept = b;
    return m;
}

RidgeModel random_ridge(int k, std::uint64_t seed) {
    Rng rng(seed);
    RidgeModel m;
    m.weights.resize(k);
    for (int i = 0; i < k; ++i) m.weights(i) = rng.normal(0.0, 0.4);
    m.intercept = rng.uniform();
    return m;
}

Eigen::VectorXd vec1(double v) {
    Eigen::VectorXd x(1);
    x << v;
    return x;
}

}  // namespace

TEST_CASE("tanh_reparam") {
    CHECK(tanh_reparam(vec1(0.0))(0) == 0.5);
    CHECK(std::abs(tanh_reparam(vec1(20.0))(0) - 1.0) < 1e-12);
    // 0.5 * (tanh(-1) + 1), frozen from an independent evaluation.
    CHECK(tanh_reparam(vec1(-1.0))(0) == doctest::Approx(0.11920292202211757).epsilon(1e-14));

    // Inverse round-trips on the open interval and stays finite at the ends.
    Rng rng(3);
    Eigen::VectorXd x(50);
    for (Eigen::Index i = 0; i < 50; ++i) x(i) = rng.uniform(0.001, 0.999);
    const Eigen::VectorXd back = tanh_reparam(tanh_reparam_inv(x));
    for (Eigen::Index i = 0; i < 50; ++i) CHECK(back(i) == doctest::Approx(x(i)).epsilon(1e-9));
    CHECK(std::isfinite(tanh_reparam_inv(vec1(0.0))(0)));
    CHECK(std::isfinite(tanh_reparam_inv(vec1(1.0))(0)));
}

TEST_CASE("cw_loss") {
    const RidgeModel m = ridge_1d(1.0);

    // Hinge boundary: g(x_adv) = g(x) + t exactly, so only the distance term.
    CHECK(cw_loss(vec1(0.3), vec1(0.5), 0.2, 7.0, m) ==
          doctest::Approx(0.2).epsilon(1e-12));

    // Unmoved input: distance zero, penalty c*t.
    CHECK(cw_loss(vec1(0.3), vec1(0.3), 0.2, 3.0, m) == doctest::Approx(0.6).epsilon(1e-12));

    // Hand-evaluated: |0.4-0.3| + 2*max{0.3+0.2-0.4, 0} = 0.1 + 0.2.
    CHECK(cw_loss(vec1(0.3), vec1(0.4), 0.2, 2.0, m) == doctest::Approx(0.3).epsilon(1e-12));

    CHECK_THROWS_AS(cw_loss(vec1(0.3), Eigen::VectorXd::Zero(2), 0.2, 1.0, m), InputError);
}

TEST_CASE("clip_perturbation") {
    CHECK(clip_perturbation(vec1(0.5), vec1(0.5), 0.1)(0) == 0.5);
    CHECK(clip_perturbation(vec1(0.5), vec1(0.9), 0.1)(0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(clip_perturbation(vec1(0.95), vec1(1.2), 0.1)(0) == 1.0);
    CHECK_THROWS_AS(clip_perturbation(vec1(0.5), Eigen::VectorXd::Zero(2), 0.1), InputError);
}

TEST_CASE("cw_r finds the near-minimal perturbation on a 1-D ridge") {
    const RidgeModel m = ridge_1d(1.0);
    CwConfig cfg;
    cfg.seed = 17;
    const AttackResult r = cw_r(m, vec1(0.3), cfg);
    CHECK(r.success);
    CHECK(r.x_adversarial(0) >= 0.5);
    CHECK(r.x_adversarial(0) <= 0.51);
    CHECK(r.distortion_l2 >= 0.2);
    CHECK(r.distortion_l2 <= 0.21);
    CHECK(r.output_before == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(r.iterations_used == cfg.N * cfg.M);
}

TEST_CASE("cw_r on an unattackable constant model reports failure") {
    RidgeModel m;
    m.weights = Eigen::VectorXd::Zero(3);
    m.intercept = 0.4;
    CwConfig cfg;
    cfg.seed = 4;
    Eigen::VectorXd x(3);
    x << 0.2, 0.5, 0.8;
    const AttackResult r = cw_r(m, x, cfg);
    CHECK(!r.success);
    CHECK(r.output_after == r.output_before);
    for (Eigen::Index i = 0; i < 3; ++i) {
        CHECK(r.x_adversarial(i) >= 0.0);
        CHECK(r.x_adversarial(i) <= 1.0);
    }
}

TEST_CASE("cw_r default configuration matches the experiment settings") {
    const CwConfig cfg;
    CHECK(cfg.t == 0.2);
    CHECK(cfg.N == 9);
    CHECK(cfg.c0 == 0.01);
    CHECK(cfg.c_upper_init == 1e4);
    CHECK(cfg.c_lower_init == 0.0);
}

TEST_CASE("cw_r binary search keeps probes inside a halving bracket") {
    const RidgeModel m = random_ridge(4, 21);
    Eigen::VectorXd x(4);
    x << 0.3, 0.6, 0.4, 0.5;
    CwConfig cfg;
    cfg.seed = 9;
    std::vector<CwRound> trace;
    cw_r(m, x, cfg, &trace);
    REQUIRE(static_cast<int>(trace.size()) == cfg.N);
    CHECK(trace[0].c == cfg.c0);
    for (const auto& round : trace) {
        CHECK(round.c >= round.c_lower);
        CHECK(round.c <= round.c_upper);
    }
    for (std::size_t i = 2; i < trace.size(); ++i) {
        const double prev_width = trace[i - 1].c_upper - trace[i - 1].c_lower;
        const double width = trace[i].c_upper - trace[i].c_lower;
        CHECK(width == doctest::Approx(0.5 * prev_width).epsilon(1e-12));
    }
}

TEST_CASE("cw_r distortion is near-optimal on 1-D linear victims") {
    Rng rng(2024);
    for (int trial = 0; trial < 5; ++trial) {
        const double w = rng.uniform(0.5, 2.0);
        const double t = rng.uniform(0.1, 0.3);
        const double x0 = rng.uniform(0.1, 0.9 - t / w);  // interior solution
        CwConfig cfg;
        cfg.t = t;
        cfg.seed = 1000 + static_cast<std::uint64_t>(trial);
        const AttackResult r = cw_r(ridge_1d(w), vec1(x0), cfg);
        REQUIRE(r.success);
        CHECK(r.distortion_l2 <= 1.05 * t / w);
    }
}

TEST_CASE("cw_r surfaces non-finite model output as a numeric error") {
    RidgeModel m = ridge_1d(1.0);
    m.weights(0) = std::numeric_limits<double>::quiet_NaN();
    CwConfig cfg;
    try {
        cw_r(m, vec1(0.3), cfg);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string what = e.what();
        CHECK(what.find("round") != std::string::npos);
        CHECK(what.find("iteration") != std::string::npos);
    }
}

TEST_CASE("ifgsm_r walks to the target and freezes") {
    const RidgeModel m = ridge_1d(1.0);
    IfgsmConfig cfg;
    cfg.t = 0.2;
    cfg.epsilon = 0.3;
    cfg.alpha = 0.01;
    cfg.M = 25;
    const AttackResult r = ifgsm_r(m, vec1(0.3), cfg);
    CHECK(r.success);
    // 20 active steps of +0.01 starting at 0.3; the hinge then deactivates.
    CHECK(r.x_adversarial(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.iterations_used == 26);

    // With more iterations nothing moves after the freeze.
    IfgsmConfig longer = cfg;
    longer.M = 200;
    const AttackResult r2 = ifgsm_r(m, vec1(0.3), longer);
    CHECK(r2.x_adversarial == r.x_adversarial);
}

TEST_CASE("ifgsm_r is stopped by the epsilon ball") {
    const RidgeModel m = ridge_1d(1.0);
    IfgsmConfig cfg;
    cfg.t = 0.2;
    cfg.epsilon = 0.05;
    cfg.alpha = 0.01;
    cfg.M = 25;
    const AttackResult r = ifgsm_r(m, vec1(0.3), cfg);
    CHECK(!r.success);
    CHECK(r.x_adversarial(0) == doctest::Approx(0.35).epsilon(1e-12));
    CHECK(r.distortion_linf <= cfg.epsilon + 1e-12);
}

TEST_CASE("ifgsm_r default configuration matches the experiment settings") {
    const IfgsmConfig cfg;
    CHECK(cfg.t == 0.2);
    CHECK(cfg.M == 25);
    CHECK(cfg.alpha == 0.001);
    const auto grid = IfgsmConfig::default_grid();
    REQUIRE(grid.size() == 30);
    CHECK(grid.front() == doctest::Approx(0.001).epsilon(1e-15));
    CHECK(grid.back() == doctest::Approx(0.03).epsilon(1e-15));
}

TEST_CASE("ifgsm_r respects the L-infinity bound on random problems") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const RidgeModel m = random_ridge(8, 300 + static_cast<std::uint64_t>(trial));
        Eigen::VectorXd x(8);
        for (Eigen::Index i = 0; i < 8; ++i) x(i) = rng.uniform();
        IfgsmConfig cfg;
        cfg.t = 0.1;
        cfg.epsilon = rng.uniform(0.01, 0.2);
        cfg.alpha = cfg.epsilon / 10.0;
        const AttackResult r = ifgsm_r(m, x, cfg);
        CHECK(r.distortion_linf <= cfg.epsilon + 1e-12);
        CHECK(r.x_adversarial.minCoeff() >= 0.0);
        CHECK(r.x_adversarial.maxCoeff() <= 1.0);
        // Success flag recomputed from stored outputs must agree.
        CHECK(r.success == (r.output_after >= r.output_before + r.t));
        CHECK(std::abs(r.distortion_l2 - (r.x_adversarial - r.x_original).norm()) <= 1e-12);
    }
}

TEST_CASE("ifgsm_r freezes permanently once the hinge deactivates") {
    // Property: rerunning with a larger iteration budget never changes a
    // successful iterate.
    Rng rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        const RidgeModel m = random_ridge(5, 400 + static_cast<std::uint64_t>(trial));
        Eigen::VectorXd x(5);
        for (Eigen::Index i = 0; i < 5; ++i) x(i) = rng.uniform(0.2, 0.8);
        IfgsmConfig cfg;
        cfg.t = 0.05;
        cfg.epsilon = 0.3;
        cfg.alpha = 0.01;
        cfg.M = 40;
        const AttackResult r = ifgsm_r(m, x, cfg);
        if (!r.success) continue;
        IfgsmConfig longer = cfg;
        longer.M = 80;
        CHECK(ifgsm_r(m, x, longer).x_adversarial == r.x_adversarial);
    }
}

TEST_CASE("ifgsm_r_grid picks the smallest sufficient epsilon") {
    const RidgeModel m = ridge_1d(1.0);
    IfgsmConfig cfg;
    cfg.t = 0.02;
    cfg.alpha = 0.001;
    cfg.M = 25;
    cfg.epsilon_grid = IfgsmConfig::default_grid();
    const AttackResult r = ifgsm_r_grid(m, vec1(0.3), cfg);
    CHECK(r.success);
    // Reachable shift is min(epsilon, steps*alpha); 0.019 fails, 0.02 lands
    // exactly on the clip boundary.
    CHECK(r.x_adversarial(0) == doctest::Approx(0.32).epsilon(1e-12));
    CHECK(r.distortion_linf <= 0.02 + 1e-12);
}

TEST_CASE("ifgsm_r_grid returns the largest-epsilon result when everything fails") {
    RidgeModel m;
    m.weights = Eigen::VectorXd::Zero(2);
    m.intercept = 0.1;
    IfgsmConfig cfg;
    cfg.t = 0.2;
    cfg.alpha = 0.001;
    cfg.epsilon_grid = IfgsmConfig::default_grid();
    Eigen::VectorXd x(2);
    x << 0.4, 0.6;
    const AttackResult r = ifgsm_r_grid(m, x, cfg);
    CHECK(!r.success);
    CHECK(r.distortion_linf <= 0.03 + 1e-12);
    CHECK_THROWS_AS(ifgsm_r_grid(m, x, IfgsmConfig{}), InputError);  // empty grid
}

TEST_CASE("config validation rejects inconsistent attack settings") {
    IfgsmConfig bad;
    bad.alpha = 0.05;
    bad.epsilon = 0.01;
    const RidgeModel m = ridge_1d(1.0);
    CHECK_THROWS_AS(ifgsm_r(m, vec1(0.5), bad), InputError);

    IfgsmConfig unsorted;
    unsorted.epsilon_grid = {0.01, 0.005};
    CHECK_THROWS_AS(ifgsm_r_grid(m, vec1(0.5), unsorted), InputError);

    CwConfig cw;
    cw.c_lower_init = 5.0;
    cw.c_upper_init = 1.0;
    CHECK_THROWS_AS(cw_r(m, vec1(0.5), cw), InputError);

    CHECK_THROWS_AS(cw_r(m, vec1(1.5), CwConfig{}), InputError);  // outside [0,1]
}

TEST_CASE("gaussian_noise_attack") {
    const RidgeModel m = ridge_1d(1.0);

    SUBCASE("sigma zero is a no-op and never succeeds") {
        const AttackResult r = gaussian_noise_attack(m, vec1(0.3), 0.2, 0.0, 5);
        CHECK(r.x_adversarial == r.x_original);
        CHECK(!r.success);
        CHECK(r.distortion_l2 == 0.0);
    }

    SUBCASE("deterministic given the seed") {
        const RidgeModel m8 = random_ridge(8, 700);
        Eigen::VectorXd x(8);
        x.setConstant(0.5);
        const AttackResult a = gaussian_noise_attack(m8, x, 0.2, 0.05, 11);
        const AttackResult b = gaussian_noise_attack(m8, x, 0.2, 0.05, 11);
        const AttackResult c = gaussian_noise_attack(m8, x, 0.2, 0.05, 12);
        CHECK(a.x_adversarial == b.x_adversarial);
        CHECK(a.x_adversarial != c.x_adversarial);
    }

    SUBCASE("mean noise norm matches the chi-distribution prediction") {
        // k=100, sigma=0.05: E||eta||_2 ~= sigma*sqrt(k) = 0.5. x = 0.5*ones
        // keeps the clamp inactive, so the distortion equals the raw norm.
        const int k = 100;
        RidgeModel wide;
        wide.weights = Eigen::VectorXd::Zero(k);
        wide.intercept = 0.0;
        Eigen::VectorXd x = Eigen::VectorXd::Constant(k, 0.5);
        double total = 0.0;
        const int n_draws = 1000;
        for (int s = 0; s < n_draws; ++s)
            total += gaussian_noise_attack(wide, x, 0.2, 0.05, 9000 + static_cast<std::uint64_t>(s))
                         .distortion_l2;
        const double mean_norm = total / n_draws;
        CHECK(mean_norm > 0.95 * 0.5);
        CHECK(mean_norm < 1.05 * 0.5);
    }
}

TEST_CASE("every attack keeps x_adversarial inside [0,1]^k") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        const RidgeModel m = random_ridge(6, 800 + static_cast<std::uint64_t>(trial));
        Eigen::VectorXd x(6);
        for (Eigen::Index i = 0; i < 6; ++i) x(i) = rng.uniform();
        CwConfig cw;
        cw.t = 0.1;
        cw.M = 30;
        cw.seed = static_cast<std::uint64_t>(trial);
        IfgsmConfig ig;
        ig.t = 0.1;
        std::vector<AttackResult> results;
        results.push_back(cw_r(m, x, cw));
        results.push_back(ifgsm_r(m, x, ig));
        results.push_back(gaussian_noise_attack(m, x, 0.1, 0.3, cw.seed));
        for (const auto& r : results) {
            CHECK(r.x_adversarial.minCoeff() >= 0.0);
            CHECK(r.x_adversarial.maxCoeff() <= 1.0);
            CHECK(r.success == (r.output_after >= r.output_before + r.t));
        }
    }
}

TEST_CASE("attacks are deterministic given model, input, config, and seed") {
    const RidgeModel m = random_ridge(5, 1234);
    Eigen::VectorXd x(5);
    x << 0.2, 0.4, 0.6, 0.8, 0.5;
    CwConfig cw;
    cw.seed = 5;
    cw.M = 40;
    const AttackResult a = cw_r(m, x, cw);
    const AttackResult b = cw_r(m, x, cw);
    CHECK(a.x_adversarial == b.x_adversarial);
    CHECK(a.output_after == b.output_after);
    CHECK(a.distortion_l2 == b.distortion_l2);

    IfgsmConfig ig;
    const AttackResult c = ifgsm_r(m, x, ig);
    const AttackResult d = ifgsm_r(m, x, ig);
    CHECK(c.x_adversarial == d.x_adversarial);
}

TEST_CASE("attack results serialize to CSV and JSON") {
    const RidgeModel m = ridge_1d(1.0);
    std::vector<AttackResult> results;
    IfgsmConfig ig;
    ig.t = 0.1;
    results.push_back(ifgsm_r(m, vec1(0.3), ig));
    results.push_back(gaussian_noise_attack(m, vec1(0.5), 0.1, 0.02, 3));
    const std::vector<std::string> subjects = {"s0", "s0"};
    const std::vector<int> ids = {0, 1};

    const auto csv_path = std::filesystem::temp_directory_path() / "regattack_results.csv";
    const auto json_path = std::filesystem::temp_directory_path() / "regattack_results.json";
    write_results_csv(results, subjects, ids, csv_path.string());
    write_results_json(results, subjects, ids, json_path.string());

    const StoredResults back = load_results_json(json_path.string());
    REQUIRE(back.results.size() == 2);
    CHECK(back.subject_ids == subjects);
    CHECK(back.example_ids == ids);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.results[i].x_adversarial == results[i].x_adversarial);
        CHECK(back.results[i].output_after == results[i].output_after);
        CHECK(back.results[i].method == results[i].method);
    }

    std::ifstream csv(csv_path);
    std::string header;
    std::getline(csv, header);
    CHECK(header ==
          "example_id,subject_id,method,success,output_before,output_after,t,distortion_l2,"
          "distortion_linf,iterations_used");

    std::filesystem::remove(csv_path);
    std::filesystem::remove(json_path);
}
