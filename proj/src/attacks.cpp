#include "regattack/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace regattack::attacks {

namespace {

constexpr double kReparamMargin = 1e-6;  // mu: keeps artanh finite at 0/1

void check_box(const Eigen::VectorXd& x, const char* who) {
    for (Eigen::Index i = 0; i < x.size(); ++i)
        check_input(x(i) >= 0.0 && x(i) <= 1.0, std::string(who) + ": x must lie in [0,1]^k");
}

AttackResult finalize(Method method, const Eigen::VectorXd& x, Eigen::VectorXd x_adv,
                      double output_before, double output_after, double t, int iterations) {
    AttackResult r;
    r.method = method;
    r.x_original = x;
    r.x_adversarial = std::move(x_adv);
    r.output_before = output_before;
    r.output_after = output_after;
    r.t = t;
    r.success = output_after >= output_before + t;
    const Eigen::VectorXd delta = r.x_adversarial - x;
    r.distortion_l2 = delta.norm();
    r.distortion_linf = delta.size() == 0 ? 0.0 : delta.cwiseAbs().maxCoeff();
    r.iterations_used = iterations;
    return r;
}

}  // namespace

std::string method_name(Method m) {
    switch (m) {
        case Method::kBaseline: return "baseline";
        case Method::kCwR: return "cw_r";
        case Method::kIfgsmR: return "ifgsm_r";
        case Method::kRandomNoise: return "random_noise";
    }
    throw InputError("unknown method enum value");
}

Method method_from_name(const std::string& name) {
    if (name == "baseline") return Method::kBaseline;
    if (name == "cw_r") return Method::kCwR;
    if (name == "ifgsm_r") return Method::kIfgsmR;
    if (name == "random_noise") return Method::kRandomNoise;
    throw InputError("unknown method '" + name + "'");
}

void CwConfig::validate() const {
    check_input(t > 0.0, "cw config: t must be positive");
    check_input(M >= 1, "cw config: M must be >= 1");
    check_input(N >= 1, "cw config: N must be >= 1");
    check_input(c0 > 0.0, "cw config: c0 must be positive");
    check_input(inner_lr > 0.0, "cw config: inner_lr must be positive");
    check_input(c_lower_init >= 0.0, "cw config: c_lower_init must be >= 0");
    check_input(c_lower_init < c_upper_init, "cw config: need c_lower_init < c_upper_init");
}

nlohmann::json CwConfig::to_json() const {
    return nlohmann::json{{"t", t},
                          {"M", M},
                          {"N", N},
                          {"c0", c0},
                          {"inner_lr", inner_lr},
                          {"c_upper_init", c_upper_init},
                          {"c_lower_init", c_lower_init},
                          {"seed", seed}};
}

CwConfig CwConfig::from_json(const nlohmann::json& j) {
    CwConfig c;
    c.t = j.at("t").get<double>();
    c.M = j.at("M").get<int>();
    c.N = j.at("N").get<int>();
    c.c0 = j.at("c0").get<double>();
    c.inner_lr = j.at("inner_lr").get<double>();
    c.c_upper_init = j.at("c_upper_init").get<double>();
    c.c_lower_init = j.at("c_lower_init").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

void IfgsmConfig::validate() const {
    check_input(t > 0.0, "ifgsm config: t must be positive");
    check_input(M >= 1, "ifgsm config: M must be >= 1");
    check_input(epsilon > 0.0, "ifgsm config: epsilon must be positive");
    check_input(alpha > 0.0, "ifgsm config: alpha must be positive");
    check_input(alpha <= epsilon, "ifgsm config: alpha must not exceed epsilon");
    if (!epsilon_grid.empty()) {
        for (std::size_t i = 0; i < epsilon_grid.size(); ++i) {
            check_input(epsilon_grid[i] > 0.0, "ifgsm config: grid epsilons must be positive");
            if (i > 0)
                check_input(epsilon_grid[i] > epsilon_grid[i - 1],
                            "ifgsm config: epsilon_grid must be strictly ascending");
        }
        check_input(alpha <= epsilon_grid.front(),
                    "ifgsm config: alpha must not exceed the smallest grid epsilon");
    }
}

nlohmann::json IfgsmConfig::to_json() const {
    return nlohmann::json{{"t", t},
                          {"M", M},
                          {"epsilon", epsilon},
                          {"alpha", alpha},
                          {"epsilon_grid", epsilon_grid}};
}

IfgsmConfig IfgsmConfig::from_json(const nlohmann::json& j) {
    IfgsmConfig c;
    c.t = j.at("t").get<double>();
    c.M = j.at("M").get<int>();
    c.epsilon = j.at("epsilon").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.epsilon_grid = j.at("epsilon_grid").get<std::vector<double>>();
    return c;
}

std::vector<double> IfgsmConfig::default_grid() {
    std::vector<double> grid;
    for (int i = 1; i <= 30; ++i) grid.push_back(static_cast<double>(i) * 0.001);
    return grid;
}

Eigen::VectorXd tanh_reparam(const Eigen::VectorXd& omega) {
    return 0.5 * (omega.array().tanh() + 1.0);
}

Eigen::VectorXd tanh_reparam_inv(const Eigen::VectorXd& x) {
    Eigen::VectorXd out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = std::clamp(x(i), kReparamMargin, 1.0 - kReparamMargin);
        out(i) = std::atanh(2.0 * v - 1.0);
    }
    return out;
}

double cw_loss(const Eigen::VectorXd& x, const Eigen::VectorXd& x_adv, double t, double c,
               const models::RegressionModel& model) {
    check_input(x.size() == x_adv.size(), "cw_loss: dimension mismatch");
    const double hinge = model.predict(x) + t - model.predict(x_adv);
    return (x_adv - x).norm() + c * std::max(hinge, 0.0);
}

Eigen::VectorXd clip_perturbation(const Eigen::VectorXd& x, const Eigen::VectorXd& candidate,
                                  double epsilon) {
    check_input(x.size() == candidate.size(), "clip_perturbation: dimension mismatch");
    check_input(epsilon > 0.0, "clip_perturbation: epsilon must be positive");
    Eigen::VectorXd out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double lo = std::max(x(i) - epsilon, 0.0);
        const double hi = std::min(x(i) + epsilon, 1.0);
        out(i) = std::clamp(candidate(i), lo, hi);
    }
    return out;
}

AttackResult cw_r(const models::RegressionModel& model, const Eigen::VectorXd& x,
                  const CwConfig& cfg, std::vector<CwRound>* trace) {
    cfg.validate();
    check_input(x.size() == model.input_dim(), "cw_r: dimension mismatch");
    check_box(x, "cw_r");

    const double g0 = model.predict(x);
    const double target = g0 + cfg.t;

    // Start near x with slight randomization; a pure random start would spend
    // most iterations traversing the domain. Each binary-search round restarts
    // from the best iterate found so far (or near x before the first success):
    // a round probed at very large c drives omega deep into tanh saturation,
    // where gradients vanish and a carried-over omega would stay stuck for all
    // remaining rounds.
    Rng rng(cfg.seed);
    const Eigen::VectorXd omega_center = tanh_reparam_inv(x);
    auto noisy = [&](const Eigen::VectorXd& center) {
        Eigen::VectorXd omega = center;
        for (Eigen::Index i = 0; i < omega.size(); ++i) omega(i) += rng.normal(0.0, 0.01);
        return omega;
    };
    Eigen::VectorXd omega = noisy(omega_center);

    double c = cfg.c0;
    double c_lower = cfg.c_lower_init;
    double c_upper = cfg.c_upper_init;

    Eigen::VectorXd best;
    double best_output = 0.0;
    double d_min = std::numeric_limits<double>::infinity();
    bool have_best = false;
    int iterations = 0;

    for (int round = 1; round <= cfg.N; ++round) {
        if (round > 1) {
            if (have_best) {
                // Restart on the segment from x toward the incumbent, at the
                // point whose interpolated output just reaches the target.
                // This keeps the start interior (no tanh saturation) while
                // letting later rounds refine the incumbent.
                const double gain = best_output - g0;
                const double lambda = gain > cfg.t ? cfg.t / gain : 1.0;
                omega = noisy(tanh_reparam_inv(x + lambda * (best - x)));
            } else {
                omega = noisy(omega_center);
            }
        }
        bool round_success = false;
        for (int m = 1; m <= cfg.M; ++m) {
            const Eigen::VectorXd p = tanh_reparam(omega);
            const Eigen::VectorXd diff = p - x;
            const double dist = diff.norm();
            const double gp = model.predict(p);
            const double hinge = g0 + cfg.t - gp;
            const double loss = dist + c * std::max(hinge, 0.0);
            if (!std::isfinite(loss))
                throw NumericError("cw_r: non-finite loss at round " + std::to_string(round) +
                                   ", iteration " + std::to_string(m));

            // d(loss)/d(omega) through p = 0.5*(tanh(omega)+1).
            Eigen::VectorXd grad_p = Eigen::VectorXd::Zero(x.size());
            if (dist > 0.0) grad_p = diff / dist;
            if (hinge > 0.0) grad_p -= c * model.input_gradient(p);
            const Eigen::ArrayXd dp_domega = 0.5 * (1.0 - omega.array().tanh().square());
            const Eigen::VectorXd grad_omega = (grad_p.array() * dp_domega).matrix();
            if (!grad_omega.allFinite())
                throw NumericError("cw_r: non-finite gradient at round " + std::to_string(round) +
                                   ", iteration " + std::to_string(m));

            omega -= cfg.inner_lr * grad_omega;
            ++iterations;

            if (gp >= target) {
                round_success = true;
                if (dist <= d_min) {
                    best = p;
                    best_output = gp;
                    d_min = dist;
                    have_best = true;
                }
            }
        }

        if (trace) trace->push_back(CwRound{c, c_lower, c_upper, round_success});

        // Bracket update with the c actually optimized this round, then probe
        // the midpoint next round.
        if (round_success)
            c_upper = c;
        else
            c_lower = c;
        c = 0.5 * (c_upper + c_lower);
    }

    if (have_best) return finalize(Method::kCwR, x, best, g0, best_output, cfg.t, iterations);

    Eigen::VectorXd final_iterate = tanh_reparam(omega);
    const double g_final = model.predict(final_iterate);
    return finalize(Method::kCwR, x, std::move(final_iterate), g0, g_final, cfg.t, iterations);
}

AttackResult ifgsm_r(const models::RegressionModel& model, const Eigen::VectorXd& x,
                     const IfgsmConfig& cfg) {
    cfg.validate();
    check_input(x.size() == model.input_dim(), "ifgsm_r: dimension mismatch");
    check_box(x, "ifgsm_r");

    const double g0 = model.predict(x);
    Eigen::VectorXd xc = x;
    double gc = g0;

    for (int m = 0; m <= cfg.M; ++m) {
        // Hinge gradient: -grad g while g(x') < g(x) + t, zero once satisfied
        // (sign(0) = 0 makes satisfied iterates fixed points).
        if (g0 + cfg.t - gc <= 0.0) continue;
        const Eigen::VectorXd grad_g = model.input_gradient(xc);
        if (!grad_g.allFinite())
            throw NumericError("ifgsm_r: non-finite gradient at iteration " + std::to_string(m));
        Eigen::VectorXd step(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double loss_grad = -grad_g(i);
            step(i) = loss_grad > 0.0 ? 1.0 : (loss_grad < 0.0 ? -1.0 : 0.0);
        }
        xc = clip_perturbation(x, xc - cfg.alpha * step, cfg.epsilon);
        gc = model.predict(xc);
    }

    return finalize(Method::kIfgsmR, x, std::move(xc), g0, gc, cfg.t, cfg.M + 1);
}

AttackResult ifgsm_r_grid(const models::RegressionModel& model, const Eigen::VectorXd& x,
                          const IfgsmConfig& cfg) {
    cfg.validate();
    check_input(!cfg.epsilon_grid.empty(), "ifgsm_r_grid: epsilon_grid must be non-empty");

    AttackResult last;
    for (double eps : cfg.epsilon_grid) {
        IfgsmConfig single = cfg;
        single.epsilon = eps;
        single.epsilon_grid.clear();
        last = ifgsm_r(model, x, single);
        if (last.success) return last;
    }
    return last;
}

AttackResult gaussian_noise_attack(const models::RegressionModel& model, const Eigen::VectorXd& x,
                                   double t, double sigma, std::uint64_t seed) {
    check_input(x.size() == model.input_dim(), "gaussian_noise_attack: dimension mismatch");
    check_input(t > 0.0, "gaussian_noise_attack: t must be positive");
    check_input(sigma >= 0.0, "gaussian_noise_attack: sigma must be >= 0");
    check_box(x, "gaussian_noise_attack");

    Rng rng(seed);
    Eigen::VectorXd x_adv(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        x_adv(i) = std::clamp(x(i) + rng.normal(0.0, sigma), 0.0, 1.0);

    const double g0 = model.predict(x);
    const double g_adv = model.predict(x_adv);
    return finalize(Method::kRandomNoise, x, std::move(x_adv), g0, g_adv, t, 1);
}

void write_results_csv(const std::vector<AttackResult>& results,
                       const std::vector<std::string>& subject_ids,
                       const std::vector<int>& example_ids, const std::string& path) {
    check_input(results.size() == subject_ids.size() && results.size() == example_ids.size(),
                "write_results_csv: results/ids length mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << "example_id,subject_id,method,success,output_before,output_after,t,"
           "distortion_l2,distortion_linf,iterations_used\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        out << example_ids[i] << ',' << subject_ids[i] << ',' << method_name(r.method) << ','
            << (r.success ? 1 : 0) << ',' << format_double(r.output_before) << ','
            << format_double(r.output_after) << ',' << format_double(r.t) << ','
            << format_double(r.distortion_l2) << ',' << format_double(r.distortion_linf) << ','
            << r.iterations_used << '\n';
    }
    if (!out) throw ParseError("write failed: " + path);
}

void write_results_json(const std::vector<AttackResult>& results,
                        const std::vector<std::string>& subject_ids,
                        const std::vector<int>& example_ids, const std::string& path) {
    check_input(results.size() == subject_ids.size() && results.size() == example_ids.size(),
                "write_results_json: results/ids length mismatch");
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        arr.push_back(nlohmann::json{
            {"example_id", example_ids[i]},
            {"subject_id", subject_ids[i]},
            {"method", method_name(r.method)},
            {"success", r.success},
            {"output_before", r.output_before},
            {"output_after", r.output_after},
            {"t", r.t},
            {"distortion_l2", r.distortion_l2},
            {"distortion_linf", r.distortion_linf},
            {"iterations_used", r.iterations_used},
            {"x_original", std::vector<double>(r.x_original.data(),
                                               r.x_original.data() + r.x_original.size())},
            {"x_adversarial",
             std::vector<double>(r.x_adversarial.data(),
                                 r.x_adversarial.data() + r.x_adversarial.size())}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << arr.dump() << '\n';
    if (!out) throw ParseError("write failed: " + path);
}

StoredResults load_results_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open results file: " + path);
    nlohmann::json arr;
    try {
        in >> arr;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("results file " + path + ": " + e.what());
    }
    StoredResults stored;
    for (const auto& j : arr) {
        AttackResult r;
        r.method = method_from_name(j.at("method").get<std::string>());
        r.success = j.at("success").get<bool>();
        r.output_before = j.at("output_before").get<double>();
        r.output_after = j.at("output_after").get<double>();
        r.t = j.at("t").get<double>();
        r.distortion_l2 = j.at("distortion_l2").get<double>();
        r.distortion_linf = j.at("distortion_linf").get<double>();
        r.iterations_used = j.at("iterations_used").get<int>();
        const auto xo = j.at("x_original").get<std::vector<double>>();
        const auto xa = j.at("x_adversarial").get<std::vector<double>>();
        r.x_original = Eigen::Map<const Eigen::VectorXd>(xo.data(), static_cast<Eigen::Index>(xo.size()));
        r.x_adversarial =
            Eigen::Map<const Eigen::VectorXd>(xa.data(), static_cast<Eigen::Index>(xa.size()));
        stored.results.push_back(std::move(r));
        stored.subject_ids.push_back(j.at("subject_id").get<std::string>());
        stored.example_ids.push_back(j.at("example_id").get<int>());
    }
    return stored;
}

}  // namespace regattack::attacks
