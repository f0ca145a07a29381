#include "regattack/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace regattack::data {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Seed streams for the synthetic generator.
enum : std::uint64_t { kStreamBase = 1, kStreamSubject = 2, kStreamFeatures = 3, kStreamNoise = 4 };

}  // namespace

Eigen::MatrixXd NormalizationRecord::apply(const Eigen::MatrixXd& X) const {
    check_input(X.cols() == min.size(), "normalization: feature dimension mismatch");
    Eigen::MatrixXd out(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double lo = min(j), span = max(j) - min(j);
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            const double v = (X(i, j) - lo) / span;
            out(i, j) = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

Eigen::MatrixXd NormalizationRecord::denormalize(const Eigen::MatrixXd& X) const {
    check_input(X.cols() == min.size(), "normalization: feature dimension mismatch");
    Eigen::MatrixXd out(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j)
        out.col(j) = X.col(j).array() * (max(j) - min(j)) + min(j);
    return out;
}

nlohmann::json NormalizationRecord::to_json() const {
    nlohmann::json j;
    j["min"] = std::vector<double>(min.data(), min.data() + min.size());
    j["max"] = std::vector<double>(max.data(), max.data() + max.size());
    return j;
}

NormalizationRecord NormalizationRecord::from_json(const nlohmann::json& j) {
    const auto lo = j.at("min").get<std::vector<double>>();
    const auto hi = j.at("max").get<std::vector<double>>();
    check_input(lo.size() == hi.size(), "normalization record: min/max length mismatch");
    NormalizationRecord rec;
    rec.min = Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
    rec.max = Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size()));
    return rec;
}

int Dataset::total_samples() const {
    int n = 0;
    for (const auto& s : subjects) n += s.n();
    return n;
}

int Dataset::subject_index(const std::string& id) const {
    for (std::size_t i = 0; i < subjects.size(); ++i)
        if (subjects[i].subject_id == id) return static_cast<int>(i);
    throw InputError("unknown subject id: " + id);
}

void Dataset::validate() const {
    check_input(feature_dim >= 1, "dataset: feature_dim must be >= 1");
    check_input(static_cast<int>(feature_names.size()) == feature_dim,
                "dataset: feature_names length must equal feature_dim");
    for (const auto& s : subjects) {
        check_input(s.n() >= 1, "dataset: subject " + s.subject_id + " has no samples");
        check_input(s.features.cols() == feature_dim,
                    "dataset: subject " + s.subject_id + " has mismatched feature_dim");
        check_input(s.targets.size() == s.features.rows(),
                    "dataset: subject " + s.subject_id + " target/feature count mismatch");
        check_input(s.targets.allFinite(),
                    "dataset: subject " + s.subject_id + " has non-finite targets");
    }
    if (normalization) {
        for (const auto& s : subjects)
            check_input(s.features.minCoeff() >= 0.0 && s.features.maxCoeff() <= 1.0,
                        "dataset: normalized features must lie in [0,1]");
    }
}

void SynthSpec::validate() const {
    check_input(n_subjects >= 1, "synth spec: n_subjects must be >= 1");
    check_input(samples_per_subject >= 1, "synth spec: samples_per_subject must be >= 1");
    check_input(feature_dim >= 1, "synth spec: feature_dim must be >= 1");
    check_input(subject_shift_scale >= 0.0, "synth spec: subject_shift_scale must be >= 0");
    check_input(noise_scale >= 0.0, "synth spec: noise_scale must be >= 0");
}

nlohmann::json SynthSpec::to_json() const {
    return nlohmann::json{{"n_subjects", n_subjects},
                          {"samples_per_subject", samples_per_subject},
                          {"feature_dim", feature_dim},
                          {"subject_shift_scale", subject_shift_scale},
                          {"noise_scale", noise_scale},
                          {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
    SynthSpec s;
    s.n_subjects = j.at("n_subjects").get<int>();
    s.samples_per_subject = j.at("samples_per_subject").get<int>();
    s.feature_dim = j.at("feature_dim").get<int>();
    s.subject_shift_scale = j.at("subject_shift_scale").get<double>();
    s.noise_scale = j.at("noise_scale").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

Dataset synthesize_dataset(const SynthSpec& spec) {
    spec.validate();
    const int k = spec.feature_dim;
    // Per-coordinate weight scale. Every feature carries signal (heterogeneous
    // magnitudes, random signs) so trained victims expose input gradients with
    // a large L1 norm, which the small-step sign attacks need to move the
    // output by a full t within their L-infinity budget.
    const double weight_scale = 1.3;

    Rng base_rng(mix_seed(spec.seed, kStreamBase));
    Eigen::VectorXd w_base(k);
    for (int j = 0; j < k; ++j) {
        const double magnitude = weight_scale * base_rng.uniform(0.25, 1.75);
        w_base(j) = base_rng.uniform() < 0.5 ? -magnitude : magnitude;
    }

    Dataset ds;
    ds.feature_dim = k;
    ds.feature_names.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) ds.feature_names.push_back("f" + std::to_string(j));

    for (int s = 0; s < spec.n_subjects; ++s) {
        const auto si = static_cast<std::uint64_t>(s);
        Rng subj_rng(mix_seed(spec.seed, kStreamSubject, si));
        Eigen::VectorXd w = w_base;
        for (int j = 0; j < k; ++j)
            w(j) += spec.subject_shift_scale * subj_rng.normal(0.0, weight_scale);
        // Center the linear response at 0 for the mean input 0.5*1 so targets
        // sit around 0.5, like the drowsiness/RT indices.
        const double b = -0.5 * w.sum();

        SubjectData sd;
        sd.subject_id = "s" + std::string(s < 10 ? "0" : "") + std::to_string(s);
        sd.features.resize(spec.samples_per_subject, k);
        sd.targets.resize(spec.samples_per_subject);

        Rng feat_rng(mix_seed(spec.seed, kStreamFeatures, si));
        Rng noise_rng(mix_seed(spec.seed, kStreamNoise, si));
        for (int i = 0; i < spec.samples_per_subject; ++i) {
            for (int j = 0; j < k; ++j) sd.features(i, j) = feat_rng.uniform();
            double y = sigmoid(w.dot(sd.features.row(i)) + b);
            if (spec.noise_scale > 0.0) y += noise_rng.normal(0.0, spec.noise_scale);
            sd.targets(i) = std::clamp(y, 0.0, 1.0);
        }
        ds.subjects.push_back(std::move(sd));
    }

    return normalize_features(ds);
}

std::vector<std::pair<double, double>> default_bands() { return {{4.0, 7.0}, {7.0, 13.0}}; }

Eigen::VectorXd extract_band_power(const Eigen::MatrixXd& raw, double fs,
                                   const std::vector<std::pair<double, double>>& bands) {
    check_input(fs > 0.0, "band power: sampling rate must be positive");
    check_input(raw.rows() >= 1 && raw.cols() >= 2, "band power: need at least one channel and two samples");
    check_input(!bands.empty(), "band power: no bands given");

    const auto n = raw.cols();
    const double nyquist = fs / 2.0;
    double lowest = nyquist;
    for (const auto& [lo, hi] : bands) {
        check_input(lo > 0.0 && hi <= nyquist && lo < hi,
                    "band power: band outside (0, fs/2): [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + ")");
        lowest = std::min(lowest, lo);
    }
    check_input(static_cast<double>(n) >= 2.0 * fs / lowest,
                "band power: signal too short to resolve the lowest band edge");

    const double df = fs / static_cast<double>(n);
    const double two_pi = 2.0 * 3.141592653589793238462643383279502884;

    Eigen::VectorXd out(raw.rows() * static_cast<Eigen::Index>(bands.size()));
    Eigen::Index pos = 0;
    for (Eigen::Index ch = 0; ch < raw.rows(); ++ch) {
        for (const auto& [lo, hi] : bands) {
            // Frequency bins j*df inside [lo, hi).
            const auto j_first = static_cast<Eigen::Index>(std::ceil(lo / df));
            std::vector<double> powers;
            for (Eigen::Index j = j_first; static_cast<double>(j) * df < hi && j <= n / 2; ++j) {
                double re = 0.0, im = 0.0;
                for (Eigen::Index m = 0; m < n; ++m) {
                    const double phase = two_pi * static_cast<double>(j) * static_cast<double>(m) /
                                         static_cast<double>(n);
                    re += raw(ch, m) * std::cos(phase);
                    im -= raw(ch, m) * std::sin(phase);
                }
                // One-sided periodogram, rectangular window.
                double p = (re * re + im * im) / (fs * static_cast<double>(n));
                if (j != 0 && !(n % 2 == 0 && j == n / 2)) p *= 2.0;
                powers.push_back(p);
            }
            check_input(!powers.empty(), "band power: no frequency bins fall inside a band");
            double mean = 0.0;
            for (double p : powers) mean += p;
            out(pos++) = mean / static_cast<double>(powers.size());
        }
    }
    return out;
}

Dataset normalize_features(const Dataset& dataset) {
    dataset.validate();
    check_input(!dataset.normalization.has_value(), "normalize_features: dataset is already normalized");
    check_input(!dataset.subjects.empty(), "normalize_features: empty dataset");

    const int k = dataset.feature_dim;
    Eigen::VectorXd lo = Eigen::VectorXd::Constant(k, std::numeric_limits<double>::infinity());
    Eigen::VectorXd hi = Eigen::VectorXd::Constant(k, -std::numeric_limits<double>::infinity());
    for (const auto& s : dataset.subjects) {
        lo = lo.cwiseMin(s.features.colwise().minCoeff().transpose());
        hi = hi.cwiseMax(s.features.colwise().maxCoeff().transpose());
    }
    for (int j = 0; j < k; ++j) {
        if (!(lo(j) < hi(j)))
            throw InputError("normalize_features: constant feature '" + dataset.feature_names[j] + "'");
    }

    NormalizationRecord rec{lo, hi};
    Dataset out = dataset;
    for (auto& s : out.subjects) s.features = rec.apply(s.features);
    out.normalization = rec;
    return out;
}

SubjectSplit split_within_subject(const SubjectData& subject, double train_fraction,
                                  std::uint64_t seed) {
    const int n = subject.n();
    check_input(n >= 2, "split: subject " + subject.subject_id + " needs at least 2 samples");
    check_input(train_fraction > 0.0 && train_fraction < 1.0, "split: train_fraction must be in (0,1)");
    const int n_train = static_cast<int>(std::lround(train_fraction * n));
    check_input(n_train >= 1 && n_train <= n - 1,
                "split: degenerate sizes for subject " + subject.subject_id);

    Rng rng(seed);
    std::vector<int> perm = shuffled_indices(n, rng);
    SubjectSplit sp;
    sp.train_indices.assign(perm.begin(), perm.begin() + n_train);
    sp.test_indices.assign(perm.begin() + n_train, perm.end());
    std::sort(sp.train_indices.begin(), sp.train_indices.end());
    std::sort(sp.test_indices.begin(), sp.test_indices.end());

    auto take = [&subject](const std::vector<int>& rows, const std::string& tag) {
        SubjectData part;
        part.subject_id = subject.subject_id + tag;
        part.features.resize(static_cast<Eigen::Index>(rows.size()), subject.features.cols());
        part.targets.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            part.features.row(static_cast<Eigen::Index>(i)) = subject.features.row(rows[i]);
            part.targets(static_cast<Eigen::Index>(i)) = subject.targets(rows[i]);
        }
        return part;
    };
    sp.train = take(sp.train_indices, "");
    sp.test = take(sp.test_indices, "");
    return sp;
}

CrossSplit split_cross_subject(const Dataset& dataset, const std::string& test_subject) {
    check_input(dataset.subjects.size() >= 2, "cross split: need at least 2 subjects");
    const int ti = dataset.subject_index(test_subject);

    CrossSplit sp;
    sp.test = dataset.subjects[static_cast<std::size_t>(ti)];

    int n_train = 0;
    for (std::size_t i = 0; i < dataset.subjects.size(); ++i)
        if (static_cast<int>(i) != ti) n_train += dataset.subjects[i].n();
    sp.train.subject_id = "all_except_" + test_subject;
    sp.train.features.resize(n_train, dataset.feature_dim);
    sp.train.targets.resize(n_train);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < dataset.subjects.size(); ++i) {
        if (static_cast<int>(i) == ti) continue;
        const auto& s = dataset.subjects[i];
        sp.train.features.middleRows(row, s.n()) = s.features;
        sp.train.targets.segment(row, s.n()) = s.targets;
        row += s.n();
    }
    return sp;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) fields.push_back(cur);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_double(const std::string& tok, int line_no, const std::string& what) {
    const char* begin = tok.data();
    const char* end = tok.data() + tok.size();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
        throw ParseError("line " + std::to_string(line_no) + ": cannot parse " + what + " '" + tok + "'");
    return v;
}

}  // namespace

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "subject_id" || header[1] != "target")
        throw ParseError(path + ": header must be 'subject_id,target,<feature columns>'");

    Dataset ds;
    ds.feature_dim = static_cast<int>(header.size()) - 2;
    ds.feature_names.assign(header.begin() + 2, header.end());

    // Rows are grouped per subject in order of first appearance.
    std::map<std::string, std::size_t> subject_pos;
    std::vector<std::vector<std::vector<double>>> rows;  // per subject: list of (target, features...)

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " columns, got " +
                             std::to_string(fields.size()));
        const std::string& sid = fields[0];
        if (sid.empty())
            throw ParseError("line " + std::to_string(line_no) + ": empty subject_id");

        std::vector<double> vals;
        vals.reserve(fields.size() - 1);
        vals.push_back(parse_double(fields[1], line_no, "target"));
        if (!std::isfinite(vals[0]))
            throw ParseError("line " + std::to_string(line_no) + ": non-finite target");
        for (std::size_t j = 2; j < fields.size(); ++j) {
            const double v = parse_double(fields[j], line_no, "feature '" + header[j] + "'");
            if (!std::isfinite(v))
                throw ParseError("line " + std::to_string(line_no) + ": non-finite feature value");
            vals.push_back(v);
        }

        auto it = subject_pos.find(sid);
        if (it == subject_pos.end()) {
            it = subject_pos.emplace(sid, rows.size()).first;
            rows.emplace_back();
            ds.subjects.push_back(SubjectData{sid, {}, {}});
        }
        rows[it->second].push_back(std::move(vals));
    }
    if (rows.empty()) throw ParseError(path + ": no data rows");

    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto& s = ds.subjects[i];
        const auto n = static_cast<Eigen::Index>(rows[i].size());
        s.features.resize(n, ds.feature_dim);
        s.targets.resize(n);
        for (Eigen::Index r = 0; r < n; ++r) {
            const auto& vals = rows[i][static_cast<std::size_t>(r)];
            s.targets(r) = vals[0];
            for (int j = 0; j < ds.feature_dim; ++j)
                s.features(r, j) = vals[static_cast<std::size_t>(j) + 1];
        }
    }
    ds.validate();
    return ds;
}

void save_csv(const Dataset& dataset, const std::string& path) {
    dataset.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    out << "subject_id,target";
    for (const auto& name : dataset.feature_names) out << ',' << name;
    out << '\n';
    for (const auto& s : dataset.subjects) {
        for (Eigen::Index i = 0; i < s.features.rows(); ++i) {
            out << s.subject_id << ',' << format_double(s.targets(i));
            for (Eigen::Index j = 0; j < s.features.cols(); ++j)
                out << ',' << format_double(s.features(i, j));
            out << '\n';
        }
    }
    if (!out) throw ParseError("write failed: " + path);
}

}  // namespace regattack::data
