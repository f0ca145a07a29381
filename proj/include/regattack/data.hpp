#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "regattack/common.hpp"

namespace regattack::data {

/// Per-feature min/max used for min-max scaling into [0,1]. Applying the
/// record to unseen data clamps into [0,1].
struct NormalizationRecord {
    Eigen::VectorXd min;
    Eigen::VectorXd max;

    /// (v - min) / (max - min), clamped into [0,1].
    Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
    /// Inverse affine map; does not clamp.
    Eigen::MatrixXd denormalize(const Eigen::MatrixXd& X) const;

    nlohmann::json to_json() const;
    static NormalizationRecord from_json(const nlohmann::json& j);
};

struct SubjectData {
    std::string subject_id;
    Eigen::MatrixXd features;  // n_i x k, one row per trial
    Eigen::VectorXd targets;   // length n_i

    int n() const { return static_cast<int>(features.rows()); }
};

struct Dataset {
    std::vector<SubjectData> subjects;
    int feature_dim = 0;
    std::vector<std::string> feature_names;
    std::optional<NormalizationRecord> normalization;

    int total_samples() const;
    /// Index of the subject with the given id, or throws InputError.
    int subject_index(const std::string& id) const;
    /// Consistency checks: shared feature_dim, finite targets, name count.
    void validate() const;
};

/// Generator knobs for the synthetic multi-subject regression data standing
/// in for the non-public EEG datasets.
struct SynthSpec {
    int n_subjects = 15;
    int samples_per_subject = 1000;
    int feature_dim = 60;
    double subject_shift_scale = 0.3;
    double noise_scale = 0.05;
    std::uint64_t seed = 42;

    void validate() const;
    nlohmann::json to_json() const;
    static SynthSpec from_json(const nlohmann::json& j);
};

/// Multi-subject data from a shared latent linear model plus per-subject
/// weight perturbations; targets pass through a sigmoid so they occupy (0,1).
/// Output is already normalized (record attached). Deterministic given seed.
Dataset synthesize_dataset(const SynthSpec& spec);

/// Default analysis bands: theta (4,7) Hz and alpha (7,13) Hz.
std::vector<std::pair<double, double>> default_bands();

/// Mean single-window (rectangular) periodogram power per channel and band,
/// ordered channel-major. raw is channels x samples at sampling rate fs.
Eigen::VectorXd extract_band_power(const Eigen::MatrixXd& raw, double fs,
                                   const std::vector<std::pair<double, double>>& bands = default_bands());

/// Min-max scaling per feature over all subjects; rejects constant features.
Dataset normalize_features(const Dataset& dataset);

struct SubjectSplit {
    SubjectData train;
    SubjectData test;
    std::vector<int> train_indices;  // row indices into the source subject
    std::vector<int> test_indices;
};

/// Random partition of one subject's trials; train size = round(fraction * n).
SubjectSplit split_within_subject(const SubjectData& subject, double train_fraction,
                                  std::uint64_t seed);

struct CrossSplit {
    SubjectData train;  // concatenation of all other subjects
    SubjectData test;   // the held-out subject, untouched
};

CrossSplit split_cross_subject(const Dataset& dataset, const std::string& test_subject);

/// CSV schema: header "subject_id,target,<feature names...>"; one row per
/// trial. Values are written with shortest round-trip precision.
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& dataset, const std::string& path);

}  // namespace regattack::data
