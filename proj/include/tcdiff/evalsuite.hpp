#pragma once

#include "tcdiff/datamodel.hpp"

#include <optional>

namespace tcdiff {

// Flattened model-space features: standardized continuous, one-hot discrete,
// text embeddings. All metrics operate on this representation.
Matrix feature_matrix(const RecordSet& rs, const Standardization& stats);

// Index bookkeeping for metric column selection.
struct FeatureLayout {
    int d_offset{0}, d_width{0};
    int c_offset{0}, c_width{0};
    int l_offset{0}, l_width{0};
    // inclusive feature-column span of a named schema column
    std::pair<int, int> column_span(const Schema& schema, const std::string& name) const;
};
FeatureLayout feature_layout(const Schema& schema);

// Train-on-synthetic / test-on-real ridge regression (penalty 1e-3).
double r2_tstr(const RecordSet& real_test, const RecordSet& synth,
               const std::string& target_column, const Standardization& stats);

// Biased V-statistic MMD with RBF kernel; median-heuristic bandwidth when
// none is given. Returns sqrt(max(MMD^2, 0)).
double mmd_rbf(const Matrix& X, const Matrix& Y, std::optional<double> bandwidth = {});

// MSE between summary-statistic vectors (means, stds, upper-tri correlations).
double stat_mse(const Matrix& real, const Matrix& synth);

// Membership inference: nearest-synthetic-distance score, risk = max(0, 2(AUC-1/2)).
double mia_risk(const RecordSet& train_real, const RecordSet& holdout_real,
                const RecordSet& synth, const Standardization& stats);

// Attribute inference: k-NN (k=5) attacker on synth mapping quasi-identifiers
// to each sensitive attribute; normalized accuracy / R^2 gain, averaged.
double aia_risk(const RecordSet& real, const RecordSet& synth,
                const std::vector<std::string>& sensitive_columns,
                const std::vector<std::string>& quasi_id_columns, const Standardization& stats);

struct MetricsReport {
    double r2{0.0};
    double mmd{0.0};
    double mse{0.0};
    std::optional<double> mia{};
    std::optional<double> aia{};
    // provenance
    std::uint64_t seed{0};
    Eigen::Index n_real{0};
    Eigen::Index n_synth{0};
    std::string config_hash;

    std::string to_json() const;
    std::string to_table() const;  // aligned "R^2 / MMD / MSE" style cell
};

double auc_from_scores(const std::vector<double>& positives, const std::vector<double>& negatives);

}  // namespace tcdiff
