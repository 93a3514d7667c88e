#pragma once

#include "tcdiff/common.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace tcdiff {

// Modality indices used everywhere (mask columns, loss terms, chains).
enum Modality : int { kDiscrete = 0, kContinuous = 1, kText = 2 };
constexpr int kNumModalities = 3;

struct ContinuousCol {
    std::string name;
    std::string unit;
};
struct CategoricalCol {
    std::string name;
    std::vector<std::string> levels;
};
struct TextCol {
    std::string name;
    int embedding_dim{};
};

struct Schema {
    std::vector<ContinuousCol> continuous_cols;
    std::vector<CategoricalCol> categorical_cols;
    std::vector<TextCol> text_cols;
    int seq_len{1};

    int c() const { return static_cast<int>(continuous_cols.size()); }
    int ncat() const { return static_cast<int>(categorical_cols.size()); }
    int d_onehot() const;  // total one-hot width per sequence position
    int l() const;         // total embedding width per sequence position
    void validate() const;

    std::string to_json() const;
    static Schema from_json(const std::string& text);
    static Schema load(const std::string& path);
};

// Raw multimodal records plus per-record per-modality observation flags.
struct RecordSet {
    Schema schema;
    Eigen::Index n{0};
    Matrix continuous;      // n x (S*c)
    IntMatrix categorical;  // n x (S*ncat), level indices
    Matrix text;            // n x (S*l)
    IntMatrix mask;         // n x 3, 1 = observed

    bool observed(Eigen::Index i, Modality m) const { return mask(i, m) != 0; }
    RecordSet take(const std::vector<Eigen::Index>& rows) const;
};

struct Standardization {
    Vector mean;    // per continuous column (S*c)
    Vector stddev;  // clamped to 1 for constant columns
};

// Model-ready matrices: one-hot discrete, standardized continuous,
// pass-through text embeddings.
struct EncodedBatch {
    Schema schema;
    Matrix D;  // n x (S*d_onehot)
    Matrix C;  // n x (S*c)
    Matrix L;  // n x (S*l)
    IntMatrix mask;
    Standardization stats;
};

// --- ingestion ------------------------------------------------------------
RecordSet load_dataset(const std::string& path, const Schema& schema);
RecordSet load_csv(const std::string& path, const std::string& embedding_sidecar,
                   const Schema& schema);
void save_jsonl(const RecordSet& rs, const std::string& path);

// Deterministic fallback text embedder: token hashing into `dim` signed
// buckets, L2-normalized. Lets tests run without an external encoder.
Vector hash_embed(const std::string& text, int dim);

// --- preprocessing ----------------------------------------------------------
EncodedBatch preprocess(const RecordSet& rs);
EncodedBatch preprocess_with(const RecordSet& rs, const Standardization& stats);
RecordSet inverse_transform(const EncodedBatch& batch);

// --- missingness -------------------------------------------------------------
double compute_missing_rate(const RecordSet& rs);
RecordSet simulate_missingness(const RecordSet& rs, double target_rate, std::uint64_t seed);
RecordSet knn_impute(const RecordSet& rs, int k);

// --- toy data ------------------------------------------------------------------
struct ToyConfig {
    double noise{0.1};
};
struct ToyFactors {
    Matrix A;  // 4 x 2, continuous loadings
    Matrix B;  // 8 x 2, text-embedding loadings
};
ToyFactors toy_factors(std::uint64_t seed);
Schema toy_schema();
RecordSet make_toy_dataset(Eigen::Index n, std::uint64_t seed, const ToyConfig& cfg = {});

// --- splits ----------------------------------------------------------------------
struct Splits {
    RecordSet train, val, test;
};
Splits split(const RecordSet& rs, const std::array<double, 3>& fractions, std::uint64_t seed);

}  // namespace tcdiff
