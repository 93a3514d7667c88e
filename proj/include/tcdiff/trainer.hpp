#pragma once

#include "tcdiff/sampler.hpp"

#include <iosfwd>
#include <memory>
#include <random>

namespace tcdiff {

struct TrainConfig {
    int T{100};
    int t1{20};
    int t2{80};
    double sigma{25.0};
    double lr{1e-4};
    double adam_beta1{0.9};
    double adam_beta2{0.999};
    double adam_eps{1e-8};
    int max_epochs{300};
    int patience{20};
    double lambda_rec{1.0};
    double lambda_scale{1.0};
    int warmup_epochs{10};
    int batch_size{64};
    std::uint64_t seed{0};
    int z{16};
    int hidden{128};
    int refresh_stride{1};      // re-impute every k epochs after warm-up
    double val_fraction{0.1};
    bool impute_deterministic{false};  // epsilon=0 chains during refresh
    bool no_cascade{false};
    bool no_triplex{false};
    bool no_encoder{false};
    bool no_decoder{false};

    void validate() const;
    ModelConfig model_config() const;
    NoiseSchedule schedule() const { return NoiseSchedule(sigma, T, t1, t2); }

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

// Trained model state plus everything needed to reproduce and reuse it.
struct Checkpoint {
    int format_version{1};
    Schema schema;
    TrainConfig config;
    Standardization stats;
    int epoch{0};
    double val_loss{0.0};
    std::vector<std::pair<std::string, Matrix>> weights;  // store order

    std::unique_ptr<TriplexModel> instantiate() const;
};

// Per-batch randomness, drawn by the caller so losses are reproducible.
struct NoiseDraws {
    std::vector<int> t_steps;     // per record, uniform over {1..T}
    std::array<Matrix, 3> noise;  // per modality, n x latent_width
};
NoiseDraws draw_noise(const TrainConfig& cfg, Eigen::Index n, int latent_width,
                      std::mt19937_64& rng);

struct LossParts {
    double score{0.0};
    double recon{0.0};
    double scale_pen{0.0};
    double total{0.0};
};

// Score-matching + reconstruction loss over a completed (no missing payload)
// encoded batch, plus a latent-scale penalty pulling each modality's latent
// second moment to 1 so the encoder output stays matched to the noise
// schedule; observed_mask restricts the reconstruction term.
LossParts total_loss(TriplexModel& model, const NoiseSchedule& sched, const EncodedBatch& batch,
                     const IntMatrix& observed_mask, const NoiseDraws& draws, double lambda_rec,
                     double lambda_scale, bool with_grad);

double score_loss(TriplexModel& model, const NoiseSchedule& sched, const EncodedBatch& batch,
                  const NoiseDraws& draws, bool with_grad);
double recon_loss(TriplexModel& model, const EncodedBatch& batch, const IntMatrix& observed_mask,
                  bool with_grad);

// Re-impute every missing modality with the current model, conditioned on the
// observed ones. Observed data is never modified.
RecordSet self_impute_refresh(const TriplexModel& model, const NoiseSchedule& sched,
                              const Standardization& stats, const RecordSet& dataset,
                              std::uint64_t seed, bool deterministic);

struct EpochLogEntry {
    int epoch{};
    double train_loss{};
    double val_loss{};
    double r_miss{};
    double seconds{};
};

Checkpoint fit(const TrainConfig& cfg, const RecordSet& dataset, std::ostream* log = nullptr,
               std::vector<EpochLogEntry>* history = nullptr);

}  // namespace tcdiff
