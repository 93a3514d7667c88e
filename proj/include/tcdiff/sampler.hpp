#pragma once

#include "tcdiff/triplex.hpp"

#include <functional>

namespace tcdiff {

// Score callback so tests can substitute closed-form scores for the network.
using ScoreFn = std::function<Matrix(Modality target, const Matrix& x_t, int t,
                                     const Matrix& ref1, const Matrix& ref2)>;

struct SamplerOptions {
    bool deterministic{false};  // force the per-step noise to zero
    // Generate modalities one full chain at a time instead of synchronously
    // (comparison mode for the co-generation choice).
    bool sequential{false};
};

// One ancestral reverse update for a single modality chain.
//   x_{t-1} = x_t + dmu + (var[t]-var[t-1]) * score + sqrt(var[t]-var[t-1]) * eps
// where dmu = (phi(t)-phi(t-1)) * (x0_hat - fused) undoes the bridging drift.
// With cascade_on = false the drift term is identically zero.
Matrix reverse_step(const NoiseSchedule& sched, int t, const Matrix& x_t, const Matrix& score,
                    const Matrix& fused_ref, bool cascade_on, const Matrix& noise);

// The bridging drift alone (exposed for stage-handoff assertions).
Matrix bridging_drift(const NoiseSchedule& sched, int t, const Matrix& x_t, const Matrix& score,
                      const Matrix& fused_ref);

RecordSet generate(const TriplexModel& model, const NoiseSchedule& sched,
                   const Standardization& stats, Eigen::Index n, std::uint64_t seed,
                   const SamplerOptions& opts = {});

RecordSet impute(const TriplexModel& model, const NoiseSchedule& sched,
                 const Standardization& stats, const RecordSet& rs, std::uint64_t seed,
                 const SamplerOptions& opts = {});

// Lower-level co-generation over latent chains with a caller-supplied score;
// returns final latents per modality. fixed[m] non-null pins that modality to
// the given clean latents (conditional generation). Row keys drive the
// per-record noise streams.
std::array<Matrix, 3> run_reverse_chains(const NoiseSchedule& sched, const ScoreFn& score_fn,
                                         const std::array<const Matrix*, 3>& fixed,
                                         Eigen::Index n, int latent_width,
                                         const std::vector<std::uint64_t>& row_keys,
                                         std::uint64_t seed, bool cascade_on,
                                         const std::function<double(Modality, int)>& alpha_fn,
                                         const SamplerOptions& opts);

}  // namespace tcdiff
