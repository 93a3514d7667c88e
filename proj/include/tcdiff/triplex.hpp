#pragma once

#include "tcdiff/datamodel.hpp"
#include "tcdiff/numerics.hpp"
#include "tcdiff/schedule.hpp"

#include <array>

namespace tcdiff {

struct ModelConfig {
    int z{16};
    int hidden{128};
    int temb_dim{64};
    int conv_width{3};
    int T{100};
    double sigma{25.0};
    std::uint64_t init_seed{1};
    // ablation switches
    bool no_cascade{false};  // phi forced to 0, no bridging drift
    bool no_triplex{false};  // fixed alpha = 0.5, raw-concat conditioning
    bool no_encoder{false};  // fixed linear projections instead of learned encoders
    bool no_decoder{false};

    bool base_model() const { return no_cascade && no_triplex; }
};

// Per-record latent representations, one S*z row block per modality.
struct LatentTriple {
    std::array<Matrix, 3> x;  // indexed by Modality, each n x (S*z)
    IntMatrix mask;           // n x 3 availability flags
};

// Reference-modality assignment: for each target, ref1 carries the alpha
// weight (paper's target-L case pairs alpha with D).
constexpr std::array<std::array<Modality, 2>, 3> kRefs = {{
    {kContinuous, kText},    // target D
    {kDiscrete, kText},      // target C
    {kDiscrete, kContinuous} // target L
}};

class TriplexModel {
public:
    TriplexModel(const ModelConfig& cfg, const Schema& schema);

    const ModelConfig& config() const { return cfg_; }
    const Schema& schema() const { return schema_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    int latent_width() const { return schema_.seq_len * cfg_.z; }
    int feature_width(Modality m) const;

    // --- tape-free surface (sampling, evaluation) -----------------------
    LatentTriple encode(const EncodedBatch& batch) const;
    double fusion_weight(Modality target, int t) const;
    Matrix score(Modality target, const Matrix& x_t, int t, const Matrix& ref1,
                 const Matrix& ref2) const;
    std::array<Matrix, 3> decode(const LatentTriple& latents) const;
    Matrix decode_one(Modality m, const Matrix& latent) const;

    // --- tape surface (training) -----------------------------------------
    // Feature inputs indexed by modality: D, C, L leaf/interior nodes.
    std::array<NodeId, 3> encode_on_tape(Tape& tape, const std::array<NodeId, 3>& feats) const;
    NodeId fusion_weight_on_tape(Tape& tape, Modality target,
                                 const std::vector<int>& t_steps) const;
    NodeId score_on_tape(Tape& tape, Modality target, NodeId x_t,
                         const std::vector<int>& t_steps, NodeId ref1, NodeId ref2) const;
    NodeId decode_on_tape(Tape& tape, Modality m, NodeId latent) const;

    Matrix time_embedding(const std::vector<int>& t_steps) const;

private:
    ModelConfig cfg_;
    Schema schema_;
    ParamStore store_;
    std::array<Matrix, 3> fixed_enc_;  // used when no_encoder
    std::array<Matrix, 3> fixed_dec_;  // used when no_decoder

    NodeId conditioning_on_tape(Tape& tape, Modality target, NodeId ref1, NodeId ref2) const;
};

// Posterior-mean (denoised) estimate used to feed co-generating chains.
Matrix tweedie_denoise(const Matrix& x_t, int t, const Matrix& score_value,
                       const NoiseSchedule& sched);

const char* modality_name(Modality m);

}  // namespace tcdiff
