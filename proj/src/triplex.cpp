#include "tcdiff/triplex.hpp"

#include <algorithm>
#include <random>

namespace tcdiff {

const char* modality_name(Modality m) {
    switch (m) {
        case kDiscrete: return "D";
        case kContinuous: return "C";
        case kText: return "L";
    }
    return "?";
}

namespace {

Matrix init_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> dist(0.0, 1.0);
    double scale = std::sqrt(2.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * dist(rng);
    }
    return m;
}

}  // namespace

TriplexModel::TriplexModel(const ModelConfig& cfg, const Schema& schema)
    : cfg_(cfg), schema_(schema) {
    schema_.validate();
    if (cfg_.conv_width % 2 == 0) throw ConfigError("conv_width must be odd");
    std::mt19937_64 rng(splitmix64(cfg_.init_seed ^ 0x7463646966666dULL));
    const int S = schema_.seq_len;
    const int z = cfg_.z;
    const int lw = S * z;
    const int in_dim = lw + cfg_.temb_dim + 2 * lw;

    for (int mi = 0; mi < kNumModalities; ++mi) {
        Modality m = static_cast<Modality>(mi);
        const std::string tag = modality_name(m);
        const int f = feature_width(m);

        if (cfg_.no_encoder) {
            fixed_enc_[static_cast<std::size_t>(mi)] = init_matrix(rng, f, z);
        } else {
            Matrix kernel = Matrix::Zero(1, cfg_.conv_width);
            kernel(0, cfg_.conv_width / 2) = 1.0;  // start as the identity filter
            store_.add("enc_" + tag + "_conv", kernel);
            store_.add("enc_" + tag + "_W", init_matrix(rng, f, z));
            store_.add("enc_" + tag + "_b", Matrix::Zero(1, z));
        }

        if (!cfg_.no_triplex && !cfg_.base_model()) {
            store_.add("bridge_" + tag + "_W", Matrix::Identity(2 * lw, 2 * lw));
        }
        if (!cfg_.no_triplex) {
            store_.add("alpha_" + tag, Matrix::Zero(1, cfg_.T + 1));
        }

        store_.add("s_" + tag + "_W1", init_matrix(rng, in_dim, cfg_.hidden));
        store_.add("s_" + tag + "_b1", Matrix::Zero(1, cfg_.hidden));
        store_.add("s_" + tag + "_W2", init_matrix(rng, cfg_.hidden, cfg_.hidden));
        store_.add("s_" + tag + "_b2", Matrix::Zero(1, cfg_.hidden));
        // zero-initialized output head: the untrained score is identically 0
        store_.add("s_" + tag + "_W3", Matrix::Zero(cfg_.hidden, lw));
        store_.add("s_" + tag + "_b3", Matrix::Zero(1, lw));

        if (cfg_.no_decoder) {
            fixed_dec_[static_cast<std::size_t>(mi)] = init_matrix(rng, z, f);
        } else {
            store_.add("dec_" + tag + "_W1", init_matrix(rng, z, cfg_.hidden));
            store_.add("dec_" + tag + "_b1", Matrix::Zero(1, cfg_.hidden));
            store_.add("dec_" + tag + "_W2", init_matrix(rng, cfg_.hidden, f));
            store_.add("dec_" + tag + "_b2", Matrix::Zero(1, f));
        }
    }
}

int TriplexModel::feature_width(Modality m) const {
    switch (m) {
        case kDiscrete: return schema_.d_onehot();
        case kContinuous: return schema_.c();
        case kText: return schema_.l();
    }
    throw ConfigError("bad modality");
}

Matrix TriplexModel::time_embedding(const std::vector<int>& t_steps) const {
    const int half = cfg_.temb_dim / 2;
    Matrix emb(static_cast<Eigen::Index>(t_steps.size()), cfg_.temb_dim);
    for (std::size_t i = 0; i < t_steps.size(); ++i) {
        double tau = static_cast<double>(t_steps[i]) / cfg_.T;
        for (int j = 0; j < half; ++j) {
            // frequencies geometric from 1 to T
            double freq = std::pow(static_cast<double>(cfg_.T),
                                   half > 1 ? static_cast<double>(j) / (half - 1) : 0.0);
            emb(static_cast<Eigen::Index>(i), 2 * j) = std::sin(freq * tau);
            emb(static_cast<Eigen::Index>(i), 2 * j + 1) = std::cos(freq * tau);
        }
    }
    return emb;
}

std::array<NodeId, 3> TriplexModel::encode_on_tape(Tape& tape,
                                                   const std::array<NodeId, 3>& feats) const {
    const int S = schema_.seq_len;
    std::array<NodeId, 3> out{};
    for (int mi = 0; mi < kNumModalities; ++mi) {
        Modality m = static_cast<Modality>(mi);
        const std::string tag = modality_name(m);
        const int f = feature_width(m);
        NodeId x = feats[static_cast<std::size_t>(mi)];
        if (cfg_.no_encoder) {
            NodeId proj = tape.leaf(fixed_enc_[static_cast<std::size_t>(mi)]);
            NodeId pos = split_positions(tape, x, S, f);
            NodeId lat = matmul(tape, pos, proj);
            out[static_cast<std::size_t>(mi)] = merge_positions(tape, lat, S, cfg_.z);
        } else {
            NodeId conv = conv1d_seq(tape, x, tape.param("enc_" + tag + "_conv"), S, f);
            NodeId pos = split_positions(tape, conv, S, f);
            NodeId lin = matmul(tape, pos, tape.param("enc_" + tag + "_W"));
            NodeId biased = add_bias(tape, lin, tape.param("enc_" + tag + "_b"));
            out[static_cast<std::size_t>(mi)] = merge_positions(tape, biased, S, cfg_.z);
        }
    }
    return out;
}

NodeId TriplexModel::fusion_weight_on_tape(Tape& tape, Modality target,
                                           const std::vector<int>& t_steps) const {
    if (cfg_.no_triplex) {
        return tape.leaf(Matrix::Constant(static_cast<Eigen::Index>(t_steps.size()), 1, 0.5));
    }
    NodeId logits = tape.param(std::string("alpha_") + modality_name(target));
    NodeId picked = gather_cols(tape, logits, t_steps);
    return sigmoid_op(tape, picked);
}

NodeId TriplexModel::conditioning_on_tape(Tape& tape, Modality target, NodeId ref1,
                                          NodeId ref2) const {
    const Eigen::Index n = tape.value(ref1).rows();
    const int lw = latent_width();
    if (cfg_.base_model()) {
        return tape.leaf(Matrix::Zero(n, 2 * lw));
    }
    NodeId both = concat_cols(tape, {ref1, ref2});
    if (cfg_.no_triplex) return both;
    return matmul(tape, both, tape.param(std::string("bridge_") + modality_name(target) + "_W"));
}

NodeId TriplexModel::score_on_tape(Tape& tape, Modality target, NodeId x_t,
                                   const std::vector<int>& t_steps, NodeId ref1,
                                   NodeId ref2) const {
    for (int t : t_steps) {
        if (t < 1 || t > cfg_.T) throw ConfigError("score: t out of [1, T]");
    }
    require_finite(tape.value(x_t), "score input");
    const std::string tag = modality_name(target);
    const double denom = 2.0 * std::log(cfg_.sigma);
    Matrix inv_sd(static_cast<Eigen::Index>(t_steps.size()), 1);
    for (std::size_t i = 0; i < t_steps.size(); ++i) {
        double var = (std::pow(cfg_.sigma, 2.0 * t_steps[i] / cfg_.T) - 1.0) / denom;
        inv_sd(static_cast<Eigen::Index>(i), 0) = 1.0 / std::sqrt(var);
    }
    NodeId inv_sd_node = tape.leaf(inv_sd);
    NodeId temb = tape.leaf(time_embedding(t_steps));
    NodeId cond = conditioning_on_tape(tape, target, ref1, ref2);
    NodeId in = concat_cols(tape, {x_t, temb, cond});
    NodeId h1 = tanh_op(tape, add_bias(tape, matmul(tape, in, tape.param("s_" + tag + "_W1")),
                                       tape.param("s_" + tag + "_b1")));
    NodeId h2 = tanh_op(tape, add_bias(tape, matmul(tape, h1, tape.param("s_" + tag + "_W2")),
                                       tape.param("s_" + tag + "_b2")));
    NodeId res = add(tape, h1, h2);
    NodeId raw = add_bias(tape, matmul(tape, res, tape.param("s_" + tag + "_W3")),
                          tape.param("s_" + tag + "_b3"));
    // NCSN-style output scaling: the network predicts an O(1) noise direction
    // and the 1/sigma_t factor turns it into a score, so one set of weights
    // stays well-conditioned across the whole noise range
    return colwise_scale(tape, raw, inv_sd_node);
}

NodeId TriplexModel::decode_on_tape(Tape& tape, Modality m, NodeId latent) const {
    const int S = schema_.seq_len;
    const std::string tag = modality_name(m);
    NodeId pos = split_positions(tape, latent, S, cfg_.z);
    NodeId feat_pos;
    if (cfg_.no_decoder) {
        feat_pos = matmul(tape, pos, tape.leaf(fixed_dec_[static_cast<std::size_t>(m)]));
    } else {
        NodeId h = tanh_op(tape, add_bias(tape, matmul(tape, pos, tape.param("dec_" + tag + "_W1")),
                                          tape.param("dec_" + tag + "_b1")));
        feat_pos = add_bias(tape, matmul(tape, h, tape.param("dec_" + tag + "_W2")),
                            tape.param("dec_" + tag + "_b2"));
    }
    return merge_positions(tape, feat_pos, S, feature_width(m));
}

// --- tape-free wrappers ------------------------------------------------------

LatentTriple TriplexModel::encode(const EncodedBatch& batch) const {
    if (batch.D.cols() != static_cast<Eigen::Index>(schema_.seq_len) * schema_.d_onehot() ||
        batch.C.cols() != static_cast<Eigen::Index>(schema_.seq_len) * schema_.c() ||
        batch.L.cols() != static_cast<Eigen::Index>(schema_.seq_len) * schema_.l()) {
        throw DimensionError("encode: batch dimensions do not match schema");
    }
    Tape tape(const_cast<ParamStore*>(&store_));
    std::array<NodeId, 3> feats = {tape.leaf(batch.D), tape.leaf(batch.C), tape.leaf(batch.L)};
    std::array<NodeId, 3> latents = encode_on_tape(tape, feats);
    LatentTriple out;
    out.mask = batch.mask;
    for (int mi = 0; mi < 3; ++mi) {
        out.x[static_cast<std::size_t>(mi)] = tape.value(latents[static_cast<std::size_t>(mi)]);
        for (Eigen::Index i = 0; i < out.mask.rows(); ++i) {
            if (!out.mask(i, mi)) out.x[static_cast<std::size_t>(mi)].row(i).setZero();
        }
    }
    return out;
}

double TriplexModel::fusion_weight(Modality target, int t) const {
    if (t < 1 || t > cfg_.T) throw ConfigError("fusion_weight: t out of [1, T]");
    if (cfg_.no_triplex) return 0.5;
    double logit = store_.at(std::string("alpha_") + modality_name(target)).value(0, t);
    // clamp so extreme logits still yield a weight strictly inside (0,1)
    logit = std::clamp(logit, -36.0, 36.0);
    return 1.0 / (1.0 + std::exp(-logit));
}

Matrix TriplexModel::score(Modality target, const Matrix& x_t, int t, const Matrix& ref1,
                           const Matrix& ref2) const {
    Tape tape(const_cast<ParamStore*>(&store_));
    std::vector<int> ts(static_cast<std::size_t>(x_t.rows()), t);
    NodeId out = score_on_tape(tape, target, tape.leaf(x_t), ts, tape.leaf(ref1), tape.leaf(ref2));
    return tape.value(out);
}

std::array<Matrix, 3> TriplexModel::decode(const LatentTriple& latents) const {
    std::array<Matrix, 3> out;
    for (int mi = 0; mi < 3; ++mi) {
        out[static_cast<std::size_t>(mi)] =
            decode_one(static_cast<Modality>(mi), latents.x[static_cast<std::size_t>(mi)]);
    }
    return out;
}

Matrix TriplexModel::decode_one(Modality m, const Matrix& latent) const {
    require_finite(latent, "decode input");
    Tape tape(const_cast<ParamStore*>(&store_));
    return tape.value(decode_on_tape(tape, m, tape.leaf(latent)));
}

Matrix tweedie_denoise(const Matrix& x_t, int t, const Matrix& score_value,
                       const NoiseSchedule& sched) {
    if (t < 1) throw ConfigError("tweedie_denoise: t must be >= 1");
    return x_t + sched.var(t) * score_value;
}

}  // namespace tcdiff
