#include "tcdiff/sampler.hpp"

#include <map>

namespace tcdiff {

namespace {

// Noise counter layout: unique per (step, modality, column). Step T+1 is
// reserved for chain initialization.
std::uint64_t noise_base(int t, int modality, int latent_width) {
    return (static_cast<std::uint64_t>(t) * 8 + static_cast<std::uint64_t>(modality)) *
           static_cast<std::uint64_t>(latent_width);
}

Matrix chain_noise(const CounterRng& rng, const std::vector<std::uint64_t>& row_keys, int t,
                   int modality, int latent_width, bool deterministic) {
    if (deterministic) {
        return Matrix::Zero(static_cast<Eigen::Index>(row_keys.size()), latent_width);
    }
    return rng.normal_matrix(row_keys, latent_width, noise_base(t, modality, latent_width));
}

// The discrete encoder embeds every category combination at a point and the
// decoder only ever sees those points during training, so decoding a sampled
// latent that falls between codewords relies on undefined extrapolation.
// Snapping to the nearest codeword resolves the latent in the space where
// distances are meaningful; decoding the snapped latent then reproduces exact
// levels. Skipped when the combination count is impractical to enumerate.
Matrix snap_discrete_latents(const TriplexModel& model, const Standardization& stats,
                             const Matrix& x) {
    const Schema& schema = model.schema();
    const Eigen::Index cols = static_cast<Eigen::Index>(schema.seq_len) * schema.ncat();
    std::size_t total = 1;
    for (Eigen::Index j = 0; j < cols; ++j) {
        total *= schema.categorical_cols[static_cast<std::size_t>(j % schema.ncat())]
                     .levels.size();
        if (total > 1024) return x;
    }
    RecordSet combos;
    combos.schema = schema;
    combos.n = static_cast<Eigen::Index>(total);
    combos.continuous = Matrix::Zero(combos.n, static_cast<Eigen::Index>(schema.seq_len) * schema.c());
    combos.categorical = IntMatrix::Zero(combos.n, cols);
    combos.text = Matrix::Zero(combos.n, static_cast<Eigen::Index>(schema.seq_len) * schema.l());
    combos.mask = IntMatrix::Ones(combos.n, 3);
    for (Eigen::Index i = 0; i < combos.n; ++i) {
        std::size_t rem = static_cast<std::size_t>(i);
        for (Eigen::Index j = 0; j < cols; ++j) {
            std::size_t levels =
                schema.categorical_cols[static_cast<std::size_t>(j % schema.ncat())].levels.size();
            combos.categorical(i, j) = static_cast<int>(rem % levels);
            rem /= levels;
        }
    }
    EncodedBatch enc = preprocess_with(combos, stats);
    LatentTriple lt = model.encode(enc);
    const Matrix& codebook = lt.x[kDiscrete];
    Matrix snapped(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index best = 0;
        (codebook.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
        snapped.row(i) = codebook.row(best);
    }
    return snapped;
}

}  // namespace

Matrix bridging_drift(const NoiseSchedule& sched, int t, const Matrix& x_t, const Matrix& score,
                      const Matrix& fused_ref) {
    const double dphi = sched.phi(t) - sched.phi(t - 1);
    if (dphi == 0.0) return Matrix::Zero(x_t.rows(), x_t.cols());
    // Recover x0_hat from the Tweedie mean estimate mu_hat = (1-phi) x0 +
    // phi fused. A plain division by (1-phi) amplifies score error without
    // bound as phi -> 1 and makes the whole reverse chain unstable, so the
    // inversion is ridge-regularized by the noise-to-signal ratio: near t1 it
    // is essentially exact, near t2 (where x_t carries no information about
    // x0 anyway) the estimate shrinks toward the prior mean instead of
    // exploding.
    const double phi = sched.phi(t);
    const double omp = 1.0 - phi;
    const double lam = sched.var(t) / sched.var(sched.steps());
    Matrix mu_hat = x_t + sched.var(t) * score;
    Matrix x0_hat = omp * (mu_hat - phi * fused_ref) / (omp * omp + lam);
    // trust region: clean latents are O(1), so estimates far outside that
    // range are score error, and feeding them back through the drift would
    // let co-generating chains amplify each other without bound
    constexpr double kClamp = 4.0;
    return dphi * (x0_hat.cwiseMax(-kClamp).cwiseMin(kClamp) -
                   fused_ref.cwiseMax(-kClamp).cwiseMin(kClamp));
}

Matrix reverse_step(const NoiseSchedule& sched, int t, const Matrix& x_t, const Matrix& score,
                    const Matrix& fused_ref, bool cascade_on, const Matrix& noise) {
    if (t < 1) throw ConfigError("reverse_step: t must be >= 1");
    require_finite(x_t, "reverse_step state at t=" + std::to_string(t));
    const double beta = sched.var(t) - sched.var(t - 1);
    Matrix out = x_t + beta * score + std::sqrt(beta) * noise;
    if (cascade_on) out += bridging_drift(sched, t, x_t, score, fused_ref);
    if (!out.allFinite()) {
        throw NumericError("reverse_step: non-finite state at step " + std::to_string(t));
    }
    return out;
}

std::array<Matrix, 3> run_reverse_chains(const NoiseSchedule& sched, const ScoreFn& score_fn,
                                         const std::array<const Matrix*, 3>& fixed,
                                         Eigen::Index n, int latent_width,
                                         const std::vector<std::uint64_t>& row_keys,
                                         std::uint64_t seed, bool cascade_on,
                                         const std::function<double(Modality, int)>& alpha_fn,
                                         const SamplerOptions& opts) {
    CounterRng rng{seed, 0x73616d706c6572ULL};
    const int T = sched.steps();
    std::array<Matrix, 3> x;
    std::array<Matrix, 3> x0_hat;  // co-chain estimates fed as references
    std::vector<int> free_mods;
    for (int m = 0; m < 3; ++m) {
        if (fixed[static_cast<std::size_t>(m)]) {
            x0_hat[static_cast<std::size_t>(m)] = *fixed[static_cast<std::size_t>(m)];
            x[static_cast<std::size_t>(m)] = *fixed[static_cast<std::size_t>(m)];
        } else {
            x[static_cast<std::size_t>(m)] =
                sched.marginal_std(T) *
                chain_noise(rng, row_keys, T + 1, m, latent_width, opts.deterministic);
            x0_hat[static_cast<std::size_t>(m)] = Matrix::Zero(n, latent_width);
            free_mods.push_back(m);
        }
    }

    // Conditioning mirrors training. Cascade on: chains exchange marginal-mean
    // estimates — a free co-chain offers its Tweedie estimate, a fixed
    // (observed) modality its marginal mean (1-phi) x0 + phi fused. Cascade
    // off: no denoised-estimate exchange exists, so a free co-chain offers
    // its current noisy state and a fixed one its latent (that state's mean).
    auto effective_ref = [&](int j, int t) -> Matrix {
        const auto ji = static_cast<std::size_t>(j);
        if (!cascade_on) return fixed[ji] ? x0_hat[ji] : x[ji];
        if (!fixed[ji]) return x0_hat[ji];
        const double phi = sched.phi(t);
        if (phi == 0.0) return x0_hat[ji];
        auto [jr1, jr2] = kRefs[ji];
        const double aj = alpha_fn(static_cast<Modality>(j), t);
        Matrix fused_j = aj * x0_hat[static_cast<std::size_t>(jr1)] +
                         (1.0 - aj) * x0_hat[static_cast<std::size_t>(jr2)];
        return (1.0 - phi) * x0_hat[ji] + phi * fused_j;
    };

    auto run_chain_step = [&](int m, int t) {
        auto [r1, r2] = kRefs[static_cast<std::size_t>(m)];
        Matrix s = score_fn(static_cast<Modality>(m), x[static_cast<std::size_t>(m)], t,
                            effective_ref(r1, t), effective_ref(r2, t));
        x0_hat[static_cast<std::size_t>(m)] =
            x[static_cast<std::size_t>(m)] + sched.var(t) * s;  // Tweedie estimate
        double a = alpha_fn(static_cast<Modality>(m), t);
        Matrix fused = a * x0_hat[static_cast<std::size_t>(r1)] +
                       (1.0 - a) * x0_hat[static_cast<std::size_t>(r2)];
        Matrix noise = chain_noise(rng, row_keys, t, m, latent_width, opts.deterministic);
        x[static_cast<std::size_t>(m)] = reverse_step(
            sched, t, x[static_cast<std::size_t>(m)], s, fused, cascade_on, noise);
    };

    if (opts.sequential) {
        for (int m : free_mods) {
            for (int t = T; t >= 1; --t) run_chain_step(m, t);
        }
    } else {
        // synchronous co-generation, fixed modality order D -> C -> L per step
        for (int t = T; t >= 1; --t) {
            for (int m : free_mods) run_chain_step(m, t);
        }
    }
    std::array<Matrix, 3> out;
    for (int m = 0; m < 3; ++m) out[static_cast<std::size_t>(m)] = x[static_cast<std::size_t>(m)];
    return out;
}

RecordSet generate(const TriplexModel& model, const NoiseSchedule& sched,
                   const Standardization& stats, Eigen::Index n, std::uint64_t seed,
                   const SamplerOptions& opts) {
    const int lw = model.latent_width();
    std::vector<std::uint64_t> keys(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = static_cast<std::uint64_t>(i);
    ScoreFn score_fn = [&model](Modality m, const Matrix& xt, int t, const Matrix& r1,
                                const Matrix& r2) { return model.score(m, xt, t, r1, r2); };
    auto alpha_fn = [&model](Modality m, int t) { return model.fusion_weight(m, t); };
    std::array<const Matrix*, 3> fixed = {nullptr, nullptr, nullptr};
    std::array<Matrix, 3> latents =
        run_reverse_chains(sched, score_fn, fixed, n, lw, keys, seed,
                           !model.config().no_cascade, alpha_fn, opts);

    EncodedBatch out;
    out.schema = model.schema();
    out.stats = stats;
    out.mask = IntMatrix::Ones(n, 3);
    LatentTriple lt;
    lt.mask = out.mask;
    lt.x = latents;
    lt.x[kDiscrete] = snap_discrete_latents(model, stats, lt.x[kDiscrete]);
    auto feats = model.decode(lt);
    out.D = feats[kDiscrete];
    out.C = feats[kContinuous];
    out.L = feats[kText];
    return inverse_transform(out);
}

RecordSet impute(const TriplexModel& model, const NoiseSchedule& sched,
                 const Standardization& stats, const RecordSet& rs, std::uint64_t seed,
                 const SamplerOptions& opts) {
    for (Eigen::Index i = 0; i < rs.n; ++i) {
        if (rs.mask.row(i).sum() == 0) {
            throw ConfigError("impute: record " + std::to_string(i) + " has no observed modality");
        }
    }
    RecordSet out = rs;
    const int lw = model.latent_width();

    // group records by missingness pattern so chains can run batched
    std::map<int, std::vector<Eigen::Index>> groups;
    for (Eigen::Index i = 0; i < rs.n; ++i) {
        int pattern = rs.mask(i, 0) | (rs.mask(i, 1) << 1) | (rs.mask(i, 2) << 2);
        if (pattern == 7) continue;  // fully observed records pass through untouched
        groups[pattern].push_back(i);
    }
    if (groups.empty()) return out;

    EncodedBatch full_enc = preprocess_with(rs, stats);
    LatentTriple all_latents = model.encode(full_enc);

    ScoreFn score_fn = [&model](Modality m, const Matrix& xt, int t, const Matrix& r1,
                                const Matrix& r2) { return model.score(m, xt, t, r1, r2); };
    auto alpha_fn = [&model](Modality m, int t) { return model.fusion_weight(m, t); };

    // Records with two missing modalities need a stand-in for the missing
    // cross-modal reference. The score networks fuse both references as data
    // and have no notion of "reference unknown": feeding zeros or a co-sampled
    // estimate is read as genuine conditioning and the coupled free chains
    // amplify each other's error instead of converging. A ridge regression of
    // each latent on the observed modality's latent, fitted on the rows where
    // both are present, supplies the conditional-mean reference instead; each
    // missing modality then runs as an ordinary single-free chain.
    std::map<int, Matrix> ref_weights;  // key: target * 3 + source
    auto pair_weights = [&](int target, int source) -> const Matrix& {
        int key = target * 3 + source;
        auto it = ref_weights.find(key);
        if (it != ref_weights.end()) return it->second;
        std::vector<Eigen::Index> src_rows;
        for (Eigen::Index i = 0; i < rs.n; ++i) {
            if (rs.observed(i, static_cast<Modality>(source)) &&
                rs.observed(i, static_cast<Modality>(target))) {
                src_rows.push_back(i);
            }
        }
        Matrix W = Matrix::Zero(lw + 1, lw);
        if (!src_rows.empty()) {
            Eigen::Index sn = static_cast<Eigen::Index>(src_rows.size());
            Matrix Xb(sn, lw + 1);
            Matrix Y(sn, lw);
            for (Eigen::Index i = 0; i < sn; ++i) {
                Xb.block(i, 0, 1, lw) =
                    all_latents.x[static_cast<std::size_t>(source)].row(src_rows[static_cast<std::size_t>(i)]);
                Xb(i, lw) = 1.0;
                Y.row(i) =
                    all_latents.x[static_cast<std::size_t>(target)].row(src_rows[static_cast<std::size_t>(i)]);
            }
            Matrix G = Xb.transpose() * Xb + 1e-3 * Matrix::Identity(lw + 1, lw + 1);
            W = G.ldlt().solve(Xb.transpose() * Y);
        }
        return ref_weights.emplace(key, std::move(W)).first->second;
    };

    for (const auto& [pattern, rows] : groups) {
        Eigen::Index gn = static_cast<Eigen::Index>(rows.size());
        std::vector<std::uint64_t> keys(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            keys[i] = static_cast<std::uint64_t>(rows[i]);
        }
        std::array<Matrix, 3> observed_latents;
        std::array<const Matrix*, 3> fixed = {nullptr, nullptr, nullptr};
        for (int m = 0; m < 3; ++m) {
            if (!(pattern & (1 << m))) continue;
            Matrix lat(gn, lw);
            for (Eigen::Index i = 0; i < gn; ++i) {
                lat.row(i) = all_latents.x[static_cast<std::size_t>(m)].row(rows[static_cast<std::size_t>(i)]);
            }
            observed_latents[static_cast<std::size_t>(m)] = std::move(lat);
            fixed[static_cast<std::size_t>(m)] = &observed_latents[static_cast<std::size_t>(m)];
        }
        std::vector<int> free_mods;
        for (int m = 0; m < 3; ++m) {
            if (!(pattern & (1 << m))) free_mods.push_back(m);
        }
        std::array<Matrix, 3> latents;
        if (free_mods.size() == 1) {
            latents = run_reverse_chains(sched, score_fn, fixed, gn, lw, keys, seed,
                                         !model.config().no_cascade, alpha_fn, opts);
        } else {
            int source = 0;
            while (!(pattern & (1 << source))) ++source;
            std::array<Matrix, 3> reg;
            for (int m : free_mods) {
                const Matrix& W = pair_weights(m, source);
                Matrix Xq(gn, lw + 1);
                Xq.block(0, 0, gn, lw) = observed_latents[static_cast<std::size_t>(source)];
                Xq.col(lw).setOnes();
                reg[static_cast<std::size_t>(m)] = Xq * W;
            }
            for (int m : free_mods) {
                std::array<const Matrix*, 3> fx = fixed;
                for (int j : free_mods) {
                    if (j != m) fx[static_cast<std::size_t>(j)] = &reg[static_cast<std::size_t>(j)];
                }
                auto out = run_reverse_chains(sched, score_fn, fx, gn, lw, keys, seed,
                                              !model.config().no_cascade, alpha_fn, opts);
                latents[static_cast<std::size_t>(m)] = out[static_cast<std::size_t>(m)];
            }
        }

        // decode and splice only the missing modalities
        for (int m = 0; m < 3; ++m) {
            if (pattern & (1 << m)) continue;
            if (m == kDiscrete) {
                latents[static_cast<std::size_t>(m)] =
                    snap_discrete_latents(model, stats, latents[static_cast<std::size_t>(m)]);
            }
            Matrix feats = model.decode_one(static_cast<Modality>(m),
                                            latents[static_cast<std::size_t>(m)]);
            EncodedBatch dec;
            dec.schema = model.schema();
            dec.stats = stats;
            dec.mask = IntMatrix::Ones(gn, 3);
            dec.D = Matrix::Zero(gn, full_enc.D.cols());
            dec.C = Matrix::Zero(gn, full_enc.C.cols());
            dec.L = Matrix::Zero(gn, full_enc.L.cols());
            if (m == kDiscrete) dec.D = feats;
            if (m == kContinuous) dec.C = feats;
            if (m == kText) dec.L = feats;
            RecordSet piece = inverse_transform(dec);
            for (Eigen::Index i = 0; i < gn; ++i) {
                Eigen::Index row = rows[static_cast<std::size_t>(i)];
                if (m == kDiscrete) out.categorical.row(row) = piece.categorical.row(i);
                if (m == kContinuous) out.continuous.row(row) = piece.continuous.row(i);
                if (m == kText) out.text.row(row) = piece.text.row(i);
                out.mask(row, m) = 1;
            }
        }
    }
    return out;
}

}  // namespace tcdiff
