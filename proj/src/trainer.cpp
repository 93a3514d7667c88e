#include "tcdiff/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

namespace tcdiff {

using nlohmann::json;

void TrainConfig::validate() const {
    if (!(0 < t1 && t1 < t2 && t2 < T)) throw ConfigError("config: need 0 < t1 < t2 < T");
    if (patience > max_epochs) throw ConfigError("config: patience must be <= max_epochs");
    if (lambda_rec < 0) throw ConfigError("config: lambda_rec must be >= 0");
    if (lambda_scale < 0) throw ConfigError("config: lambda_scale must be >= 0");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (warmup_epochs < 0) throw ConfigError("config: warmup_epochs must be >= 0");
    if (refresh_stride < 1) throw ConfigError("config: refresh_stride must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("config: val_fraction must be in (0,1); early stopping needs a val split");
    }
    if (z < 1 || hidden < 1) throw ConfigError("config: z and hidden must be >= 1");
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig mc;
    mc.z = z;
    mc.hidden = hidden;
    mc.T = T;
    mc.sigma = sigma;
    mc.init_seed = seed;
    mc.no_cascade = no_cascade;
    mc.no_triplex = no_triplex;
    mc.no_encoder = no_encoder;
    mc.no_decoder = no_decoder;
    return mc;
}

std::string TrainConfig::to_json() const {
    json j;
    j["T"] = T;
    j["t1"] = t1;
    j["t2"] = t2;
    j["sigma"] = sigma;
    j["lr"] = lr;
    j["adam_beta1"] = adam_beta1;
    j["adam_beta2"] = adam_beta2;
    j["adam_eps"] = adam_eps;
    j["max_epochs"] = max_epochs;
    j["patience"] = patience;
    j["lambda_rec"] = lambda_rec;
    j["lambda_scale"] = lambda_scale;
    j["warmup_epochs"] = warmup_epochs;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["z"] = z;
    j["hidden"] = hidden;
    j["refresh_stride"] = refresh_stride;
    j["val_fraction"] = val_fraction;
    j["impute_deterministic"] = impute_deterministic;
    j["no_cascade"] = no_cascade;
    j["no_triplex"] = no_triplex;
    j["no_encoder"] = no_encoder;
    j["no_decoder"] = no_decoder;
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
    TrainConfig c;
    for (const auto& [key, val] : j.items()) {
        if (key == "T") c.T = val;
        else if (key == "t1") c.t1 = val;
        else if (key == "t2") c.t2 = val;
        else if (key == "sigma") c.sigma = val;
        else if (key == "lr") c.lr = val;
        else if (key == "adam_beta1") c.adam_beta1 = val;
        else if (key == "adam_beta2") c.adam_beta2 = val;
        else if (key == "adam_eps") c.adam_eps = val;
        else if (key == "max_epochs") c.max_epochs = val;
        else if (key == "patience") c.patience = val;
        else if (key == "lambda_rec") c.lambda_rec = val;
        else if (key == "lambda_scale") c.lambda_scale = val;
        else if (key == "warmup_epochs") c.warmup_epochs = val;
        else if (key == "batch_size") c.batch_size = val;
        else if (key == "seed") c.seed = val;
        else if (key == "z") c.z = val;
        else if (key == "hidden") c.hidden = val;
        else if (key == "refresh_stride") c.refresh_stride = val;
        else if (key == "val_fraction") c.val_fraction = val;
        else if (key == "impute_deterministic") c.impute_deterministic = val;
        else if (key == "no_cascade") c.no_cascade = val;
        else if (key == "no_triplex") c.no_triplex = val;
        else if (key == "no_encoder") c.no_encoder = val;
        else if (key == "no_decoder") c.no_decoder = val;
        else throw ConfigError("train config: unknown field '" + key + "'");
    }
    c.validate();
    return c;
}

std::unique_ptr<TriplexModel> Checkpoint::instantiate() const {
    auto model = std::make_unique<TriplexModel>(config.model_config(), schema);
    if (weights.size() != model->params().size()) {
        throw IntegrityError("checkpoint: parameter count mismatch");
    }
    for (const auto& [name, value] : weights) {
        ParamEntry& e = model->params().at(name);
        if (e.value.rows() != value.rows() || e.value.cols() != value.cols()) {
            throw IntegrityError("checkpoint: shape mismatch for " + name);
        }
        e.value = value;
    }
    return model;
}

NoiseDraws draw_noise(const TrainConfig& cfg, Eigen::Index n, int latent_width,
                      std::mt19937_64& rng) {
    NoiseDraws d;
    d.t_steps.resize(static_cast<std::size_t>(n));
    // t = 0 is excluded: var(0) = 0 makes eps / sqrt(lambda(t)) singular
    std::uniform_int_distribution<int> tdist(1, cfg.T);
    std::normal_distribution<double> ndist(0.0, 1.0);
    for (auto& t : d.t_steps) t = tdist(rng);
    for (int m = 0; m < 3; ++m) {
        Matrix& noise = d.noise[static_cast<std::size_t>(m)];
        noise.resize(n, latent_width);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int j = 0; j < latent_width; ++j) noise(i, j) = ndist(rng);
        }
    }
    return d;
}

namespace {

std::array<NodeId, 3> feature_leaves(Tape& tape, const EncodedBatch& batch) {
    return {tape.leaf(batch.D), tape.leaf(batch.C), tape.leaf(batch.L)};
}

NodeId build_score_loss(Tape& tape, const TriplexModel& model, const NoiseSchedule& sched,
                        const std::array<NodeId, 3>& latents, const NoiseDraws& draws) {
    const Eigen::Index n = tape.value(latents[0]).rows();
    const int lw = model.latent_width();
    Matrix phi_col(n, 1), std_col(n, 1);
    const bool cascade = !model.config().no_cascade;
    for (Eigen::Index i = 0; i < n; ++i) {
        int t = draws.t_steps[static_cast<std::size_t>(i)];
        phi_col(i, 0) = cascade ? sched.phi(t) : 0.0;
        std_col(i, 0) = sched.marginal_std(t);
    }
    NodeId phi_node = tape.leaf(phi_col);
    NodeId one_minus_phi = tape.leaf(Matrix::Ones(n, 1) - phi_col);
    NodeId std_node = tape.leaf(std_col);

    // marginal means mu_m(t) = (1-phi) x0_m + phi fused_m: both the center of
    // each forward perturbation and the conditioning the score networks see.
    // Co-generating chains can only hand each other Tweedie estimates of these
    // means, so training must condition on the same quantity, not on the clean
    // latents (which are unavailable at sampling time once phi > 0).
    std::array<NodeId, 3> mu;
    for (int mi = 0; mi < 3; ++mi) {
        Modality m = static_cast<Modality>(mi);
        auto [r1m, r2m] = kRefs[static_cast<std::size_t>(mi)];
        NodeId x0 = latents[static_cast<std::size_t>(mi)];
        if (cascade) {
            NodeId r1 = latents[static_cast<std::size_t>(r1m)];
            NodeId r2 = latents[static_cast<std::size_t>(r2m)];
            NodeId alpha = model.fusion_weight_on_tape(tape, m, draws.t_steps);
            NodeId one_minus_alpha = sub(tape, tape.leaf(Matrix::Ones(n, 1)), alpha);
            NodeId fused = add(tape, colwise_scale(tape, r1, alpha),
                               colwise_scale(tape, r2, one_minus_alpha));
            mu[static_cast<std::size_t>(mi)] =
                add(tape, colwise_scale(tape, x0, one_minus_phi),
                    colwise_scale(tape, fused, phi_node));
        } else {
            mu[static_cast<std::size_t>(mi)] = x0;
        }
    }

    std::array<NodeId, 3> x_tilde;
    for (int mi = 0; mi < 3; ++mi) {
        NodeId eps = tape.leaf(draws.noise[static_cast<std::size_t>(mi)]);
        x_tilde[static_cast<std::size_t>(mi)] =
            add(tape, mu[static_cast<std::size_t>(mi)], colwise_scale(tape, eps, std_node));
    }

    // Conditioning references: with the cascade on, the nets see the
    // co-modalities' marginal means mu_r(t) — the quantity a co-generating
    // chain estimates via Tweedie — which keeps conditional imputation
    // strong. Without the cascade there is no denoised-estimate exchange, so
    // the only cross-modal signal available at step t is the co-chains' own
    // noisy states x_tilde_r; training conditions on those to stay consistent
    // with sampling.
    const std::array<NodeId, 3>& refs = cascade ? mu : x_tilde;

    NodeId loss = tape.leaf(Matrix::Zero(1, 1));
    for (int mi = 0; mi < 3; ++mi) {
        Modality m = static_cast<Modality>(mi);
        auto [r1m, r2m] = kRefs[static_cast<std::size_t>(mi)];
        NodeId eps = tape.leaf(draws.noise[static_cast<std::size_t>(mi)]);
        NodeId s = model.score_on_tape(tape, m, x_tilde[static_cast<std::size_t>(mi)],
                                       draws.t_steps, refs[static_cast<std::size_t>(r1m)],
                                       refs[static_cast<std::size_t>(r2m)]);
        // lambda(t) = var(t) weighting: the balanced objective is
        // ||sigma_t * s + eps||^2, uniform in t, so no single noise level
        // dominates the gradient
        NodeId resid = add(tape, colwise_scale(tape, s, std_node), eps);
        NodeId sq = cmul(tape, resid, resid);
        loss = add(tape, loss, scale(tape, sum_all(tape, sq),
                                     1.0 / static_cast<double>(n * lw)));
    }
    return loss;
}

NodeId build_recon_loss(Tape& tape, const TriplexModel& model,
                        const std::array<NodeId, 3>& latents, const std::array<NodeId, 3>& feats,
                        const IntMatrix& observed_mask) {
    NodeId loss = tape.leaf(Matrix::Zero(1, 1));
    for (int mi = 0; mi < 3; ++mi) {
        Modality m = static_cast<Modality>(mi);
        const Eigen::Index n = tape.value(feats[static_cast<std::size_t>(mi)]).rows();
        const Eigen::Index f = tape.value(feats[static_cast<std::size_t>(mi)]).cols();
        Matrix mask = Matrix::Zero(n, f);
        Eigen::Index observed_entries = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (observed_mask(i, mi)) {
                mask.row(i).setOnes();
                observed_entries += f;
            }
        }
        if (observed_entries == 0) continue;  // fully missing modality contributes 0
        NodeId dec = model.decode_on_tape(tape, m, latents[static_cast<std::size_t>(mi)]);
        NodeId diff = sub(tape, dec, feats[static_cast<std::size_t>(mi)]);
        NodeId masked = cmul(tape, diff, tape.leaf(mask));
        NodeId sq = cmul(tape, masked, masked);
        loss = add(tape, loss, scale(tape, sum_all(tape, sq),
                                     1.0 / static_cast<double>(observed_entries)));
    }
    return loss;
}

// Pulls each modality's latent second moment toward 1. The noise schedule is
// fixed, so the encoder must meet it: a latent whose scale drifts well below 1
// sits under the small-t noise floor and reverse chains cannot resolve it
// (decision boundaries blur), while nothing in the score or reconstruction
// terms penalizes the drift.
NodeId build_scale_penalty(Tape& tape, const std::array<NodeId, 3>& latents) {
    NodeId pen = tape.leaf(Matrix::Zero(1, 1));
    NodeId one = tape.leaf(Matrix::Ones(1, 1));
    for (int mi = 0; mi < 3; ++mi) {
        const Matrix& x = tape.value(latents[static_cast<std::size_t>(mi)]);
        NodeId sq = cmul(tape, latents[static_cast<std::size_t>(mi)],
                         latents[static_cast<std::size_t>(mi)]);
        NodeId ms = scale(tape, sum_all(tape, sq),
                          1.0 / static_cast<double>(x.rows() * x.cols()));
        NodeId d = sub(tape, ms, one);
        pen = add(tape, pen, cmul(tape, d, d));
    }
    return pen;
}

}  // namespace

LossParts total_loss(TriplexModel& model, const NoiseSchedule& sched, const EncodedBatch& batch,
                     const IntMatrix& observed_mask, const NoiseDraws& draws, double lambda_rec,
                     double lambda_scale, bool with_grad) {
    Tape tape(&model.params());
    auto feats = feature_leaves(tape, batch);
    auto latents = model.encode_on_tape(tape, feats);
    NodeId score = build_score_loss(tape, model, sched, latents, draws);
    NodeId recon = build_recon_loss(tape, model, latents, feats, observed_mask);
    NodeId pen = build_scale_penalty(tape, latents);
    NodeId total = add(tape, add(tape, score, scale(tape, recon, lambda_rec)),
                       scale(tape, pen, lambda_scale));
    LossParts parts;
    parts.score = tape.value(score)(0, 0);
    parts.recon = tape.value(recon)(0, 0);
    parts.scale_pen = tape.value(pen)(0, 0);
    parts.total = tape.value(total)(0, 0);
    if (with_grad) tape.backward(total);
    return parts;
}

double score_loss(TriplexModel& model, const NoiseSchedule& sched, const EncodedBatch& batch,
                  const NoiseDraws& draws, bool with_grad) {
    Tape tape(&model.params());
    auto feats = feature_leaves(tape, batch);
    auto latents = model.encode_on_tape(tape, feats);
    NodeId loss = build_score_loss(tape, model, sched, latents, draws);
    double v = tape.value(loss)(0, 0);
    if (with_grad) tape.backward(loss);
    return v;
}

double recon_loss(TriplexModel& model, const EncodedBatch& batch, const IntMatrix& observed_mask,
                  bool with_grad) {
    Tape tape(&model.params());
    auto feats = feature_leaves(tape, batch);
    auto latents = model.encode_on_tape(tape, feats);
    NodeId loss = build_recon_loss(tape, model, latents, feats, observed_mask);
    double v = tape.value(loss)(0, 0);
    if (with_grad) tape.backward(loss);
    return v;
}

RecordSet self_impute_refresh(const TriplexModel& model, const NoiseSchedule& sched,
                              const Standardization& stats, const RecordSet& dataset,
                              std::uint64_t seed, bool deterministic) {
    SamplerOptions opts;
    opts.deterministic = deterministic;
    return impute(model, sched, stats, dataset, seed, opts);
}

namespace {

std::uint64_t hash_observed(const RecordSet& rs) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        h = splitmix64(h ^ bits);
    };
    for (Eigen::Index i = 0; i < rs.n; ++i) {
        for (int m = 0; m < 3; ++m) mix(static_cast<double>(rs.mask(i, m)));
        if (rs.observed(i, kContinuous)) {
            for (Eigen::Index j = 0; j < rs.continuous.cols(); ++j) mix(rs.continuous(i, j));
        }
        if (rs.observed(i, kDiscrete)) {
            for (Eigen::Index j = 0; j < rs.categorical.cols(); ++j) {
                mix(static_cast<double>(rs.categorical(i, j)));
            }
        }
        if (rs.observed(i, kText)) {
            for (Eigen::Index j = 0; j < rs.text.cols(); ++j) mix(rs.text(i, j));
        }
    }
    return h;
}

// Restrict a completed RecordSet back to the original observation mask.
void check_observed_untouched(const RecordSet& original, const RecordSet& completed) {
    RecordSet view = completed;
    view.mask = original.mask;
    for (Eigen::Index i = 0; i < view.n; ++i) {
        if (!view.observed(i, kContinuous)) view.continuous.row(i).setZero();
        if (!view.observed(i, kDiscrete)) view.categorical.row(i).setZero();
        if (!view.observed(i, kText)) view.text.row(i).setZero();
    }
    if (hash_observed(view) != hash_observed(original)) {
        throw StateError("self-imputation modified observed data");
    }
}

}  // namespace

Checkpoint fit(const TrainConfig& cfg, const RecordSet& dataset, std::ostream* log,
               std::vector<EpochLogEntry>* history) {
    cfg.validate();
    if (dataset.n < 2) throw ConfigError("fit: dataset too small");
    Splits splits = split(dataset, {1.0 - cfg.val_fraction, cfg.val_fraction, 0.0}, cfg.seed);
    const RecordSet& train_rs = splits.train;
    const RecordSet& val_rs = splits.val;
    const double r_miss = compute_missing_rate(train_rs);

    NoiseSchedule sched = cfg.schedule();
    TriplexModel model(cfg.model_config(), train_rs.schema);
    const int lw = model.latent_width();

    // standardization stats come from observed training data only
    Standardization stats = preprocess(train_rs).stats;

    // completed datasets; during warm-up missing payloads stay zero-filled
    RecordSet train_completed = train_rs;
    RecordSet val_completed = val_rs;

    // frozen validation noise so epochs compare like with like
    std::mt19937_64 val_rng(splitmix64(cfg.seed ^ 0x76616c6eULL));
    NoiseDraws val_draws = draw_noise(cfg, val_rs.n, lw, val_rng);

    std::vector<Matrix> best_params;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int epochs_since_best = 0;
    long adam_step_count = 0;

    auto snapshot = [&]() {
        best_params.clear();
        for (std::size_t i = 0; i < model.params().size(); ++i) {
            best_params.push_back(model.params()[static_cast<int>(i)].value);
        }
    };

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        auto t_start = std::chrono::steady_clock::now();
        const bool past_warmup = epoch >= cfg.warmup_epochs;
        if (past_warmup && (epoch - cfg.warmup_epochs) % cfg.refresh_stride == 0 &&
            r_miss > 0.0) {
            std::uint64_t refresh_seed = splitmix64(cfg.seed ^ (0x72667273ULL + epoch));
            train_completed = self_impute_refresh(model, sched, stats, train_rs, refresh_seed,
                                                  cfg.impute_deterministic);
            val_completed = self_impute_refresh(model, sched, stats, val_rs,
                                                splitmix64(refresh_seed ^ 1),
                                                cfg.impute_deterministic);
            check_observed_untouched(train_rs, train_completed);
        }
        EncodedBatch train_enc = preprocess_with(train_completed, stats);
        EncodedBatch val_enc = preprocess_with(val_completed, stats);

        // minibatch pass
        std::mt19937_64 rng(splitmix64(cfg.seed ^ (0x65706f6368ULL * (epoch + 1))));
        std::vector<Eigen::Index> order(static_cast<std::size_t>(train_rs.n));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        double train_loss_sum = 0.0;
        int batches = 0;
        for (Eigen::Index start = 0; start < train_rs.n; start += cfg.batch_size) {
            Eigen::Index stop = std::min<Eigen::Index>(start + cfg.batch_size, train_rs.n);
            Eigen::Index bn = stop - start;
            EncodedBatch mb;
            mb.schema = train_enc.schema;
            mb.stats = stats;
            mb.D.resize(bn, train_enc.D.cols());
            mb.C.resize(bn, train_enc.C.cols());
            mb.L.resize(bn, train_enc.L.cols());
            mb.mask.resize(bn, 3);
            IntMatrix observed(bn, 3);
            for (Eigen::Index i = 0; i < bn; ++i) {
                Eigen::Index src = order[static_cast<std::size_t>(start + i)];
                mb.D.row(i) = train_enc.D.row(src);
                mb.C.row(i) = train_enc.C.row(src);
                mb.L.row(i) = train_enc.L.row(src);
                mb.mask.row(i).setOnes();
                observed.row(i) = train_rs.mask.row(src);
            }
            NoiseDraws draws = draw_noise(cfg, bn, lw, rng);
            LossParts parts = total_loss(model, sched, mb, observed, draws, cfg.lambda_rec,
                                         cfg.lambda_scale, true);
            if (!std::isfinite(parts.total)) {
                throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batches));
            }
            train_loss_sum += parts.total;
            ++batches;
            adam_step(model.params(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                      ++adam_step_count);
        }
        double train_loss = train_loss_sum / std::max(batches, 1);

        IntMatrix val_observed = val_rs.mask;
        LossParts val_parts = total_loss(model, sched, val_enc, val_observed, val_draws,
                                         cfg.lambda_rec, cfg.lambda_scale, false);
        double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
                             .count();
        if (log) {
            (*log) << epoch << "\t" << train_loss << "\t" << val_parts.total << "\t" << r_miss
                   << "\t" << seconds << "\n";
        }
        if (history) history->push_back({epoch, train_loss, val_parts.total, r_miss, seconds});

        if (val_parts.total < best_val) {
            best_val = val_parts.total;
            best_epoch = epoch;
            epochs_since_best = 0;
            snapshot();
        } else {
            ++epochs_since_best;
            if (epochs_since_best >= cfg.patience) break;
        }
    }

    if (best_epoch < 0) throw NumericError("fit: no finite validation loss observed");
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        model.params()[static_cast<int>(i)].value = best_params[i];
    }

    Checkpoint ckpt;
    ckpt.schema = train_rs.schema;
    ckpt.config = cfg;
    ckpt.stats = stats;
    ckpt.epoch = best_epoch;
    ckpt.val_loss = best_val;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        const ParamEntry& e = model.params()[static_cast<int>(i)];
        ckpt.weights.emplace_back(e.name, e.value);
    }
    return ckpt;
}

}  // namespace tcdiff
