#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tcdiff/checkpoint.hpp"
#include "tcdiff/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace tcdiff;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.z = 4;
    cfg.hidden = 8;
    cfg.max_epochs = 4;
    cfg.patience = 4;
    cfg.warmup_epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 11;
    return cfg;
}

void nudge(TriplexModel& model, std::uint64_t seed) {
    CounterRng rng({seed});
    std::uint64_t c = 0;
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        auto& e = model.params()[i];
        for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
            for (Eigen::Index j = 0; j < e.value.cols(); ++j) e.value(r, j) += 0.05 * rng.normal(c++);
        }
    }
}

}  // namespace

TEST_CASE("config validation") {
    TrainConfig cfg = tiny_config();
    cfg.t1 = 90;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.lambda_rec = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.patience = 100;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    // JSON round trip and unknown-field rejection
    cfg = tiny_config();
    TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK_THROWS_AS(TrainConfig::from_json(R"({"Z": 4})"), ConfigError);
}

TEST_CASE("draw_noise: t uniform over {1..T}, never 0") {
    TrainConfig cfg = tiny_config();
    std::mt19937_64 rng(1);
    NoiseDraws d = draw_noise(cfg, 500, 4, rng);
    CHECK(d.t_steps.size() == 500);
    int lo = 1000, hi = 0;
    for (int t : d.t_steps) {
        CHECK(t >= 1);
        CHECK(t <= cfg.T);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    CHECK(lo < 10);
    CHECK(hi > 90);
    for (int m = 0; m < 3; ++m) {
        CHECK(d.noise[m].rows() == 500);
        CHECK(d.noise[m].cols() == 4);
    }
}

TEST_CASE("score_loss of the zero network matches the closed form on the same draws") {
    TrainConfig cfg = tiny_config();
    RecordSet rs = make_toy_dataset(32, 5);
    EncodedBatch batch = preprocess(rs);
    TriplexModel model(cfg.model_config(), rs.schema);  // zero-init score heads
    NoiseSchedule sched = cfg.schedule();
    std::mt19937_64 rng(2);
    NoiseDraws draws = draw_noise(cfg, rs.n, model.latent_width(), rng);
    double loss = score_loss(model, sched, batch, draws, false);
    // zero network, var(t)-weighted objective: per record loss = |eps|^2,
    // averaged per latent dim and record, summed over the three modalities
    double expect = 0.0;
    for (int m = 0; m < 3; ++m) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < rs.n; ++i) {
            acc += draws.noise[m].row(i).squaredNorm();
        }
        expect += acc / (static_cast<double>(rs.n) * model.latent_width());
    }
    CHECK(loss == doctest::Approx(expect).epsilon(1e-10));
    CHECK(loss >= 0.0);
}

TEST_CASE("recon_loss: zeroed decoders, and fully missing modality contributes zero") {
    TrainConfig cfg = tiny_config();
    RecordSet rs = make_toy_dataset(16, 6);
    TriplexModel model(cfg.model_config(), rs.schema);
    for (const char* tag : {"D", "C", "L"}) {
        model.params().at(std::string("dec_") + tag + "_W2").value.setZero();
        model.params().at(std::string("dec_") + tag + "_b2").value.setZero();
    }
    EncodedBatch batch = preprocess(rs);
    double loss = recon_loss(model, batch, rs.mask, false);
    // zero decoders -> loss = mean squared feature value per modality, summed
    double expect = batch.D.array().square().mean() + batch.C.array().square().mean() +
                    batch.L.array().square().mean();
    CHECK(loss == doctest::Approx(expect).epsilon(1e-10));

    IntMatrix mask_no_text = rs.mask;
    mask_no_text.col(kText).setZero();
    double loss2 = recon_loss(model, batch, mask_no_text, false);
    CHECK(loss2 == doctest::Approx(batch.D.array().square().mean() +
                                   batch.C.array().square().mean())
                       .epsilon(1e-10));
}

TEST_CASE("total_loss composition") {
    TrainConfig cfg = tiny_config();
    RecordSet rs = make_toy_dataset(16, 7);
    EncodedBatch batch = preprocess(rs);
    TriplexModel model(cfg.model_config(), rs.schema);
    nudge(model, 3);
    NoiseSchedule sched = cfg.schedule();
    std::mt19937_64 rng(3);
    NoiseDraws draws = draw_noise(cfg, rs.n, model.latent_width(), rng);
    LossParts zero_rec = total_loss(model, sched, batch, rs.mask, draws, 0.0, 0.0, false);
    CHECK(zero_rec.total == doctest::Approx(zero_rec.score).epsilon(1e-12));
    LossParts both = total_loss(model, sched, batch, rs.mask, draws, 1.0, 1.0, false);
    CHECK(both.total ==
          doctest::Approx(both.score + both.recon + both.scale_pen).epsilon(1e-12));
    CHECK(both.scale_pen > 0.0);
}

TEST_CASE("full-model gradients pass grad_check") {
    TrainConfig cfg = tiny_config();
    cfg.seed = 7;
    RecordSet rs = make_toy_dataset(4, 7);
    EncodedBatch batch = preprocess(rs);
    TriplexModel model(cfg.model_config(), rs.schema);
    nudge(model, 12);
    NoiseSchedule sched = cfg.schedule();
    std::mt19937_64 rng(7);
    NoiseDraws draws = draw_noise(cfg, rs.n, model.latent_width(), rng);
    auto f = [&](bool with_grad) {
        return total_loss(model, sched, batch, rs.mask, draws, cfg.lambda_rec, cfg.lambda_scale,
                          with_grad)
            .total;
    };
    CHECK(grad_check(f, model.params(), 1e-5) < 1e-4);
}

TEST_CASE("fusion weight receives gradient when phi > 0 and refs differ") {
    TrainConfig cfg = tiny_config();
    RecordSet rs = make_toy_dataset(6, 9);
    EncodedBatch batch = preprocess(rs);
    TriplexModel model(cfg.model_config(), rs.schema);
    nudge(model, 13);
    NoiseSchedule sched = cfg.schedule();
    NoiseDraws draws;
    draws.t_steps.assign(static_cast<std::size_t>(rs.n), 50);  // phi = 0.5
    CounterRng crng({4});
    std::uint64_t c = 0;
    for (int m = 0; m < 3; ++m) {
        draws.noise[m] = Matrix(rs.n, model.latent_width());
        for (Eigen::Index i = 0; i < rs.n; ++i) {
            for (int j = 0; j < model.latent_width(); ++j) draws.noise[m](i, j) = crng.normal(c++);
        }
    }
    (void)total_loss(model, sched, batch, rs.mask, draws, 0.0, 0.0, true);
    CHECK(model.params().at("alpha_D").grad.cwiseAbs().maxCoeff() > 0.0);
    CHECK(model.params().at("alpha_D").grad.col(20).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("base model: score ignores the reference latents entirely") {
    TrainConfig cfg = tiny_config();
    cfg.no_cascade = true;
    cfg.no_triplex = true;
    RecordSet rs = make_toy_dataset(6, 10);
    TriplexModel model(cfg.model_config(), rs.schema);
    nudge(model, 14);
    int lw = model.latent_width();
    Matrix x = Matrix::Random(2, lw), r1 = Matrix::Random(2, lw), r2 = Matrix::Random(2, lw);
    Matrix s1 = model.score(kDiscrete, x, 40, r1, r2);
    Matrix s2 = model.score(kDiscrete, x, 40, 2 * r1, -r2);
    CHECK(s1 == s2);

    // and each modality's encoder gets gradient only from its own loss term:
    // perturbing C's data leaves D's encoder gradient unchanged
    EncodedBatch batch = preprocess(rs);
    NoiseSchedule sched = cfg.schedule();
    std::mt19937_64 rng(10);
    NoiseDraws draws = draw_noise(cfg, rs.n, lw, rng);
    IntMatrix d_only = rs.mask;
    d_only.col(kContinuous).setZero();
    d_only.col(kText).setZero();
    (void)total_loss(model, sched, batch, d_only, draws, 1.0, 1.0, true);
    Matrix gD = model.params().at("enc_D_W").grad;
    model.params().zero_grads();
    EncodedBatch batch2 = batch;
    batch2.C.array() += 0.5;
    (void)total_loss(model, sched, batch2, d_only, draws, 1.0, 1.0, true);
    CHECK(model.params().at("enc_D_W").grad == gD);
}

TEST_CASE("self_impute_refresh: fully observed dataset unchanged") {
    TrainConfig cfg = tiny_config();
    RecordSet rs = make_toy_dataset(12, 15);
    TriplexModel model(cfg.model_config(), rs.schema);
    nudge(model, 15);
    Standardization stats = preprocess(rs).stats;
    RecordSet out = self_impute_refresh(model, cfg.schedule(), stats, rs, 3, false);
    CHECK(out.continuous == rs.continuous);
    CHECK(out.categorical == rs.categorical);
    CHECK(out.text == rs.text);
    CHECK(out.mask == rs.mask);
}

TEST_CASE("self_impute_refresh: observed slices bit-identical, missing filled") {
    TrainConfig cfg = tiny_config();
    RecordSet rs = simulate_missingness(make_toy_dataset(12, 16), 0.3, 5);
    TriplexModel model(cfg.model_config(), rs.schema);
    nudge(model, 16);
    Standardization stats = preprocess(rs).stats;
    RecordSet out = self_impute_refresh(model, cfg.schedule(), stats, rs, 4, false);
    CHECK(out.mask.minCoeff() == 1);
    for (Eigen::Index i = 0; i < rs.n; ++i) {
        if (rs.observed(i, kContinuous)) CHECK(out.continuous.row(i) == rs.continuous.row(i));
        if (rs.observed(i, kText)) CHECK(out.text.row(i) == rs.text.row(i));
        if (rs.observed(i, kDiscrete)) CHECK(out.categorical.row(i) == rs.categorical.row(i));
    }
    // deterministic per seed
    RecordSet again = self_impute_refresh(model, cfg.schedule(), stats, rs, 4, false);
    CHECK(again.continuous == out.continuous);
}

TEST_CASE("fit: deterministic, logs epochs, restores best") {
    TrainConfig cfg = tiny_config();
    RecordSet rs = simulate_missingness(make_toy_dataset(60, 17), 0.2, 6);
    std::ostringstream log1, log2;
    std::vector<EpochLogEntry> hist;
    Checkpoint a = fit(cfg, rs, &log1, &hist);
    Checkpoint b = fit(cfg, rs, &log2, nullptr);
    CHECK(a.weights.size() == b.weights.size());
    for (std::size_t i = 0; i < a.weights.size(); ++i) {
        CHECK(a.weights[i].first == b.weights[i].first);
        CHECK(a.weights[i].second == b.weights[i].second);
    }
    CHECK(a.val_loss == b.val_loss);
    CHECK(hist.size() == 4);
    // tab-separated epoch lines
    std::string line;
    std::getline(std::istringstream(log1.str()), line);
    CHECK(std::count(line.begin(), line.end(), '\t') == 4);
    // best val loss is the minimum of the trajectory
    double best = 1e300;
    for (const auto& e : hist) best = std::min(best, e.val_loss);
    CHECK(a.val_loss == doctest::Approx(best));
}

TEST_CASE("fit: patience stops early and keeps the best checkpoint") {
    TrainConfig cfg = tiny_config();
    cfg.max_epochs = 60;
    cfg.patience = 2;
    cfg.lr = 10.0;  // absurd rate forces the val loss to bounce
    RecordSet rs = make_toy_dataset(40, 18);
    std::vector<EpochLogEntry> hist;
    Checkpoint ckpt = fit(cfg, rs, nullptr, &hist);
    CHECK(hist.size() < 60);
    double best = 1e300;
    for (const auto& e : hist) best = std::min(best, e.val_loss);
    CHECK(ckpt.val_loss == doctest::Approx(best));
}

TEST_CASE("checkpoint save/load round trip and tamper detection") {
    TrainConfig cfg = tiny_config();
    RecordSet rs = make_toy_dataset(30, 19);
    Checkpoint ckpt = fit(cfg, rs);
    save_checkpoint(ckpt, "tcdiff_test_ckpt");
    Checkpoint back = load_checkpoint("tcdiff_test_ckpt");
    CHECK(back.epoch == ckpt.epoch);
    CHECK(back.val_loss == ckpt.val_loss);
    for (std::size_t i = 0; i < ckpt.weights.size(); ++i) {
        CHECK(back.weights[i].second == ckpt.weights[i].second);
    }
    // save -> load -> save is byte-identical
    save_checkpoint(back, "tcdiff_test_ckpt2");
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp("tcdiff_test_ckpt/manifest.json") == slurp("tcdiff_test_ckpt2/manifest.json"));
    CHECK(slurp("tcdiff_test_ckpt/weights.bin") == slurp("tcdiff_test_ckpt2/weights.bin"));
    // corrupt one byte of the blob
    {
        std::fstream f("tcdiff_test_ckpt/weights.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(16);
        char c = 0x5a;
        f.write(&c, 1);
    }
    CHECK_THROWS_AS(load_checkpoint("tcdiff_test_ckpt"), IntegrityError);
    std::filesystem::remove_all("tcdiff_test_ckpt");
    std::filesystem::remove_all("tcdiff_test_ckpt2");
    // model instantiation from checkpoint reproduces scores
    auto model = back.instantiate();
    CHECK(model->config().z == cfg.z);
}
