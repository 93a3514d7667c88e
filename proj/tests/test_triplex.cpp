#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tcdiff/triplex.hpp"

using namespace tcdiff;

namespace {

ModelConfig small_cfg() {
    ModelConfig cfg;
    cfg.z = 4;
    cfg.hidden = 8;
    cfg.temb_dim = 8;
    cfg.init_seed = 3;
    return cfg;
}

// Deterministically nudge all parameters off their init.
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

TEST_CASE("encode: missing modalities give zero latents") {
    RecordSet rs = make_toy_dataset(8, 1);
    rs.mask(2, kText) = 0;
    rs.text.row(2).setZero();
    EncodedBatch batch = preprocess(rs);
    TriplexModel model(small_cfg(), rs.schema);
    nudge(model, 9);
    LatentTriple lat = model.encode(batch);
    CHECK(lat.x[kText].row(2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(lat.x[kText].row(3).cwiseAbs().maxCoeff() > 0.0);
    CHECK(lat.mask(2, kText) == 0);
}

TEST_CASE("encode: identical records give identical latents") {
    RecordSet rs = make_toy_dataset(4, 2);
    rs.continuous.row(1) = rs.continuous.row(0);
    rs.categorical.row(1) = rs.categorical.row(0);
    rs.text.row(1) = rs.text.row(0);
    TriplexModel model(small_cfg(), rs.schema);
    nudge(model, 4);
    LatentTriple lat = model.encode(preprocess(rs));
    for (int m = 0; m < 3; ++m) CHECK(lat.x[m].row(0) == lat.x[m].row(1));
}

TEST_CASE("encode: perturbing only text changes only the text latent") {
    RecordSet rs = make_toy_dataset(4, 3);
    TriplexModel model(small_cfg(), rs.schema);
    nudge(model, 5);
    LatentTriple before = model.encode(preprocess(rs));
    RecordSet rs2 = rs;
    rs2.text(0, 0) += 1.0;
    EncodedBatch b2 = preprocess_with(rs2, preprocess(rs).stats);
    LatentTriple after = model.encode(b2);
    CHECK(before.x[kDiscrete].row(0) == after.x[kDiscrete].row(0));
    CHECK(before.x[kText].row(0) != after.x[kText].row(0));
}

TEST_CASE("fusion weight: fresh logits give 0.5, always inside (0,1)") {
    RecordSet rs = make_toy_dataset(2, 1);
    TriplexModel model(small_cfg(), rs.schema);
    for (int m = 0; m < 3; ++m) {
        for (int t : {1, 50, 100}) {
            CHECK(model.fusion_weight(static_cast<Modality>(m), t) == doctest::Approx(0.5));
        }
    }
    model.params().at("alpha_D").value.setConstant(1000.0);
    double hi = model.fusion_weight(kDiscrete, 10);
    CHECK(hi > 0.0);
    CHECK(hi < 1.0);
    model.params().at("alpha_D").value.setConstant(-1000.0);
    double lo = model.fusion_weight(kDiscrete, 10);
    CHECK(lo > 0.0);
    CHECK(lo < 1.0);
}

TEST_CASE("score: untrained zero-initialized head gives zero score") {
    RecordSet rs = make_toy_dataset(3, 1);
    TriplexModel model(small_cfg(), rs.schema);
    int lw = model.latent_width();
    Matrix x = Matrix::Random(3, lw), r1 = Matrix::Random(3, lw), r2 = Matrix::Random(3, lw);
    for (int m = 0; m < 3; ++m) {
        CHECK(model.score(static_cast<Modality>(m), x, 50, r1, r2).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("score: sensitive to swapping unequal references") {
    RecordSet rs = make_toy_dataset(3, 1);
    TriplexModel model(small_cfg(), rs.schema);
    nudge(model, 6);
    int lw = model.latent_width();
    Matrix x = Matrix::Random(3, lw), r1 = Matrix::Random(3, lw), r2 = Matrix::Random(3, lw);
    Matrix s12 = model.score(kContinuous, x, 40, r1, r2);
    Matrix s21 = model.score(kContinuous, x, 40, r2, r1);
    CHECK((s12 - s21).cwiseAbs().maxCoeff() > 0.0);
    Matrix same = model.score(kContinuous, x, 40, r1, r1);
    CHECK(same == model.score(kContinuous, x, 40, r1, r1));
}

TEST_CASE("score: pure function of its inputs") {
    RecordSet rs = make_toy_dataset(2, 1);
    TriplexModel model(small_cfg(), rs.schema);
    nudge(model, 7);
    int lw = model.latent_width();
    Matrix x = Matrix::Random(2, lw), r1 = Matrix::Random(2, lw), r2 = Matrix::Random(2, lw);
    CHECK(model.score(kText, x, 7, r1, r2) == model.score(kText, x, 7, r1, r2));
}

TEST_CASE("tweedie_denoise identities") {
    NoiseSchedule sched(25.0, 100, 20, 80);
    Matrix x = Matrix::Random(2, 4);
    CHECK(tweedie_denoise(x, 30, Matrix::Zero(2, 4), sched) == x);
    // exact Gaussian score recovers mu exactly
    Matrix mu = Matrix::Constant(2, 4, 1.7);
    int t = 60;
    Matrix score = -(x - mu) / sched.var(t);
    CHECK((tweedie_denoise(x, t, score, sched) - mu).cwiseAbs().maxCoeff() < 1e-12);
    // tiny t: var -> 0+ leaves x almost unchanged
    CHECK((tweedie_denoise(x, 1, Matrix::Ones(2, 4), sched) - x).cwiseAbs().maxCoeff() <
          2 * sched.var(1));
}

TEST_CASE("decode: zeroed decoders give zero outputs") {
    RecordSet rs = make_toy_dataset(3, 1);
    ModelConfig cfg = small_cfg();
    TriplexModel model(cfg, rs.schema);
    for (const char* tag : {"D", "C", "L"}) {
        model.params().at(std::string("dec_") + tag + "_W2").value.setZero();
        model.params().at(std::string("dec_") + tag + "_b2").value.setZero();
    }
    LatentTriple lat;
    int lw = model.latent_width();
    for (int m = 0; m < 3; ++m) lat.x[m] = Matrix::Random(3, lw);
    lat.mask = IntMatrix::Ones(3, 3);
    auto out = model.decode(lat);
    for (int m = 0; m < 3; ++m) CHECK(out[m].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decode: no cross-talk between modalities") {
    RecordSet rs = make_toy_dataset(3, 1);
    TriplexModel model(small_cfg(), rs.schema);
    nudge(model, 8);
    LatentTriple lat;
    int lw = model.latent_width();
    for (int m = 0; m < 3; ++m) lat.x[m] = Matrix::Random(3, lw);
    lat.mask = IntMatrix::Ones(3, 3);
    auto base = model.decode(lat);
    lat.x[kDiscrete].setRandom();
    auto perturbed = model.decode(lat);
    CHECK(base[kContinuous] == perturbed[kContinuous]);
    CHECK(base[kText] == perturbed[kText]);
    CHECK(base[kDiscrete] != perturbed[kDiscrete]);
}

TEST_CASE("parameter names are stable and ablations change the set") {
    RecordSet rs = make_toy_dataset(2, 1);
    TriplexModel full(small_cfg(), rs.schema);
    CHECK(full.params().has("alpha_D"));
    CHECK(full.params().has("bridge_C_W"));
    CHECK(full.params().has("s_L_W3"));

    ModelConfig nt = small_cfg();
    nt.no_triplex = true;
    TriplexModel no_triplex(nt, rs.schema);
    CHECK(!no_triplex.params().has("alpha_D"));
    CHECK(!no_triplex.params().has("bridge_D_W"));

    ModelConfig ne = small_cfg();
    ne.no_encoder = true;
    TriplexModel no_enc(ne, rs.schema);
    CHECK(!no_enc.params().has("enc_D_W"));

    ModelConfig base = small_cfg();
    base.no_triplex = base.no_cascade = true;
    CHECK(base.base_model());
}

TEST_CASE("time embedding shape and range") {
    RecordSet rs = make_toy_dataset(2, 1);
    TriplexModel model(small_cfg(), rs.schema);
    Matrix emb = model.time_embedding({1, 100});
    CHECK(emb.rows() == 2);
    CHECK(emb.cols() == 8);
    CHECK(emb.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    CHECK(emb.row(0) != emb.row(1));
}
