// tcdiff command-line tool: training, generation, imputation, evaluation and
// experiment orchestration for the triplex cascaded diffusion model.

#include "tcdiff/checkpoint.hpp"
#include "tcdiff/evalsuite.hpp"
#include "tcdiff/sampler.hpp"
#include "tcdiff/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace {

using namespace tcdiff;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kUsage = 2;
constexpr int kNumeric = 3;
constexpr int kIntegrity = 4;

struct ConfigFlags {
    std::string config_path;
    // Optional overrides; precedence flags > file > defaults.
    std::map<std::string, double> num;
    std::map<std::string, bool> flag;
};

void add_config_options(CLI::App* cmd, ConfigFlags& cf) {
    cmd->add_option("--config", cf.config_path, "JSON config file");
    auto num = [&](const std::string& name, const std::string& help) {
        cmd->add_option_function<double>(
            "--" + name, [&cf, name](double v) { cf.num[name] = v; }, help);
    };
    auto boolean = [&](const std::string& name, const std::string& help) {
        cmd->add_flag_callback(
            "--" + name, [&cf, name] { cf.flag[name] = true; }, help);
    };
    num("T", "diffusion steps");
    num("t1", "target/bridging boundary");
    num("t2", "bridging/reference boundary");
    num("sigma", "noise scale");
    num("lr", "Adam learning rate");
    num("max-epochs", "epoch cap");
    num("patience", "early-stopping patience");
    num("lambda-rec", "reconstruction weight");
    num("lambda-scale", "latent-scale penalty weight");
    num("warmup-epochs", "zero-fill warm-up epochs");
    num("batch-size", "minibatch size");
    num("z", "latent width per position");
    num("hidden", "score-network hidden width");
    num("refresh-stride", "epochs between self-imputation refreshes");
    num("val-fraction", "validation split fraction");
    boolean("impute-deterministic", "epsilon=0 chains during self-imputation");
    boolean("no-cascade", "ablation: disable the bridging cascade");
    boolean("no-triplex", "ablation: fixed alpha=0.5, raw-concat conditioning");
    boolean("no-encoder", "ablation: fixed linear encoders");
    boolean("no-decoder", "ablation: fixed linear decoders");
}

TrainConfig resolve_config(const ConfigFlags& cf, std::uint64_t seed) {
    TrainConfig cfg;
    if (!cf.config_path.empty()) {
        std::ifstream in(cf.config_path);
        if (!in) throw ConfigError("cannot open config file: " + cf.config_path);
        std::ostringstream ss;
        ss << in.rdbuf();
        cfg = TrainConfig::from_json(ss.str());
    }
    cfg.seed = seed;
    auto geti = [&](const std::string& k, int& dst) {
        auto it = cf.num.find(k);
        if (it != cf.num.end()) dst = static_cast<int>(it->second);
    };
    auto getd = [&](const std::string& k, double& dst) {
        auto it = cf.num.find(k);
        if (it != cf.num.end()) dst = it->second;
    };
    auto getb = [&](const std::string& k, bool& dst) {
        auto it = cf.flag.find(k);
        if (it != cf.flag.end()) dst = it->second;
    };
    geti("T", cfg.T);
    geti("t1", cfg.t1);
    geti("t2", cfg.t2);
    getd("sigma", cfg.sigma);
    getd("lr", cfg.lr);
    geti("max-epochs", cfg.max_epochs);
    geti("patience", cfg.patience);
    getd("lambda-rec", cfg.lambda_rec);
    getd("lambda-scale", cfg.lambda_scale);
    geti("warmup-epochs", cfg.warmup_epochs);
    geti("batch-size", cfg.batch_size);
    geti("z", cfg.z);
    geti("hidden", cfg.hidden);
    geti("refresh-stride", cfg.refresh_stride);
    getd("val-fraction", cfg.val_fraction);
    getb("impute-deterministic", cfg.impute_deterministic);
    getb("no-cascade", cfg.no_cascade);
    getb("no-triplex", cfg.no_triplex);
    getb("no-encoder", cfg.no_encoder);
    getb("no-decoder", cfg.no_decoder);
    cfg.validate();
    return cfg;
}

int cmd_train(const std::string& data_path, const std::string& schema_path,
              const std::string& out_dir, const ConfigFlags& cf, std::uint64_t seed) {
    Schema schema = Schema::load(schema_path);
    RecordSet data = load_dataset(data_path, schema);
    TrainConfig cfg = resolve_config(cf, seed);

    std::filesystem::create_directories(out_dir);
    std::ofstream log(out_dir + "/train_log.tsv");
    Checkpoint ckpt = fit(cfg, data, &log);
    save_checkpoint(ckpt, out_dir);
    std::cout << "checkpoint written to " << out_dir << " (epoch " << ckpt.epoch
              << ", val_loss " << ckpt.val_loss << ")\n";
    return kOk;
}

int cmd_generate(const std::string& ckpt_dir, const std::string& out_path, long long n,
                 std::uint64_t seed, bool deterministic) {
    Checkpoint ckpt = load_checkpoint(ckpt_dir);
    auto model = ckpt.instantiate();
    SamplerOptions opts;
    opts.deterministic = deterministic;
    RecordSet out = generate(*model, ckpt.config.schedule(), ckpt.stats,
                             static_cast<Eigen::Index>(n), seed, opts);
    save_jsonl(out, out_path);
    return kOk;
}

int cmd_impute(const std::string& ckpt_dir, const std::string& data_path,
               const std::string& out_path, std::uint64_t seed, bool deterministic) {
    Checkpoint ckpt = load_checkpoint(ckpt_dir);
    auto model = ckpt.instantiate();
    RecordSet data = load_dataset(data_path, ckpt.schema);
    SamplerOptions opts;
    opts.deterministic = deterministic;
    RecordSet out = impute(*model, ckpt.config.schedule(), ckpt.stats, data, seed, opts);
    save_jsonl(out, out_path);
    return kOk;
}

MetricsReport eval_pair(const RecordSet& real, const RecordSet& synth,
                        const std::string& target, const RecordSet* train_real,
                        const RecordSet* holdout_real,
                        const std::vector<std::string>& sensitive,
                        const std::vector<std::string>& quasi, std::uint64_t seed) {
    EncodedBatch enc = preprocess(real);
    MetricsReport rep;
    rep.seed = seed;
    rep.n_real = real.n;
    rep.n_synth = synth.n;
    rep.r2 = r2_tstr(real, synth, target, enc.stats);
    Matrix fr = feature_matrix(real, enc.stats);
    Matrix fs = feature_matrix(synth, enc.stats);
    rep.mmd = mmd_rbf(fr, fs);
    rep.mse = stat_mse(fr, fs);
    if (train_real && holdout_real) {
        rep.mia = mia_risk(*train_real, *holdout_real, synth, enc.stats);
    }
    if (!sensitive.empty()) {
        rep.aia = aia_risk(real, synth, sensitive, quasi, enc.stats);
    }
    return rep;
}

int cmd_eval(const std::string& real_path, const std::string& synth_path,
             const std::string& schema_path, const std::string& target,
             const std::string& train_real_path, const std::string& holdout_real_path,
             const std::vector<std::string>& sensitive, const std::vector<std::string>& quasi,
             bool want_mia, std::uint64_t seed) {
    Schema schema = Schema::load(schema_path);
    RecordSet real = load_dataset(real_path, schema);
    RecordSet synth = load_dataset(synth_path, schema);
    if (want_mia && (train_real_path.empty() || holdout_real_path.empty())) {
        std::cerr << "eval: --mia requires --train-real and --holdout-real\n";
        return kUsage;
    }
    RecordSet train_real, holdout_real;
    if (want_mia) {
        train_real = load_dataset(train_real_path, schema);
        holdout_real = load_dataset(holdout_real_path, schema);
    }
    if (!sensitive.empty() && quasi.empty()) {
        std::cerr << "eval: --sensitive requires --quasi\n";
        return kUsage;
    }
    MetricsReport rep = eval_pair(real, synth, target, want_mia ? &train_real : nullptr,
                                  want_mia ? &holdout_real : nullptr, sensitive, quasi, seed);
    std::cout << rep.to_json() << "\n" << rep.to_table() << "\n";
    return kOk;
}

int cmd_simulate_missing(const std::string& data_path, const std::string& schema_path,
                         const std::string& out_path, double rate, std::uint64_t seed) {
    Schema schema = Schema::load(schema_path);
    RecordSet data = load_dataset(data_path, schema);
    RecordSet out = simulate_missingness(data, rate, seed);
    save_jsonl(out, out_path);
    std::cout << "r_miss " << compute_missing_rate(out) << "\n";
    return kOk;
}

int cmd_make_toy(long long n, std::uint64_t seed, const std::string& out_path,
                 const std::string& schema_out) {
    RecordSet rs = make_toy_dataset(static_cast<Eigen::Index>(n), seed);
    save_jsonl(rs, out_path);
    if (!schema_out.empty()) {
        std::ofstream out(schema_out);
        if (!out) throw ParseError("cannot write " + schema_out);
        out << rs.schema.to_json() << "\n";
    }
    return kOk;
}

int cmd_gradcheck(int z, int hidden, long long records, std::uint64_t seed, double eps,
                  double threshold) {
    TrainConfig cfg;
    cfg.z = z;
    cfg.hidden = hidden;
    cfg.seed = seed;
    cfg.validate();
    RecordSet rs = make_toy_dataset(static_cast<Eigen::Index>(records), seed);
    EncodedBatch batch = preprocess(rs);
    TriplexModel model(cfg.model_config(), rs.schema);
    // Nudge every parameter off its (often zero) init so gradients are
    // exercised away from symmetric points.
    CounterRng rng({seed, 0x677263ULL});
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        auto& e = model.params()[i];
        std::vector<std::uint64_t> rows(static_cast<std::size_t>(e.value.rows()));
        for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = (i << 20) + r;
        e.value += 0.01 * rng.normal_matrix(rows, e.value.cols(), 0);
    }
    NoiseSchedule sched = cfg.schedule();
    std::mt19937_64 noise_rng(seed);
    NoiseDraws draws = draw_noise(cfg, rs.n, model.latent_width(), noise_rng);
    auto f = [&](bool with_grad) {
        return total_loss(model, sched, batch, rs.mask, draws, cfg.lambda_rec, cfg.lambda_scale,
                          with_grad)
            .total;
    };
    double err = grad_check(f, model.params(), eps);
    std::cout << "max relative gradient error: " << err << " (threshold " << threshold << ")\n";
    return err < threshold ? kOk : kNumeric;
}

struct SweepCell {
    double rate;
    std::string ablation;
    std::uint64_t seed;
    bool ok{false};
    MetricsReport rep;
    std::string error;
};

void apply_ablation(TrainConfig& cfg, const std::string& name) {
    if (name == "full") return;
    if (name == "no-triplex") {
        cfg.no_triplex = true;
    } else if (name == "no-cascade") {
        cfg.no_cascade = true;
    } else if (name == "base") {
        cfg.no_cascade = cfg.no_triplex = true;
    } else {
        throw ConfigError("unknown ablation: " + name);
    }
}

int cmd_sweep(const std::vector<double>& rates, const std::vector<std::uint64_t>& seeds,
              const std::vector<std::string>& ablations, long long n_train, long long n_synth,
              const ConfigFlags& cf, const std::string& out_dir, const std::string& target) {
    std::filesystem::create_directories(out_dir);
    std::vector<SweepCell> cells;
    for (double rate : rates) {
        for (const auto& ab : ablations) {
            for (std::uint64_t seed : seeds) {
                SweepCell cell{rate, ab, seed, false, {}, {}};
                try {
                    TrainConfig cfg = resolve_config(cf, seed);
                    apply_ablation(cfg, ab);
                    RecordSet full = make_toy_dataset(static_cast<Eigen::Index>(n_train), seed);
                    RecordSet holdout =
                        make_toy_dataset(static_cast<Eigen::Index>(n_train) / 2, seed ^ 0x9e77ULL);
                    RecordSet train = simulate_missingness(full, rate, seed);
                    Checkpoint ckpt = fit(cfg, train);
                    auto model = ckpt.instantiate();
                    RecordSet synth = generate(*model, cfg.schedule(), ckpt.stats,
                                               static_cast<Eigen::Index>(n_synth), seed + 1);
                    cell.rep = eval_pair(holdout, synth, target, nullptr, nullptr, {}, {}, seed);
                    cell.ok = true;
                } catch (const std::exception& e) {
                    cell.error = e.what();
                }
                cells.push_back(std::move(cell));
            }
        }
    }

    // Per-cell JSONL record.
    std::ofstream cells_out(out_dir + "/cells.jsonl");
    for (const auto& c : cells) {
        json j{{"rate", c.rate}, {"ablation", c.ablation}, {"seed", c.seed}, {"ok", c.ok}};
        if (c.ok) {
            j["r2"] = c.rep.r2;
            j["mmd"] = c.rep.mmd;
            j["mse"] = c.rep.mse;
        } else {
            j["error"] = c.error;
        }
        cells_out << j.dump() << "\n";
    }

    // Consolidated table: mean +/- std over seeds per (rate, ablation).
    auto mean_std = [](const std::vector<double>& v) {
        double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double s2 = 0.0;
        for (double x : v) s2 += (x - m) * (x - m);
        return std::pair<double, double>{m, std::sqrt(s2 / static_cast<double>(v.size()))};
    };
    std::cout << "rate\tablation\tR^2 / MMD / MSE\n";
    bool any_failed = false;
    for (double rate : rates) {
        for (const auto& ab : ablations) {
            std::vector<double> r2s, mmds, mses;
            for (const auto& c : cells) {
                if (c.rate != rate || c.ablation != ab) continue;
                if (!c.ok) {
                    any_failed = true;
                    continue;
                }
                r2s.push_back(c.rep.r2);
                mmds.push_back(c.rep.mmd);
                mses.push_back(c.rep.mse);
            }
            std::cout << rate << "\t" << ab << "\t";
            if (r2s.empty()) {
                std::cout << "failed\n";
                continue;
            }
            auto [r2m, r2s_] = mean_std(r2s);
            auto [mm, ms] = mean_std(mmds);
            auto [em, es] = mean_std(mses);
            char buf[160];
            std::snprintf(buf, sizeof buf, "%.3f±%.3f / %.3f±%.3f / %.3f±%.3f", r2m, r2s_, mm,
                          ms, em, es);
            std::cout << buf << "\n";
        }
    }
    return any_failed ? kPartial : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tcdiff: triplex cascaded diffusion for multimodal tabular records"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "global RNG seed")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "fit a model and write a checkpoint");
    std::string data_path, schema_path, out_path;
    ConfigFlags train_cf;
    train->add_option("--data", data_path, "training JSONL")->required();
    train->add_option("--schema", schema_path, "schema JSON")->required();
    train->add_option("--out", out_path, "checkpoint directory")->required();
    add_config_options(train, train_cf);

    // generate
    auto* gen = app.add_subcommand("generate", "sample synthetic records");
    std::string ckpt_dir;
    long long n_records = 0;
    bool deterministic = false;
    gen->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    gen->add_option("--out", out_path, "output JSONL")->required();
    gen->add_option("--n", n_records, "number of records")->required();
    gen->add_flag("--deterministic", deterministic, "zero per-step sampling noise");

    // impute
    auto* imp = app.add_subcommand("impute", "fill missing modalities conditioned on observed");
    imp->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    imp->add_option("--data", data_path, "input JSONL with missing modalities")->required();
    imp->add_option("--out", out_path, "output JSONL")->required();
    imp->add_flag("--deterministic", deterministic, "zero per-step sampling noise");

    // eval
    auto* ev = app.add_subcommand("eval", "fidelity and privacy metrics");
    std::string real_path, synth_path, target_col = "c0";
    std::string train_real_path, holdout_real_path;
    std::vector<std::string> sensitive, quasi;
    bool want_mia = false;
    ev->add_option("--real", real_path, "real JSONL")->required();
    ev->add_option("--synth", synth_path, "synthetic JSONL")->required();
    ev->add_option("--schema", schema_path, "schema JSON")->required();
    ev->add_option("--target", target_col, "continuous TSTR target column")
        ->capture_default_str();
    ev->add_flag("--mia", want_mia, "report membership-inference risk");
    ev->add_option("--train-real", train_real_path, "MIA member set");
    ev->add_option("--holdout-real", holdout_real_path, "MIA non-member set");
    ev->add_option("--sensitive", sensitive, "AIA sensitive columns");
    ev->add_option("--quasi", quasi, "AIA quasi-identifier columns");

    // sweep
    auto* sw = app.add_subcommand("sweep", "missing-rate x ablation x seed grid on toy data");
    std::vector<double> rates{0.0};
    std::vector<std::uint64_t> seeds{1};
    std::vector<std::string> ablations{"full"};
    long long n_train = 2000, n_synth = 2000;
    ConfigFlags sweep_cf;
    sw->add_option("--rates", rates, "missing rates")->delimiter(',')->capture_default_str();
    sw->add_option("--seeds", seeds, "seeds per cell")->delimiter(',')->capture_default_str();
    sw->add_option("--ablations", ablations, "full|no-triplex|no-cascade|base")
        ->delimiter(',')
        ->capture_default_str();
    sw->add_option("--n-train", n_train, "toy training records")->capture_default_str();
    sw->add_option("--n-synth", n_synth, "synthetic records per cell")->capture_default_str();
    sw->add_option("--target", target_col, "TSTR target column")->capture_default_str();
    sw->add_option("--out", out_path, "output directory")->required();
    add_config_options(sw, sweep_cf);

    // simulate-missing
    auto* sim = app.add_subcommand("simulate-missing", "remove modality payloads MCAR");
    double rate = 0.3;
    sim->add_option("--data", data_path, "input JSONL")->required();
    sim->add_option("--schema", schema_path, "schema JSON")->required();
    sim->add_option("--out", out_path, "output JSONL")->required();
    sim->add_option("--rate", rate, "target missing rate")->capture_default_str();

    // make-toy
    auto* toy = app.add_subcommand("make-toy", "write the synthetic benchmark dataset");
    std::string schema_out;
    toy->add_option("--n", n_records, "number of records")->required();
    toy->add_option("--out", out_path, "output JSONL")->required();
    toy->add_option("--schema-out", schema_out, "also write the schema JSON");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
    int gc_z = 4, gc_hidden = 8;
    long long gc_records = 4;
    double gc_eps = 1e-5, gc_threshold = 1e-4;
    gc->add_option("--z", gc_z, "latent width")->capture_default_str();
    gc->add_option("--hidden", gc_hidden, "hidden width")->capture_default_str();
    gc->add_option("--records", gc_records, "batch size")->capture_default_str();
    gc->add_option("--eps", gc_eps, "finite-difference step")->capture_default_str();
    gc->add_option("--threshold", gc_threshold, "max relative error")->capture_default_str();

    for (auto* sc : app.get_subcommands(std::function<bool(CLI::App*)>{})) sc->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    try {
        if (*train) return cmd_train(data_path, schema_path, out_path, train_cf, seed);
        if (*gen) return cmd_generate(ckpt_dir, out_path, n_records, seed, deterministic);
        if (*imp) return cmd_impute(ckpt_dir, data_path, out_path, seed, deterministic);
        if (*ev) {
            return cmd_eval(real_path, synth_path, schema_path, target_col, train_real_path,
                            holdout_real_path, sensitive, quasi, want_mia, seed);
        }
        if (*sw) {
            return cmd_sweep(rates, seeds, ablations, n_train, n_synth, sweep_cf, out_path,
                             target_col);
        }
        if (*sim) return cmd_simulate_missing(data_path, schema_path, out_path, rate, seed);
        if (*toy) return cmd_make_toy(n_records, seed, out_path, schema_out);
        if (*gc) return cmd_gradcheck(gc_z, gc_hidden, gc_records, seed, gc_eps, gc_threshold);
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return kIntegrity;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kPartial;
    }
    return kUsage;
}
