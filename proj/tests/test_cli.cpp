#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

namespace fs = std::filesystem;

std::string cli() {
    const char* path = std::getenv("TCDIFF_CLI");
    REQUIRE(path != nullptr);
    return path;
}

int run(const std::string& args) {
    std::string cmd = cli() + " " + args + " > cli_test_out.txt 2> cli_test_err.txt";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct Workspace {
    fs::path dir;
    Workspace() {
        dir = fs::temp_directory_path() / "tcdiff_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }
    std::string p(const std::string& name) const { return (dir / name).string(); }
};

const char* kTrainFlags = " --max-epochs 4 --patience 4 --warmup-epochs 2 --z 4 --hidden 8";

}  // namespace

TEST_CASE("cli end to end") {
    Workspace ws;

    SUBCASE("missing required argument exits 2 with usage text") {
        CHECK(run("train --schema nope.json --out x") == 2);
        CHECK(slurp("cli_test_err.txt").find("--data") != std::string::npos);
    }

    SUBCASE("unknown subcommand exits 2") { CHECK(run("frobnicate") == 2); }

    // shared fixture: toy data + a small checkpoint
    REQUIRE(run("make-toy --n 120 --out " + ws.p("toy.jsonl") + " --schema-out " +
                ws.p("schema.json") + " --seed 7") == 0);
    REQUIRE(run("train --data " + ws.p("toy.jsonl") + " --schema " + ws.p("schema.json") +
                " --out " + ws.p("ckpt") + " --seed 3" + kTrainFlags) == 0);

    SUBCASE("train writes a parsable manifest and an epoch log") {
        CHECK(fs::exists(ws.p("ckpt") + "/manifest.json"));
        CHECK(fs::exists(ws.p("ckpt") + "/weights.bin"));
        CHECK(fs::exists(ws.p("ckpt") + "/train_log.tsv"));
        auto manifest = nlohmann::json::parse(slurp(ws.p("ckpt") + "/manifest.json"));
        CHECK(manifest.at("format_version") == 1);
        CHECK(manifest.at("config").at("z") == 4);
    }

    SUBCASE("identical invocations produce byte-identical checkpoints") {
        REQUIRE(run("train --data " + ws.p("toy.jsonl") + " --schema " + ws.p("schema.json") +
                    " --out " + ws.p("ckpt_b") + " --seed 3" + kTrainFlags) == 0);
        CHECK(slurp(ws.p("ckpt") + "/weights.bin") == slurp(ws.p("ckpt_b") + "/weights.bin"));
        CHECK(slurp(ws.p("ckpt") + "/manifest.json") == slurp(ws.p("ckpt_b") + "/manifest.json"));
    }

    SUBCASE("invalid config exits 2") {
        CHECK(run("train --data " + ws.p("toy.jsonl") + " --schema " + ws.p("schema.json") +
                  " --out " + ws.p("ckpt_bad") + " --t1 90" + kTrainFlags) == 2);
    }

    SUBCASE("generate honors --n 0 and determinism") {
        REQUIRE(run("generate --ckpt " + ws.p("ckpt") + " --out " + ws.p("empty.jsonl") +
                    " --n 0 --seed 1") == 0);
        CHECK(slurp(ws.p("empty.jsonl")).empty());
        REQUIRE(run("generate --ckpt " + ws.p("ckpt") + " --out " + ws.p("a.jsonl") +
                    " --n 20 --seed 5") == 0);
        REQUIRE(run("generate --ckpt " + ws.p("ckpt") + " --out " + ws.p("b.jsonl") +
                    " --n 20 --seed 5") == 0);
        CHECK(slurp(ws.p("a.jsonl")) == slurp(ws.p("b.jsonl")));
        CHECK(!slurp(ws.p("a.jsonl")).empty());
    }

    SUBCASE("corrupt weights blob exits 4") {
        fs::copy(ws.p("ckpt"), ws.p("ckpt_corrupt"), fs::copy_options::recursive);
        {
            std::fstream f(ws.p("ckpt_corrupt") + "/weights.bin",
                           std::ios::in | std::ios::out | std::ios::binary);
            f.seekp(8);
            char c = 0x77;
            f.write(&c, 1);
        }
        CHECK(run("generate --ckpt " + ws.p("ckpt_corrupt") + " --out " + ws.p("x.jsonl") +
                  " --n 1 --seed 1") == 4);
    }

    SUBCASE("impute of a fully observed file reproduces the input") {
        REQUIRE(run("impute --ckpt " + ws.p("ckpt") + " --data " + ws.p("toy.jsonl") +
                    " --out " + ws.p("imp.jsonl") + " --seed 2") == 0);
        CHECK(slurp(ws.p("imp.jsonl")) == slurp(ws.p("toy.jsonl")));
    }

    SUBCASE("simulate-missing then impute fills every modality") {
        REQUIRE(run("simulate-missing --data " + ws.p("toy.jsonl") + " --schema " +
                    ws.p("schema.json") + " --out " + ws.p("miss.jsonl") +
                    " --rate 0.3 --seed 4") == 0);
        CHECK(slurp(ws.p("miss.jsonl")).find("null") != std::string::npos);
        REQUIRE(run("impute --ckpt " + ws.p("ckpt") + " --data " + ws.p("miss.jsonl") +
                    " --out " + ws.p("filled.jsonl") + " --seed 2") == 0);
        CHECK(slurp(ws.p("filled.jsonl")).find("null") == std::string::npos);
    }

    SUBCASE("eval of a set against itself reports zero mmd and mse") {
        REQUIRE(run("eval --real " + ws.p("toy.jsonl") + " --synth " + ws.p("toy.jsonl") +
                    " --schema " + ws.p("schema.json") + " --target c0") == 0);
        std::string out = slurp("cli_test_out.txt");
        auto rep = nlohmann::json::parse(out.substr(0, out.find("\nR2")));
        CHECK(rep.at("mmd").get<double>() == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(rep.at("mse").get<double>() == doctest::Approx(0.0).epsilon(1e-12));
    }

    SUBCASE("eval --mia without holdout exits 2") {
        CHECK(run("eval --real " + ws.p("toy.jsonl") + " --synth " + ws.p("toy.jsonl") +
                  " --schema " + ws.p("schema.json") + " --mia") == 2);
    }

    SUBCASE("gradcheck passes at small width") {
        CHECK(run("gradcheck --records 3 --z 3 --hidden 6 --seed 1") == 0);
    }

    SUBCASE("sweep of one cell emits a consolidated table and cell log") {
        REQUIRE(run("sweep --rates 0 --seeds 1 --ablations base --n-train 80 --n-synth 80"
                    " --out " +
                    ws.p("sweep") + kTrainFlags) == 0);
        CHECK(slurp("cli_test_out.txt").find("R^2 / MMD / MSE") != std::string::npos);
        std::string cells = slurp(ws.p("sweep") + "/cells.jsonl");
        auto cell = nlohmann::json::parse(cells);
        CHECK(cell.at("ok") == true);
        CHECK(cell.at("ablation") == "base");
    }
}
