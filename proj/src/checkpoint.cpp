#include "tcdiff/checkpoint.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace tcdiff {

using nlohmann::json;

std::uint64_t fnv1a(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
    return h;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
    std::filesystem::create_directories(dir);

    std::vector<double> blob;
    json params = json::array();
    std::size_t offset = 0;
    for (const auto& [name, value] : ckpt.weights) {
        params.push_back({{"name", name},
                          {"rows", value.rows()},
                          {"cols", value.cols()},
                          {"offset", offset}});
        // row-major serialization, independent of Eigen's storage order
        for (Eigen::Index i = 0; i < value.rows(); ++i) {
            for (Eigen::Index j = 0; j < value.cols(); ++j) blob.push_back(value(i, j));
        }
        offset += static_cast<std::size_t>(value.size()) * sizeof(double);
    }

    json manifest;
    manifest["format_version"] = ckpt.format_version;
    manifest["schema"] = json::parse(ckpt.schema.to_json());
    manifest["config"] = json::parse(ckpt.config.to_json());
    manifest["epoch"] = ckpt.epoch;
    manifest["val_loss"] = ckpt.val_loss;
    manifest["stats"] = {
        {"mean", std::vector<double>(ckpt.stats.mean.begin(), ckpt.stats.mean.end())},
        {"std", std::vector<double>(ckpt.stats.stddev.begin(), ckpt.stats.stddev.end())}};
    manifest["params"] = params;
    manifest["weights_hash"] = fnv1a(blob.data(), blob.size() * sizeof(double));

    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw ParseError("cannot write " + dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";

    std::ofstream wf(dir + "/weights.bin", std::ios::binary);
    if (!wf) throw ParseError("cannot write " + dir + "/weights.bin");
    wf.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * sizeof(double)));
}

Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw ParseError("cannot open " + dir + "/manifest.json");
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }

    std::ifstream wf(dir + "/weights.bin", std::ios::binary);
    if (!wf) throw ParseError("cannot open " + dir + "/weights.bin");
    std::vector<char> raw((std::istreambuf_iterator<char>(wf)), std::istreambuf_iterator<char>());

    std::uint64_t expect = manifest.at("weights_hash").get<std::uint64_t>();
    if (fnv1a(raw.data(), raw.size()) != expect) {
        throw IntegrityError("checkpoint: weights hash mismatch");
    }

    Checkpoint ckpt;
    ckpt.format_version = manifest.at("format_version").get<int>();
    ckpt.schema = Schema::from_json(manifest.at("schema").dump());
    ckpt.config = TrainConfig::from_json(manifest.at("config").dump());
    ckpt.epoch = manifest.at("epoch").get<int>();
    ckpt.val_loss = manifest.at("val_loss").get<double>();
    auto mean = manifest.at("stats").at("mean").get<std::vector<double>>();
    auto sd = manifest.at("stats").at("std").get<std::vector<double>>();
    ckpt.stats.mean = Eigen::Map<Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    ckpt.stats.stddev = Eigen::Map<Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()));

    std::size_t total = 0;
    for (const auto& p : manifest.at("params")) {
        total += p.at("rows").get<std::size_t>() * p.at("cols").get<std::size_t>();
    }
    if (total * sizeof(double) != raw.size()) {
        throw IntegrityError("checkpoint: weights blob length mismatch");
    }
    const double* vals = reinterpret_cast<const double*>(raw.data());
    for (const auto& p : manifest.at("params")) {
        Eigen::Index rows = p.at("rows").get<Eigen::Index>();
        Eigen::Index cols = p.at("cols").get<Eigen::Index>();
        std::size_t off = p.at("offset").get<std::size_t>() / sizeof(double);
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                m(i, j) = vals[off + static_cast<std::size_t>(i * cols + j)];
            }
        }
        ckpt.weights.emplace_back(p.at("name").get<std::string>(), std::move(m));
    }
    return ckpt;
}

}  // namespace tcdiff
