#include "tcdiff/datamodel.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace tcdiff {

using nlohmann::json;

// --- Schema -------------------------------------------------------------

int Schema::d_onehot() const {
    int total = 0;
    for (const auto& col : categorical_cols) total += static_cast<int>(col.levels.size());
    return total;
}

int Schema::l() const {
    int total = 0;
    for (const auto& col : text_cols) total += col.embedding_dim;
    return total;
}

void Schema::validate() const {
    std::set<std::string> names;
    auto check_name = [&](const std::string& name) {
        if (!names.insert(name).second) throw ConfigError("schema: duplicate column name " + name);
    };
    for (const auto& col : continuous_cols) check_name(col.name);
    for (const auto& col : categorical_cols) {
        check_name(col.name);
        if (col.levels.size() < 2) {
            throw ConfigError("schema: categorical " + col.name + " needs >= 2 levels");
        }
    }
    for (const auto& col : text_cols) {
        check_name(col.name);
        if (col.embedding_dim < 1) {
            throw ConfigError("schema: text " + col.name + " needs embedding_dim >= 1");
        }
    }
    if (seq_len < 1) throw ConfigError("schema: seq_len must be >= 1");
}

std::string Schema::to_json() const {
    json j;
    j["S"] = seq_len;
    j["continuous"] = json::array();
    for (const auto& col : continuous_cols) {
        j["continuous"].push_back({{"name", col.name}, {"unit", col.unit}});
    }
    j["categorical"] = json::array();
    for (const auto& col : categorical_cols) {
        j["categorical"].push_back({{"name", col.name}, {"levels", col.levels}});
    }
    j["text"] = json::array();
    for (const auto& col : text_cols) {
        j["text"].push_back({{"name", col.name}, {"dim", col.embedding_dim}});
    }
    return j.dump(2);
}

Schema Schema::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("schema: ") + e.what());
    }
    Schema s;
    s.seq_len = j.value("S", 1);
    for (const auto& col : j.value("continuous", json::array())) {
        s.continuous_cols.push_back({col.at("name"), col.value("unit", "")});
    }
    for (const auto& col : j.value("categorical", json::array())) {
        s.categorical_cols.push_back(
            {col.at("name"), col.at("levels").get<std::vector<std::string>>()});
    }
    for (const auto& col : j.value("text", json::array())) {
        s.text_cols.push_back({col.at("name"), col.at("dim").get<int>()});
    }
    s.validate();
    return s;
}

Schema Schema::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open schema file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

// --- RecordSet -----------------------------------------------------------

RecordSet RecordSet::take(const std::vector<Eigen::Index>& rows) const {
    RecordSet out;
    out.schema = schema;
    out.n = static_cast<Eigen::Index>(rows.size());
    out.continuous.resize(out.n, continuous.cols());
    out.categorical.resize(out.n, categorical.cols());
    out.text.resize(out.n, text.cols());
    out.mask.resize(out.n, 3);
    for (Eigen::Index i = 0; i < out.n; ++i) {
        out.continuous.row(i) = continuous.row(rows[static_cast<std::size_t>(i)]);
        out.categorical.row(i) = categorical.row(rows[static_cast<std::size_t>(i)]);
        out.text.row(i) = text.row(rows[static_cast<std::size_t>(i)]);
        out.mask.row(i) = mask.row(rows[static_cast<std::size_t>(i)]);
    }
    return out;
}

static RecordSet empty_recordset(const Schema& schema, Eigen::Index n) {
    RecordSet rs;
    rs.schema = schema;
    rs.n = n;
    const int S = schema.seq_len;
    rs.continuous = Matrix::Zero(n, static_cast<Eigen::Index>(S) * schema.c());
    rs.categorical = IntMatrix::Zero(n, static_cast<Eigen::Index>(S) * schema.ncat());
    rs.text = Matrix::Zero(n, static_cast<Eigen::Index>(S) * schema.l());
    rs.mask = IntMatrix::Ones(n, 3);
    return rs;
}

// --- ingestion ------------------------------------------------------------

Vector hash_embed(const std::string& text, int dim) {
    if (dim < 1) throw ConfigError("hash_embed: dim must be >= 1");
    Vector v = Vector::Zero(dim);
    std::istringstream iss(text);
    std::string token;
    while (iss >> token) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char ch : token) h = (h ^ ch) * 0x100000001b3ULL;
        std::uint64_t mixed = splitmix64(h);
        int bucket = static_cast<int>(mixed % static_cast<std::uint64_t>(dim));
        double sign = ((mixed >> 63) & 1u) ? -1.0 : 1.0;
        v(bucket) += sign;
    }
    double norm = v.norm();
    if (norm > 0) v /= norm;
    return v;
}

static int level_index(const CategoricalCol& col, const std::string& level, int line_no) {
    for (std::size_t k = 0; k < col.levels.size(); ++k) {
        if (col.levels[k] == level) return static_cast<int>(k);
    }
    throw ParseError("line " + std::to_string(line_no) + ": level '" + level +
                     "' not in schema for column " + col.name);
}

static void parse_record(const json& j, const Schema& schema, int line_no, RecordSet& rs,
                         Eigen::Index row) {
    const int S = schema.seq_len;
    for (const auto& [key, val] : j.items()) {
        if (key != "c" && key != "d" && key != "l") {
            throw ParseError("line " + std::to_string(line_no) + ": unknown field '" + key + "'");
        }
    }
    // continuous
    if (j.contains("c") && !j.at("c").is_null()) {
        const auto& arr = j.at("c");
        if (static_cast<int>(arr.size()) != S * schema.c()) {
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(S * schema.c()) + " continuous values, got " +
                             std::to_string(arr.size()));
        }
        for (std::size_t k = 0; k < arr.size(); ++k) {
            rs.continuous(row, static_cast<Eigen::Index>(k)) = arr[k].get<double>();
        }
    } else {
        rs.mask(row, kContinuous) = 0;
    }
    // discrete
    if (j.contains("d") && !j.at("d").is_null()) {
        const auto& arr = j.at("d");
        if (static_cast<int>(arr.size()) != S * schema.ncat()) {
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(S * schema.ncat()) + " categorical values, got " +
                             std::to_string(arr.size()));
        }
        for (int s = 0; s < S; ++s) {
            for (int cidx = 0; cidx < schema.ncat(); ++cidx) {
                std::size_t k = static_cast<std::size_t>(s) * schema.ncat() + cidx;
                rs.categorical(row, static_cast<Eigen::Index>(k)) = level_index(
                    schema.categorical_cols[static_cast<std::size_t>(cidx)], arr[k], line_no);
            }
        }
    } else {
        rs.mask(row, kDiscrete) = 0;
    }
    // text: either an embedding vector or a raw string (hash-embedded)
    if (j.contains("l") && !j.at("l").is_null()) {
        const auto& val = j.at("l");
        if (val.is_string()) {
            if (S != 1 || schema.text_cols.size() != 1) {
                throw ParseError("line " + std::to_string(line_no) +
                                 ": string text requires S=1 and one text column");
            }
            rs.text.row(row) = hash_embed(val.get<std::string>(), schema.l()).transpose();
        } else {
            if (static_cast<int>(val.size()) != S * schema.l()) {
                throw ParseError("line " + std::to_string(line_no) + ": expected embedding of " +
                                 std::to_string(S * schema.l()) + " values, got " +
                                 std::to_string(val.size()));
            }
            for (std::size_t k = 0; k < val.size(); ++k) {
                rs.text(row, static_cast<Eigen::Index>(k)) = val[k].get<double>();
            }
        }
    } else {
        rs.mask(row, kText) = 0;
    }
    if (rs.mask.row(row).sum() == 0) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": at least one observed modality is required");
    }
}

RecordSet load_dataset(const std::string& path, const Schema& schema) {
    schema.validate();
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open dataset file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    RecordSet rs = empty_recordset(schema, static_cast<Eigen::Index>(lines.size()));
    for (std::size_t i = 0; i < lines.size(); ++i) {
        json j;
        try {
            j = json::parse(lines[i]);
        } catch (const json::exception& e) {
            throw ParseError("line " + std::to_string(i + 1) + ": " + e.what());
        }
        parse_record(j, schema, static_cast<int>(i + 1), rs, static_cast<Eigen::Index>(i));
    }
    return rs;
}

RecordSet load_csv(const std::string& path, const std::string& embedding_sidecar,
                   const Schema& schema) {
    schema.validate();
    if (schema.seq_len != 1) throw ConfigError("CSV ingestion supports seq_len == 1 only");
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open CSV file: " + path);
    std::string header;
    if (!std::getline(in, header)) throw ParseError("empty CSV file: " + path);
    auto split_line = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream iss(s);
        while (std::getline(iss, cell, ',')) out.push_back(cell);
        return out;
    };
    std::vector<std::string> cols = split_line(header);
    std::vector<int> cont_pos(static_cast<std::size_t>(schema.c()), -1);
    std::vector<int> cat_pos(static_cast<std::size_t>(schema.ncat()), -1);
    for (std::size_t p = 0; p < cols.size(); ++p) {
        bool known = false;
        for (int k = 0; k < schema.c(); ++k) {
            if (cols[p] == schema.continuous_cols[static_cast<std::size_t>(k)].name) {
                cont_pos[static_cast<std::size_t>(k)] = static_cast<int>(p);
                known = true;
            }
        }
        for (int k = 0; k < schema.ncat(); ++k) {
            if (cols[p] == schema.categorical_cols[static_cast<std::size_t>(k)].name) {
                cat_pos[static_cast<std::size_t>(k)] = static_cast<int>(p);
                known = true;
            }
        }
        if (!known) throw ParseError("CSV header: unknown column '" + cols[p] + "'");
    }
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(split_line(line));
    }
    // sidecar: {"row": idx, "l": [...]} per line
    std::vector<std::optional<Vector>> embeddings(rows.size());
    if (!embedding_sidecar.empty()) {
        std::ifstream emb(embedding_sidecar);
        if (!emb) throw ParseError("cannot open embedding sidecar: " + embedding_sidecar);
        int line_no = 0;
        while (std::getline(emb, line)) {
            ++line_no;
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                throw ParseError("sidecar line " + std::to_string(line_no) + ": " + e.what());
            }
            std::size_t idx = j.at("row").get<std::size_t>();
            if (idx >= rows.size()) {
                throw ParseError("sidecar line " + std::to_string(line_no) +
                                 ": row index out of range");
            }
            const auto& arr = j.at("l");
            if (static_cast<int>(arr.size()) != schema.l()) {
                throw ParseError("sidecar line " + std::to_string(line_no) +
                                 ": embedding length mismatch");
            }
            Vector v(schema.l());
            for (std::size_t k = 0; k < arr.size(); ++k) {
                v(static_cast<Eigen::Index>(k)) = arr[k].get<double>();
            }
            embeddings[idx] = std::move(v);
        }
    }
    RecordSet rs = empty_recordset(schema, static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& cells = rows[i];
        int line_no = static_cast<int>(i) + 2;
        bool cont_missing = false, cat_missing = false;
        for (int k = 0; k < schema.c(); ++k) {
            const std::string& cell =
                cont_pos[static_cast<std::size_t>(k)] < static_cast<int>(cells.size())
                    ? cells[static_cast<std::size_t>(cont_pos[static_cast<std::size_t>(k)])]
                    : std::string();
            if (cell.empty()) {
                cont_missing = true;
            } else {
                rs.continuous(static_cast<Eigen::Index>(i), k) = std::stod(cell);
            }
        }
        for (int k = 0; k < schema.ncat(); ++k) {
            const std::string& cell =
                cat_pos[static_cast<std::size_t>(k)] < static_cast<int>(cells.size())
                    ? cells[static_cast<std::size_t>(cat_pos[static_cast<std::size_t>(k)])]
                    : std::string();
            if (cell.empty()) {
                cat_missing = true;
            } else {
                rs.categorical(static_cast<Eigen::Index>(i), k) = level_index(
                    schema.categorical_cols[static_cast<std::size_t>(k)], cell, line_no);
            }
        }
        rs.mask(static_cast<Eigen::Index>(i), kContinuous) = cont_missing ? 0 : 1;
        rs.mask(static_cast<Eigen::Index>(i), kDiscrete) = cat_missing ? 0 : 1;
        if (embeddings[i].has_value()) {
            rs.text.row(static_cast<Eigen::Index>(i)) = embeddings[i]->transpose();
        } else {
            rs.mask(static_cast<Eigen::Index>(i), kText) = 0;
        }
        if (rs.mask.row(static_cast<Eigen::Index>(i)).sum() == 0) {
            throw ParseError("line " + std::to_string(line_no) +
                             ": at least one observed modality is required");
        }
    }
    return rs;
}

void save_jsonl(const RecordSet& rs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open output file: " + path);
    for (Eigen::Index i = 0; i < rs.n; ++i) {
        json j;
        if (rs.observed(i, kContinuous)) {
            j["c"] = std::vector<double>(rs.continuous.row(i).begin(), rs.continuous.row(i).end());
        } else {
            j["c"] = nullptr;
        }
        if (rs.observed(i, kDiscrete)) {
            std::vector<std::string> levels;
            const int S = rs.schema.seq_len;
            for (int s = 0; s < S; ++s) {
                for (int k = 0; k < rs.schema.ncat(); ++k) {
                    int idx = rs.categorical(i, static_cast<Eigen::Index>(s) * rs.schema.ncat() + k);
                    levels.push_back(
                        rs.schema.categorical_cols[static_cast<std::size_t>(k)]
                            .levels[static_cast<std::size_t>(idx)]);
                }
            }
            j["d"] = levels;
        } else {
            j["d"] = nullptr;
        }
        if (rs.observed(i, kText)) {
            j["l"] = std::vector<double>(rs.text.row(i).begin(), rs.text.row(i).end());
        } else {
            j["l"] = nullptr;
        }
        out << j.dump() << "\n";
    }
}

// --- preprocessing ------------------------------------------------------------

static Standardization compute_stats(const RecordSet& rs) {
    const Eigen::Index w = rs.continuous.cols();
    Standardization st;
    st.mean = Vector::Zero(w);
    st.stddev = Vector::Ones(w);
    Eigen::Index observed = 0;
    for (Eigen::Index i = 0; i < rs.n; ++i) observed += rs.observed(i, kContinuous) ? 1 : 0;
    if (observed == 0) return st;
    for (Eigen::Index j = 0; j < w; ++j) {
        double sum = 0.0;
        for (Eigen::Index i = 0; i < rs.n; ++i) {
            if (rs.observed(i, kContinuous)) sum += rs.continuous(i, j);
        }
        double mean = sum / static_cast<double>(observed);
        double ss = 0.0;
        for (Eigen::Index i = 0; i < rs.n; ++i) {
            if (rs.observed(i, kContinuous)) {
                double d = rs.continuous(i, j) - mean;
                ss += d * d;
            }
        }
        // population std; constant columns clamp to 1
        double sd = std::sqrt(ss / static_cast<double>(observed));
        st.mean(j) = mean;
        st.stddev(j) = sd > 0.0 ? sd : 1.0;
    }
    return st;
}

EncodedBatch preprocess_with(const RecordSet& rs, const Standardization& stats) {
    EncodedBatch b;
    b.schema = rs.schema;
    b.mask = rs.mask;
    b.stats = stats;
    const int S = rs.schema.seq_len;
    const int d = rs.schema.d_onehot();
    b.C = Matrix::Zero(rs.n, rs.continuous.cols());
    for (Eigen::Index i = 0; i < rs.n; ++i) {
        for (Eigen::Index j = 0; j < rs.continuous.cols(); ++j) {
            if (rs.observed(i, kContinuous)) {
                b.C(i, j) = (rs.continuous(i, j) - stats.mean(j)) / stats.stddev(j);
            }
        }
    }
    b.D = Matrix::Zero(rs.n, static_cast<Eigen::Index>(S) * d);
    for (Eigen::Index i = 0; i < rs.n; ++i) {
        if (!rs.observed(i, kDiscrete)) continue;
        for (int s = 0; s < S; ++s) {
            int offset = s * d;
            for (int k = 0; k < rs.schema.ncat(); ++k) {
                int idx = rs.categorical(i, static_cast<Eigen::Index>(s) * rs.schema.ncat() + k);
                b.D(i, offset + idx) = 1.0;
                offset += static_cast<int>(
                    rs.schema.categorical_cols[static_cast<std::size_t>(k)].levels.size());
            }
        }
    }
    b.L = rs.text;
    for (Eigen::Index i = 0; i < rs.n; ++i) {
        if (!rs.observed(i, kText)) b.L.row(i).setZero();
    }
    return b;
}

EncodedBatch preprocess(const RecordSet& rs) { return preprocess_with(rs, compute_stats(rs)); }

RecordSet inverse_transform(const EncodedBatch& batch) {
    RecordSet rs = empty_recordset(batch.schema, batch.D.rows());
    rs.mask = batch.mask;
    const int S = batch.schema.seq_len;
    const int d = batch.schema.d_onehot();
    for (Eigen::Index i = 0; i < rs.n; ++i) {
        for (Eigen::Index j = 0; j < rs.continuous.cols(); ++j) {
            rs.continuous(i, j) = batch.C(i, j) * batch.stats.stddev(j) + batch.stats.mean(j);
        }
        for (int s = 0; s < S; ++s) {
            int offset = s * d;
            for (int k = 0; k < batch.schema.ncat(); ++k) {
                int levels = static_cast<int>(
                    batch.schema.categorical_cols[static_cast<std::size_t>(k)].levels.size());
                // argmax decode, ties to the lowest index
                int best = 0;
                double best_v = batch.D(i, offset);
                for (int v = 1; v < levels; ++v) {
                    if (batch.D(i, offset + v) > best_v) {
                        best_v = batch.D(i, offset + v);
                        best = v;
                    }
                }
                rs.categorical(i, static_cast<Eigen::Index>(s) * batch.schema.ncat() + k) = best;
                offset += levels;
            }
        }
    }
    rs.text = batch.L;
    return rs;
}

// --- missingness ---------------------------------------------------------------

double compute_missing_rate(const RecordSet& rs) {
    if (rs.n < 1) throw ConfigError("compute_missing_rate: empty record set");
    double observed = static_cast<double>(rs.mask.sum());
    return 1.0 - observed / (3.0 * static_cast<double>(rs.n));
}

RecordSet simulate_missingness(const RecordSet& rs, double target_rate, std::uint64_t seed) {
    if (target_rate < 0.0 || target_rate > 2.0 / 3.0 + 1e-12) {
        throw ConfigError("simulate_missingness: target_rate must be in [0, 2/3]");
    }
    if (rs.mask.sum() != 3 * rs.n) {
        throw ConfigError("simulate_missingness: input must be fully observed");
    }
    RecordSet out = rs;
    const Eigen::Index total = 3 * rs.n;
    Eigen::Index to_remove =
        static_cast<Eigen::Index>(std::floor(target_rate * static_cast<double>(total) + 1e-9));
    std::vector<std::pair<Eigen::Index, int>> slots;
    slots.reserve(static_cast<std::size_t>(total));
    for (Eigen::Index i = 0; i < rs.n; ++i) {
        for (int m = 0; m < 3; ++m) slots.emplace_back(i, m);
    }
    std::mt19937_64 rng(splitmix64(seed ^ 0x6d697373696e67ULL));
    std::shuffle(slots.begin(), slots.end(), rng);
    Eigen::Index removed = 0;
    while (removed < to_remove) {
        Eigen::Index before = removed;
        for (const auto& [i, m] : slots) {
            if (removed >= to_remove) break;
            if (out.mask(i, m) == 0) continue;
            if (out.mask.row(i).sum() <= 1) continue;  // keep >= 1 observed modality
            out.mask(i, m) = 0;
            ++removed;
        }
        if (removed == before) break;  // no feasible slot left
    }
    // zero out removed payloads so downstream code never reads stale values
    for (Eigen::Index i = 0; i < out.n; ++i) {
        if (!out.observed(i, kContinuous)) out.continuous.row(i).setZero();
        if (!out.observed(i, kDiscrete)) out.categorical.row(i).setZero();
        if (!out.observed(i, kText)) out.text.row(i).setZero();
    }
    return out;
}

// --- k-NN imputation -------------------------------------------------------------

namespace {

struct FeatureBlocks {
    Matrix C, D, L;  // standardized continuous, one-hot, text
};

}  // namespace

RecordSet knn_impute(const RecordSet& rs, int k) {
    if (k < 1) throw ConfigError("knn_impute: k must be >= 1");
    for (int m = 0; m < 3; ++m) {
        if (rs.mask.col(m).sum() == 0) {
            throw ConfigError("knn_impute: no record observes modality " + std::to_string(m));
        }
    }
    EncodedBatch enc = preprocess(rs);
    FeatureBlocks fb{enc.C, enc.D, enc.L};
    const std::array<const Matrix*, 3> blocks = {&fb.D, &fb.C, &fb.L};
    RecordSet out = rs;
    out.mask = IntMatrix::Ones(rs.n, 3);

    // global fallbacks over observed rows
    std::array<Vector, 3> global_mean;
    for (int m = 0; m < 3; ++m) {
        const Matrix& B = *blocks[static_cast<std::size_t>(m)];
        Vector acc = Vector::Zero(B.cols());
        double cnt = 0;
        for (Eigen::Index i = 0; i < rs.n; ++i) {
            if (rs.mask(i, m)) {
                acc += B.row(i).transpose();
                cnt += 1;
            }
        }
        global_mean[static_cast<std::size_t>(m)] = acc / std::max(cnt, 1.0);
    }

    for (Eigen::Index i = 0; i < rs.n; ++i) {
        for (int m = 0; m < 3; ++m) {
            if (rs.mask(i, m)) continue;
            // donors observe the missing modality; distance over modalities both observe
            std::vector<std::pair<double, Eigen::Index>> dist;
            for (Eigen::Index j = 0; j < rs.n; ++j) {
                if (j == i || !rs.mask(j, m)) continue;
                double d2 = 0.0;
                bool shared = false;
                for (int mm = 0; mm < 3; ++mm) {
                    if (mm == m || !rs.mask(i, mm) || !rs.mask(j, mm)) continue;
                    const Matrix& B = *blocks[static_cast<std::size_t>(mm)];
                    d2 += (B.row(i) - B.row(j)).squaredNorm();
                    shared = true;
                }
                if (shared) dist.emplace_back(d2, j);
            }
            Vector filled;
            if (dist.empty()) {
                filled = global_mean[static_cast<std::size_t>(m)];
            } else {
                std::stable_sort(dist.begin(), dist.end());  // ties by lowest record index
                std::size_t use = std::min<std::size_t>(static_cast<std::size_t>(k), dist.size());
                const Matrix& B = *blocks[static_cast<std::size_t>(m)];
                Vector acc = Vector::Zero(B.cols());
                for (std::size_t t = 0; t < use; ++t) acc += B.row(dist[t].second).transpose();
                filled = acc / static_cast<double>(use);
            }
            // write back into raw space
            if (m == kContinuous) {
                for (Eigen::Index j = 0; j < out.continuous.cols(); ++j) {
                    out.continuous(i, j) = filled(j) * enc.stats.stddev(j) + enc.stats.mean(j);
                }
            } else if (m == kText) {
                out.text.row(i) = filled.transpose();
            } else {
                // mode over donors per categorical column, ties to the lowest level
                const int S = rs.schema.seq_len;
                for (int s = 0; s < S; ++s) {
                    for (int cidx = 0; cidx < rs.schema.ncat(); ++cidx) {
                        int levels = static_cast<int>(
                            rs.schema.categorical_cols[static_cast<std::size_t>(cidx)]
                                .levels.size());
                        std::vector<int> counts(static_cast<std::size_t>(levels), 0);
                        if (dist.empty()) {
                            // argmax of the global one-hot mean
                            int offset = s * rs.schema.d_onehot();
                            for (int kk = 0; kk < cidx; ++kk) {
                                offset += static_cast<int>(
                                    rs.schema.categorical_cols[static_cast<std::size_t>(kk)]
                                        .levels.size());
                            }
                            int best = 0;
                            for (int v = 1; v < levels; ++v) {
                                if (filled(offset + v) > filled(offset + best)) best = v;
                            }
                            out.categorical(i,
                                            static_cast<Eigen::Index>(s) * rs.schema.ncat() +
                                                cidx) = best;
                            continue;
                        }
                        std::size_t use =
                            std::min<std::size_t>(static_cast<std::size_t>(k), dist.size());
                        for (std::size_t t = 0; t < use; ++t) {
                            int lvl = rs.categorical(
                                dist[t].second,
                                static_cast<Eigen::Index>(s) * rs.schema.ncat() + cidx);
                            counts[static_cast<std::size_t>(lvl)]++;
                        }
                        int best = 0;
                        for (int v = 1; v < levels; ++v) {
                            if (counts[static_cast<std::size_t>(v)] >
                                counts[static_cast<std::size_t>(best)]) {
                                best = v;
                            }
                        }
                        out.categorical(i, static_cast<Eigen::Index>(s) * rs.schema.ncat() +
                                               cidx) = best;
                    }
                }
            }
        }
    }
    return out;
}

// --- toy data ----------------------------------------------------------------------

Schema toy_schema() {
    Schema s;
    s.seq_len = 1;
    s.continuous_cols = {{"c0", ""}, {"c1", ""}, {"c2", ""}, {"c3", ""}};
    s.categorical_cols = {{"d0", {"low", "mid", "high"}}, {"d1", {"low", "mid", "high"}}};
    s.text_cols = {{"note", 8}};
    return s;
}

ToyFactors toy_factors(std::uint64_t seed) {
    // Structured base loadings: continuous column 0 reads the second latent
    // factor only, columns 1-3 read the first; text reads both. Predicting c0
    // therefore needs cross-modal information, which is what the cascade is
    // supposed to preserve.
    ToyFactors f;
    f.A.resize(4, 2);
    f.A << 0.0, 1.0,
           1.0, 0.0,
           0.9, 0.0,
           0.8, 0.0;
    f.B.resize(8, 2);
    f.B << 0.9, 0.4,
           0.2, -0.8,
           -0.7, 0.5,
           0.5, 0.6,
           -0.3, -0.6,
           0.8, -0.2,
           0.1, 0.9,
           -0.6, 0.3;
    CounterRng rng{seed, 0x746f79ULL};
    std::uint64_t ctr = 0;
    for (Eigen::Index i = 0; i < f.A.rows(); ++i) {
        for (Eigen::Index j = 0; j < 2; ++j) f.A(i, j) += 0.05 * rng.normal(ctr++);
    }
    for (Eigen::Index i = 0; i < f.B.rows(); ++i) {
        for (Eigen::Index j = 0; j < 2; ++j) f.B(i, j) += 0.05 * rng.normal(ctr++);
    }
    return f;
}

RecordSet make_toy_dataset(Eigen::Index n, std::uint64_t seed, const ToyConfig& cfg) {
    Schema schema = toy_schema();
    RecordSet rs = empty_recordset(schema, n);
    if (n == 0) return rs;
    ToyFactors f = toy_factors(seed);
    CounterRng rng{seed, 0x746f79646174ULL};
    const double q = 0.43072729929545756;  // standard normal tertile boundary
    for (Eigen::Index i = 0; i < n; ++i) {
        CounterRng row{seed, 0x726f77ULL, static_cast<std::uint64_t>(i)};
        Vector u(2);
        u << row.normal(0), row.normal(1);
        for (Eigen::Index j = 0; j < 4; ++j) {
            rs.continuous(i, j) = f.A.row(j).dot(u) + cfg.noise * row.normal(2 + j);
        }
        for (int j = 0; j < 2; ++j) {
            double v = u(j);
            rs.categorical(i, j) = v < -q ? 0 : (v < q ? 1 : 2);
        }
        for (Eigen::Index j = 0; j < 8; ++j) {
            rs.text(i, j) = f.B.row(j).dot(u) + cfg.noise * row.normal(6 + j);
        }
    }
    (void)rng;
    return rs;
}

// --- splits --------------------------------------------------------------------------

Splits split(const RecordSet& rs, const std::array<double, 3>& fractions, std::uint64_t seed) {
    double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
    Eigen::Index n_val = static_cast<Eigen::Index>(std::floor(fractions[1] * rs.n + 1e-9));
    Eigen::Index n_test = static_cast<Eigen::Index>(std::floor(fractions[2] * rs.n + 1e-9));
    Eigen::Index n_train = rs.n - n_val - n_test;
    auto guard = [&](double f, Eigen::Index c, const char* name) {
        if (f > 0.0 && c == 0) throw ConfigError(std::string("split: empty ") + name + " partition");
    };
    guard(fractions[0], n_train, "train");
    guard(fractions[1], n_val, "val");
    guard(fractions[2], n_test, "test");
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(rs.n));
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(splitmix64(seed ^ 0x73706c6974ULL));
    std::shuffle(idx.begin(), idx.end(), rng);
    Splits out;
    out.train = rs.take({idx.begin(), idx.begin() + n_train});
    out.val = rs.take({idx.begin() + n_train, idx.begin() + n_train + n_val});
    out.test = rs.take({idx.begin() + n_train + n_val, idx.end()});
    return out;
}

}  // namespace tcdiff
