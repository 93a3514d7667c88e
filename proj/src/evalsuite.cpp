#include "tcdiff/evalsuite.hpp"

#include <json.hpp>

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

namespace tcdiff {

using nlohmann::json;

FeatureLayout feature_layout(const Schema& schema) {
    FeatureLayout fl;
    const int S = schema.seq_len;
    fl.d_offset = 0;
    fl.d_width = S * schema.d_onehot();
    fl.c_offset = fl.d_width;
    fl.c_width = S * schema.c();
    fl.l_offset = fl.c_offset + fl.c_width;
    fl.l_width = S * schema.l();
    return fl;
}

std::pair<int, int> FeatureLayout::column_span(const Schema& schema,
                                               const std::string& name) const {
    // seq_len == 1 column addressing; spans are [begin, end)
    int off = c_offset;
    for (const auto& col : schema.continuous_cols) {
        if (col.name == name) return {off, off + 1};
        ++off;
    }
    off = d_offset;
    for (const auto& col : schema.categorical_cols) {
        int w = static_cast<int>(col.levels.size());
        if (col.name == name) return {off, off + w};
        off += w;
    }
    off = l_offset;
    for (const auto& col : schema.text_cols) {
        if (col.name == name) return {off, off + col.embedding_dim};
        off += col.embedding_dim;
    }
    throw ConfigError("unknown column: " + name);
}

Matrix feature_matrix(const RecordSet& rs, const Standardization& stats) {
    EncodedBatch b = preprocess_with(rs, stats);
    Matrix out(rs.n, b.D.cols() + b.C.cols() + b.L.cols());
    out << b.D, b.C, b.L;
    return out;
}

namespace {

// Ridge fit with intercept; the intercept is not penalized.
Vector ridge_fit(const Matrix& X, const Vector& y, double penalty) {
    Eigen::Index p = X.cols();
    Matrix Xa(X.rows(), p + 1);
    Xa << X, Matrix::Ones(X.rows(), 1);
    Matrix gram = Xa.transpose() * Xa;
    for (Eigen::Index j = 0; j < p; ++j) gram(j, j) += penalty;
    return gram.ldlt().solve(Xa.transpose() * y);
}

double ridge_predict_r2(const Vector& beta, const Matrix& X, const Vector& y) {
    Matrix Xa(X.rows(), X.cols() + 1);
    Xa << X, Matrix::Ones(X.rows(), 1);
    Vector pred = Xa * beta;
    double mean = y.mean();
    double sst = (y.array() - mean).square().sum();
    if (sst <= 1e-12 * static_cast<double>(y.size())) {
        throw NumericError("r2: target has zero variance on the test set");
    }
    double sse = (y - pred).squaredNorm();
    return 1.0 - sse / sst;
}

Matrix drop_columns(const Matrix& X, int begin, int end) {
    Matrix out(X.rows(), X.cols() - (end - begin));
    out << X.leftCols(begin), X.rightCols(X.cols() - end);
    return out;
}

}  // namespace

double r2_tstr(const RecordSet& real_test, const RecordSet& synth,
               const std::string& target_column, const Standardization& stats) {
    const Schema& schema = real_test.schema;
    bool is_continuous = false;
    for (const auto& col : schema.continuous_cols) {
        if (col.name == target_column) is_continuous = true;
    }
    if (!is_continuous) throw ConfigError("r2_tstr: target must be a continuous column");
    FeatureLayout fl = feature_layout(schema);
    auto [begin, end] = fl.column_span(schema, target_column);
    Matrix Fr = feature_matrix(real_test, stats);
    Matrix Fs = feature_matrix(synth, stats);
    Vector ys = Fs.col(begin);
    Vector yr = Fr.col(begin);
    Matrix Xs = drop_columns(Fs, begin, end);
    Matrix Xr = drop_columns(Fr, begin, end);
    Vector beta = ridge_fit(Xs, ys, 1e-3);
    return ridge_predict_r2(beta, Xr, yr);
}

double mmd_rbf(const Matrix& X, const Matrix& Y, std::optional<double> bandwidth) {
    if (X.rows() == 0 || Y.rows() == 0) throw ConfigError("mmd_rbf: empty sample set");
    if (X.cols() != Y.cols()) throw DimensionError("mmd_rbf: feature dimension mismatch");
    const Eigen::Index n = X.rows(), m = Y.rows();
    Matrix Z(n + m, X.cols());
    Z << X, Y;
    Vector sq = Z.rowwise().squaredNorm();
    Matrix d2 = (-2.0 * (Z * Z.transpose())).colwise() + sq;
    d2 = d2.rowwise() + sq.transpose();
    d2 = d2.cwiseMax(0.0);

    double h;
    if (bandwidth) {
        h = *bandwidth;
    } else {
        std::vector<double> dists;
        dists.reserve(static_cast<std::size_t>((n + m) * (n + m - 1) / 2));
        for (Eigen::Index i = 0; i < n + m; ++i) {
            for (Eigen::Index j = i + 1; j < n + m; ++j) dists.push_back(std::sqrt(d2(i, j)));
        }
        std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
        h = dists[dists.size() / 2];
        if (h <= 0.0) h = 1.0;
    }
    Matrix K = (-d2 / (2.0 * h * h)).array().exp();
    double kxx = K.topLeftCorner(n, n).mean();
    double kyy = K.bottomRightCorner(m, m).mean();
    double kxy = K.topRightCorner(n, m).mean();
    double mmd2 = kxx + kyy - 2.0 * kxy;
    return std::sqrt(std::max(mmd2, 0.0));
}

namespace {

Vector summary_vector(const Matrix& A, const std::vector<int>& corr_cols) {
    const Eigen::Index p = A.cols();
    Vector mean = A.colwise().mean();
    Vector sd(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        sd(j) = std::sqrt((A.col(j).array() - mean(j)).square().mean());
    }
    std::vector<double> out(mean.begin(), mean.end());
    out.insert(out.end(), sd.begin(), sd.end());
    for (std::size_t a = 0; a < corr_cols.size(); ++a) {
        for (std::size_t b = a + 1; b < corr_cols.size(); ++b) {
            int i = corr_cols[a], j = corr_cols[b];
            double cov = ((A.col(i).array() - mean(i)) * (A.col(j).array() - mean(j))).mean();
            out.push_back(cov / (sd(i) * sd(j)));
        }
    }
    return Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
}

}  // namespace

double stat_mse(const Matrix& real, const Matrix& synth) {
    if (real.rows() < 2 || synth.rows() < 2) throw ConfigError("stat_mse: need >= 2 records");
    if (real.cols() != synth.cols()) throw DimensionError("stat_mse: feature mismatch");
    // zero-variance features (in either set) are excluded from correlations
    std::vector<int> corr_cols;
    for (Eigen::Index j = 0; j < real.cols(); ++j) {
        double vr = (real.col(j).array() - real.col(j).mean()).square().mean();
        double vs = (synth.col(j).array() - synth.col(j).mean()).square().mean();
        if (vr > 0.0 && vs > 0.0) corr_cols.push_back(static_cast<int>(j));
    }
    Vector a = summary_vector(real, corr_cols);
    Vector b = summary_vector(synth, corr_cols);
    return (a - b).array().square().mean();
}

double auc_from_scores(const std::vector<double>& positives, const std::vector<double>& negatives) {
    // Mann-Whitney with average ranks for ties
    struct Item {
        double score;
        int label;
    };
    std::vector<Item> items;
    items.reserve(positives.size() + negatives.size());
    for (double s : positives) items.push_back({s, 1});
    for (double s : negatives) items.push_back({s, 0});
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
        return a.score < b.score;
    });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < items.size()) {
        std::size_t j = i;
        while (j < items.size() && items[j].score == items[i].score) ++j;
        double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k) {
            if (items[k].label == 1) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    double np = static_cast<double>(positives.size());
    double nn = static_cast<double>(negatives.size());
    return (rank_sum_pos - np * (np + 1) / 2.0) / (np * nn);
}

double mia_risk(const RecordSet& train_real, const RecordSet& holdout_real, const RecordSet& synth,
                const Standardization& stats) {
    if (train_real.n < 10 || holdout_real.n < 10) {
        throw ConfigError("mia_risk: need >= 10 records per side");
    }
    Matrix Ft = feature_matrix(train_real, stats);
    Matrix Fh = feature_matrix(holdout_real, stats);
    Matrix Fs = feature_matrix(synth, stats);
    auto scores = [&Fs](const Matrix& F) {
        std::vector<double> out(static_cast<std::size_t>(F.rows()));
        for (Eigen::Index i = 0; i < F.rows(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < Fs.rows(); ++j) {
                best = std::min(best, (F.row(i) - Fs.row(j)).squaredNorm());
            }
            out[static_cast<std::size_t>(i)] = -std::sqrt(best);
        }
        return out;
    };
    double auc = auc_from_scores(scores(Ft), scores(Fh));
    return std::max(0.0, 2.0 * (auc - 0.5));
}

double aia_risk(const RecordSet& real, const RecordSet& synth,
                const std::vector<std::string>& sensitive_columns,
                const std::vector<std::string>& quasi_id_columns, const Standardization& stats) {
    if (quasi_id_columns.empty()) throw ConfigError("aia_risk: quasi-identifier set is empty");
    if (sensitive_columns.empty()) throw ConfigError("aia_risk: sensitive set is empty");
    const Schema& schema = real.schema;
    FeatureLayout fl = feature_layout(schema);
    for (const auto& s : sensitive_columns) {
        for (const auto& q : quasi_id_columns) {
            if (s == q) throw ConfigError("aia_risk: column sets must be disjoint: " + s);
        }
    }
    Matrix Fr = feature_matrix(real, stats);
    Matrix Fs = feature_matrix(synth, stats);
    std::vector<int> quasi_feats;
    for (const auto& q : quasi_id_columns) {
        auto [b, e] = fl.column_span(schema, q);
        for (int j = b; j < e; ++j) quasi_feats.push_back(j);
    }
    auto submatrix = [&quasi_feats](const Matrix& F) {
        Matrix out(F.rows(), static_cast<Eigen::Index>(quasi_feats.size()));
        for (std::size_t j = 0; j < quasi_feats.size(); ++j) {
            out.col(static_cast<Eigen::Index>(j)) = F.col(quasi_feats[j]);
        }
        return out;
    };
    Matrix Qr = submatrix(Fr);
    Matrix Qs = submatrix(Fs);

    const int k = 5;
    // neighbor lists per real record, ties broken by synth record index
    std::vector<std::vector<Eigen::Index>> neighbors(static_cast<std::size_t>(real.n));
    for (Eigen::Index i = 0; i < real.n; ++i) {
        std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(synth.n));
        for (Eigen::Index j = 0; j < synth.n; ++j) {
            dist[static_cast<std::size_t>(j)] = {(Qr.row(i) - Qs.row(j)).squaredNorm(), j};
        }
        std::size_t use = std::min<std::size_t>(k, dist.size());
        std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(use), dist.end());
        for (std::size_t t = 0; t < use; ++t) {
            neighbors[static_cast<std::size_t>(i)].push_back(dist[t].second);
        }
    }

    double risk_sum = 0.0;
    for (const auto& scol : sensitive_columns) {
        bool categorical = false;
        int cat_idx = -1;
        for (int c = 0; c < schema.ncat(); ++c) {
            if (schema.categorical_cols[static_cast<std::size_t>(c)].name == scol) {
                categorical = true;
                cat_idx = c;
            }
        }
        if (categorical) {
            int levels = static_cast<int>(
                schema.categorical_cols[static_cast<std::size_t>(cat_idx)].levels.size());
            std::vector<int> counts(static_cast<std::size_t>(levels), 0);
            for (Eigen::Index i = 0; i < real.n; ++i) {
                counts[static_cast<std::size_t>(real.categorical(i, cat_idx))]++;
            }
            double baseline = static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
                              static_cast<double>(real.n);
            if (baseline >= 1.0) continue;  // constant sensitive column: risk 0
            Eigen::Index correct = 0;
            for (Eigen::Index i = 0; i < real.n; ++i) {
                std::vector<int> votes(static_cast<std::size_t>(levels), 0);
                for (Eigen::Index j : neighbors[static_cast<std::size_t>(i)]) {
                    votes[static_cast<std::size_t>(synth.categorical(j, cat_idx))]++;
                }
                int best = 0;
                for (int v = 1; v < levels; ++v) {
                    if (votes[static_cast<std::size_t>(v)] > votes[static_cast<std::size_t>(best)]) {
                        best = v;
                    }
                }
                if (best == real.categorical(i, cat_idx)) ++correct;
            }
            double acc = static_cast<double>(correct) / static_cast<double>(real.n);
            risk_sum += std::max(0.0, (acc - baseline) / (1.0 - baseline));
        } else {
            auto [b, e] = fl.column_span(schema, scol);
            if (e - b != 1) throw ConfigError("aia_risk: continuous sensitive expected: " + scol);
            Vector y(real.n);
            Vector pred(real.n);
            for (Eigen::Index i = 0; i < real.n; ++i) {
                y(i) = Fr(i, b);
                double acc = 0.0;
                for (Eigen::Index j : neighbors[static_cast<std::size_t>(i)]) acc += Fs(j, b);
                pred(i) = acc / static_cast<double>(neighbors[static_cast<std::size_t>(i)].size());
            }
            double sst = (y.array() - y.mean()).square().sum();
            if (sst == 0.0) continue;
            double r2 = 1.0 - (y - pred).squaredNorm() / sst;
            risk_sum += std::max(0.0, r2);
        }
    }
    return risk_sum / static_cast<double>(sensitive_columns.size());
}

std::string MetricsReport::to_json() const {
    json j;
    j["r2"] = r2;
    j["mmd"] = mmd;
    j["mse"] = mse;
    if (mia) j["mia"] = *mia;
    if (aia) j["aia"] = *aia;
    j["metadata"] = {{"seed", seed},
                     {"n_real", static_cast<long>(n_real)},
                     {"n_synth", static_cast<long>(n_synth)},
                     {"config_hash", config_hash}};
    return j.dump(2);
}

std::string MetricsReport::to_table() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    os << "R2 / MMD / MSE : " << r2 << " / " << mmd << " / " << mse;
    if (mia) os << "\nMIA            : " << *mia;
    if (aia) os << "\nAIA            : " << *aia;
    return os.str();
}

}  // namespace tcdiff
