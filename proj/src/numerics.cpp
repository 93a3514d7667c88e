#include "tcdiff/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace tcdiff {

namespace {
std::atomic<bool> g_checked{true};
}

bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }
void set_checked_mode(bool on) { g_checked.store(on, std::memory_order_relaxed); }

void require_finite(const Matrix& m, const std::string& what) {
    if (!checked_mode()) return;
    if (!m.allFinite()) throw NumericError("non-finite values in " + what);
}

Matrix CounterRng::normal_matrix(const std::vector<std::uint64_t>& row_keys, Eigen::Index cols,
                                 std::uint64_t counter_base) const {
    Matrix out(static_cast<Eigen::Index>(row_keys.size()), cols);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        CounterRng row{key_, row_keys[static_cast<std::size_t>(i)]};
        for (Eigen::Index j = 0; j < cols; ++j) {
            out(i, j) = row.normal(counter_base + static_cast<std::uint64_t>(j));
        }
    }
    return out;
}

// --- ParamStore ----------------------------------------------------------

int ParamStore::add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    require_finite(init, "parameter init " + name);
    ParamEntry e;
    e.name = name;
    e.grad = Matrix::Zero(init.rows(), init.cols());
    e.adam_m = Matrix::Zero(init.rows(), init.cols());
    e.adam_v = Matrix::Zero(init.rows(), init.cols());
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    int slot = static_cast<int>(entries_.size()) - 1;
    index_[name] = slot;
    return slot;
}

int ParamStore::slot(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) e.grad.setZero();
}

// --- Tape ----------------------------------------------------------------

Matrix& Tape::grad(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

NodeId Tape::leaf(Matrix v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, -1});
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::param(const std::string& name) {
    if (!store_) throw StateError("tape has no parameter store");
    int slot = store_->slot(name);
    nodes_.push_back(Node{(*store_)[slot].value, {}, nullptr, slot});
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::make(Matrix v, std::function<void(Tape&, const Matrix&)> bp) {
    nodes_.push_back(Node{std::move(v), {}, std::move(bp), -1});
    return static_cast<NodeId>(nodes_.size()) - 1;
}

void Tape::backward(NodeId loss) {
    if (nodes_.empty()) throw StateError("backward without forward");
    if (backward_done_) throw StateError("one backward pass per forward pass");
    backward_done_ = true;
    Node& top = nodes_[static_cast<std::size_t>(loss)];
    if (top.value.rows() != 1 || top.value.cols() != 1) {
        throw DimensionError("backward expects a scalar loss, got " + shape_str(top.value));
    }
    grad(loss)(0, 0) = 1.0;
    for (int i = loss; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.size() == 0) continue;  // not on any path to the loss
        if (n.backprop) n.backprop(*this, n.grad);
        if (n.param_slot >= 0) (*store_)[n.param_slot].grad += n.grad;
        if (!n.backprop && n.param_slot < 0) continue;
        // Free intermediate activations as we go; values of earlier nodes may
        // still be needed by pending backprops, so only grads are dropped.
        n.grad.resize(0, 0);
    }
}

// --- ops -----------------------------------------------------------------

NodeId matmul(Tape& t, NodeId a, NodeId b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (A.cols() != B.rows()) {
        throw DimensionError("matmul shape mismatch: " + shape_str(A) + " * " + shape_str(B));
    }
    return t.make(A * B, [a, b](Tape& tp, const Matrix& g) {
        tp.grad(a) += g * tp.value(b).transpose();
        tp.grad(b) += tp.value(a).transpose() * g;
    });
}

static void require_same_shape(const Matrix& A, const Matrix& B, const char* op) {
    if (A.rows() != B.rows() || A.cols() != B.cols()) {
        throw DimensionError(std::string(op) + " shape mismatch: " + shape_str(A) + " vs " +
                             shape_str(B));
    }
}

NodeId add(Tape& t, NodeId a, NodeId b) {
    require_same_shape(t.value(a), t.value(b), "add");
    return t.make(t.value(a) + t.value(b), [a, b](Tape& tp, const Matrix& g) {
        tp.grad(a) += g;
        tp.grad(b) += g;
    });
}

NodeId sub(Tape& t, NodeId a, NodeId b) {
    require_same_shape(t.value(a), t.value(b), "sub");
    return t.make(t.value(a) - t.value(b), [a, b](Tape& tp, const Matrix& g) {
        tp.grad(a) += g;
        tp.grad(b) -= g;
    });
}

NodeId cmul(Tape& t, NodeId a, NodeId b) {
    require_same_shape(t.value(a), t.value(b), "cmul");
    return t.make(t.value(a).cwiseProduct(t.value(b)), [a, b](Tape& tp, const Matrix& g) {
        tp.grad(a) += g.cwiseProduct(tp.value(b));
        tp.grad(b) += g.cwiseProduct(tp.value(a));
    });
}

NodeId scale(Tape& t, NodeId a, double s) {
    return t.make(t.value(a) * s, [a, s](Tape& tp, const Matrix& g) { tp.grad(a) += g * s; });
}

NodeId add_bias(Tape& t, NodeId a, NodeId bias) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(bias);
    if (B.rows() != 1 || B.cols() != A.cols()) {
        throw DimensionError("add_bias expects 1x" + std::to_string(A.cols()) + " bias, got " +
                             shape_str(B));
    }
    Matrix v = A.rowwise() + B.row(0);
    return t.make(std::move(v), [a, bias](Tape& tp, const Matrix& g) {
        tp.grad(a) += g;
        tp.grad(bias) += g.colwise().sum();
    });
}

NodeId tanh_op(Tape& t, NodeId a) {
    Matrix v = t.value(a).array().tanh();
    return t.make(std::move(v), [a](Tape& tp, const Matrix& g) {
        // recompute tanh from the input; the output value may be needed too
        Matrix th = tp.value(a).array().tanh();
        tp.grad(a).array() += g.array() * (1.0 - th.array().square());
    });
}

NodeId sigmoid_op(Tape& t, NodeId a) {
    Matrix v = (1.0 / (1.0 + (-t.value(a)).array().exp()));
    return t.make(std::move(v), [a](Tape& tp, const Matrix& g) {
        Matrix s = 1.0 / (1.0 + (-tp.value(a)).array().exp());
        tp.grad(a).array() += g.array() * s.array() * (1.0 - s.array());
    });
}

NodeId concat_cols(Tape& t, const std::vector<NodeId>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols with no parts");
    Eigen::Index rows = t.value(parts[0]).rows();
    Eigen::Index cols = 0;
    for (NodeId p : parts) {
        if (t.value(p).rows() != rows) throw DimensionError("concat_cols row mismatch");
        cols += t.value(p).cols();
    }
    Matrix v(rows, cols);
    Eigen::Index off = 0;
    for (NodeId p : parts) {
        v.middleCols(off, t.value(p).cols()) = t.value(p);
        off += t.value(p).cols();
    }
    return t.make(std::move(v), [parts](Tape& tp, const Matrix& g) {
        Eigen::Index o = 0;
        for (NodeId p : parts) {
            Eigen::Index w = tp.value(p).cols();
            tp.grad(p) += g.middleCols(o, w);
            o += w;
        }
    });
}

NodeId gather_cols(Tape& t, NodeId a, const std::vector<int>& indices) {
    const Matrix& A = t.value(a);
    if (A.rows() != 1) throw DimensionError("gather_cols expects a 1xK source");
    Matrix v(static_cast<Eigen::Index>(indices.size()), 1);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= A.cols()) {
            throw DimensionError("gather_cols index out of range");
        }
        v(static_cast<Eigen::Index>(i), 0) = A(0, indices[i]);
    }
    return t.make(std::move(v), [a, indices](Tape& tp, const Matrix& g) {
        Matrix& ga = tp.grad(a);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            ga(0, indices[i]) += g(static_cast<Eigen::Index>(i), 0);
        }
    });
}

NodeId colwise_scale(Tape& t, NodeId a, NodeId s) {
    const Matrix& A = t.value(a);
    const Matrix& S = t.value(s);
    if (S.cols() != 1 || S.rows() != A.rows()) {
        throw DimensionError("colwise_scale expects an nx1 scaler, got " + shape_str(S));
    }
    Matrix v = A.array().colwise() * S.col(0).array();
    return t.make(std::move(v), [a, s](Tape& tp, const Matrix& g) {
        const Matrix& A2 = tp.value(a);
        const Matrix& S2 = tp.value(s);
        tp.grad(a).array() += g.array().colwise() * S2.col(0).array();
        tp.grad(s).col(0) += g.cwiseProduct(A2).rowwise().sum();
    });
}

NodeId sum_all(Tape& t, NodeId a) {
    Matrix v(1, 1);
    v(0, 0) = t.value(a).sum();
    return t.make(std::move(v), [a](Tape& tp, const Matrix& g) {
        tp.grad(a).array() += g(0, 0);
    });
}

NodeId split_positions(Tape& t, NodeId a, int seq_len, int feat) {
    const Matrix& A = t.value(a);
    if (A.cols() != static_cast<Eigen::Index>(seq_len) * feat) {
        throw DimensionError("split_positions: cols != S*f");
    }
    Eigen::Index n = A.rows();
    Matrix v(n * seq_len, feat);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int s = 0; s < seq_len; ++s) {
            v.row(i * seq_len + s) = A.block(i, static_cast<Eigen::Index>(s) * feat, 1, feat);
        }
    }
    return t.make(std::move(v), [a, seq_len, feat](Tape& tp, const Matrix& g) {
        Matrix& ga = tp.grad(a);
        Eigen::Index n = ga.rows();
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int s = 0; s < seq_len; ++s) {
                ga.block(i, static_cast<Eigen::Index>(s) * feat, 1, feat) +=
                    g.row(i * seq_len + s);
            }
        }
    });
}

NodeId merge_positions(Tape& t, NodeId a, int seq_len, int feat) {
    const Matrix& A = t.value(a);
    if (A.cols() != feat || A.rows() % seq_len != 0) {
        throw DimensionError("merge_positions: shape not (n*S)xf");
    }
    Eigen::Index n = A.rows() / seq_len;
    Matrix v(n, static_cast<Eigen::Index>(seq_len) * feat);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int s = 0; s < seq_len; ++s) {
            v.block(i, static_cast<Eigen::Index>(s) * feat, 1, feat) = A.row(i * seq_len + s);
        }
    }
    return t.make(std::move(v), [a, seq_len, feat](Tape& tp, const Matrix& g) {
        Matrix& ga = tp.grad(a);
        Eigen::Index n = g.rows();
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int s = 0; s < seq_len; ++s) {
                ga.row(i * seq_len + s) += g.block(i, static_cast<Eigen::Index>(s) * feat, 1, feat);
            }
        }
    });
}

NodeId conv1d_seq(Tape& t, NodeId x, NodeId kernel, int seq_len, int feat) {
    const Matrix& X = t.value(x);
    const Matrix& K = t.value(kernel);
    if (K.rows() != 1 || K.cols() % 2 == 0) {
        throw ConfigError("conv1d kernel must be 1xw with odd width");
    }
    if (X.cols() != static_cast<Eigen::Index>(seq_len) * feat) {
        throw DimensionError("conv1d_seq: cols != S*f");
    }
    const int w = static_cast<int>(K.cols());
    const int c = w / 2;
    Matrix v = Matrix::Zero(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (int s = 0; s < seq_len; ++s) {
            for (int k = 0; k < w; ++k) {
                int sp = s + k - c;
                if (sp < 0 || sp >= seq_len) continue;
                v.block(i, static_cast<Eigen::Index>(s) * feat, 1, feat) +=
                    K(0, k) * X.block(i, static_cast<Eigen::Index>(sp) * feat, 1, feat);
            }
        }
    }
    return t.make(std::move(v), [x, kernel, seq_len, feat](Tape& tp, const Matrix& g) {
        const Matrix& X2 = tp.value(x);
        const Matrix& K2 = tp.value(kernel);
        const int w2 = static_cast<int>(K2.cols());
        const int c2 = w2 / 2;
        Matrix& gx = tp.grad(x);
        Matrix& gk = tp.grad(kernel);
        for (Eigen::Index i = 0; i < X2.rows(); ++i) {
            for (int s = 0; s < seq_len; ++s) {
                for (int k = 0; k < w2; ++k) {
                    int sp = s + k - c2;
                    if (sp < 0 || sp >= seq_len) continue;
                    gx.block(i, static_cast<Eigen::Index>(sp) * feat, 1, feat) +=
                        K2(0, k) * g.block(i, static_cast<Eigen::Index>(s) * feat, 1, feat);
                    gk(0, k) += g.block(i, static_cast<Eigen::Index>(s) * feat, 1, feat)
                                    .cwiseProduct(X2.block(i, static_cast<Eigen::Index>(sp) * feat,
                                                           1, feat))
                                    .sum();
                }
            }
        }
    });
}

// --- pure reference ops ----------------------------------------------------

Matrix dense_forward(const Matrix& w, const Vector& b, const Matrix& x) {
    if (w.cols() != x.cols()) {
        throw DimensionError("dense_forward: w is " + shape_str(w) + " but x is " + shape_str(x));
    }
    if (b.size() != w.rows()) {
        throw DimensionError("dense_forward: bias length " + std::to_string(b.size()) +
                             " != w rows " + std::to_string(w.rows()));
    }
    require_finite(x, "dense_forward input");
    Matrix out = x * w.transpose();
    out.rowwise() += b.transpose();
    return out;
}

Matrix conv1d_forward(const Vector& kernel, const Matrix& x) {
    if (kernel.size() % 2 == 0) throw ConfigError("conv1d kernel width must be odd");
    const int S = static_cast<int>(x.rows());
    const int w = static_cast<int>(kernel.size());
    const int c = w / 2;
    Matrix out = Matrix::Zero(x.rows(), x.cols());
    for (int s = 0; s < S; ++s) {
        for (int k = 0; k < w; ++k) {
            int sp = s + k - c;
            if (sp < 0 || sp >= S) continue;
            out.row(s) += kernel(k) * x.row(sp);
        }
    }
    return out;
}

// --- optimizer --------------------------------------------------------------

void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps,
               long step_index) {
    if (step_index < 1) throw ConfigError("adam_step: step_index must be >= 1");
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_index));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_index));
    for (std::size_t i = 0; i < store.size(); ++i) {
        ParamEntry& e = store[static_cast<int>(i)];
        require_finite(e.grad, "gradient of " + e.name);
        e.adam_m = beta1 * e.adam_m + (1.0 - beta1) * e.grad;
        e.adam_v = beta2 * e.adam_v.array() + (1.0 - beta2) * e.grad.array().square();
        e.value.array() -=
            lr * (e.adam_m.array() / bc1) / ((e.adam_v.array() / bc2).sqrt() + eps);
        e.grad.setZero();
    }
}

double grad_check(const std::function<double(bool)>& f, ParamStore& store, double eps) {
    if (!(eps > 0.0 && eps <= 1e-3)) throw ConfigError("grad_check: eps must be in (0, 1e-3]");
    store.zero_grads();
    double loss0 = f(true);
    if (!std::isfinite(loss0)) throw NumericError("grad_check: non-finite loss");
    std::vector<Matrix> analytic;
    analytic.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) analytic.push_back(store[static_cast<int>(i)].grad);

    double max_rel = 0.0;
    for (std::size_t i = 0; i < store.size(); ++i) {
        ParamEntry& e = store[static_cast<int>(i)];
        for (Eigen::Index j = 0; j < e.value.size(); ++j) {
            const double orig = e.value.data()[j];
            e.value.data()[j] = orig + eps;
            const double lp = f(false);
            e.value.data()[j] = orig - eps;
            const double lm = f(false);
            e.value.data()[j] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                throw NumericError("grad_check: non-finite loss perturbing " + e.name);
            }
            const double numeric = (lp - lm) / (2.0 * eps);
            const double a = analytic[i].data()[j];
            // The central difference carries O(eps_mach * |loss| / eps)
            // cancellation noise (~1e-11 here), so components much smaller
            // than the floor cannot be resolved to fine relative precision;
            // the floor still checks them absolutely to floor * tolerance.
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    store.zero_grads();
    return max_rel;
}

}  // namespace tcdiff
