#pragma once

#include "tcdiff/common.hpp"

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace tcdiff {

// Named parameter tensors with gradient and Adam moment buffers, iterated in
// insertion order so checkpoints and optimizer sweeps are deterministic.
struct ParamEntry {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;
};

class ParamStore {
public:
    int add(const std::string& name, Matrix init);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    int slot(const std::string& name) const;
    ParamEntry& at(const std::string& name) { return entries_[slot(name)]; }
    const ParamEntry& at(const std::string& name) const { return entries_[slot(name)]; }
    ParamEntry& operator[](int i) { return entries_[i]; }
    const ParamEntry& operator[](int i) const { return entries_[i]; }
    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;
    void zero_grads();

private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, int> index_;
};

// Append-only tape of primitive ops; node order is topological by
// construction, so one reverse sweep computes all gradients.
using NodeId = int;

class Tape {
public:
    struct Node {
        Matrix value;
        Matrix grad;  // allocated lazily during backward
        std::function<void(Tape&, const Matrix&)> backprop;  // null for leaves
        int param_slot{-1};
    };

    explicit Tape(ParamStore* store = nullptr) : store_(store) {}

    ParamStore* store() { return store_; }
    const Matrix& value(NodeId id) const { return nodes_[id].value; }
    Matrix& grad(NodeId id);
    std::size_t size() const { return nodes_.size(); }

    NodeId leaf(Matrix v);
    NodeId param(const std::string& name);
    NodeId make(Matrix v, std::function<void(Tape&, const Matrix&)> bp);

    // Accumulates d(loss)/d(param) into the ParamStore grad buffers.
    void backward(NodeId loss);

private:
    std::vector<Node> nodes_;
    ParamStore* store_;
    bool backward_done_{false};

    friend NodeId matmul(Tape&, NodeId, NodeId);
};

// --- primitive ops -----------------------------------------------------
NodeId matmul(Tape& t, NodeId a, NodeId b);
NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId cmul(Tape& t, NodeId a, NodeId b);
NodeId scale(Tape& t, NodeId a, double s);
NodeId add_bias(Tape& t, NodeId a, NodeId bias);  // bias is 1xk, broadcast over rows
NodeId tanh_op(Tape& t, NodeId a);
NodeId sigmoid_op(Tape& t, NodeId a);
NodeId concat_cols(Tape& t, const std::vector<NodeId>& parts);
// value(i,0) = a(0, indices[i]); scatter-add on backward.
NodeId gather_cols(Tape& t, NodeId a, const std::vector<int>& indices);
// value.row(i) = a.row(i) * s(i,0)
NodeId colwise_scale(Tape& t, NodeId a, NodeId s);
NodeId sum_all(Tape& t, NodeId a);  // 1x1
// (n x S*f) -> (n*S x f): per-sequence-position rows, and its inverse.
NodeId split_positions(Tape& t, NodeId a, int seq_len, int feat);
NodeId merge_positions(Tape& t, NodeId a, int seq_len, int feat);
// Same-padded 1-D convolution along the sequence axis, shared odd-width
// kernel (1xw param node) applied independently to each of `feat` channels.
NodeId conv1d_seq(Tape& t, NodeId x, NodeId kernel, int seq_len, int feat);

// --- pure (tape-free) reference ops ------------------------------------
// Row-wise affine map: out.row(i) = w * x.row(i)^T + b.
Matrix dense_forward(const Matrix& w, const Vector& b, const Matrix& x);
// Same-padding 1-D convolution of an S x z sequence, one shared kernel.
Matrix conv1d_forward(const Vector& kernel, const Matrix& x);

// --- optimizer & verification -------------------------------------------
void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps,
               long step_index);

// f(with_grad): returns the loss; when with_grad, must also accumulate
// analytic gradients into the store. Central finite differences, step eps.
double grad_check(const std::function<double(bool with_grad)>& f, ParamStore& store,
                  double eps);

}  // namespace tcdiff
