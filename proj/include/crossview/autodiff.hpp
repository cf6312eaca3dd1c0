#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crossview/tensor.hpp"

namespace crossview {

// Trainable tensor with a gradient accumulator.
struct Parameter {
    Tensor value;
    Tensor grad;
    std::string name;

    Parameter() = default;
    explicit Parameter(Tensor v, std::string n = "") : value(std::move(v)), name(std::move(n)) {
        grad = Tensor(value.shape());
    }
    void zero_grad() {
        if (!grad.same_shape(value)) grad = Tensor(value.shape());
        grad.fill(0.0);
    }
};

class Tape;

// Lightweight handle to a tape node.
class Var {
public:
    Var() = default;
    const Tensor& val() const;
    const std::vector<int>& shape() const { return val().shape(); }
    Tape* tape() const { return tape_; }
    int index() const { return idx_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* t, int i) : tape_(t), idx_(i) {}
    Tape* tape_ = nullptr;
    int idx_ = -1;
};

// Define-by-run reverse-mode tape. One tape per training step; nodes are
// emitted in forward order and visited in reverse for backward.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        Parameter* sink = nullptr;
        std::function<void(Tape&, int)> back;
    };

    Var constant(Tensor v);
    Var param(Parameter& p);

    // Accumulates into every contributing Parameter's .grad. Root must be scalar.
    void backward(const Var& root);

    bool grads_enabled() const { return no_grad_depth_ == 0; }

    // op plumbing
    int emit(Tensor value, bool requires_grad, std::function<void(Tape&, int)> back);
    Var var(int i) { return Var(this, i); }
    Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
    const Tensor& value_of(int i) const { return nodes_[static_cast<std::size_t>(i)].value; }
    void add_grad(int i, Tensor&& g);
    std::size_t node_count() const { return nodes_.size(); }

private:
    friend class NoGradGuard;
    std::vector<Node> nodes_;
    int no_grad_depth_ = 0;
};

// Disables gradient tracking (used for the target branch / stop-gradient).
class NoGradGuard {
public:
    explicit NoGradGuard(Tape& t) : tape_(t) { ++tape_.no_grad_depth_; }
    ~NoGradGuard() { --tape_.no_grad_depth_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape& tape_;
};

// Elementwise / shape ops. Inputs must live on the same tape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divide(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var exp_op(Var a);
Var log_op(Var a);
Var sqrt_op(Var a);
Var clamp(Var a, double lo, double hi);
Var clamp_min(Var a, double lo);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var reshape(Var a, std::vector<int> shape);

// Linear algebra.
Var transpose2d(Var a);              // [r,c] -> [c,r]
Var matmul(Var a, Var b);            // [n,k] x [k,m] -> [n,m]
Var matmul_tn(Var a, Var b);         // a^T b : [n,d], [n,m] -> [d,m]
Var affine(Var x, Var w, Var b);     // x [n,in], w [out,in], b [out] -> [n,out]

// Reductions / broadcasts over 2-D [rows, cols].
Var row_softmax(Var a);
Var sum_all(Var a);                  // -> [1]
Var mean_all(Var a);                 // -> [1]
Var row_sum(Var a);                  // [n,d] -> [n]
Var col_sum(Var a);                  // [n,d] -> [d]
Var broadcast_row(Var v, int rows);  // [d] -> [rows,d]
Var broadcast_col(Var v, int cols);  // [n] -> [n,cols]
Var div_by_scalar(Var a, Var s);     // s: [1]
Var mul_by_scalar(Var a, Var s);

// Fused losses (scalar outputs).
Var mse(Var pred, Var target);            // mean over all elements
Var kl_gaussian(Var mu, Var logvar);      // 0.5*sum_dims(mu^2+e^lv-lv-1), mean over rows

}  // namespace crossview
