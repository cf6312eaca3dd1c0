#include "crossview/autodiff.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "crossview/errors.hpp"

namespace crossview {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

const Tensor& Var::val() const { return tape_->value_of(idx_); }

Var Tape::constant(Tensor v) {
    int i = emit(std::move(v), false, nullptr);
    return Var(this, i);
}

Var Tape::param(Parameter& p) {
    const bool rg = grads_enabled();
    int i = emit(p.value, rg, nullptr);
    nodes_[static_cast<std::size_t>(i)].sink = rg ? &p : nullptr;
    return Var(this, i);
}

int Tape::emit(Tensor value, bool requires_grad, std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::add_grad(int i, Tensor&& g) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
        n.grad = std::move(g);
        n.has_grad = true;
        return;
    }
    double* d = n.grad.data();
    const double* s = g.data();
    const std::int64_t m = n.grad.size();
    for (std::int64_t k = 0; k < m; ++k) d[k] += s[k];
}

void Tape::backward(const Var& root) {
    if (root.tape() != this) throw ArgumentError("backward root is not on this tape");
    Node& rn = nodes_[static_cast<std::size_t>(root.index())];
    if (rn.value.size() != 1) throw ArgumentError("backward root must be scalar");
    if (!rn.requires_grad) return;
    rn.grad = Tensor::full(rn.value.shape(), 1.0);
    rn.has_grad = true;
    for (int i = root.index(); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || !n.has_grad) continue;
        if (n.back) n.back(*this, i);
        if (n.sink) {
            Parameter& p = *n.sink;
            if (!p.grad.same_shape(p.value)) p.grad = Tensor(p.value.shape());
            double* d = p.grad.data();
            const double* s = n.grad.data();
            const std::int64_t m = n.grad.size();
            for (std::int64_t k = 0; k < m; ++k) d[k] += s[k];
        }
    }
}

namespace {

Tape& tape_of(Var a, Var b) {
    if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
        throw ArgumentError("operands must live on the same tape");
    }
    return *a.tape();
}

bool want_grad(Tape& t, std::initializer_list<Var> parents) {
    if (!t.grads_enabled()) return false;
    for (const Var& v : parents) {
        if (t.node(v.index()).requires_grad) return true;
    }
    return false;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.val().same_shape(b.val())) {
        throw ArgumentError(std::string(op) + ": shape mismatch " + shape_str(a.val().shape()) +
                            " vs " + shape_str(b.val().shape()));
    }
}

}  // namespace

Var add(Var a, Var b) {
    Tape& t = tape_of(a, b);
    check_same_shape(a, b, "add");
    Tensor out(a.val().shape());
    const double* pa = a.val().data();
    const double* pb = b.val().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    const bool rg = want_grad(t, {a, b});
    int ia = a.index(), ib = b.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, ib](Tape& tp, int self) {
        Tensor g1 = tp.node(self).grad;
        Tensor g2 = g1;
        tp.add_grad(ia, std::move(g1));
        tp.add_grad(ib, std::move(g2));
    });
    return t.var(idx);
}

Var sub(Var a, Var b) {
    Tape& t = tape_of(a, b);
    check_same_shape(a, b, "sub");
    Tensor out(a.val().shape());
    const double* pa = a.val().data();
    const double* pb = b.val().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] - pb[i];
    const bool rg = want_grad(t, {a, b});
    int ia = a.index(), ib = b.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, ib](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        Tensor ga = g;
        Tensor gb(g.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
        tp.add_grad(ia, std::move(ga));
        tp.add_grad(ib, std::move(gb));
    });
    return t.var(idx);
}

Var mul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    check_same_shape(a, b, "mul");
    Tensor out(a.val().shape());
    const double* pa = a.val().data();
    const double* pb = b.val().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
    const bool rg = want_grad(t, {a, b});
    int ia = a.index(), ib = b.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, ib](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        const Tensor& va = tp.value_of(ia);
        const Tensor& vb = tp.value_of(ib);
        Tensor ga(g.shape()), gb(g.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) {
            ga[i] = g[i] * vb[i];
            gb[i] = g[i] * va[i];
        }
        tp.add_grad(ia, std::move(ga));
        tp.add_grad(ib, std::move(gb));
    });
    return t.var(idx);
}

Var divide(Var a, Var b) {
    Tape& t = tape_of(a, b);
    check_same_shape(a, b, "divide");
    Tensor out(a.val().shape());
    const double* pa = a.val().data();
    const double* pb = b.val().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] / pb[i];
    const bool rg = want_grad(t, {a, b});
    int ia = a.index(), ib = b.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, ib](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        const Tensor& va = tp.value_of(ia);
        const Tensor& vb = tp.value_of(ib);
        Tensor ga(g.shape()), gb(g.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) {
            ga[i] = g[i] / vb[i];
            gb[i] = -g[i] * va[i] / (vb[i] * vb[i]);
        }
        tp.add_grad(ia, std::move(ga));
        tp.add_grad(ib, std::move(gb));
    });
    return t.var(idx);
}

namespace {

// Shared scaffold for unary elementwise ops.
template <class FwdFn, class BwdFn>
Var unary_op(Var a, FwdFn fwd, BwdFn bwd) {
    Tape& t = *a.tape();
    Tensor out(a.val().shape());
    const double* pa = a.val().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] = fwd(pa[i]);
    const bool rg = want_grad(t, {a});
    int ia = a.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, bwd](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        const Tensor& x = tp.value_of(ia);
        const Tensor& y = tp.value_of(self);
        Tensor ga(g.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bwd(x[i], y[i]);
        tp.add_grad(ia, std::move(ga));
    });
    return t.var(idx);
}

}  // namespace

Var neg(Var a) {
    return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double c) {
    return unary_op(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_const(Var a, double c) {
    return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var exp_op(Var a) {
    return unary_op(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log_op(Var a) {
    return unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt_op(Var a) {
    return unary_op(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Var clamp(Var a, double lo, double hi) {
    return unary_op(a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                    [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var clamp_min(Var a, double lo) {
    return unary_op(a, [lo](double x) { return x < lo ? lo : x; },
                    [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Var relu(Var a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
    return unary_op(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                    [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var reshape(Var a, std::vector<int> shape) {
    Tape& t = *a.tape();
    Tensor out = a.val().reshaped(shape);
    const bool rg = want_grad(t, {a});
    int ia = a.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia](Tape& tp, int self) {
        Tensor ga = tp.node(self).grad.reshaped(tp.value_of(ia).shape());
        tp.add_grad(ia, std::move(ga));
    });
    return t.var(idx);
}

namespace {

void require_rank2(const Var& a, const char* op) {
    if (a.val().rank() != 2) {
        throw ArgumentError(std::string(op) + ": expected rank-2 tensor, got " +
                            shape_str(a.val().shape()));
    }
}

}  // namespace

Var transpose2d(Var a) {
    Tape& t = *a.tape();
    require_rank2(a, "transpose2d");
    const int r = a.val().dim(0), c = a.val().dim(1);
    Tensor out({c, r});
    CMatMap ma(a.val().data(), r, c);
    MatMap mo(out.data(), c, r);
    mo = ma.transpose();
    const bool rg = want_grad(t, {a});
    int ia = a.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, r, c](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        Tensor ga({r, c});
        CMatMap mg(g.data(), c, r);
        MatMap mga(ga.data(), r, c);
        mga = mg.transpose();
        tp.add_grad(ia, std::move(ga));
    });
    return t.var(idx);
}

Var matmul(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const int n = a.val().dim(0), k = a.val().dim(1), m = b.val().dim(1);
    if (b.val().dim(0) != k) throw ArgumentError("matmul: inner dimensions differ");
    Tensor out({n, m});
    CMatMap ma(a.val().data(), n, k);
    CMatMap mb(b.val().data(), k, m);
    MatMap mo(out.data(), n, m);
    mo.noalias() = ma * mb;
    const bool rg = want_grad(t, {a, b});
    int ia = a.index(), ib = b.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, ib, n, k, m](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        CMatMap mg(g.data(), n, m);
        CMatMap ma(tp.value_of(ia).data(), n, k);
        CMatMap mb(tp.value_of(ib).data(), k, m);
        Tensor ga({n, k}), gb({k, m});
        MatMap mga(ga.data(), n, k);
        MatMap mgb(gb.data(), k, m);
        mga.noalias() = mg * mb.transpose();
        mgb.noalias() = ma.transpose() * mg;
        tp.add_grad(ia, std::move(ga));
        tp.add_grad(ib, std::move(gb));
    });
    return t.var(idx);
}

Var matmul_tn(Var a, Var b) {
    Tape& t = tape_of(a, b);
    require_rank2(a, "matmul_tn");
    require_rank2(b, "matmul_tn");
    const int n = a.val().dim(0), d = a.val().dim(1), m = b.val().dim(1);
    if (b.val().dim(0) != n) throw ArgumentError("matmul_tn: row counts differ");
    Tensor out({d, m});
    CMatMap ma(a.val().data(), n, d);
    CMatMap mb(b.val().data(), n, m);
    MatMap mo(out.data(), d, m);
    mo.noalias() = ma.transpose() * mb;
    const bool rg = want_grad(t, {a, b});
    int ia = a.index(), ib = b.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, ib, n, d, m](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        CMatMap mg(g.data(), d, m);
        CMatMap ma(tp.value_of(ia).data(), n, d);
        CMatMap mb(tp.value_of(ib).data(), n, m);
        Tensor ga({n, d}), gb({n, m});
        MatMap mga(ga.data(), n, d);
        MatMap mgb(gb.data(), n, m);
        mga.noalias() = mb * mg.transpose();
        mgb.noalias() = ma * mg;
        tp.add_grad(ia, std::move(ga));
        tp.add_grad(ib, std::move(gb));
    });
    return t.var(idx);
}

Var affine(Var x, Var w, Var b) {
    Tape& t = tape_of(x, w);
    require_rank2(x, "affine");
    require_rank2(w, "affine");
    const int n = x.val().dim(0), in = x.val().dim(1), out_dim = w.val().dim(0);
    if (w.val().dim(1) != in) throw ArgumentError("affine: weight in-dim mismatch");
    if (b.val().size() != out_dim) throw ArgumentError("affine: bias dim mismatch");
    Tensor out({n, out_dim});
    CMatMap mx(x.val().data(), n, in);
    CMatMap mw(w.val().data(), out_dim, in);
    MatMap mo(out.data(), n, out_dim);
    mo.noalias() = mx * mw.transpose();
    const double* pb = b.val().data();
    for (int i = 0; i < n; ++i) {
        double* row = out.data() + static_cast<std::int64_t>(i) * out_dim;
        for (int j = 0; j < out_dim; ++j) row[j] += pb[j];
    }
    const bool rg = want_grad(t, {x, w, b});
    int ix = x.index(), iw = w.index(), ib = b.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ix, iw, ib, n, in, out_dim](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        CMatMap mg(g.data(), n, out_dim);
        CMatMap mx(tp.value_of(ix).data(), n, in);
        CMatMap mw(tp.value_of(iw).data(), out_dim, in);
        Tensor gx({n, in}), gw({out_dim, in}), gb({out_dim});
        MatMap mgx(gx.data(), n, in);
        MatMap mgw(gw.data(), out_dim, in);
        mgx.noalias() = mg * mw;
        mgw.noalias() = mg.transpose() * mx;
        for (int j = 0; j < out_dim; ++j) gb[j] = mg.col(j).sum();
        tp.add_grad(ix, std::move(gx));
        tp.add_grad(iw, std::move(gw));
        tp.add_grad(ib, std::move(gb));
    });
    return t.var(idx);
}

Var row_softmax(Var a) {
    Tape& t = *a.tape();
    require_rank2(a, "row_softmax");
    const int n = a.val().dim(0), d = a.val().dim(1);
    Tensor out({n, d});
    for (int i = 0; i < n; ++i) {
        const double* row = a.val().data() + static_cast<std::int64_t>(i) * d;
        double* orow = out.data() + static_cast<std::int64_t>(i) * d;
        double mx = row[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        for (int j = 0; j < d; ++j) orow[j] /= s;
    }
    const bool rg = want_grad(t, {a});
    int ia = a.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, n, d](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        const Tensor& y = tp.value_of(self);
        Tensor ga({n, d});
        for (int i = 0; i < n; ++i) {
            const double* gr = g.data() + static_cast<std::int64_t>(i) * d;
            const double* yr = y.data() + static_cast<std::int64_t>(i) * d;
            double* or_ = ga.data() + static_cast<std::int64_t>(i) * d;
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += gr[j] * yr[j];
            for (int j = 0; j < d; ++j) or_[j] = yr[j] * (gr[j] - dot);
        }
        tp.add_grad(ia, std::move(ga));
    });
    return t.var(idx);
}

Var sum_all(Var a) {
    Tape& t = *a.tape();
    double s = 0.0;
    const double* pa = a.val().data();
    for (std::int64_t i = 0; i < a.val().size(); ++i) s += pa[i];
    const bool rg = want_grad(t, {a});
    int ia = a.index();
    int idx = t.emit(Tensor::scalar(s), rg, !rg ? std::function<void(Tape&, int)>() : [ia](Tape& tp, int self) {
        const double g = tp.node(self).grad[0];
        Tensor ga = Tensor::full(tp.value_of(ia).shape(), g);
        tp.add_grad(ia, std::move(ga));
    });
    return t.var(idx);
}

Var mean_all(Var a) {
    Tape& t = *a.tape();
    const std::int64_t m = a.val().size();
    if (m == 0) throw ArgumentError("mean_all: empty tensor");
    double s = 0.0;
    const double* pa = a.val().data();
    for (std::int64_t i = 0; i < m; ++i) s += pa[i];
    const bool rg = want_grad(t, {a});
    int ia = a.index();
    int idx = t.emit(Tensor::scalar(s / static_cast<double>(m)), rg,
                     !rg ? std::function<void(Tape&, int)>() : [ia, m](Tape& tp, int self) {
        const double g = tp.node(self).grad[0] / static_cast<double>(m);
        Tensor ga = Tensor::full(tp.value_of(ia).shape(), g);
        tp.add_grad(ia, std::move(ga));
    });
    return t.var(idx);
}

Var row_sum(Var a) {
    Tape& t = *a.tape();
    require_rank2(a, "row_sum");
    const int n = a.val().dim(0), d = a.val().dim(1);
    Tensor out({n});
    for (int i = 0; i < n; ++i) {
        const double* row = a.val().data() + static_cast<std::int64_t>(i) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += row[j];
        out[i] = s;
    }
    const bool rg = want_grad(t, {a});
    int ia = a.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, n, d](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        Tensor ga({n, d});
        for (int i = 0; i < n; ++i) {
            double* row = ga.data() + static_cast<std::int64_t>(i) * d;
            for (int j = 0; j < d; ++j) row[j] = g[i];
        }
        tp.add_grad(ia, std::move(ga));
    });
    return t.var(idx);
}

Var col_sum(Var a) {
    Tape& t = *a.tape();
    require_rank2(a, "col_sum");
    const int n = a.val().dim(0), d = a.val().dim(1);
    Tensor out({d});
    for (int i = 0; i < n; ++i) {
        const double* row = a.val().data() + static_cast<std::int64_t>(i) * d;
        for (int j = 0; j < d; ++j) out[j] += row[j];
    }
    const bool rg = want_grad(t, {a});
    int ia = a.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, n, d](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        Tensor ga({n, d});
        for (int i = 0; i < n; ++i) {
            double* row = ga.data() + static_cast<std::int64_t>(i) * d;
            for (int j = 0; j < d; ++j) row[j] = g[j];
        }
        tp.add_grad(ia, std::move(ga));
    });
    return t.var(idx);
}

Var broadcast_row(Var v, int rows) {
    Tape& t = *v.tape();
    if (v.val().rank() != 1) throw ArgumentError("broadcast_row: expected rank-1");
    const int d = v.val().dim(0);
    Tensor out({rows, d});
    for (int i = 0; i < rows; ++i) {
        double* row = out.data() + static_cast<std::int64_t>(i) * d;
        const double* src = v.val().data();
        for (int j = 0; j < d; ++j) row[j] = src[j];
    }
    const bool rg = want_grad(t, {v});
    int iv = v.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [iv, rows, d](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        Tensor gv({d});
        for (int i = 0; i < rows; ++i) {
            const double* row = g.data() + static_cast<std::int64_t>(i) * d;
            for (int j = 0; j < d; ++j) gv[j] += row[j];
        }
        tp.add_grad(iv, std::move(gv));
    });
    return t.var(idx);
}

Var broadcast_col(Var v, int cols) {
    Tape& t = *v.tape();
    if (v.val().rank() != 1) throw ArgumentError("broadcast_col: expected rank-1");
    const int n = v.val().dim(0);
    Tensor out({n, cols});
    for (int i = 0; i < n; ++i) {
        double* row = out.data() + static_cast<std::int64_t>(i) * cols;
        const double x = v.val()[i];
        for (int j = 0; j < cols; ++j) row[j] = x;
    }
    const bool rg = want_grad(t, {v});
    int iv = v.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [iv, n, cols](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        Tensor gv({n});
        for (int i = 0; i < n; ++i) {
            const double* row = g.data() + static_cast<std::int64_t>(i) * cols;
            double s = 0.0;
            for (int j = 0; j < cols; ++j) s += row[j];
            gv[i] = s;
        }
        tp.add_grad(iv, std::move(gv));
    });
    return t.var(idx);
}

Var div_by_scalar(Var a, Var s) {
    Tape& t = tape_of(a, s);
    if (s.val().size() != 1) throw ArgumentError("div_by_scalar: divisor must be scalar");
    const double sv = s.val()[0];
    Tensor out(a.val().shape());
    const double* pa = a.val().data();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = pa[i] / sv;
    const bool rg = want_grad(t, {a, s});
    int ia = a.index(), is = s.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, is](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        const Tensor& va = tp.value_of(ia);
        const double sv = tp.value_of(is)[0];
        Tensor ga(g.shape());
        double gs = 0.0;
        for (std::int64_t i = 0; i < g.size(); ++i) {
            ga[i] = g[i] / sv;
            gs -= g[i] * va[i];
        }
        tp.add_grad(ia, std::move(ga));
        tp.add_grad(is, Tensor::scalar(gs / (sv * sv)));
    });
    return t.var(idx);
}

Var mul_by_scalar(Var a, Var s) {
    Tape& t = tape_of(a, s);
    if (s.val().size() != 1) throw ArgumentError("mul_by_scalar: multiplier must be scalar");
    const double sv = s.val()[0];
    Tensor out(a.val().shape());
    const double* pa = a.val().data();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = pa[i] * sv;
    const bool rg = want_grad(t, {a, s});
    int ia = a.index(), is = s.index();
    int idx = t.emit(std::move(out), rg, !rg ? std::function<void(Tape&, int)>() : [ia, is](Tape& tp, int self) {
        const Tensor& g = tp.node(self).grad;
        const Tensor& va = tp.value_of(ia);
        const double sv = tp.value_of(is)[0];
        Tensor ga(g.shape());
        double gs = 0.0;
        for (std::int64_t i = 0; i < g.size(); ++i) {
            ga[i] = g[i] * sv;
            gs += g[i] * va[i];
        }
        tp.add_grad(ia, std::move(ga));
        tp.add_grad(is, Tensor::scalar(gs));
    });
    return t.var(idx);
}

Var mse(Var pred, Var target) {
    Tape& t = tape_of(pred, target);
    check_same_shape(pred, target, "mse");
    const std::int64_t m = pred.val().size();
    if (m == 0) throw ArgumentError("mse: empty tensors");
    double s = 0.0;
    const double* pp = pred.val().data();
    const double* pt = target.val().data();
    for (std::int64_t i = 0; i < m; ++i) {
        const double d = pp[i] - pt[i];
        s += d * d;
    }
    const bool rg = want_grad(t, {pred, target});
    int ip = pred.index(), it = target.index();
    int idx = t.emit(Tensor::scalar(s / static_cast<double>(m)), rg,
                     !rg ? std::function<void(Tape&, int)>() : [ip, it, m](Tape& tp, int self) {
        const double g = tp.node(self).grad[0];
        const Tensor& vp = tp.value_of(ip);
        const Tensor& vt = tp.value_of(it);
        const double c = 2.0 * g / static_cast<double>(m);
        Tensor gp(vp.shape()), gt(vp.shape());
        for (std::int64_t i = 0; i < m; ++i) {
            const double d = c * (vp[i] - vt[i]);
            gp[i] = d;
            gt[i] = -d;
        }
        tp.add_grad(ip, std::move(gp));
        tp.add_grad(it, std::move(gt));
    });
    return t.var(idx);
}

Var kl_gaussian(Var mu, Var logvar) {
    Tape& t = tape_of(mu, logvar);
    check_same_shape(mu, logvar, "kl_gaussian");
    const int rows = mu.val().rank() == 2 ? mu.val().dim(0) : 1;
    const std::int64_t m = mu.val().size();
    double s = 0.0;
    const double* pm = mu.val().data();
    const double* pl = logvar.val().data();
    for (std::int64_t i = 0; i < m; ++i) {
        s += pm[i] * pm[i] + std::exp(pl[i]) - pl[i] - 1.0;
    }
    s *= 0.5 / static_cast<double>(rows);
    const bool rg = want_grad(t, {mu, logvar});
    int im = mu.index(), il = logvar.index();
    int idx = t.emit(Tensor::scalar(s), rg, !rg ? std::function<void(Tape&, int)>() : [im, il, rows, m](Tape& tp, int self) {
        const double g = tp.node(self).grad[0] / static_cast<double>(rows);
        const Tensor& vm = tp.value_of(im);
        const Tensor& vl = tp.value_of(il);
        Tensor gm(vm.shape()), gl(vm.shape());
        for (std::int64_t i = 0; i < m; ++i) {
            gm[i] = g * vm[i];
            gl[i] = g * 0.5 * (std::exp(vl[i]) - 1.0);
        }
        tp.add_grad(im, std::move(gm));
        tp.add_grad(il, std::move(gl));
    });
    return t.var(idx);
}

}  // namespace crossview
