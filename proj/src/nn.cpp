#include "crossview/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "crossview/errors.hpp"
#include "crossview/threads.hpp"

namespace crossview {

int max_threads() {
    static const int n = [] {
        if (const char* env = std::getenv("CROSSVIEW_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return static_cast<int>(std::min(hw == 0 ? 1u : hw, 8u));
    }();
    return n;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

namespace {

bool wants(Tape& t, std::initializer_list<Var> vs) {
    if (!t.grads_enabled()) return false;
    for (const Var& v : vs) {
        if (t.node(v.index()).requires_grad) return true;
    }
    return false;
}

struct ConvSizes {
    int N, D, H, W, Do, Ho, Wo, K, P;
};

ConvSizes conv_sizes(const std::vector<int>& xshape, const ConvGeom& g) {
    if (xshape.size() != 5) throw ArgumentError("conv: input must be [N,C,D,H,W]");
    ConvSizes s{};
    s.N = xshape[0];
    if (xshape[1] != g.in_ch) {
        throw ArgumentError("conv: channel mismatch, input has " + std::to_string(xshape[1]) +
                            ", kernel expects " + std::to_string(g.in_ch));
    }
    s.D = xshape[2];
    s.H = xshape[3];
    s.W = xshape[4];
    s.Do = s.D - g.kd + 1;
    s.Ho = (s.H + 2 * g.ph - g.kh) / g.sh + 1;
    s.Wo = (s.W + 2 * g.pw - g.kw) / g.sw + 1;
    if (s.Do < 1 || s.Ho < 1 || s.Wo < 1) {
        throw ArgumentError("conv: kernel larger than padded input");
    }
    s.K = g.in_ch * g.kd * g.kh * g.kw;
    s.P = s.Do * s.Ho * s.Wo;
    return s;
}

void im2col(const double* x, const ConvGeom& g, const ConvSizes& cs, double* col) {
    int k = 0;
    for (int ci = 0; ci < g.in_ch; ++ci) {
        for (int zd = 0; zd < g.kd; ++zd) {
            for (int zh = 0; zh < g.kh; ++zh) {
                for (int zw = 0; zw < g.kw; ++zw, ++k) {
                    double* crow = col + static_cast<std::int64_t>(k) * cs.P;
                    std::int64_t p = 0;
                    for (int d = 0; d < cs.Do; ++d) {
                        const double* xpl =
                            x + (static_cast<std::int64_t>(ci) * cs.D + d + zd) * cs.H * cs.W;
                        for (int oh = 0; oh < cs.Ho; ++oh) {
                            const int ih = oh * g.sh + zh - g.ph;
                            if (ih < 0 || ih >= cs.H) {
                                for (int ow = 0; ow < cs.Wo; ++ow) crow[p++] = 0.0;
                                continue;
                            }
                            const double* xrow = xpl + static_cast<std::int64_t>(ih) * cs.W;
                            for (int ow = 0; ow < cs.Wo; ++ow) {
                                const int iw = ow * g.sw + zw - g.pw;
                                crow[p++] = (iw < 0 || iw >= cs.W) ? 0.0 : xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

void col2im(const double* col, const ConvGeom& g, const ConvSizes& cs, double* x) {
    int k = 0;
    for (int ci = 0; ci < g.in_ch; ++ci) {
        for (int zd = 0; zd < g.kd; ++zd) {
            for (int zh = 0; zh < g.kh; ++zh) {
                for (int zw = 0; zw < g.kw; ++zw, ++k) {
                    const double* crow = col + static_cast<std::int64_t>(k) * cs.P;
                    std::int64_t p = 0;
                    for (int d = 0; d < cs.Do; ++d) {
                        double* xpl =
                            x + (static_cast<std::int64_t>(ci) * cs.D + d + zd) * cs.H * cs.W;
                        for (int oh = 0; oh < cs.Ho; ++oh) {
                            const int ih = oh * g.sh + zh - g.ph;
                            if (ih < 0 || ih >= cs.H) {
                                p += cs.Wo;
                                continue;
                            }
                            double* xrow = xpl + static_cast<std::int64_t>(ih) * cs.W;
                            for (int ow = 0; ow < cs.Wo; ++ow) {
                                const int iw = ow * g.sw + zw - g.pw;
                                if (iw >= 0 && iw < cs.W) xrow[iw] += crow[p];
                                ++p;
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv_fwd(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeom& g) {
    const ConvSizes cs = conv_sizes(x.shape(), g);
    if (w.size() != static_cast<std::int64_t>(g.out_ch) * cs.K) {
        throw ArgumentError("conv: weight size mismatch");
    }
    Tensor y({cs.N, g.out_ch, cs.Do, cs.Ho, cs.Wo});
    const std::int64_t xstride = static_cast<std::int64_t>(g.in_ch) * cs.D * cs.H * cs.W;
    const std::int64_t ystride = static_cast<std::int64_t>(g.out_ch) * cs.P;
    CMatMap wm(w.data(), g.out_ch, cs.K);
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int n = 0; n < cs.N; ++n) {
        std::vector<double> col(static_cast<std::size_t>(cs.K) * cs.P);
        im2col(x.data() + n * xstride, g, cs, col.data());
        CMatMap cm(col.data(), cs.K, cs.P);
        MatMap ym(y.data() + n * ystride, g.out_ch, cs.P);
        ym.noalias() = wm * cm;
        if (bias) {
            for (int oc = 0; oc < g.out_ch; ++oc) ym.row(oc).array() += bias->data()[oc];
        }
    }
    return y;
}

Tensor conv_dx(const Tensor& dy, const Tensor& w, const ConvGeom& g, int D, int H, int W) {
    const ConvSizes cs = conv_sizes({dy.dim(0), g.in_ch, D, H, W}, g);
    if (dy.dim(1) != g.out_ch || dy.dim(2) != cs.Do || dy.dim(3) != cs.Ho || dy.dim(4) != cs.Wo) {
        throw ArgumentError("conv_dx: gradient shape mismatch");
    }
    Tensor dx({cs.N, g.in_ch, D, H, W});
    const std::int64_t xstride = static_cast<std::int64_t>(g.in_ch) * D * H * W;
    const std::int64_t ystride = static_cast<std::int64_t>(g.out_ch) * cs.P;
    CMatMap wm(w.data(), g.out_ch, cs.K);
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int n = 0; n < cs.N; ++n) {
        std::vector<double> col(static_cast<std::size_t>(cs.K) * cs.P);
        CMatMap gm(dy.data() + n * ystride, g.out_ch, cs.P);
        MatMap cm(col.data(), cs.K, cs.P);
        cm.noalias() = wm.transpose() * gm;
        col2im(col.data(), g, cs, dx.data() + n * xstride);
    }
    return dx;
}

void conv_dw_db(const Tensor& x, const Tensor& dy, const ConvGeom& g, Tensor& dw, Tensor* db) {
    const ConvSizes cs = conv_sizes(x.shape(), g);
    const std::int64_t xstride = static_cast<std::int64_t>(g.in_ch) * cs.D * cs.H * cs.W;
    const std::int64_t ystride = static_cast<std::int64_t>(g.out_ch) * cs.P;
    MatMap dwm(dw.data(), g.out_ch, cs.K);
    std::vector<double> col(static_cast<std::size_t>(cs.K) * cs.P);
    // Sample order fixed so the accumulation stays bitwise deterministic.
    for (int n = 0; n < cs.N; ++n) {
        im2col(x.data() + n * xstride, g, cs, col.data());
        CMatMap cm(col.data(), cs.K, cs.P);
        CMatMap gm(dy.data() + n * ystride, g.out_ch, cs.P);
        dwm.noalias() += gm * cm.transpose();
        if (db) {
            for (int oc = 0; oc < g.out_ch; ++oc) db->data()[oc] += gm.row(oc).sum();
        }
    }
}

Var conv_op(Var x, Var w, Var b, const ConvGeom& g) {
    Tape& t = *x.tape();
    Tensor y = conv_fwd(x.val(), w.val(), &b.val(), g);
    const bool rg = wants(t, {x, w, b});
    const int D = x.val().dim(2), H = x.val().dim(3), W = x.val().dim(4);
    const int ix = x.index(), iw = w.index(), ib = b.index();
    int idx = t.emit(std::move(y), rg,
                     !rg ? std::function<void(Tape&, int)>()
                         : [g, ix, iw, ib, D, H, W](Tape& tp, int self) {
                               const Tensor& dy = tp.node(self).grad;
                               if (tp.node(ix).requires_grad) {
                                   tp.add_grad(ix, conv_dx(dy, tp.value_of(iw), g, D, H, W));
                               }
                               if (tp.node(iw).requires_grad || tp.node(ib).requires_grad) {
                                   Tensor dw(tp.value_of(iw).shape());
                                   Tensor db({g.out_ch});
                                   conv_dw_db(tp.value_of(ix), dy, g, dw, &db);
                                   tp.add_grad(iw, std::move(dw));
                                   tp.add_grad(ib, std::move(db));
                               }
                           });
    return t.var(idx);
}

Var conv_transpose_op(Var x, Var w, Var b, const ConvGeom& g) {
    Tape& t = *x.tape();
    const std::vector<int>& xs = x.val().shape();
    if (xs.size() != 5) throw ArgumentError("conv_transpose: input must be [N,C,D,H,W]");
    if (xs[1] != g.in_ch) throw ArgumentError("conv_transpose: channel mismatch");
    const int N = xs[0], Di = xs[2], Hi = xs[3], Wi = xs[4];
    const int Do = Di + g.kd - 1;
    const int Ho = (Hi - 1) * g.sh + g.kh - 2 * g.ph;
    const int Wo = (Wi - 1) * g.sw + g.kw - 2 * g.pw;
    if (Ho < 1 || Wo < 1) throw ArgumentError("conv_transpose: degenerate output size");
    // The adjoint of a conv mapping [out_ch, Do, Ho, Wo] -> [in_ch, Di, Hi, Wi].
    ConvGeom cg = g;
    cg.in_ch = g.out_ch;
    cg.out_ch = g.in_ch;
    Tensor y = conv_dx(x.val(), w.val(), cg, Do, Ho, Wo);
    {
        const double* pb = b.val().data();
        const std::int64_t plane = static_cast<std::int64_t>(Do) * Ho * Wo;
        for (int n = 0; n < N; ++n) {
            for (int oc = 0; oc < g.out_ch; ++oc) {
                double* slice = y.data() + (static_cast<std::int64_t>(n) * g.out_ch + oc) * plane;
                for (std::int64_t i = 0; i < plane; ++i) slice[i] += pb[oc];
            }
        }
    }
    const bool rg = wants(t, {x, w, b});
    const int ix = x.index(), iw = w.index(), ib = b.index();
    int idx = t.emit(std::move(y), rg,
                     !rg ? std::function<void(Tape&, int)>()
                         : [cg, g, ix, iw, ib, Do, Ho, Wo](Tape& tp, int self) {
                               const Tensor& dy = tp.node(self).grad;
                               if (tp.node(ix).requires_grad) {
                                   tp.add_grad(ix, conv_fwd(dy, tp.value_of(iw), nullptr, cg));
                               }
                               if (tp.node(iw).requires_grad) {
                                   Tensor dw(tp.value_of(iw).shape());
                                   conv_dw_db(dy, tp.value_of(ix), cg, dw, nullptr);
                                   tp.add_grad(iw, std::move(dw));
                               }
                               if (tp.node(ib).requires_grad) {
                                   Tensor db({g.out_ch});
                                   const std::int64_t plane =
                                       static_cast<std::int64_t>(Do) * Ho * Wo;
                                   const int N = dy.dim(0);
                                   for (int n = 0; n < N; ++n) {
                                       for (int oc = 0; oc < g.out_ch; ++oc) {
                                           const double* slice =
                                               dy.data() +
                                               (static_cast<std::int64_t>(n) * g.out_ch + oc) *
                                                   plane;
                                           double s = 0.0;
                                           for (std::int64_t i = 0; i < plane; ++i) s += slice[i];
                                           db[oc] += s;
                                       }
                                   }
                                   tp.add_grad(ib, std::move(db));
                               }
                           });
    return t.var(idx);
}

Var adaptive_avg_pool2d(Var x, int out) {
    Tape& t = *x.tape();
    const std::vector<int>& xs = x.val().shape();
    if (xs.size() < 2) throw ArgumentError("adaptive_avg_pool2d: rank must be >= 2");
    const int H = xs[xs.size() - 2], W = xs[xs.size() - 1];
    if (out < 1 || out > H || out > W) {
        throw ArgumentError("adaptive_avg_pool2d: output size must be in [1, input size]");
    }
    const std::int64_t lead = x.val().size() / (static_cast<std::int64_t>(H) * W);
    std::vector<int> oshape(xs.begin(), xs.end() - 2);
    oshape.push_back(out);
    oshape.push_back(out);
    Tensor y(oshape);
    auto lo = [](int i, int n, int p) { return (i * n) / p; };
    for (std::int64_t l = 0; l < lead; ++l) {
        const double* xp = x.val().data() + l * H * W;
        double* yp = y.data() + l * out * out;
        for (int i = 0; i < out; ++i) {
            const int r0 = lo(i, H, out), r1 = lo(i + 1, H, out);
            for (int j = 0; j < out; ++j) {
                const int c0 = lo(j, W, out), c1 = lo(j + 1, W, out);
                double s = 0.0;
                for (int r = r0; r < r1; ++r) {
                    for (int c = c0; c < c1; ++c) s += xp[r * W + c];
                }
                yp[i * out + j] = s / ((r1 - r0) * (c1 - c0));
            }
        }
    }
    const bool rg = wants(t, {x});
    const int ixp = x.index();
    int idx = t.emit(std::move(y), rg,
                     !rg ? std::function<void(Tape&, int)>()
                         : [ixp, H, W, out, lead](Tape& tp, int self) {
                               const Tensor& g = tp.node(self).grad;
                               Tensor gx(tp.value_of(ixp).shape());
                               auto lo = [](int i, int n, int p) { return (i * n) / p; };
                               for (std::int64_t l = 0; l < lead; ++l) {
                                   const double* gp = g.data() + l * out * out;
                                   double* xp = gx.data() + l * H * W;
                                   for (int i = 0; i < out; ++i) {
                                       const int r0 = lo(i, H, out), r1 = lo(i + 1, H, out);
                                       for (int j = 0; j < out; ++j) {
                                           const int c0 = lo(j, W, out), c1 = lo(j + 1, W, out);
                                           const double v =
                                               gp[i * out + j] / ((r1 - r0) * (c1 - c0));
                                           for (int r = r0; r < r1; ++r) {
                                               for (int c = c0; c < c1; ++c) xp[r * W + c] += v;
                                           }
                                       }
                                   }
                               }
                               tp.add_grad(ixp, std::move(gx));
                           });
    return t.var(idx);
}

Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
               bool training, bool update_stats, double momentum, double eps) {
    Tape& t = *x.tape();
    const std::vector<int>& xs = x.val().shape();
    if (xs.size() < 2) throw ArgumentError("batch_norm: rank must be >= 2");
    const int N = xs[0], C = xs[1];
    const std::int64_t R = x.val().size() / (static_cast<std::int64_t>(N) * C);
    const std::int64_t m = static_cast<std::int64_t>(N) * R;
    if (gamma.val().size() != C || beta.val().size() != C) {
        throw ArgumentError("batch_norm: gamma/beta size mismatch");
    }

    Tensor mean({C}), var({C});
    if (training) {
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const double* xp = x.val().data() + (static_cast<std::int64_t>(n) * C + c) * R;
                double s = 0.0;
                for (std::int64_t r = 0; r < R; ++r) s += xp[r];
                mean[c] += s;
            }
        }
        for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(m);
        for (int n = 0; n < N; ++n) {
            for (int c = 0; c < C; ++c) {
                const double* xp = x.val().data() + (static_cast<std::int64_t>(n) * C + c) * R;
                double s = 0.0;
                for (std::int64_t r = 0; r < R; ++r) {
                    const double d = xp[r] - mean[c];
                    s += d * d;
                }
                var[c] += s;
            }
        }
        for (int c = 0; c < C; ++c) var[c] /= static_cast<double>(m);
        if (update_stats) {
            for (int c = 0; c < C; ++c) {
                running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
                running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c];
            }
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = running_mean[c];
            var[c] = running_var[c];
        }
    }
    Tensor istd({C});
    for (int c = 0; c < C; ++c) istd[c] = 1.0 / std::sqrt(var[c] + eps);

    Tensor y(xs);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const double* xp = x.val().data() + (static_cast<std::int64_t>(n) * C + c) * R;
            double* yp = y.data() + (static_cast<std::int64_t>(n) * C + c) * R;
            const double g_ = gamma.val()[c], b_ = beta.val()[c];
            for (std::int64_t r = 0; r < R; ++r) yp[r] = g_ * (xp[r] - mean[c]) * istd[c] + b_;
        }
    }

    const bool rg = wants(t, {x, gamma, beta});
    const int ix = x.index(), ig = gamma.index(), ib = beta.index();
    int idx = t.emit(
        std::move(y), rg,
        !rg ? std::function<void(Tape&, int)>()
            : [ix, ig, ib, N, C, R, m, mean, istd, training](Tape& tp, int self) {
                  const Tensor& dy = tp.node(self).grad;
                  const Tensor& xv = tp.value_of(ix);
                  const Tensor& gv = tp.value_of(ig);
                  Tensor dgamma({C}), dbeta({C});
                  for (int n = 0; n < N; ++n) {
                      for (int c = 0; c < C; ++c) {
                          const double* xp = xv.data() + (static_cast<std::int64_t>(n) * C + c) * R;
                          const double* gp = dy.data() + (static_cast<std::int64_t>(n) * C + c) * R;
                          double sb = 0.0, sg = 0.0;
                          for (std::int64_t r = 0; r < R; ++r) {
                              sb += gp[r];
                              sg += gp[r] * (xp[r] - mean[c]) * istd[c];
                          }
                          dbeta[c] += sb;
                          dgamma[c] += sg;
                      }
                  }
                  if (tp.node(ix).requires_grad) {
                      Tensor dx(xv.shape());
                      for (int n = 0; n < N; ++n) {
                          for (int c = 0; c < C; ++c) {
                              const double* xp =
                                  xv.data() + (static_cast<std::int64_t>(n) * C + c) * R;
                              const double* gp =
                                  dy.data() + (static_cast<std::int64_t>(n) * C + c) * R;
                              double* dp = dx.data() + (static_cast<std::int64_t>(n) * C + c) * R;
                              const double k = gv[c] * istd[c];
                              if (training) {
                                  const double mb = dbeta[c] / static_cast<double>(m);
                                  const double mg = dgamma[c] / static_cast<double>(m);
                                  for (std::int64_t r = 0; r < R; ++r) {
                                      const double xhat = (xp[r] - mean[c]) * istd[c];
                                      dp[r] = k * (gp[r] - mb - xhat * mg);
                                  }
                              } else {
                                  for (std::int64_t r = 0; r < R; ++r) dp[r] = k * gp[r];
                              }
                          }
                      }
                      tp.add_grad(ix, std::move(dx));
                  }
                  tp.add_grad(ig, std::move(dgamma));
                  tp.add_grad(ib, std::move(dbeta));
              });
    return t.var(idx);
}

// ---- layers ----

namespace {

void lecun_uniform(Tensor& w, std::int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = (rng.uniform() * 2.0 - 1.0) * bound;
}

}  // namespace

void AffineLayer::init(int out_dim, int in_dim, Rng& rng, const std::string& name) {
    w = Parameter(Tensor({out_dim, in_dim}), name + ".w");
    b = Parameter(Tensor({out_dim}), name + ".b");
    lecun_uniform(w.value, in_dim, rng);
}

Var AffineLayer::forward(Tape& t, Var x) {
    return affine(x, t.param(w), t.param(b));
}

void ConvLayer::init(const ConvGeom& geom, Rng& rng, const std::string& name) {
    g = geom;
    w = Parameter(Tensor({g.out_ch, g.in_ch, g.kd, g.kh, g.kw}), name + ".w");
    b = Parameter(Tensor({g.out_ch}), name + ".b");
    lecun_uniform(w.value, static_cast<std::int64_t>(g.in_ch) * g.kd * g.kh * g.kw, rng);
}

Var ConvLayer::forward(Tape& t, Var x) {
    return conv_op(x, t.param(w), t.param(b), g);
}

void ConvTLayer::init(const ConvGeom& geom, Rng& rng, const std::string& name) {
    g = geom;
    w = Parameter(Tensor({g.in_ch, g.out_ch, g.kd, g.kh, g.kw}), name + ".w");
    b = Parameter(Tensor({g.out_ch}), name + ".b");
    lecun_uniform(w.value, static_cast<std::int64_t>(g.in_ch) * g.kd * g.kh * g.kw, rng);
}

Var ConvTLayer::forward(Tape& t, Var x) {
    return conv_transpose_op(x, t.param(w), t.param(b), g);
}

void BatchNormLayer::init(int channels, const std::string& name) {
    gamma = Parameter(Tensor::full({channels}, 1.0), name + ".gamma");
    beta = Parameter(Tensor({channels}), name + ".beta");
    running_mean = Tensor({channels});
    running_var = Tensor::full({channels}, 1.0);
}

Var BatchNormLayer::forward(Tape& t, Var x, bool training, bool update_stats) {
    return batch_norm(x, t.param(gamma), t.param(beta), running_mean, running_var, training,
                      update_stats, momentum, eps);
}

// ---- backbone ----

namespace {

int odd_clamp(int k, int limit) {
    int v = std::min(k, limit);
    if (v % 2 == 0) --v;
    return std::max(v, 1);
}

}  // namespace

BackboneDims compute_backbone_dims(const BackboneConfig& cfg, int s, int in_depth) {
    BackboneDims d;
    d.s = s;
    d.in_depth = in_depth;
    int depth = in_depth;
    for (const ConvSpec& spec : cfg.conv3d) {
        const int kd = std::min(spec.kd, depth);
        d.kd_eff.push_back(kd);
        depth = depth - kd + 1;
        d.depth_chain.push_back(depth);
    }
    const int last_ch = cfg.conv3d.empty() ? 1 : cfg.conv3d.back().out_ch;
    d.fold_ch = last_ch * depth;
    d.pool_p = std::min(cfg.pool, s);
    d.fc_in = cfg.conv2d_out * d.pool_p * d.pool_p;
    return d;
}

void ConvEncoderTrunk::build(const BackboneConfig& c, int s, int in_depth, Rng& rng,
                             const std::string& prefix) {
    cfg = c;
    dims = compute_backbone_dims(c, s, in_depth);
    conv3.clear();
    bn3.clear();
    int in_ch = 1;
    for (std::size_t i = 0; i < c.conv3d.size(); ++i) {
        const ConvSpec& spec = c.conv3d[i];
        ConvGeom g;
        g.in_ch = in_ch;
        g.out_ch = spec.out_ch;
        g.kd = dims.kd_eff[i];
        g.kh = odd_clamp(spec.kh, s);
        g.kw = odd_clamp(spec.kw, s);
        g.ph = g.kh / 2;
        g.pw = g.kw / 2;
        ConvLayer layer;
        layer.init(g, rng, prefix + ".conv3d" + std::to_string(i));
        conv3.push_back(std::move(layer));
        BatchNormLayer bn;
        bn.init(spec.out_ch, prefix + ".bn3d" + std::to_string(i));
        bn3.push_back(std::move(bn));
        in_ch = spec.out_ch;
    }
    ConvGeom g2;
    g2.in_ch = dims.fold_ch;
    g2.out_ch = c.conv2d_out;
    g2.kd = 1;
    g2.kh = odd_clamp(c.conv2d_k, s);
    g2.kw = g2.kh;
    g2.ph = g2.kh / 2;
    g2.pw = g2.kw / 2;
    conv2.init(g2, rng, prefix + ".conv2d");
    bn2.init(c.conv2d_out, prefix + ".bn2d");
    fc.init(c.fc_hidden, dims.fc_in, rng, prefix + ".fc");
}

Var ConvEncoderTrunk::forward(Tape& t, Var x, bool training, bool update_stats) {
    const std::vector<int>& xs = x.val().shape();
    if (xs.size() != 5 || xs[1] != 1 || xs[2] != dims.in_depth || xs[3] != dims.s ||
        xs[4] != dims.s) {
        throw ArgumentError("encoder: input shape " + shape_str(xs) + " does not match [N,1," +
                            std::to_string(dims.in_depth) + "," + std::to_string(dims.s) + "," +
                            std::to_string(dims.s) + "]");
    }
    const int n = xs[0];
    Var h = x;
    for (std::size_t i = 0; i < conv3.size(); ++i) {
        h = conv3[i].forward(t, h);
        h = bn3[i].forward(t, h, training, update_stats);
        h = relu(h);
    }
    h = reshape(h, {n, dims.fold_ch, 1, dims.s, dims.s});
    h = conv2.forward(t, h);
    h = bn2.forward(t, h, training, update_stats);
    h = relu(h);
    h = adaptive_avg_pool2d(h, dims.pool_p);
    h = reshape(h, {n, dims.fc_in});
    h = fc.forward(t, h);
    return relu(h);
}

void ConvEncoderTrunk::collect(std::vector<Parameter*>& ps) {
    for (std::size_t i = 0; i < conv3.size(); ++i) {
        conv3[i].collect(ps);
        bn3[i].collect(ps);
    }
    conv2.collect(ps);
    bn2.collect(ps);
    fc.collect(ps);
}

void ConvEncoderTrunk::collect_buffers(std::vector<Tensor*>& bs) {
    for (auto& bn : bn3) bn.collect_buffers(bs);
    bn2.collect_buffers(bs);
}

void ConvDecoder::build(const BackboneConfig& c, int s_, int out_depth_, Rng& rng,
                        const std::string& prefix) {
    cfg = c;
    s = s_;
    out_depth = out_depth_;
    dims = compute_backbone_dims(c, s, out_depth);
    const int p = dims.pool_p;
    fc1.init(c.fc_hidden, c.latent_dim, rng, prefix + ".fc1");
    fc2.init(dims.fc_in, c.fc_hidden, rng, prefix + ".fc2");

    if (p == 1) {
        up_stride = 1;
        up_k = s;
    } else {
        up_stride = (s - 1) / (p - 1);
        up_k = s - (p - 1) * up_stride;
    }
    ConvGeom gu;
    gu.in_ch = c.conv2d_out;
    gu.out_ch = dims.fold_ch;
    gu.kd = 1;
    gu.kh = up_k;
    gu.kw = up_k;
    gu.sh = up_stride;
    gu.sw = up_stride;
    up2d.init(gu, rng, prefix + ".up2d");
    const bool up_is_last = c.conv3d.empty();
    if (!up_is_last) bn_up.init(dims.fold_ch, prefix + ".bn_up");

    tconv3.clear();
    bn_t3.clear();
    const std::size_t L = c.conv3d.size();
    for (std::size_t j = 0; j < L; ++j) {
        // Reverse of the encoder chain: channels g_L -> g_{L-1} -> ... -> 1.
        const std::size_t enc_i = L - 1 - j;
        ConvGeom g;
        g.in_ch = c.conv3d[enc_i].out_ch;
        g.out_ch = enc_i == 0 ? 1 : c.conv3d[enc_i - 1].out_ch;
        g.kd = dims.kd_eff[enc_i];
        g.kh = odd_clamp(c.conv3d[enc_i].kh, s);
        g.kw = odd_clamp(c.conv3d[enc_i].kw, s);
        g.ph = g.kh / 2;
        g.pw = g.kw / 2;
        ConvTLayer layer;
        layer.init(g, rng, prefix + ".tconv3d" + std::to_string(j));
        tconv3.push_back(std::move(layer));
        if (j + 1 < L) {
            BatchNormLayer bn;
            bn.init(g.out_ch, prefix + ".bn_t3d" + std::to_string(j));
            bn_t3.push_back(std::move(bn));
        }
    }
}

Var ConvDecoder::forward(Tape& t, Var z, bool training, bool update_stats) {
    const int n = z.val().dim(0);
    Var h = relu(fc1.forward(t, z));
    h = relu(fc2.forward(t, h));
    h = reshape(h, {n, cfg.conv2d_out, 1, dims.pool_p, dims.pool_p});
    h = up2d.forward(t, h);
    const bool up_is_last = cfg.conv3d.empty();
    if (!up_is_last) {
        h = bn_up.forward(t, h, training, update_stats);
        h = relu(h);
    }
    const int d_last = cfg.conv3d.empty() ? out_depth : dims.depth_chain.back();
    const int ch_last = cfg.conv3d.empty() ? 1 : cfg.conv3d.back().out_ch;
    h = reshape(h, {n, ch_last, d_last, s, s});
    for (std::size_t j = 0; j < tconv3.size(); ++j) {
        h = tconv3[j].forward(t, h);
        if (j + 1 < tconv3.size()) {
            h = bn_t3[j].forward(t, h, training, update_stats);
            h = relu(h);
        }
    }
    return reshape(h, {n, 1, out_depth, s, s});
}

void ConvDecoder::collect(std::vector<Parameter*>& ps) {
    fc1.collect(ps);
    fc2.collect(ps);
    up2d.collect(ps);
    if (!cfg.conv3d.empty()) bn_up.collect(ps);
    for (std::size_t j = 0; j < tconv3.size(); ++j) {
        tconv3[j].collect(ps);
        if (j < bn_t3.size()) bn_t3[j].collect(ps);
    }
}

void ConvDecoder::collect_buffers(std::vector<Tensor*>& bs) {
    if (!cfg.conv3d.empty()) bn_up.collect_buffers(bs);
    for (auto& bn : bn_t3) bn.collect_buffers(bs);
}

void copy_state(const std::vector<Parameter*>& src_p, const std::vector<Tensor*>& src_b,
                std::vector<Parameter*>& dst_p, std::vector<Tensor*>& dst_b) {
    if (src_p.size() != dst_p.size() || src_b.size() != dst_b.size()) {
        throw ArgumentError("copy_state: mismatched module structure");
    }
    for (std::size_t i = 0; i < src_p.size(); ++i) {
        if (!src_p[i]->value.same_shape(dst_p[i]->value)) {
            throw ArgumentError("copy_state: parameter shape mismatch at " + src_p[i]->name);
        }
        dst_p[i]->value = src_p[i]->value;
    }
    for (std::size_t i = 0; i < src_b.size(); ++i) *dst_b[i] = *src_b[i];
}

}  // namespace crossview
