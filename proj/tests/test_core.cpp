#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crossview/autodiff.hpp"
#include "crossview/errors.hpp"
#include "crossview/nn.hpp"
#include "crossview/optim.hpp"
#include "crossview/rng.hpp"
#include "testutil.hpp"

using namespace crossview;
using testutil::fd_max_rel_err;
using testutil::rand_tensor;

TEST_CASE("tensor basics") {
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.dim(1) == 3);
    Tensor r = t.reshaped({3, 2});
    CHECK(r[4] == 5);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ArgumentError);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), ArgumentError);
    CHECK(t.all_finite());
    t[0] = std::nan("");
    CHECK(!t.all_finite());
}

TEST_CASE("rng determinism and moments") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng r(7);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
    Rng u(9);
    for (int i = 0; i < 1000; ++i) {
        const auto v = u.uniform_int(13);
        CHECK(v >= 0);
        CHECK(v < 13);
    }
    CHECK(derive_seed(1, "vae") != derive_seed(1, "aae"));
    CHECK(derive_seed(1, "vae") == derive_seed(1, "vae"));
}

namespace {

// Builds loss = sum(c .* f(inputs)) and checks its gradients by FD.
double check_op(const std::function<Var(Tape&, std::vector<Var>&)>& op,
                std::vector<Parameter>& inputs, const Tensor& weights) {
    auto fwd = [&]() {
        Tape t;
        NoGradGuard ng(t);
        std::vector<Var> vars;
        for (auto& p : inputs) vars.push_back(t.param(p));
        Var y = op(t, vars);
        Var c = t.constant(weights);
        return sum_all(mul(y, c)).val()[0];
    };
    {
        Tape t;
        std::vector<Var> vars;
        for (auto& p : inputs) {
            p.zero_grad();
            vars.push_back(t.param(p));
        }
        Var y = op(t, vars);
        Var c = t.constant(weights);
        t.backward(sum_all(mul(y, c)));
    }
    std::vector<Parameter*> ps;
    for (auto& p : inputs) ps.push_back(&p);
    return fd_max_rel_err(ps, fwd, 1e-6);
}

}  // namespace

TEST_CASE("elementwise op gradients match finite differences") {
    Rng rng(11);
    auto mk = [&](std::vector<int> s, double scale = 1.0, double offset = 0.0) {
        Tensor t = rand_tensor(s, rng, scale);
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] += offset;
        return Parameter(t, "x");
    };
    const Tensor w = rand_tensor({3, 4}, rng);

    std::vector<std::pair<const char*, std::function<Var(Tape&, std::vector<Var>&)>>> binary = {
        {"add", [](Tape&, std::vector<Var>& v) { return add(v[0], v[1]); }},
        {"sub", [](Tape&, std::vector<Var>& v) { return sub(v[0], v[1]); }},
        {"mul", [](Tape&, std::vector<Var>& v) { return mul(v[0], v[1]); }},
        {"divide", [](Tape&, std::vector<Var>& v) { return divide(v[0], v[1]); }},
    };
    for (auto& [name, op] : binary) {
        CAPTURE(name);
        std::vector<Parameter> in;
        in.push_back(mk({3, 4}));
        in.push_back(mk({3, 4}, 0.5, 2.0));  // denominator bounded away from 0
        CHECK(check_op(op, in, w) < 1e-6);
    }

    std::vector<std::pair<const char*, std::function<Var(Tape&, std::vector<Var>&)>>> unary = {
        {"neg", [](Tape&, std::vector<Var>& v) { return neg(v[0]); }},
        {"scale", [](Tape&, std::vector<Var>& v) { return scale(v[0], 2.5); }},
        {"add_const", [](Tape&, std::vector<Var>& v) { return add_const(v[0], -1.5); }},
        {"exp", [](Tape&, std::vector<Var>& v) { return exp_op(v[0]); }},
        {"relu", [](Tape&, std::vector<Var>& v) { return relu(v[0]); }},
        {"leaky", [](Tape&, std::vector<Var>& v) { return leaky_relu(v[0], 0.2); }},
        {"reshape", [](Tape&, std::vector<Var>& v) { return reshape(v[0], {4, 3}); }},
        {"transpose", [](Tape&, std::vector<Var>& v) { return transpose2d(v[0]); }},
        {"softmax", [](Tape&, std::vector<Var>& v) { return row_softmax(v[0]); }},
    };
    for (auto& [name, op] : unary) {
        CAPTURE(name);
        std::vector<Parameter> in;
        in.push_back(mk({3, 4}, 1.0, 0.01));  // nudge off relu kink
        const bool flipped = name == std::string("transpose") || name == std::string("reshape");
        Tensor wt = flipped ? rand_tensor({4, 3}, rng) : w;
        CHECK(check_op(op, in, wt) < 1e-6);
    }

    {
        std::vector<Parameter> in;
        in.push_back(mk({3, 4}, 0.5, 2.0));  // positive domain for log/sqrt
        auto logop = [](Tape&, std::vector<Var>& v) { return log_op(v[0]); };
        auto sqrtop = [](Tape&, std::vector<Var>& v) { return sqrt_op(v[0]); };
        CHECK(check_op(logop, in, w) < 1e-6);
        CHECK(check_op(sqrtop, in, w) < 1e-6);
        auto clamped = [](Tape&, std::vector<Var>& v) { return clamp(v[0], 1.0, 3.0); };
        CHECK(check_op(clamped, in, w) < 1e-4);
        auto cmin = [](Tape&, std::vector<Var>& v) { return clamp_min(v[0], 1.0); };
        CHECK(check_op(cmin, in, w) < 1e-4);
    }
}

TEST_CASE("matmul / affine / reduction gradients") {
    Rng rng(13);
    {
        std::vector<Parameter> in;
        in.emplace_back(rand_tensor({3, 5}, rng), "a");
        in.emplace_back(rand_tensor({5, 4}, rng), "b");
        auto op = [](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); };
        CHECK(check_op(op, in, rand_tensor({3, 4}, rng)) < 1e-6);
    }
    {
        std::vector<Parameter> in;
        in.emplace_back(rand_tensor({6, 3}, rng), "a");
        in.emplace_back(rand_tensor({6, 4}, rng), "b");
        auto op = [](Tape&, std::vector<Var>& v) { return matmul_tn(v[0], v[1]); };
        CHECK(check_op(op, in, rand_tensor({3, 4}, rng)) < 1e-6);
    }
    {
        std::vector<Parameter> in;
        in.emplace_back(rand_tensor({4, 5}, rng), "x");
        in.emplace_back(rand_tensor({3, 5}, rng), "w");
        in.emplace_back(rand_tensor({3}, rng), "b");
        auto op = [](Tape&, std::vector<Var>& v) { return affine(v[0], v[1], v[2]); };
        CHECK(check_op(op, in, rand_tensor({4, 3}, rng)) < 1e-6);
    }
    {
        std::vector<Parameter> in;
        in.emplace_back(rand_tensor({4, 5}, rng), "x");
        for (auto* op : {&row_sum, &col_sum}) {
            auto f = [op](Tape&, std::vector<Var>& v) { return (*op)(v[0]); };
            Tensor w = op == &row_sum ? rand_tensor({4}, rng) : rand_tensor({5}, rng);
            CHECK(check_op(f, in, w) < 1e-6);
        }
        auto fsum = [](Tape&, std::vector<Var>& v) { return sum_all(v[0]); };
        auto fmean = [](Tape&, std::vector<Var>& v) { return mean_all(v[0]); };
        CHECK(check_op(fsum, in, Tensor::scalar(1.3)) < 1e-6);
        CHECK(check_op(fmean, in, Tensor::scalar(-0.7)) < 1e-6);
    }
    {
        std::vector<Parameter> in;
        in.emplace_back(rand_tensor({5}, rng), "v");
        auto fr = [](Tape&, std::vector<Var>& v) { return broadcast_row(v[0], 3); };
        CHECK(check_op(fr, in, rand_tensor({3, 5}, rng)) < 1e-6);
        std::vector<Parameter> in2;
        in2.emplace_back(rand_tensor({3}, rng), "v");
        auto fc = [](Tape&, std::vector<Var>& v) { return broadcast_col(v[0], 5); };
        CHECK(check_op(fc, in2, rand_tensor({3, 5}, rng)) < 1e-6);
    }
    {
        std::vector<Parameter> in;
        in.emplace_back(rand_tensor({3, 4}, rng), "a");
        Tensor s = Tensor::scalar(1.7);
        in.emplace_back(s, "s");
        auto fdiv = [](Tape&, std::vector<Var>& v) { return div_by_scalar(v[0], v[1]); };
        auto fmul = [](Tape&, std::vector<Var>& v) { return mul_by_scalar(v[0], v[1]); };
        CHECK(check_op(fdiv, in, rand_tensor({3, 4}, rng)) < 1e-6);
        CHECK(check_op(fmul, in, rand_tensor({3, 4}, rng)) < 1e-6);
    }
    {
        std::vector<Parameter> in;
        in.emplace_back(rand_tensor({3, 4}, rng), "p");
        in.emplace_back(rand_tensor({3, 4}, rng), "t");
        auto f = [](Tape&, std::vector<Var>& v) { return mse(v[0], v[1]); };
        CHECK(check_op(f, in, Tensor::scalar(2.0)) < 1e-6);
    }
    {
        std::vector<Parameter> in;
        in.emplace_back(rand_tensor({3, 4}, rng), "mu");
        in.emplace_back(rand_tensor({3, 4}, rng, 0.5), "logvar");
        auto f = [](Tape&, std::vector<Var>& v) { return kl_gaussian(v[0], v[1]); };
        CHECK(check_op(f, in, Tensor::scalar(1.0)) < 1e-6);
    }
}

namespace {

// Direct convolution by definition, used as the value oracle for the
// im2col/GEMM path.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeom& g) {
    const int N = x.dim(0), D = x.dim(2), H = x.dim(3), W = x.dim(4);
    const int Do = D - g.kd + 1;
    const int Ho = (H + 2 * g.ph - g.kh) / g.sh + 1;
    const int Wo = (W + 2 * g.pw - g.kw) / g.sw + 1;
    Tensor y({N, g.out_ch, Do, Ho, Wo});
    auto xat = [&](int n, int c, int d, int h, int ww) {
        if (h < 0 || h >= H || ww < 0 || ww >= W) return 0.0;
        return x[((((std::int64_t)n * g.in_ch + c) * D + d) * H + h) * W + ww];
    };
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < g.out_ch; ++oc)
            for (int d = 0; d < Do; ++d)
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        double s = b[oc];
                        for (int ci = 0; ci < g.in_ch; ++ci)
                            for (int zd = 0; zd < g.kd; ++zd)
                                for (int zh = 0; zh < g.kh; ++zh)
                                    for (int zw = 0; zw < g.kw; ++zw)
                                        s += xat(n, ci, d + zd, oh * g.sh + zh - g.ph,
                                                 ow * g.sw + zw - g.pw) *
                                             w[((((std::int64_t)oc * g.in_ch + ci) * g.kd + zd) *
                                                    g.kh +
                                                zh) *
                                                   g.kw +
                                               zw];
                        y[(((((std::int64_t)n * g.out_ch) + oc) * Do + d) * Ho + oh) * Wo + ow] = s;
                    }
    return y;
}

// Transpose convolution by scatter, straight from the definition.
Tensor naive_conv_t(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeom& g) {
    const int N = x.dim(0), D = x.dim(2), H = x.dim(3), W = x.dim(4);
    const int Do = D + g.kd - 1;
    const int Ho = (H - 1) * g.sh + g.kh - 2 * g.ph;
    const int Wo = (W - 1) * g.sw + g.kw - 2 * g.pw;
    Tensor y({N, g.out_ch, Do, Ho, Wo});
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < g.out_ch; ++oc)
            for (std::int64_t i = 0; i < (std::int64_t)Do * Ho * Wo; ++i)
                y[((std::int64_t)n * g.out_ch + oc) * Do * Ho * Wo + i] = b[oc];
    for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < g.in_ch; ++ci)
            for (int d = 0; d < D; ++d)
                for (int h = 0; h < H; ++h)
                    for (int ww = 0; ww < W; ++ww) {
                        const double xv =
                            x[((((std::int64_t)n * g.in_ch + ci) * D + d) * H + h) * W + ww];
                        for (int oc = 0; oc < g.out_ch; ++oc)
                            for (int zd = 0; zd < g.kd; ++zd)
                                for (int zh = 0; zh < g.kh; ++zh)
                                    for (int zw = 0; zw < g.kw; ++zw) {
                                        const int od = d + zd;
                                        const int oh = h * g.sh + zh - g.ph;
                                        const int ow = ww * g.sw + zw - g.pw;
                                        if (oh < 0 || oh >= Ho || ow < 0 || ow >= Wo) continue;
                                        y[((((std::int64_t)n * g.out_ch + oc) * Do + od) * Ho +
                                           oh) *
                                              Wo +
                                          ow] +=
                                            xv * w[((((std::int64_t)ci * g.out_ch + oc) * g.kd +
                                                     zd) *
                                                        g.kh +
                                                    zh) *
                                                       g.kw +
                                                   zw];
                                    }
                    }
    return y;
}

}  // namespace

TEST_CASE("conv forward matches naive oracle and gradients match FD") {
    Rng rng(17);
    std::vector<ConvGeom> geoms;
    {
        ConvGeom g;  // 3-D, valid depth, same-padded space
        g.in_ch = 2; g.out_ch = 3; g.kd = 3; g.kh = 3; g.kw = 3; g.ph = 1; g.pw = 1;
        geoms.push_back(g);
    }
    {
        ConvGeom g;  // 2-D with stride
        g.in_ch = 3; g.out_ch = 2; g.kd = 1; g.kh = 3; g.kw = 3; g.ph = 0; g.pw = 0; g.sh = 2; g.sw = 2;
        geoms.push_back(g);
    }
    {
        ConvGeom g;  // 1x1x1
        g.in_ch = 2; g.out_ch = 4;
        geoms.push_back(g);
    }
    for (std::size_t gi = 0; gi < geoms.size(); ++gi) {
        CAPTURE(gi);
        const ConvGeom& g = geoms[gi];
        const int D = g.kd == 1 ? 1 : 5;
        Parameter x(rand_tensor({2, g.in_ch, D, 7, 7}, rng), "x");
        Parameter w(rand_tensor({g.out_ch, g.in_ch, g.kd, g.kh, g.kw}, rng, 0.5), "w");
        Parameter b(rand_tensor({g.out_ch}, rng, 0.2), "b");

        Tape t;
        Var y = conv_op(t.param(x), t.param(w), t.param(b), g);
        Tensor oracle = naive_conv(x.value, w.value, b.value, g);
        REQUIRE(y.val().same_shape(oracle));
        for (std::int64_t i = 0; i < oracle.size(); ++i) {
            CHECK(y.val()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
        }

        std::vector<Parameter> in;
        in.push_back(x);
        in.push_back(w);
        in.push_back(b);
        auto op = [g](Tape&, std::vector<Var>& v) { return conv_op(v[0], v[1], v[2], g); };
        CHECK(check_op(op, in, rand_tensor(oracle.shape(), rng)) < 1e-5);
    }
}

TEST_CASE("transpose conv matches naive scatter and gradients match FD") {
    Rng rng(19);
    std::vector<ConvGeom> geoms;
    {
        ConvGeom g;  // depth-growing 3-D
        g.in_ch = 3; g.out_ch = 2; g.kd = 3; g.kh = 3; g.kw = 3; g.ph = 1; g.pw = 1;
        geoms.push_back(g);
    }
    {
        ConvGeom g;  // strided 2-D upsample
        g.in_ch = 2; g.out_ch = 3; g.kd = 1; g.kh = 3; g.kw = 3; g.sh = 2; g.sw = 2;
        geoms.push_back(g);
    }
    for (std::size_t gi = 0; gi < geoms.size(); ++gi) {
        CAPTURE(gi);
        const ConvGeom& g = geoms[gi];
        const int D = g.kd == 1 ? 1 : 3;
        Parameter x(rand_tensor({2, g.in_ch, D, 4, 4}, rng), "x");
        Parameter w(rand_tensor({g.in_ch, g.out_ch, g.kd, g.kh, g.kw}, rng, 0.5), "w");
        Parameter b(rand_tensor({g.out_ch}, rng, 0.2), "b");

        Tape t;
        Var y = conv_transpose_op(t.param(x), t.param(w), t.param(b), g);
        Tensor oracle = naive_conv_t(x.value, w.value, b.value, g);
        REQUIRE(y.val().same_shape(oracle));
        for (std::int64_t i = 0; i < oracle.size(); ++i) {
            CHECK(y.val()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
        }

        std::vector<Parameter> in{x, w, b};
        auto op = [g](Tape&, std::vector<Var>& v) {
            return conv_transpose_op(v[0], v[1], v[2], g);
        };
        CHECK(check_op(op, in, rand_tensor(oracle.shape(), rng)) < 1e-5);
    }
}

TEST_CASE("adaptive pool and batch norm gradients") {
    Rng rng(23);
    {
        std::vector<Parameter> in;
        in.emplace_back(rand_tensor({2, 3, 1, 7, 7}, rng), "x");
        auto op = [](Tape&, std::vector<Var>& v) { return adaptive_avg_pool2d(v[0], 3); };
        CHECK(check_op(op, in, rand_tensor({2, 3, 1, 3, 3}, rng)) < 1e-6);
    }
    for (bool training : {true, false}) {
        CAPTURE(training);
        Tensor rmean = rand_tensor({3}, rng, 0.1);
        Tensor rvar = Tensor::full({3}, 1.0);
        std::vector<Parameter> in;
        in.emplace_back(rand_tensor({4, 3, 1, 2, 2}, rng), "x");
        in.emplace_back(Tensor::full({3}, 1.0), "gamma");
        in.emplace_back(rand_tensor({3}, rng, 0.1), "beta");
        auto op = [&rmean, &rvar, training](Tape&, std::vector<Var>& v) {
            Tensor rm = rmean, rv = rvar;  // keep stats fixed across FD evaluations
            return batch_norm(v[0], v[1], v[2], rm, rv, training, false, 0.1, 1e-5);
        };
        CHECK(check_op(op, in, rand_tensor({4, 3, 1, 2, 2}, rng)) < 1e-5);
    }
}

TEST_CASE("batch norm normalizes and tracks running stats") {
    Rng rng(29);
    BatchNormLayer bn;
    bn.init(2, "bn");
    Tensor x = rand_tensor({8, 2, 1, 3, 3}, rng, 2.0);
    Tape t;
    Var y = bn.forward(t, t.constant(x), true, true);
    // per-channel mean ~0, var ~1 after normalization
    for (int c = 0; c < 2; ++c) {
        double s = 0, s2 = 0;
        int cnt = 0;
        for (int n = 0; n < 8; ++n) {
            for (int r = 0; r < 9; ++r) {
                const double v = y.val()[((std::int64_t)n * 2 + c) * 9 + r];
                s += v;
                s2 += v * v;
                ++cnt;
            }
        }
        CHECK(std::abs(s / cnt) < 1e-10);
        CHECK(std::abs(s2 / cnt - 1.0) < 1e-3);  // eps shifts variance slightly
    }
    CHECK(bn.running_mean[0] != 0.0);  // updated
    // eval mode must not touch stats
    const Tensor rm = bn.running_mean;
    Tape t2;
    bn.forward(t2, t2.constant(x), false, false);
    for (int c = 0; c < 2; ++c) CHECK(bn.running_mean[c] == rm[c]);
}

TEST_CASE("no-grad guard blocks parameter gradients") {
    Rng rng(31);
    Parameter p(rand_tensor({3, 3}, rng), "p");
    p.zero_grad();
    Tape t;
    Var loss;
    {
        NoGradGuard ng(t);
        loss = sum_all(mul(t.param(p), t.param(p)));
    }
    t.backward(loss);
    for (int i = 0; i < 9; ++i) CHECK(p.grad[i] == 0.0);
}

TEST_CASE("gradients accumulate across shared uses") {
    Parameter p(Tensor::from({1}, {3.0}), "p");
    p.zero_grad();
    Tape t;
    Var x = t.param(p);
    Var y = add(mul(x, x), x);  // x^2 + x, d/dx = 2x + 1 = 7
    t.backward(sum_all(y));
    CHECK(p.grad[0] == doctest::Approx(7.0));
}

TEST_CASE("adam matches hand-computed reference") {
    Parameter p(Tensor::from({1}, {1.0}), "p");
    Adam opt({&p}, 0.1, 0.0);
    // two steps with constant gradient 2
    double m = 0, v = 0, w = 1.0;
    for (int t = 1; t <= 2; ++t) {
        p.zero_grad();
        p.grad[0] = 2.0;
        opt.step();
        m = 0.9 * m + 0.1 * 2.0;
        v = 0.999 * v + 0.001 * 4.0;
        const double mhat = m / (1 - std::pow(0.9, t));
        const double vhat = v / (1 - std::pow(0.999, t));
        w -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(p.value[0] == doctest::Approx(w).epsilon(1e-12));
    }
}

TEST_CASE("backbone forward is deterministic and decoder restores shape") {
    BackboneConfig cfg;
    cfg.conv3d = {{2, 3, 3, 3}, {3, 3, 3, 3}};
    cfg.conv2d_out = 4;
    cfg.pool = 3;
    cfg.fc_hidden = 8;
    cfg.latent_dim = 5;
    Rng rng(37);
    ConvEncoderTrunk enc;
    enc.build(cfg, 7, 6, rng, "enc");
    ConvDecoder dec;
    dec.build(cfg, 7, 4, rng, "dec");

    Rng drng(41);
    Tensor x = rand_tensor({3, 1, 6, 7, 7}, drng);
    Tape t1, t2;
    Var h1 = enc.forward(t1, t1.constant(x), true, false);
    Var h2 = enc.forward(t2, t2.constant(x), true, false);
    REQUIRE(h1.val().shape() == std::vector<int>{3, 8});
    for (std::int64_t i = 0; i < h1.val().size(); ++i) CHECK(h1.val()[i] == h2.val()[i]);

    Tensor z = rand_tensor({3, 5}, drng);
    Tape t3;
    Var out = dec.forward(t3, t3.constant(z), true, false);
    CHECK(out.val().shape() == std::vector<int>{3, 1, 4, 7, 7});
}

TEST_CASE("encoder-decoder miniature gradcheck") {
    BackboneConfig cfg;
    cfg.conv3d = {{2, 3, 3, 3}};
    cfg.conv2d_out = 3;
    cfg.pool = 2;
    cfg.fc_hidden = 6;
    cfg.latent_dim = 4;
    Rng rng(43);
    ConvEncoderTrunk enc;
    enc.build(cfg, 5, 4, rng, "enc");
    AffineLayer head;
    head.init(4, 6, rng, "head");
    ConvDecoder dec;
    dec.build(cfg, 5, 4, rng, "dec");

    Rng drng(47);
    Tensor x = rand_tensor({2, 1, 4, 5, 5}, drng);
    Tensor target = rand_tensor({2, 1, 4, 5, 5}, drng);

    std::vector<Parameter*> params;
    enc.collect(params);
    head.collect(params);
    dec.collect(params);

    auto fwd = [&](bool grad) {
        Tape t;
        std::unique_ptr<NoGradGuard> ng;
        if (!grad) ng = std::make_unique<NoGradGuard>(t);
        Var h = enc.forward(t, t.constant(x), true, false);
        Var z = head.forward(t, h);
        Var y = dec.forward(t, z, true, false);
        Var loss = mse(y, t.constant(target));
        if (grad) t.backward(loss);
        return loss.val()[0];
    };
    zero_grads(params);
    fwd(true);
    CHECK(fd_max_rel_err(params, [&] { return fwd(false); }, 1e-5) < 1e-4);
}
