#include "crossview/contrast.hpp"

#include <cmath>
#include <numeric>

#include "crossview/errors.hpp"
#include "crossview/optim.hpp"
#include "crossview/rng.hpp"

namespace crossview {

PairingMode pairing_from_name(const std::string& name) {
    if (name == "cross" || name == "cross_view") return PairingMode::cross_view;
    if (name == "same" || name == "same_view") return PairingMode::same_view;
    throw ArgumentError("unknown pairing mode \"" + name + "\" (expected cross|same)");
}

std::string pairing_name(PairingMode m) {
    return m == PairingMode::cross_view ? "cross" : "same";
}

void ContrastEncoder::build(int code_dim_, const ContrastArchConfig& a, Rng& rng,
                            const std::string& prefix) {
    arch = a;
    code_dim = code_dim_;
    if (a.mlp_encoder) {
        out.init(a.feature_dim, code_dim, rng, prefix + ".out");
        return;
    }
    if (code_dim % 16 == 0) {
        map_h = map_w = 4;
    } else if (code_dim % 4 == 0) {
        map_h = map_w = 2;
    } else {
        map_h = map_w = 1;
    }
    map_c = code_dim / (map_h * map_w);

    auto tgeom = [](int ic, int oc, int k) {
        ConvGeom g;
        g.in_ch = ic;
        g.out_ch = oc;
        g.kh = k;
        g.kw = k;
        return g;
    };
    int sp = map_h;
    t1.init(tgeom(map_c, a.tconv1_ch, 3), rng, prefix + ".t1");
    sp += 2;
    bn_t1.init(a.tconv1_ch, prefix + ".bn_t1");
    t2.init(tgeom(a.tconv1_ch, a.tconv2_ch, 3), rng, prefix + ".t2");
    sp += 2;
    bn_t2.init(a.tconv2_ch, prefix + ".bn_t2");

    spatial_chain.clear();
    convs.clear();
    bn_c.clear();
    int in_ch = a.tconv2_ch;
    for (int i = 0; i < 3; ++i) {
        const int k = std::min(3, sp);
        ConvGeom g;
        g.in_ch = in_ch;
        g.out_ch = a.conv_ch;
        g.kh = k;
        g.kw = k;
        ConvLayer layer;
        layer.init(g, rng, prefix + ".conv" + std::to_string(i));
        convs.push_back(std::move(layer));
        BatchNormLayer bn;
        bn.init(a.conv_ch, prefix + ".bn_c" + std::to_string(i));
        bn_c.push_back(std::move(bn));
        sp = sp - k + 1;
        spatial_chain.push_back(sp);
        in_ch = a.conv_ch;
    }
    flat_dim = a.conv_ch * sp * sp;
    out.init(a.feature_dim, flat_dim, rng, prefix + ".out");
}

Var ContrastEncoder::forward(Tape& t, Var x, bool training, bool update_stats) {
    if (x.val().rank() != 2 || x.val().dim(1) != code_dim) {
        throw ArgumentError("contrast encoder: expected [n," + std::to_string(code_dim) +
                            "], got " + shape_str(x.val().shape()));
    }
    const int n = x.val().dim(0);
    if (arch.mlp_encoder) return out.forward(t, x);
    Var h = reshape(x, {n, map_c, 1, map_h, map_w});
    h = relu(bn_t1.forward(t, t1.forward(t, h), training, update_stats));
    h = relu(bn_t2.forward(t, t2.forward(t, h), training, update_stats));
    for (std::size_t i = 0; i < convs.size(); ++i) {
        h = relu(bn_c[i].forward(t, convs[i].forward(t, h), training, update_stats));
    }
    h = reshape(h, {n, flat_dim});
    return out.forward(t, h);
}

void ContrastEncoder::collect(std::vector<Parameter*>& ps) {
    if (!arch.mlp_encoder) {
        t1.collect(ps);
        bn_t1.collect(ps);
        t2.collect(ps);
        bn_t2.collect(ps);
        for (std::size_t i = 0; i < convs.size(); ++i) {
            convs[i].collect(ps);
            bn_c[i].collect(ps);
        }
    }
    out.collect(ps);
}

void ContrastEncoder::collect_buffers(std::vector<Tensor*>& bs) {
    if (arch.mlp_encoder) return;
    bn_t1.collect_buffers(bs);
    bn_t2.collect_buffers(bs);
    for (auto& bn : bn_c) bn.collect_buffers(bs);
}

void ContrastMlp::build(int in_dim, int hidden, int out_dim, Rng& rng,
                        const std::string& prefix) {
    a1.init(hidden, in_dim, rng, prefix + ".a1");
    bn.init(hidden, prefix + ".bn");
    a2.init(out_dim, hidden, rng, prefix + ".a2");
}

Var ContrastMlp::forward(Tape& t, Var x, bool training, bool update_stats) {
    Var h = a1.forward(t, x);
    h = relu(bn.forward(t, h, training, update_stats));
    return a2.forward(t, h);
}

void ContrastMlp::collect(std::vector<Parameter*>& ps) {
    a1.collect(ps);
    bn.collect(ps);
    a2.collect(ps);
}

void ContrastMlp::collect_buffers(std::vector<Tensor*>& bs) {
    bn.collect_buffers(bs);
}

void ContrastNets::build(int code_dim_, const ContrastArchConfig& a, std::uint64_t seed) {
    arch = a;
    code_dim = code_dim_;
    Rng rng(seed);
    online_enc.build(code_dim_, a, rng, "online.encoder");
    online_proj.build(a.feature_dim, a.proj_hidden, a.proj_dim, rng, "online.projector");
    online_pred.build(a.proj_dim, a.proj_hidden, a.proj_dim, rng, "online.predictor");
    // Target starts as an exact copy of the online branch.
    Rng rng2(seed);  // same stream layout; values overwritten by copy below
    target_enc.build(code_dim_, a, rng2, "target.encoder");
    target_proj.build(a.feature_dim, a.proj_hidden, a.proj_dim, rng2, "target.projector");
    std::vector<Tensor*> src = online_state_partial_();
    std::vector<Tensor*> dst = target_state();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = *src[i];
}

std::vector<Parameter*> ContrastNets::online_parameters() {
    std::vector<Parameter*> ps;
    online_enc.collect(ps);
    online_proj.collect(ps);
    online_pred.collect(ps);
    return ps;
}

std::vector<Parameter*> ContrastNets::target_parameters() {
    std::vector<Parameter*> ps;
    target_enc.collect(ps);
    target_proj.collect(ps);
    return ps;
}

std::vector<Tensor*> ContrastNets::online_state() {
    std::vector<Tensor*> ts = online_state_partial_();
    std::vector<Parameter*> pred;
    online_pred.collect(pred);
    for (Parameter* p : pred) ts.push_back(&p->value);
    std::vector<Tensor*> bs;
    online_pred.collect_buffers(bs);
    for (Tensor* b : bs) ts.push_back(b);
    return ts;
}

std::vector<Tensor*> ContrastNets::target_state() {
    std::vector<Tensor*> ts;
    std::vector<Parameter*> ps;
    target_enc.collect(ps);
    target_proj.collect(ps);
    for (Parameter* p : ps) ts.push_back(&p->value);
    std::vector<Tensor*> bs;
    target_enc.collect_buffers(bs);
    target_proj.collect_buffers(bs);
    for (Tensor* b : bs) ts.push_back(b);
    return ts;
}

// Encoder+projector state in the same order as target_state().
std::vector<Tensor*> ContrastNets::online_state_partial_() {
    std::vector<Tensor*> ts;
    std::vector<Parameter*> ps;
    online_enc.collect(ps);
    online_proj.collect(ps);
    for (Parameter* p : ps) ts.push_back(&p->value);
    std::vector<Tensor*> bs;
    online_enc.collect_buffers(bs);
    online_proj.collect_buffers(bs);
    for (Tensor* b : bs) ts.push_back(b);
    return ts;
}

// ---- loss operations ----

Var joint_probability_op(Var z1, Var z2) {
    if (z1.val().rank() != 2 || z2.val().rank() != 2) {
        throw ArgumentError("joint_probability: inputs must be [n,d]");
    }
    if (!z1.val().same_shape(z2.val())) {
        throw ArgumentError("joint_probability: batch shapes differ");
    }
    const int n = z1.val().dim(0), d = z1.val().dim(1);
    if (n < 1) throw ArgumentError("joint_probability: empty batch");
    if (d < 2) throw ArgumentError("joint_probability: feature dimension must be >= 2");
    Var s1 = row_softmax(z1);
    Var s2 = row_softmax(z2);
    Var p_raw = scale(matmul_tn(s1, s2), 1.0 / static_cast<double>(n));
    Var p_sym = scale(add(p_raw, transpose2d(p_raw)), 0.5);
    return div_by_scalar(p_sym, sum_all(p_sym));
}

Var mutual_info_loss_op(Var p, double alpha) {
    const int d = p.val().dim(0);
    Var log_p = log_op(clamp_min(p, 1e-12));
    Var pi = row_sum(p);
    Var pj = col_sum(p);
    Var log_pi = log_op(clamp_min(pi, 1e-12));
    Var log_pj = log_op(clamp_min(pj, 1e-12));
    // ln[P/(Pi^(a+1) Pj^(a+1))] = lnP - (a+1) lnPi(i) - (a+1) lnPj(j)
    Var inner = sub(log_p, scale(broadcast_col(log_pi, d), alpha + 1.0));
    inner = sub(inner, scale(broadcast_row(log_pj, d), alpha + 1.0));
    return neg(sum_all(mul(p, inner)));
}

Var conditional_loss_op(Var q1, Var t1, Var q2, Var t2) {
    auto cos_rows = [](Var a, Var b) {
        if (!a.val().same_shape(b.val()) || a.val().rank() != 2) {
            throw ArgumentError("conditional_loss: paired vectors must share [n,d]");
        }
        Var num = row_sum(mul(a, b));
        Var na = sqrt_op(row_sum(mul(a, a)));
        Var nb = sqrt_op(row_sum(mul(b, b)));
        for (std::int64_t i = 0; i < na.val().size(); ++i) {
            if (!(na.val()[i] > 0.0) || !(nb.val()[i] > 0.0)) {
                throw std::domain_error("conditional_loss: zero-norm vector");
            }
        }
        return divide(num, mul(na, nb));
    };
    Var c = add(cos_rows(q1, t1), cos_rows(q2, t2));
    return add_const(scale(mean_all(c), -2.0), 2.0);
}

JointDistribution joint_probability(const Tensor& z1, const Tensor& z2) {
    Tape t;
    NoGradGuard ng(t);
    Var p = joint_probability_op(t.constant(z1), t.constant(z2));
    JointDistribution jd;
    jd.P = p.val();
    jd.Pi = row_sum(p).val();
    jd.Pj = col_sum(p).val();
    return jd;
}

double mutual_info_loss(const JointDistribution& jd, double alpha) {
    Tape t;
    NoGradGuard ng(t);
    return mutual_info_loss_op(t.constant(jd.P), alpha).val()[0];
}

double conditional_loss(const Tensor& q1, const Tensor& t1, const Tensor& q2, const Tensor& t2) {
    Tape t;
    NoGradGuard ng(t);
    auto lift = [&](const Tensor& x) {
        return t.constant(x.rank() == 1 ? x.reshaped({1, x.dim(0)}) : x);
    };
    return conditional_loss_op(lift(q1), lift(t1), lift(q2), lift(t2)).val()[0];
}

double total_loss(double l_m, double l_c, double lambda) {
    return lambda * l_m + l_c;
}

void ema_update(const std::vector<Tensor*>& target, const std::vector<Tensor*>& online,
                double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ArgumentError("ema_update: tau must lie in [0,1]");
    if (target.size() != online.size()) {
        throw ArgumentError("ema_update: state lists differ in length");
    }
    for (std::size_t i = 0; i < target.size(); ++i) {
        Tensor& xi = *target[i];
        const Tensor& th = *online[i];
        if (!xi.same_shape(th)) throw ArgumentError("ema_update: tensor shape mismatch");
        for (std::int64_t k = 0; k < xi.size(); ++k) {
            xi[k] = tau * xi[k] + (1.0 - tau) * th[k];
        }
    }
}

namespace {

Tensor gather_rows(const Tensor& m, const std::vector<std::int64_t>& rows) {
    const int d = m.dim(1);
    Tensor out({static_cast<int>(rows.size()), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double* src = m.data() + rows[i] * d;
        double* dst = out.data() + static_cast<std::int64_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] = src[j];
    }
    return out;
}

}  // namespace

LossHistory train_contrast(ContrastNets& nets, const Tensor& vae_codes, const Tensor& aae_codes,
                           const ContrastConfig& cfg) {
    LossHistory hist;
    hist.columns = {"epoch", "l_m", "l_c", "total"};
    if (vae_codes.rank() != 2 || aae_codes.rank() != 2 ||
        !vae_codes.same_shape(aae_codes)) {
        throw ArgumentError("train_contrast: code sets must be row-aligned [n,d]");
    }
    if (cfg.epochs <= 0) return hist;
    const std::int64_t n = vae_codes.dim(0);
    if (n < 2) throw ArgumentError("train_contrast: need at least 2 code rows");

    Adam opt(nets.online_parameters(), cfg.lr, cfg.weight_decay);
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    std::vector<Tensor> snapshot;
    bool have_snapshot = false;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, "contrast-shuffle-" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);

        double sum_m = 0.0, sum_c = 0.0;
        std::int64_t seen = 0;
        for (std::int64_t start = 0; start < n; start += cfg.batch) {
            const std::int64_t bsz = std::min<std::int64_t>(cfg.batch, n - start);
            if (bsz < 2) continue;  // joint distribution needs a real batch
            std::vector<std::int64_t> rows(order.begin() + start, order.begin() + start + bsz);
            Tensor xv = gather_rows(vae_codes, rows);
            Tensor xa = gather_rows(aae_codes, rows);

            Tape t;
            Var f1 = nets.online_enc.forward(t, t.constant(xv), true, true);
            Var f2 = nets.online_enc.forward(t, t.constant(xa), true, true);
            Var l_m = mutual_info_loss_op(joint_probability_op(f1, f2), cfg.alpha);
            Var z1 = nets.online_proj.forward(t, f1, true, true);
            Var z2 = nets.online_proj.forward(t, f2, true, true);
            Var q1 = nets.online_pred.forward(t, z1, true, true);
            Var q2 = nets.online_pred.forward(t, z2, true, true);

            Tensor tv, ta;
            {
                NoGradGuard ng(t);
                Var f1p = nets.target_enc.forward(t, t.constant(xv), true, false);
                Var f2p = nets.target_enc.forward(t, t.constant(xa), true, false);
                tv = nets.target_proj.forward(t, f1p, true, false).val();
                ta = nets.target_proj.forward(t, f2p, true, false).val();
            }
            Var l_c = cfg.pairing == PairingMode::cross_view
                          ? conditional_loss_op(q1, t.constant(ta), q2, t.constant(tv))
                          : conditional_loss_op(q1, t.constant(tv), q2, t.constant(ta));
            Var loss = add(scale(l_m, cfg.lambda), l_c);

            const double m_v = l_m.val()[0], c_v = l_c.val()[0];
            if (!std::isfinite(m_v + c_v)) {
                throw NumericError("train_contrast: non-finite loss at epoch " +
                                   std::to_string(epoch) + " batch offset " +
                                   std::to_string(start) + " (l_m=" + std::to_string(m_v) +
                                   ", l_c=" + std::to_string(c_v) + ")");
            }
            opt.zero_grad();
            t.backward(loss);
            opt.step();
            ema_update(nets.target_state(), nets.online_state_partial_(), cfg.tau);

            sum_m += m_v * static_cast<double>(bsz);
            sum_c += c_v * static_cast<double>(bsz);
            seen += bsz;
        }
        const double m = sum_m / static_cast<double>(seen);
        const double c = sum_c / static_cast<double>(seen);
        hist.rows.push_back({static_cast<double>(epoch), m, c, total_loss(m, c, cfg.lambda)});

        if (cfg.select_epoch == epoch) {
            snapshot.clear();
            std::vector<Parameter*> ps;
            nets.online_enc.collect(ps);
            for (Parameter* p : ps) snapshot.push_back(p->value);
            std::vector<Tensor*> bs;
            nets.online_enc.collect_buffers(bs);
            for (Tensor* b : bs) snapshot.push_back(*b);
            have_snapshot = true;
        }
    }

    if (have_snapshot) {
        std::size_t i = 0;
        std::vector<Parameter*> ps;
        nets.online_enc.collect(ps);
        for (Parameter* p : ps) p->value = snapshot[i++];
        std::vector<Tensor*> bs;
        nets.online_enc.collect_buffers(bs);
        for (Tensor* b : bs) *b = snapshot[i++];
    }
    return hist;
}

Tensor extract_features(ContrastNets& nets, const Tensor& codes) {
    if (codes.rank() != 2 || codes.dim(1) != nets.code_dim) {
        throw ArgumentError("extract_features: expected [n," + std::to_string(nets.code_dim) +
                            "], got " + shape_str(codes.shape()));
    }
    const int n = codes.dim(0);
    Tensor out({n, nets.arch.feature_dim});
    if (n == 0) return out;
    const int chunk = 512;
    for (int start = 0; start < n; start += chunk) {
        const int bsz = std::min(chunk, n - start);
        Tensor x({bsz, nets.code_dim});
        for (int b = 0; b < bsz; ++b) {
            for (int j = 0; j < nets.code_dim; ++j) {
                x[static_cast<std::int64_t>(b) * nets.code_dim + j] =
                    codes[(static_cast<std::int64_t>(start) + b) * nets.code_dim + j];
            }
        }
        Tape t;
        NoGradGuard ng(t);
        Var f = nets.online_enc.forward(t, t.constant(std::move(x)), false, false);
        for (int b = 0; b < bsz; ++b) {
            for (int j = 0; j < nets.arch.feature_dim; ++j) {
                out[(static_cast<std::int64_t>(start) + b) * nets.arch.feature_dim + j] =
                    f.val()[static_cast<std::int64_t>(b) * nets.arch.feature_dim + j];
            }
        }
    }
    return out;
}

}  // namespace crossview
