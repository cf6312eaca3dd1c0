#include "crossview/vae.hpp"

#include <cmath>
#include <numeric>

#include "crossview/errors.hpp"
#include "crossview/optim.hpp"
#include "crossview/rng.hpp"

namespace crossview {

void VaeNet::build(const BackboneConfig& cfg, int s, int c_in, int c_out, std::uint64_t seed) {
    arch = cfg;
    patch_sz = s;
    in_depth = c_in;
    out_depth = c_out;
    Rng rng(seed);
    trunk.build(cfg, s, c_in, rng, "encoder");
    mu_head.init(cfg.latent_dim, cfg.fc_hidden, rng, "encoder.mu");
    logvar_head.init(cfg.latent_dim, cfg.fc_hidden, rng, "encoder.logvar");
    decoder.build(cfg, s, c_out, rng, "decoder");
}

std::pair<Var, Var> VaeNet::encode(Tape& t, Var x, bool training, bool update_stats) {
    Var h = trunk.forward(t, x, training, update_stats);
    Var mu = mu_head.forward(t, h);
    Var logvar = clamp(logvar_head.forward(t, h), -logvar_clamp, logvar_clamp);
    return {mu, logvar};
}

Var VaeNet::decode(Tape& t, Var z, bool training, bool update_stats) {
    return decoder.forward(t, z, training, update_stats);
}

std::vector<Parameter*> VaeNet::parameters() {
    std::vector<Parameter*> ps;
    trunk.collect(ps);
    mu_head.collect(ps);
    logvar_head.collect(ps);
    decoder.collect(ps);
    return ps;
}

std::vector<Tensor*> VaeNet::buffers() {
    std::vector<Tensor*> bs;
    trunk.collect_buffers(bs);
    decoder.collect_buffers(bs);
    return bs;
}

double mse_loss(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) {
        throw ArgumentError("mse_loss: shape mismatch " + shape_str(x.shape()) + " vs " +
                            shape_str(y.shape()));
    }
    if (x.size() == 0) throw ArgumentError("mse_loss: empty tensors");
    double s = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return s / static_cast<double>(x.size());
}

double kl_loss(const Tensor& mu, const Tensor& sigma) {
    if (!mu.same_shape(sigma)) throw ArgumentError("kl_loss: shape mismatch");
    for (std::int64_t i = 0; i < sigma.size(); ++i) {
        if (!(sigma[i] > 0.0)) throw std::domain_error("kl_loss: sigma must be positive");
    }
    const int rows = mu.rank() == 2 ? mu.dim(0) : 1;
    double s = 0.0;
    for (std::int64_t i = 0; i < mu.size(); ++i) {
        const double s2 = sigma[i] * sigma[i];
        s += mu[i] * mu[i] + s2 - std::log(s2) - 1.0;
    }
    return 0.5 * s / static_cast<double>(rows);
}

Tensor reparameterize(const Tensor& mu, const Tensor& sigma, const Tensor& noise) {
    if (!mu.same_shape(sigma) || !mu.same_shape(noise)) {
        throw ArgumentError("reparameterize: shape mismatch");
    }
    Tensor z(mu.shape());
    for (std::int64_t i = 0; i < z.size(); ++i) z[i] = mu[i] + sigma[i] * noise[i];
    return z;
}

std::pair<Tensor, Tensor> vae_encode(VaeNet& net, const Tensor& x) {
    Tape t;
    NoGradGuard ng(t);
    auto [mu, logvar] = net.encode(t, t.constant(x), false, false);
    Tensor sigma(logvar.val().shape());
    for (std::int64_t i = 0; i < sigma.size(); ++i) {
        sigma[i] = std::exp(0.5 * logvar.val()[i]);
    }
    return {mu.val(), sigma};
}

std::pair<const std::vector<int>*, const std::vector<int>*> vae_views(const ChannelSplit& split,
                                                                      bool self_reconstruction) {
    if (self_reconstruction) return {&split.indices1, &split.indices1};
    return {&split.indices1, &split.indices2};
}

LossHistory train_vae(VaeNet& net, const PatchSet& patches, const ChannelSplit& split,
                      const VaeTrainConfig& cfg) {
    LossHistory hist;
    hist.columns = {"epoch", "mse", "kl", "total"};
    if (cfg.epochs <= 0) return hist;
    if (patches.count() == 0) throw ArgumentError("train_vae: empty patch set");
    if (patches.reduced_channels != split.total_channels) {
        throw ArgumentError("train_vae: split channel count does not match patches");
    }

    Adam opt(net.parameters(), cfg.lr, cfg.weight_decay);
    Rng noise_rng(derive_seed(cfg.seed, "vae-noise"));

    const std::int64_t n = patches.count();
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        ChannelSplit epoch_split = split;
        if (split.strategy == SplitStrategy::random && cfg.resplit_per_epoch) {
            epoch_split = random_split(
                split.total_channels,
                derive_seed(split.seed, "epoch-" + std::to_string(epoch)));
        }
        auto [in_idx, out_idx] = vae_views(epoch_split, cfg.self_reconstruction);

        Rng shuffle_rng(derive_seed(cfg.seed, "vae-shuffle-" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);

        double sum_mse = 0.0, sum_kl = 0.0;
        std::int64_t seen = 0;
        for (std::int64_t start = 0; start < n; start += cfg.batch) {
            const std::int64_t bsz = std::min<std::int64_t>(cfg.batch, n - start);
            std::vector<std::int64_t> rows(order.begin() + start, order.begin() + start + bsz);
            Tensor x1 = gather_view(patches.patches.data(), rows, patches.patch_stride(),
                                    patches.patch_size, patches.reduced_channels, *in_idx);
            Tensor x2 = gather_view(patches.patches.data(), rows, patches.patch_stride(),
                                    patches.patch_size, patches.reduced_channels, *out_idx);
            Tensor noise({static_cast<int>(bsz), net.arch.latent_dim});
            for (std::int64_t i = 0; i < noise.size(); ++i) noise[i] = noise_rng.normal();

            Tape t;
            auto [mu, logvar] = net.encode(t, t.constant(std::move(x1)), true, true);
            Var sigma = exp_op(scale(logvar, 0.5));
            Var z = add(mu, mul(sigma, t.constant(std::move(noise))));
            Var xhat = net.decode(t, z, true, true);
            Var l_mse = mse(xhat, t.constant(std::move(x2)));
            Var l_kl = kl_gaussian(mu, logvar);
            Var loss = add(l_mse, l_kl);

            const double mse_v = l_mse.val()[0];
            const double kl_v = l_kl.val()[0];
            if (!std::isfinite(mse_v + kl_v)) {
                throw NumericError("train_vae: non-finite loss at epoch " +
                                   std::to_string(epoch) + " batch offset " +
                                   std::to_string(start) + " (mse=" + std::to_string(mse_v) +
                                   ", kl=" + std::to_string(kl_v) + ")");
            }
            opt.zero_grad();
            t.backward(loss);
            opt.step();

            sum_mse += mse_v * static_cast<double>(bsz);
            sum_kl += kl_v * static_cast<double>(bsz);
            seen += bsz;
        }
        const double m = sum_mse / static_cast<double>(seen);
        const double k = sum_kl / static_cast<double>(seen);
        hist.rows.push_back({static_cast<double>(epoch), m, k, m + k});
    }
    return hist;
}

Tensor vae_encode_codes(VaeNet& net, const PatchSet& patches, const ChannelSplit& split,
                        int batch) {
    const std::int64_t n = patches.count();
    Tensor codes({static_cast<int>(n), net.arch.latent_dim});
    for (std::int64_t start = 0; start < n; start += batch) {
        const std::int64_t bsz = std::min<std::int64_t>(batch, n - start);
        std::vector<std::int64_t> rows(static_cast<std::size_t>(bsz));
        std::iota(rows.begin(), rows.end(), start);
        Tensor x = gather_view(patches.patches.data(), rows, patches.patch_stride(),
                               patches.patch_size, patches.reduced_channels, split.indices1);
        auto [mu, sigma] = vae_encode(net, x);
        for (std::int64_t b = 0; b < bsz; ++b) {
            for (int j = 0; j < net.arch.latent_dim; ++j) {
                codes[(start + b) * net.arch.latent_dim + j] = mu[b * net.arch.latent_dim + j];
            }
        }
    }
    return codes;
}

}  // namespace crossview
