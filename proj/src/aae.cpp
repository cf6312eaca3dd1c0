#include "crossview/aae.hpp"

#include <cmath>
#include <numeric>

#include "crossview/errors.hpp"
#include "crossview/optim.hpp"
#include "crossview/rng.hpp"

namespace crossview {

void AaeNet::build(const BackboneConfig& cfg, int s, int c_in, int c_out, std::uint64_t seed) {
    arch = cfg;
    patch_sz = s;
    in_depth = c_in;
    out_depth = c_out;
    Rng rng(seed);
    trunk.build(cfg, s, c_in, rng, "encoder");
    z_head.init(cfg.latent_dim, cfg.fc_hidden, rng, "encoder.z");
    decoder.build(cfg, s, c_out, rng, "decoder");
    d1.init(64, cfg.latent_dim, rng, "disc.fc1");
    d2.init(32, 64, rng, "disc.fc2");
    d3.init(1, 32, rng, "disc.fc3");
}

Var AaeNet::encode(Tape& t, Var x, bool training, bool update_stats) {
    Var h = trunk.forward(t, x, training, update_stats);
    return z_head.forward(t, h);
}

Var AaeNet::decode(Tape& t, Var z, bool training, bool update_stats) {
    return decoder.forward(t, z, training, update_stats);
}

Var AaeNet::discriminate(Tape& t, Var z) {
    Var h = leaky_relu(d1.forward(t, z), 0.2);
    h = leaky_relu(d2.forward(t, h), 0.2);
    return d3.forward(t, h);
}

std::vector<Parameter*> AaeNet::encoder_parameters() {
    std::vector<Parameter*> ps;
    trunk.collect(ps);
    z_head.collect(ps);
    return ps;
}

std::vector<Parameter*> AaeNet::decoder_parameters() {
    std::vector<Parameter*> ps;
    decoder.collect(ps);
    return ps;
}

std::vector<Parameter*> AaeNet::discriminator_parameters() {
    std::vector<Parameter*> ps;
    d1.collect(ps);
    d2.collect(ps);
    d3.collect(ps);
    return ps;
}

std::vector<Parameter*> AaeNet::parameters() {
    std::vector<Parameter*> ps = encoder_parameters();
    for (Parameter* p : decoder_parameters()) ps.push_back(p);
    for (Parameter* p : discriminator_parameters()) ps.push_back(p);
    return ps;
}

std::vector<Tensor*> AaeNet::buffers() {
    std::vector<Tensor*> bs;
    trunk.collect_buffers(bs);
    decoder.collect_buffers(bs);
    return bs;
}

WganBatchStats wgan_losses(const Tensor& d_real, const Tensor& d_fake) {
    if (d_real.size() == 0 || d_fake.size() == 0) {
        throw ArgumentError("wgan_losses: empty batch");
    }
    WganBatchStats st;
    for (std::int64_t i = 0; i < d_real.size(); ++i) st.d_real_mean += d_real[i];
    st.d_real_mean /= static_cast<double>(d_real.size());
    for (std::int64_t i = 0; i < d_fake.size(); ++i) st.d_fake_mean += d_fake[i];
    st.d_fake_mean /= static_cast<double>(d_fake.size());
    st.d_loss = st.d_fake_mean - st.d_real_mean;
    st.g_loss = -st.d_fake_mean;
    return st;
}

void clip_discriminator(const std::vector<Parameter*>& params, double c) {
    if (!(c > 0.0)) throw ArgumentError("clip bound must be positive");
    for (Parameter* p : params) {
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
            if (p->value[i] > c) p->value[i] = c;
            else if (p->value[i] < -c) p->value[i] = -c;
        }
    }
}

LossHistory train_aae(AaeNet& net, const PatchSet& patches, const ChannelSplit& split,
                      const AaeTrainConfig& cfg) {
    LossHistory hist;
    hist.columns = {"epoch", "mse", "d_loss", "g_loss"};
    if (cfg.epochs <= 0) return hist;
    if (patches.count() == 0) throw ArgumentError("train_aae: empty patch set");
    if (patches.reduced_channels != split.total_channels) {
        throw ArgumentError("train_aae: split channel count does not match patches");
    }

    std::vector<Parameter*> recon_params = net.encoder_parameters();
    for (Parameter* p : net.decoder_parameters()) recon_params.push_back(p);
    Adam recon_opt(recon_params, cfg.lr, cfg.weight_decay);
    Sgd gen_opt(net.encoder_parameters(), cfg.gen_lr);
    Sgd disc_opt(net.discriminator_parameters(), cfg.disc_lr);
    Rng real_rng(derive_seed(cfg.seed, "aae-real"));

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
        // AAE consumes the X2 view and predicts X1; self-reconstruction
        // autoencodes X2.
        const std::vector<int>* in_idx = &epoch_split.indices2;
        const std::vector<int>* out_idx =
            cfg.self_reconstruction ? &epoch_split.indices2 : &epoch_split.indices1;

        Rng shuffle_rng(derive_seed(cfg.seed, "aae-shuffle-" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);

        double sum_mse = 0.0, sum_d = 0.0, sum_g = 0.0;
        std::int64_t seen = 0;
        for (std::int64_t start = 0; start < n; start += cfg.batch) {
            const std::int64_t bsz = std::min<std::int64_t>(cfg.batch, n - start);
            std::vector<std::int64_t> rows(order.begin() + start, order.begin() + start + bsz);
            Tensor x2 = gather_view(patches.patches.data(), rows, patches.patch_stride(),
                                    patches.patch_size, patches.reduced_channels, *in_idx);
            Tensor x1 = gather_view(patches.patches.data(), rows, patches.patch_stride(),
                                    patches.patch_size, patches.reduced_channels, *out_idx);

            // (1) reconstruction: encoder + decoder on L_mse(F2(X2), X1)
            double mse_v;
            {
                Tape t;
                Var z = net.encode(t, t.constant(x2), true, true);
                Var xhat = net.decode(t, z, true, true);
                Var loss = mse(xhat, t.constant(std::move(x1)));
                mse_v = loss.val()[0];
                if (!std::isfinite(mse_v)) {
                    throw NumericError("train_aae: non-finite reconstruction loss at epoch " +
                                       std::to_string(epoch) + " batch offset " +
                                       std::to_string(start));
                }
                recon_opt.zero_grad();
                t.backward(loss);
                recon_opt.step();
            }

            // (2) discriminator on fixed codes, then weight clipping
            double d_v;
            {
                Tape t;
                Tensor z_fake;
                {
                    NoGradGuard ng(t);
                    z_fake = net.encode(t, t.constant(x2), true, false).val();
                }
                Tensor z_real({static_cast<int>(bsz), net.arch.latent_dim});
                for (std::int64_t i = 0; i < z_real.size(); ++i) z_real[i] = real_rng.normal();
                Var d_fake = net.discriminate(t, t.constant(std::move(z_fake)));
                Var d_real = net.discriminate(t, t.constant(std::move(z_real)));
                Var loss = sub(mean_all(d_fake), mean_all(d_real));
                d_v = loss.val()[0];
                if (!std::isfinite(d_v)) {
                    throw NumericError("train_aae: non-finite discriminator loss at epoch " +
                                       std::to_string(epoch) + " batch offset " +
                                       std::to_string(start));
                }
                disc_opt.zero_grad();
                t.backward(loss);
                disc_opt.step();
                clip_discriminator(net.discriminator_parameters(), cfg.clip);
            }

            // (3) generator: encoder only, minimize -E[D(enc(X2))]
            double g_v;
            {
                Tape t;
                Var z = net.encode(t, t.constant(x2), true, false);
                Var loss = neg(mean_all(net.discriminate(t, z)));
                g_v = loss.val()[0];
                if (!std::isfinite(g_v)) {
                    throw NumericError("train_aae: non-finite generator loss at epoch " +
                                       std::to_string(epoch) + " batch offset " +
                                       std::to_string(start));
                }
                gen_opt.zero_grad();
                t.backward(loss);
                gen_opt.step();
            }

            sum_mse += mse_v * static_cast<double>(bsz);
            sum_d += d_v * static_cast<double>(bsz);
            sum_g += g_v * static_cast<double>(bsz);
            seen += bsz;
        }
        hist.rows.push_back({static_cast<double>(epoch), sum_mse / static_cast<double>(seen),
                             sum_d / static_cast<double>(seen),
                             sum_g / static_cast<double>(seen)});
    }
    return hist;
}

Tensor aae_encode_codes(AaeNet& net, const PatchSet& patches, const ChannelSplit& split,
                        int batch) {
    const std::int64_t n = patches.count();
    Tensor codes({static_cast<int>(n), net.arch.latent_dim});
    for (std::int64_t start = 0; start < n; start += batch) {
        const std::int64_t bsz = std::min<std::int64_t>(batch, n - start);
        std::vector<std::int64_t> rows(static_cast<std::size_t>(bsz));
        std::iota(rows.begin(), rows.end(), start);
        Tensor x = gather_view(patches.patches.data(), rows, patches.patch_stride(),
                               patches.patch_size, patches.reduced_channels, split.indices2);
        Tape t;
        NoGradGuard ng(t);
        Var z = net.encode(t, t.constant(std::move(x)), false, false);
        for (std::int64_t b = 0; b < bsz; ++b) {
            for (int j = 0; j < net.arch.latent_dim; ++j) {
                codes[(start + b) * net.arch.latent_dim + j] =
                    z.val()[b * net.arch.latent_dim + j];
            }
        }
    }
    return codes;
}

}  // namespace crossview
