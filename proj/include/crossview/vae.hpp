#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "crossview/channelsplit.hpp"
#include "crossview/datacube.hpp"
#include "crossview/history.hpp"
#include "crossview/nn.hpp"

namespace crossview {

// Cross-prediction VAE: encodes view X1, decodes a prediction of view X2.
struct VaeNet {
    BackboneConfig arch;
    int patch_sz = 0, in_depth = 0, out_depth = 0;
    ConvEncoderTrunk trunk;
    AffineLayer mu_head, logvar_head;
    ConvDecoder decoder;
    double logvar_clamp = 10.0;

    void build(const BackboneConfig& cfg, int s, int c_in, int c_out, std::uint64_t seed);
    // (mu, logvar); logvar already clamped.
    std::pair<Var, Var> encode(Tape& t, Var x, bool training, bool update_stats);
    Var decode(Tape& t, Var z, bool training, bool update_stats);
    std::vector<Parameter*> parameters();
    std::vector<Tensor*> buffers();
};

struct VaeTrainConfig {
    int epochs = 40;
    int batch = 256;
    double lr = 1e-3;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    bool self_reconstruction = false;
    bool resplit_per_epoch = true;  // random strategy only
};

// Plain-tensor loss/sampling operations.
double mse_loss(const Tensor& x, const Tensor& y);
double kl_loss(const Tensor& mu, const Tensor& sigma);
Tensor reparameterize(const Tensor& mu, const Tensor& sigma, const Tensor& noise);

// Deterministic eval-mode encoding: (mu, sigma) for a batch [B,1,C1,s,s].
std::pair<Tensor, Tensor> vae_encode(VaeNet& net, const Tensor& x);

LossHistory train_vae(VaeNet& net, const PatchSet& patches, const ChannelSplit& split,
                      const VaeTrainConfig& cfg);

// mu codes for every patch, eval mode, chunked. [n, latent_dim]
Tensor vae_encode_codes(VaeNet& net, const PatchSet& patches, const ChannelSplit& split,
                        int batch = 256);

// View index lists for a training step: input channels and target channels.
// Self-reconstruction collapses both onto the X1 view (X2 for the AAE).
std::pair<const std::vector<int>*, const std::vector<int>*> vae_views(const ChannelSplit& split,
                                                                      bool self_reconstruction);

}  // namespace crossview
