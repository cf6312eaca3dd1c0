#pragma once

#include <cstdint>
#include <vector>

#include "crossview/channelsplit.hpp"
#include "crossview/datacube.hpp"
#include "crossview/history.hpp"
#include "crossview/nn.hpp"

namespace crossview {

// Cross-prediction AAE: encodes view X2, decodes a prediction of view X1.
// The encoder doubles as the WGAN generator; a small critic shapes the
// latent toward a standard normal.
struct AaeNet {
    BackboneConfig arch;
    int patch_sz = 0, in_depth = 0, out_depth = 0;
    ConvEncoderTrunk trunk;
    AffineLayer z_head;
    ConvDecoder decoder;
    AffineLayer d1, d2, d3;  // discriminator: latent -> 64 -> 32 -> 1, leaky 0.2

    void build(const BackboneConfig& cfg, int s, int c_in, int c_out, std::uint64_t seed);
    Var encode(Tape& t, Var x, bool training, bool update_stats);
    Var decode(Tape& t, Var z, bool training, bool update_stats);
    Var discriminate(Tape& t, Var z);

    std::vector<Parameter*> encoder_parameters();
    std::vector<Parameter*> decoder_parameters();
    std::vector<Parameter*> discriminator_parameters();
    std::vector<Parameter*> parameters();
    std::vector<Tensor*> buffers();
};

struct WganBatchStats {
    double d_real_mean = 0.0;
    double d_fake_mean = 0.0;
    double g_loss = 0.0;  // -E[D(fake)]
    double d_loss = 0.0;  // E[D(fake)] - E[D(real)]
};

// Standard WGAN objectives from critic outputs.
WganBatchStats wgan_losses(const Tensor& d_real, const Tensor& d_fake);

// Clamps every parameter (weights and biases) to [-c, c].
void clip_discriminator(const std::vector<Parameter*>& params, double c);

struct AaeTrainConfig {
    int epochs = 30;
    int batch = 256;
    double lr = 1e-3;           // reconstruction Adam
    double weight_decay = 5e-4;
    double gen_lr = 1e-4;       // generator SGD
    double disc_lr = 5e-5;      // discriminator SGD
    double clip = 0.01;
    std::uint64_t seed = 0;
    bool self_reconstruction = false;
    bool resplit_per_epoch = true;
};

LossHistory train_aae(AaeNet& net, const PatchSet& patches, const ChannelSplit& split,
                      const AaeTrainConfig& cfg);

// Latent codes for every patch from the X2 view, eval mode. [n, latent_dim]
Tensor aae_encode_codes(AaeNet& net, const PatchSet& patches, const ChannelSplit& split,
                        int batch = 256);

}  // namespace crossview
