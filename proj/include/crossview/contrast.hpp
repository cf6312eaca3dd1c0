#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossview/history.hpp"
#include "crossview/nn.hpp"

namespace crossview {

enum class PairingMode { cross_view, same_view };

PairingMode pairing_from_name(const std::string& name);
std::string pairing_name(PairingMode m);

struct ContrastArchConfig {
    int feature_dim = 128;
    int proj_hidden = 512;
    int proj_dim = 128;
    bool mlp_encoder = false;  // affine-only encoder, used by miniature configs
    int tconv1_ch = 16, tconv2_ch = 32, conv_ch = 32;
};

// Encoder over latent codes: reshape to a small map, two transpose convs up,
// three convs down, then an affine to feature_dim. mlp_encoder collapses the
// whole thing to one affine layer.
struct ContrastEncoder {
    ContrastArchConfig arch;
    int code_dim = 0;
    int map_c = 0, map_h = 0, map_w = 0;
    std::vector<int> spatial_chain;
    ConvTLayer t1, t2;
    BatchNormLayer bn_t1, bn_t2;
    std::vector<ConvLayer> convs;
    std::vector<BatchNormLayer> bn_c;
    AffineLayer out;
    int flat_dim = 0;

    void build(int code_dim_, const ContrastArchConfig& a, Rng& rng, const std::string& prefix);
    Var forward(Tape& t, Var x, bool training, bool update_stats);  // [B,code_dim]->[B,feature_dim]
    void collect(std::vector<Parameter*>& ps);
    void collect_buffers(std::vector<Tensor*>& bs);
};

// Projector / predictor MLP: affine -> BN -> ReLU -> affine.
struct ContrastMlp {
    AffineLayer a1, a2;
    BatchNormLayer bn;
    void build(int in_dim, int hidden, int out_dim, Rng& rng, const std::string& prefix);
    Var forward(Tape& t, Var x, bool training, bool update_stats);
    void collect(std::vector<Parameter*>& ps);
    void collect_buffers(std::vector<Tensor*>& bs);
};

// Online {encoder, projector, predictor} and EMA target {encoder, projector}.
struct ContrastNets {
    ContrastArchConfig arch;
    int code_dim = 0;
    ContrastEncoder online_enc, target_enc;
    ContrastMlp online_proj, target_proj, online_pred;

    void build(int code_dim_, const ContrastArchConfig& a, std::uint64_t seed);
    std::vector<Parameter*> online_parameters();
    std::vector<Parameter*> target_parameters();
    // Full state (parameters then batch-norm buffers) for EMA and serialization.
    std::vector<Tensor*> online_state();
    std::vector<Tensor*> target_state();
    // Online encoder+projector state, ordered to match target_state().
    std::vector<Tensor*> online_state_partial_();
};

struct ContrastConfig {
    double alpha = 9.0;
    double lambda = 100.0;
    double tau = 0.99;
    double lr = 3e-4;
    double weight_decay = 1e-3;
    int epochs = 200;
    int batch = 256;
    std::uint64_t seed = 0;
    PairingMode pairing = PairingMode::cross_view;
    int select_epoch = -1;  // -1 = final epoch
};

struct JointDistribution {
    Tensor P;       // [d,d]
    Tensor Pi, Pj;  // [d] row / column marginals
};

// Plain-tensor operations (evaluated through the same tape ops training uses).
JointDistribution joint_probability(const Tensor& Z1, const Tensor& Z2);
double mutual_info_loss(const JointDistribution& jd, double alpha);
double conditional_loss(const Tensor& q1, const Tensor& t1, const Tensor& q2, const Tensor& t2);
double total_loss(double l_m, double l_c, double lambda);

// xi <- tau*xi + (1-tau)*theta, elementwise over matching tensor lists.
void ema_update(const std::vector<Tensor*>& target, const std::vector<Tensor*>& online,
                double tau);

// Tape ops.
Var joint_probability_op(Var z1, Var z2);  // [n,d] x [n,d] -> P [d,d]
Var mutual_info_loss_op(Var p, double alpha);
Var conditional_loss_op(Var q1, Var t1, Var q2, Var t2);

LossHistory train_contrast(ContrastNets& nets, const Tensor& vae_codes, const Tensor& aae_codes,
                           const ContrastConfig& cfg);

// Online-encoder features in eval mode. [n, feature_dim]
Tensor extract_features(ContrastNets& nets, const Tensor& codes);

}  // namespace crossview
