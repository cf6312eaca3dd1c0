#pragma once

#include <string>
#include <vector>

#include "crossview/autodiff.hpp"
#include "crossview/rng.hpp"
#include "crossview/tensor.hpp"

namespace crossview {

// Convolution geometry. Tensors are [N, C, D, H, W]; depth is always valid
// (no padding, stride 1), spatial dims support zero padding and stride.
// 2-D convolutions are the kd == 1, D == 1 case.
struct ConvGeom {
    int in_ch = 1, out_ch = 1;
    int kd = 1, kh = 1, kw = 1;
    int ph = 0, pw = 0;
    int sh = 1, sw = 1;
};

// Raw conv kernels (no tape). w: [out_ch, in_ch, kd, kh, kw].
Tensor conv_fwd(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeom& g);
Tensor conv_dx(const Tensor& dy, const Tensor& w, const ConvGeom& g, int D, int H, int W);
void conv_dw_db(const Tensor& x, const Tensor& dy, const ConvGeom& g, Tensor& dw, Tensor* db);

// Tape ops.
Var conv_op(Var x, Var w, Var b, const ConvGeom& g);
// Transpose convolution: w is [in_ch, out_ch, kd, kh, kw]; output depth grows
// by kd-1, spatial out = (in-1)*stride + k - 2*pad.
Var conv_transpose_op(Var x, Var w, Var b, const ConvGeom& g);
// Average-pools the trailing two dims to out x out.
Var adaptive_avg_pool2d(Var x, int out);
Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
               bool training, bool update_stats, double momentum, double eps);

// ---- layers ----

struct AffineLayer {
    Parameter w, b;
    void init(int out_dim, int in_dim, Rng& rng, const std::string& name);
    Var forward(Tape& t, Var x);
    void collect(std::vector<Parameter*>& ps) {
        ps.push_back(&w);
        ps.push_back(&b);
    }
};

struct ConvLayer {
    Parameter w, b;
    ConvGeom g;
    void init(const ConvGeom& geom, Rng& rng, const std::string& name);
    Var forward(Tape& t, Var x);
    void collect(std::vector<Parameter*>& ps) {
        ps.push_back(&w);
        ps.push_back(&b);
    }
};

struct ConvTLayer {
    Parameter w, b;
    ConvGeom g;
    void init(const ConvGeom& geom, Rng& rng, const std::string& name);
    Var forward(Tape& t, Var x);
    void collect(std::vector<Parameter*>& ps) {
        ps.push_back(&w);
        ps.push_back(&b);
    }
};

struct BatchNormLayer {
    Parameter gamma, beta;
    Tensor running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;
    void init(int channels, const std::string& name);
    Var forward(Tape& t, Var x, bool training, bool update_stats);
    void collect(std::vector<Parameter*>& ps) {
        ps.push_back(&gamma);
        ps.push_back(&beta);
    }
    void collect_buffers(std::vector<Tensor*>& bs) {
        bs.push_back(&running_mean);
        bs.push_back(&running_var);
    }
};

// ---- configurable autoencoder backbone ----

struct ConvSpec {
    int out_ch, kd, kh, kw;
};

struct BackboneConfig {
    std::vector<ConvSpec> conv3d{{8, 7, 3, 3}, {16, 5, 3, 3}, {32, 3, 3, 3}};
    int conv2d_out = 64;
    int conv2d_k = 3;
    int pool = 4;
    int fc_hidden = 512;
    int latent_dim = 128;
};

// Effective geometry for one (patch size, spectral depth) pair. Kernel depths
// clamp to the available depth so small inputs stay valid.
struct BackboneDims {
    int s = 0, in_depth = 0;
    std::vector<int> kd_eff;
    std::vector<int> depth_chain;  // depth after each 3-D conv
    int fold_ch = 0;               // channels after folding depth
    int pool_p = 0;
    int fc_in = 0;
};
BackboneDims compute_backbone_dims(const BackboneConfig& cfg, int s, int in_depth);

// Encoder trunk: 3-D conv stack -> fold -> 2-D conv -> pool -> affine+ReLU.
// Output is [N, fc_hidden]; latent heads live in the owning net.
struct ConvEncoderTrunk {
    BackboneConfig cfg;
    BackboneDims dims;
    std::vector<ConvLayer> conv3;
    std::vector<BatchNormLayer> bn3;
    ConvLayer conv2;
    BatchNormLayer bn2;
    AffineLayer fc;
    void build(const BackboneConfig& c, int s, int in_depth, Rng& rng, const std::string& prefix);
    Var forward(Tape& t, Var x, bool training, bool update_stats);
    void collect(std::vector<Parameter*>& ps);
    void collect_buffers(std::vector<Tensor*>& bs);
};

// Decoder: affine stack -> 2-D transpose conv (pool -> s upsample) ->
// 3-D transpose conv stack growing depth back to out_depth. Final layer linear.
struct ConvDecoder {
    BackboneConfig cfg;
    BackboneDims dims;  // computed for out_depth
    int s = 0, out_depth = 0;
    int up_stride = 1, up_k = 1;
    AffineLayer fc1, fc2;
    ConvTLayer up2d;
    BatchNormLayer bn_up;
    std::vector<ConvTLayer> tconv3;
    std::vector<BatchNormLayer> bn_t3;  // one per tconv3 except the last
    void build(const BackboneConfig& c, int s_, int out_depth_, Rng& rng, const std::string& prefix);
    Var forward(Tape& t, Var z, bool training, bool update_stats);  // -> [N,1,out_depth,s,s]
    void collect(std::vector<Parameter*>& ps);
    void collect_buffers(std::vector<Tensor*>& bs);
};

// Parameter-state helpers shared by training, EMA, and serialization.
void copy_state(const std::vector<Parameter*>& src_p, const std::vector<Tensor*>& src_b,
                std::vector<Parameter*>& dst_p, std::vector<Tensor*>& dst_b);

}  // namespace crossview
