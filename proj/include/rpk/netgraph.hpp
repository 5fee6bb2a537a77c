#pragma once

#include <string>
#include <vector>

#include "rpk/errors.hpp"
#include "rpk/nn.hpp"

// Stacked fully convolutional hourglass generator and patch discriminator.
// Pooling/upsampling of the classic hourglass is replaced by strided and
// transposed convolutions; every scale keeps a residual skip branch, and
// stacks are chained with both a feature-level identity skip and 1x1 remaps
// of the intermediate prediction.

namespace rpk {

enum class DownsampleMode { strided_conv, max_pool };

inline const char* to_string(DownsampleMode m) {
  return m == DownsampleMode::strided_conv ? "conv" : "maxpool";
}

struct HourglassConfig {
  int depth = 5;
  int feat_channels = 64;
  int in_channels = 64;
};

struct GeneratorConfig {
  int n_stacks = 3;
  int resolution = 128;
  int image_channels = 3;
  int pose_channels = 16;
  HourglassConfig hourglass;
  DownsampleMode downsample_mode = DownsampleMode::strided_conv;

  int input_channels() const { return image_channels + pose_channels; }

  void validate() const {
    if (n_stacks < 1) throw ConfigError("generator: n_stacks must be >= 1");
    if (hourglass.depth < 1) throw ConfigError("generator: depth must be >= 1");
    if (hourglass.feat_channels < 1)
      throw ConfigError("generator: feat_channels must be >= 1");
    if (resolution < 1) throw ConfigError("generator: resolution must be >= 1");
    int r = resolution;
    for (int d = 0; d < hourglass.depth; ++d) {
      if (r % 2 != 0)
        throw ConfigError("generator: resolution not divisible by 2^depth");
      r /= 2;
    }
    if (r < 1) throw ConfigError("generator: bottleneck would be empty");
  }
};

struct DiscriminatorConfig {
  int n_layers = 3;
  int base_channels = 64;

  void validate() const {
    if (n_layers < 2 || n_layers > 4)
      throw ConfigError("discriminator: n_layers must be in [2,4]");
    if (base_channels < 1)
      throw ConfigError("discriminator: base_channels must be >= 1");
  }
};

template <typename Scalar>
struct Hourglass {
  struct Level {
    Residual<Scalar> skip, down_res, up_res;
    BatchNorm2d<Scalar> down_bn, up_bn;
    Conv2d<Scalar> down_conv;
    ConvT2d<Scalar> up_conv;
  };
  std::vector<Level> levels;
  Residual<Scalar> bottom;
  DownsampleMode mode = DownsampleMode::strided_conv;

  void build(ParamStore<Scalar>& ps, const std::string& name, int depth,
             int feat, DownsampleMode mode_) {
    mode = mode_;
    levels.resize(depth);
    for (int d = 0; d < depth; ++d) {
      const std::string ln = name + ".l" + std::to_string(d);
      auto& L = levels[d];
      L.skip.build(ps, ln + ".skip", feat, feat);
      L.down_bn.build(ps, ln + ".down_bn", feat);
      if (mode == DownsampleMode::strided_conv)
        L.down_conv.build(ps, ln + ".down_conv", feat, feat, 4, 2, 1);
      L.down_res.build(ps, ln + ".down_res", feat, feat);
      L.up_res.build(ps, ln + ".up_res", feat, feat);
      L.up_bn.build(ps, ln + ".up_bn", feat);
      L.up_conv.build(ps, ln + ".up_conv", feat, feat, 4, 2, 1);
    }
    bottom.build(ps, name + ".bottom", feat, feat);
  }

  Var<Scalar> forward(const Var<Scalar>& x, const FwdCtx& ctx, int* bh = nullptr,
                      int* bw = nullptr) const {
    return level_fwd(0, x, ctx, bh, bw);
  }

 private:
  Var<Scalar> level_fwd(std::size_t d, const Var<Scalar>& x, const FwdCtx& ctx,
                        int* bh, int* bw) const {
    const Level& L = levels[d];
    auto s = L.skip(x, ctx);
    auto y = relu(L.down_bn(x, ctx));
    y = mode == DownsampleMode::strided_conv ? L.down_conv(y) : max_pool2(y);
    y = L.down_res(y, ctx);
    if (d + 1 < levels.size()) {
      y = level_fwd(d + 1, y, ctx, bh, bw);
    } else {
      if (bh) *bh = y->val.h();
      if (bw) *bw = y->val.w();
      y = bottom(y, ctx);
    }
    y = L.up_res(y, ctx);
    y = L.up_conv(relu(L.up_bn(y, ctx)));
    return s + y;
  }
};

// Forward contract: input [N, image+pose channels, R, R]; one bounded image
// prediction per stack, each [N, image_channels, R, R] in [-1, 1].
template <typename Scalar>
class Generator {
 public:
  struct Output {
    std::vector<Var<Scalar>> images;
    int bottleneck_h = 0, bottleneck_w = 0;
  };

  explicit Generator(const GeneratorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int feat = cfg_.hourglass.feat_channels;
    stem_conv_.build(params_, "stem.conv", cfg_.input_channels(), feat, 3, 1, 1);
    stem_res_.build(params_, "stem.res", feat, feat);
    stacks_.resize(cfg_.n_stacks);
    for (int s = 0; s < cfg_.n_stacks; ++s) {
      const std::string sn = "stack" + std::to_string(s);
      auto& st = stacks_[s];
      st.hg.build(params_, sn + ".hg", cfg_.hourglass.depth, feat,
                  cfg_.downsample_mode);
      st.lin_conv.build(params_, sn + ".lin.conv", feat, feat, 1, 1, 0);
      st.lin_bn.build(params_, sn + ".lin.bn", feat);
      st.pred.build(params_, sn + ".pred", feat, cfg_.image_channels, 1, 1, 0);
      st.has_remap = s + 1 < cfg_.n_stacks;
      if (st.has_remap) {
        st.remap_h.build(params_, sn + ".remap_h", feat, feat, 1, 1, 0);
        st.remap_p.build(params_, sn + ".remap_p", cfg_.image_channels, feat, 1,
                         1, 0);
      }
    }
  }

  const GeneratorConfig& config() const { return cfg_; }
  ParamStore<Scalar>& params() { return params_; }
  const ParamStore<Scalar>& params() const { return params_; }

  Output forward(const Var<Scalar>& u, const FwdCtx& ctx) const {
    if (u->val.c() != cfg_.input_channels() || u->val.h() != cfg_.resolution ||
        u->val.w() != cfg_.resolution)
      throw ShapeError("generator: input shape does not match config");
    Output out;
    auto x = stem_res_(stem_conv_(u), ctx);
    for (const auto& st : stacks_) {
      auto hg = st.hg.forward(x, ctx, &out.bottleneck_h, &out.bottleneck_w);
      auto h = relu(st.lin_bn(st.lin_conv(hg), ctx));
      auto img = tanh_op(st.pred(h));
      out.images.push_back(img);
      if (st.has_remap) x = x + st.remap_h(h) + st.remap_p(img);
    }
    return out;
  }

 private:
  struct Stack {
    Hourglass<Scalar> hg;
    Conv2d<Scalar> lin_conv;
    BatchNorm2d<Scalar> lin_bn;
    Conv2d<Scalar> pred, remap_h, remap_p;
    bool has_remap = false;
  };

  GeneratorConfig cfg_;
  ParamStore<Scalar> params_;
  Conv2d<Scalar> stem_conv_;
  Residual<Scalar> stem_res_;
  std::vector<Stack> stacks_;
};

// Patch discriminator: n_layers of stride-2 conv / batch-norm / leaky ReLU
// doubling the width from base_channels, then a single-channel 3x3 conv and a
// sigmoid. Spatial extent of the score map is input / 2^n_layers.
template <typename Scalar>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, int in_channels)
      : cfg_(cfg), in_channels_(in_channels) {
    cfg_.validate();
    layers_.resize(cfg_.n_layers);
    int c = in_channels;
    for (int i = 0; i < cfg_.n_layers; ++i) {
      const int co = cfg_.base_channels << i;
      const std::string ln = "layer" + std::to_string(i);
      layers_[i].conv.build(params_, ln + ".conv", c, co, 4, 2, 1);
      layers_[i].bn.build(params_, ln + ".bn", co);
      c = co;
    }
    final_conv_.build(params_, "final.conv", c, 1, 3, 1, 1);
  }

  const DiscriminatorConfig& config() const { return cfg_; }
  int in_channels() const { return in_channels_; }
  ParamStore<Scalar>& params() { return params_; }
  const ParamStore<Scalar>& params() const { return params_; }

  // x is condition concatenated with candidate image along channels.
  Var<Scalar> forward(const Var<Scalar>& x, const FwdCtx& ctx) const {
    if (x->val.c() != in_channels_)
      throw ShapeError("discriminator: input channel mismatch");
    auto y = x;
    for (const auto& l : layers_)
      y = leaky_relu(l.bn(l.conv(y), ctx), Scalar(0.2));
    return sigmoid(final_conv_(y));
  }

 private:
  struct Layer {
    Conv2d<Scalar> conv;
    BatchNorm2d<Scalar> bn;
  };

  DiscriminatorConfig cfg_;
  int in_channels_;
  ParamStore<Scalar> params_;
  std::vector<Layer> layers_;
  Conv2d<Scalar> final_conv_;
};

}  // namespace rpk
