#pragma once

#include <string>
#include <vector>

#include "rpk/autodiff.hpp"
#include "rpk/nn_ops.hpp"
#include "rpk/rng.hpp"
#include "rpk/tensor.hpp"

namespace rpk {

enum class InitKind { conv_weight, bias, bn_gamma, bn_beta, buffer_mean, buffer_var };

// Named parameter/buffer registry. Registration order is the canonical order
// for initialization, optimizer steps and checkpoint layout.
template <typename Scalar>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<Scalar> var;
    bool trainable = true;
    InitKind kind = InitKind::conv_weight;
    Tensor<Scalar> m, v;  // Adam moments, allocated on first step
  };

  Var<Scalar> add(const std::string& name, int n, int c, int h, int w,
                  InitKind kind, bool trainable = true) {
    Entry e;
    e.name = name;
    e.var = make_var(Tensor<Scalar>(n, c, h, w), trainable);
    e.trainable = trainable;
    e.kind = kind;
    entries_.push_back(std::move(e));
    return entries_.back().var;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  Entry* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  void zero_grad() {
    for (auto& e : entries_)
      if (e.trainable) e.var->grad.v.setZero();
  }

  long num_trainable_scalars() const {
    long n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += static_cast<long>(e.var->val.size());
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

// Deterministic initialization: conv weights ~ N(0, 0.02), biases and shift
// terms 0, normalization gains 1. One sequential stream in registration order.
template <typename Scalar>
void init_parameters(ParamStore<Scalar>& store, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1217));
  for (auto& e : store.entries()) {
    auto& t = e.var->val;
    switch (e.kind) {
      case InitKind::conv_weight:
        for (Eigen::Index i = 0; i < t.size(); ++i)
          t.v[i] = static_cast<Scalar>(rng.normal(0.0, 0.02));
        break;
      case InitKind::bias:
      case InitKind::bn_beta:
      case InitKind::buffer_mean:
        t.v.setZero();
        break;
      case InitKind::bn_gamma:
      case InitKind::buffer_var:
        t.v.setOnes();
        break;
    }
  }
}

struct FwdCtx {
  bool use_batch_stats = true;  // false: normalize with running statistics
  bool update_running = false;  // fold batch stats into running buffers
};

template <typename Scalar>
struct Conv2d {
  Var<Scalar> w, b;
  int stride = 1, pad = 0;

  void build(ParamStore<Scalar>& ps, const std::string& name, int cin, int cout,
             int k, int stride_, int pad_) {
    stride = stride_;
    pad = pad_;
    w = ps.add(name + ".w", cout, cin, k, k, InitKind::conv_weight);
    b = ps.add(name + ".b", 1, cout, 1, 1, InitKind::bias);
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    return conv2d(x, w, b, stride, pad);
  }
};

template <typename Scalar>
struct ConvT2d {
  Var<Scalar> w, b;
  int stride = 1, pad = 0;

  void build(ParamStore<Scalar>& ps, const std::string& name, int cin, int cout,
             int k, int stride_, int pad_) {
    stride = stride_;
    pad = pad_;
    w = ps.add(name + ".w", cin, cout, k, k, InitKind::conv_weight);
    b = ps.add(name + ".b", 1, cout, 1, 1, InitKind::bias);
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    return conv_transpose2d(x, w, b, stride, pad);
  }
};

template <typename Scalar>
struct BatchNorm2d {
  Var<Scalar> gamma, beta, run_mean, run_var;

  void build(ParamStore<Scalar>& ps, const std::string& name, int c) {
    gamma = ps.add(name + ".gamma", 1, c, 1, 1, InitKind::bn_gamma);
    beta = ps.add(name + ".beta", 1, c, 1, 1, InitKind::bn_beta);
    run_mean = ps.add(name + ".run_mean", 1, c, 1, 1, InitKind::buffer_mean, false);
    run_var = ps.add(name + ".run_var", 1, c, 1, 1, InitKind::buffer_var, false);
  }

  Var<Scalar> operator()(const Var<Scalar>& x, const FwdCtx& ctx) const {
    return batch_norm(x, gamma, beta, run_mean->val, run_var->val,
                      ctx.use_batch_stats, ctx.update_running);
  }
};

// Pre-activation bottleneck: three BN-ReLU-conv stages (1x1, 3x3, 1x1) plus
// identity (or 1x1 projection when widths differ).
template <typename Scalar>
struct Residual {
  BatchNorm2d<Scalar> bn1, bn2, bn3;
  Conv2d<Scalar> conv1, conv2, conv3, proj;
  bool has_proj = false;

  void build(ParamStore<Scalar>& ps, const std::string& name, int cin, int cout) {
    const int mid = std::max(1, cout / 2);
    bn1.build(ps, name + ".bn1", cin);
    conv1.build(ps, name + ".conv1", cin, mid, 1, 1, 0);
    bn2.build(ps, name + ".bn2", mid);
    conv2.build(ps, name + ".conv2", mid, mid, 3, 1, 1);
    bn3.build(ps, name + ".bn3", mid);
    conv3.build(ps, name + ".conv3", mid, cout, 1, 1, 0);
    has_proj = cin != cout;
    if (has_proj) proj.build(ps, name + ".proj", cin, cout, 1, 1, 0);
  }

  Var<Scalar> operator()(const Var<Scalar>& x, const FwdCtx& ctx) const {
    auto y = conv1(relu(bn1(x, ctx)));
    y = conv2(relu(bn2(y, ctx)));
    y = conv3(relu(bn3(y, ctx)));
    return (has_proj ? proj(x) : x) + y;
  }
};

}  // namespace rpk
