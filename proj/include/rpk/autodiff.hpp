#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rpk/tensor.hpp"

namespace rpk {

// Reverse-mode tape node. Graphs are built per forward pass and freed when the
// last Var handle goes out of scope; one backward() call per graph.
template <typename Scalar>
struct Node {
  Tensor<Scalar> val;
  Tensor<Scalar> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != val.size())
      grad.resize(val.dims[0], val.dims[1], val.dims[2], val.dims[3]);
  }
};

template <typename Scalar>
using Var = std::shared_ptr<Node<Scalar>>;

template <typename Scalar>
Var<Scalar> make_var(Tensor<Scalar> t, bool requires_grad = false) {
  auto n = std::make_shared<Node<Scalar>>();
  n->val = std::move(t);
  n->requires_grad = requires_grad;
  if (requires_grad) n->ensure_grad();
  return n;
}

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> t) {
  return make_var(std::move(t), false);
}

// Value copy severed from the graph.
template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& a) {
  return make_var(a->val, false);
}

namespace detail {

template <typename Scalar>
Var<Scalar> unary(const Var<Scalar>& a, Tensor<Scalar> val,
                  std::function<void(Node<Scalar>&)> bp) {
  auto n = std::make_shared<Node<Scalar>>();
  n->val = std::move(val);
  n->parents = {a};
  n->requires_grad = a->requires_grad;
  if (n->requires_grad) n->backprop = std::move(bp);
  return n;
}

template <typename Scalar>
Var<Scalar> binary(const Var<Scalar>& a, const Var<Scalar>& b, Tensor<Scalar> val,
                   std::function<void(Node<Scalar>&)> bp) {
  auto n = std::make_shared<Node<Scalar>>();
  n->val = std::move(val);
  n->parents = {a, b};
  n->requires_grad = a->requires_grad || b->requires_grad;
  if (n->requires_grad) n->backprop = std::move(bp);
  return n;
}

template <typename Scalar, typename Expr>
void accum(Node<Scalar>& p, const Expr& e) {
  p.ensure_grad();
  p.grad.v += e;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a->val, b->val, "add");
  Tensor<Scalar> out = a->val;
  out.v += b->val.v;
  return detail::binary<Scalar>(a, b, std::move(out), [](Node<Scalar>& self) {
    for (int i = 0; i < 2; ++i)
      if (self.parents[i]->requires_grad) detail::accum(*self.parents[i], self.grad.v);
  });
}

template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a->val, b->val, "sub");
  Tensor<Scalar> out = a->val;
  out.v -= b->val.v;
  return detail::binary<Scalar>(a, b, std::move(out), [](Node<Scalar>& self) {
    if (self.parents[0]->requires_grad) detail::accum(*self.parents[0], self.grad.v);
    if (self.parents[1]->requires_grad) detail::accum(*self.parents[1], -self.grad.v);
  });
}

template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a->val, b->val, "mul");
  Tensor<Scalar> out = a->val;
  out.v *= b->val.v;
  return detail::binary<Scalar>(a, b, std::move(out), [](Node<Scalar>& self) {
    if (self.parents[0]->requires_grad)
      detail::accum(*self.parents[0], self.grad.v * self.parents[1]->val.v);
    if (self.parents[1]->requires_grad)
      detail::accum(*self.parents[1], self.grad.v * self.parents[0]->val.v);
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar k) {
  Tensor<Scalar> out = a->val;
  out.v *= k;
  return detail::unary<Scalar>(a, std::move(out), [k](Node<Scalar>& self) {
    detail::accum(*self.parents[0], self.grad.v * k);
  });
}

template <typename Scalar>
Var<Scalar> operator*(Scalar k, const Var<Scalar>& a) {
  return scale(a, k);
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar k) {
  Tensor<Scalar> out = a->val;
  out.v += k;
  return detail::unary<Scalar>(a, std::move(out), [](Node<Scalar>& self) {
    detail::accum(*self.parents[0], self.grad.v);
  });
}

// k - a, elementwise.
template <typename Scalar>
Var<Scalar> sub_from(Scalar k, const Var<Scalar>& a) {
  Tensor<Scalar> out = a->val;
  out.v = k - out.v;
  return detail::unary<Scalar>(a, std::move(out), [](Node<Scalar>& self) {
    detail::accum(*self.parents[0], -self.grad.v);
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  Tensor<Scalar> out = a->val;
  out.v = out.v.max(Scalar(0));
  return detail::unary<Scalar>(a, std::move(out), [](Node<Scalar>& self) {
    auto& x = self.parents[0]->val.v;
    detail::accum(*self.parents[0],
                  self.grad.v * (x > Scalar(0)).template cast<Scalar>());
  });
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& a, Scalar slope) {
  Tensor<Scalar> out = a->val;
  out.v = out.v.max(Scalar(0)) + slope * out.v.min(Scalar(0));
  return detail::unary<Scalar>(a, std::move(out), [slope](Node<Scalar>& self) {
    auto& x = self.parents[0]->val.v;
    detail::accum(*self.parents[0],
                  self.grad.v * ((x > Scalar(0)).template cast<Scalar>() *
                                     (Scalar(1) - slope) +
                                 slope));
  });
}

template <typename Scalar>
Var<Scalar> tanh_op(const Var<Scalar>& a) {
  Tensor<Scalar> out = a->val;
  out.v = out.v.tanh();
  return detail::unary<Scalar>(a, std::move(out), [](Node<Scalar>& self) {
    detail::accum(*self.parents[0], self.grad.v * (Scalar(1) - self.val.v.square()));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  Tensor<Scalar> out = a->val;
  out.v = Scalar(1) / (Scalar(1) + (-out.v).exp());
  return detail::unary<Scalar>(a, std::move(out), [](Node<Scalar>& self) {
    detail::accum(*self.parents[0],
                  self.grad.v * self.val.v * (Scalar(1) - self.val.v));
  });
}

// Gradient passes only strictly inside [lo, hi].
template <typename Scalar>
Var<Scalar> clamp(const Var<Scalar>& a, Scalar lo, Scalar hi) {
  Tensor<Scalar> out = a->val;
  out.v = out.v.max(lo).min(hi);
  return detail::unary<Scalar>(a, std::move(out), [lo, hi](Node<Scalar>& self) {
    auto& x = self.parents[0]->val.v;
    detail::accum(*self.parents[0],
                  self.grad.v * ((x > lo) && (x < hi)).template cast<Scalar>());
  });
}

template <typename Scalar>
Var<Scalar> log_op(const Var<Scalar>& a) {
  Tensor<Scalar> out = a->val;
  out.v = out.v.log();
  return detail::unary<Scalar>(a, std::move(out), [](Node<Scalar>& self) {
    detail::accum(*self.parents[0], self.grad.v / self.parents[0]->val.v);
  });
}

template <typename Scalar>
Var<Scalar> abs_op(const Var<Scalar>& a) {
  Tensor<Scalar> out = a->val;
  out.v = out.v.abs();
  return detail::unary<Scalar>(a, std::move(out), [](Node<Scalar>& self) {
    auto& x = self.parents[0]->val.v;
    detail::accum(*self.parents[0], self.grad.v * x.sign());
  });
}

// Mean over every element; result is a 1x1x1x1 scalar node.
template <typename Scalar>
Var<Scalar> mean_all(const Var<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a->val.v.mean());
  return detail::unary<Scalar>(a, std::move(out), [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    const Scalar g = self.grad.v[0] / static_cast<Scalar>(p.val.size());
    p.ensure_grad();
    p.grad.v += g;
  });
}

// Channel concatenation; n/h/w must match.
template <typename Scalar>
Var<Scalar> concat_c(const Var<Scalar>& a, const Var<Scalar>& b) {
  const auto& da = a->val.dims;
  const auto& db = b->val.dims;
  if (da[0] != db[0] || da[2] != db[2] || da[3] != db[3])
    throw ShapeError("concat_c: n/h/w mismatch");
  Tensor<Scalar> out(da[0], da[1] + db[1], da[2], da[3]);
  const Eigen::Index hw = static_cast<Eigen::Index>(da[2]) * da[3];
  for (int n = 0; n < da[0]; ++n) {
    std::copy(a->val.plane(n, 0), a->val.plane(n, 0) + da[1] * hw, out.plane(n, 0));
    std::copy(b->val.plane(n, 0), b->val.plane(n, 0) + db[1] * hw, out.plane(n, da[1]));
  }
  const int ca = da[1];
  return detail::binary<Scalar>(a, b, std::move(out), [ca, hw](Node<Scalar>& self) {
    auto& a_ = *self.parents[0];
    auto& b_ = *self.parents[1];
    const int cb = b_.val.dims[1];
    for (int n = 0; n < self.val.dims[0]; ++n) {
      if (a_.requires_grad) {
        a_.ensure_grad();
        for (Eigen::Index i = 0; i < ca * hw; ++i)
          a_.grad.plane(n, 0)[i] += self.grad.plane(n, 0)[i];
      }
      if (b_.requires_grad) {
        b_.ensure_grad();
        for (Eigen::Index i = 0; i < cb * hw; ++i)
          b_.grad.plane(n, 0)[i] += self.grad.plane(n, ca)[i];
      }
    }
  });
}

// Backward pass from a scalar root. Reverse topological order over the
// gradient-carrying subgraph; each node's backprop runs once.
template <typename Scalar>
void backward(const Var<Scalar>& root) {
  if (root->val.size() != 1) throw ShapeError("backward: root must be scalar");
  root->ensure_grad();
  root->grad.v.setOnes();
  if (!root->requires_grad) return;

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  struct Frame {
    Node<Scalar>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<Scalar>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

}  // namespace rpk
