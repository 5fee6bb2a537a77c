#pragma once

#include <functional>
#include <vector>

#include "rpk/autodiff.hpp"
#include "rpk/tensor.hpp"

// Stacked adversarial and L1 losses. The generator emits one prediction per
// stack and every stack is supervised: the L1 and adversarial terms sum over
// stacks. Probabilities are clamped to [eps, 1-eps] before any log.

namespace rpk {

struct LossReport {
  double l1 = 0;
  double g_adv = 0;
  double d_loss = 0;
  double total_g = 0;
  std::vector<double> per_stack_l1;
};

inline constexpr double kProbEps = 1e-7;

// Critic bound to a fixed condition u: image -> patch probability map.
template <typename Scalar>
using PatchCritic = std::function<Var<Scalar>(const Var<Scalar>&)>;

// Per-stack mean absolute error against the target; total is the sum over
// stacks.
template <typename Scalar>
Var<Scalar> l1_loss(const std::vector<Var<Scalar>>& outputs,
                    const Var<Scalar>& target,
                    std::vector<double>* per_stack = nullptr) {
  if (outputs.empty()) throw ShapeError("l1_loss: no stack outputs");
  if (per_stack) per_stack->clear();
  Var<Scalar> total;
  for (const auto& out : outputs) {
    require_same_shape(out->val, target->val, "l1_loss");
    auto term = mean_all(abs_op(target - out));
    if (per_stack) per_stack->push_back(static_cast<double>(term->val.v[0]));
    total = total ? total + term : term;
  }
  return total;
}

namespace detail {

template <typename Scalar>
Var<Scalar> mean_log_prob(const Var<Scalar>& p) {
  return mean_all(log_op(clamp(p, Scalar(kProbEps), Scalar(1) - Scalar(kProbEps))));
}

}  // namespace detail

// Minimax form: sum_i mean(log(1 - D(u, G(u)[i]))); non-saturating swaps in
// sum_i -mean(log D(u, G(u)[i])).
template <typename Scalar>
Var<Scalar> generator_adv_loss(const PatchCritic<Scalar>& critic,
                               const std::vector<Var<Scalar>>& outputs,
                               bool non_saturating = false) {
  if (outputs.empty()) throw ShapeError("generator_adv_loss: no stack outputs");
  Var<Scalar> total;
  for (const auto& out : outputs) {
    auto p = critic(out);
    auto term = non_saturating
                    ? scale(detail::mean_log_prob(p), Scalar(-1))
                    : detail::mean_log_prob(sub_from(Scalar(1), p));
    total = total ? total + term : term;
  }
  return total;
}

// -[ mean(log D(u,v)) + (1/N_stk) sum_i mean(log(1 - D(u, G(u)[i]))) ].
// Stack terms are averaged so the discriminator gradient scale does not grow
// with the stack count. Generator outputs are detached: no gradient reaches
// the generator from this loss.
template <typename Scalar>
Var<Scalar> discriminator_loss(const PatchCritic<Scalar>& critic,
                               const Var<Scalar>& real,
                               const std::vector<Var<Scalar>>& outputs) {
  if (outputs.empty()) throw ShapeError("discriminator_loss: no stack outputs");
  auto loss = detail::mean_log_prob(critic(real));
  Var<Scalar> fake_sum;
  for (const auto& out : outputs) {
    auto term = detail::mean_log_prob(sub_from(Scalar(1), critic(detach(out))));
    fake_sum = fake_sum ? fake_sum + term : term;
  }
  loss = loss + scale(fake_sum, Scalar(1) / static_cast<Scalar>(outputs.size()));
  return scale(loss, Scalar(-1));
}

// total_g = g_adv + lambda * l1 (lambda defaults to 100 at the config layer).
template <typename Scalar>
Var<Scalar> combined_generator_objective(const PatchCritic<Scalar>& critic,
                                         const std::vector<Var<Scalar>>& outputs,
                                         const Var<Scalar>& target, Scalar lambda,
                                         LossReport* report = nullptr,
                                         bool non_saturating = false) {
  if (lambda < 0) throw ShapeError("combined objective: lambda must be >= 0");
  std::vector<double> per_stack;
  auto l1 = l1_loss(outputs, target, &per_stack);
  auto adv = generator_adv_loss(critic, outputs, non_saturating);
  auto total = adv + scale(l1, lambda);
  if (report) {
    report->l1 = static_cast<double>(l1->val.v[0]);
    report->g_adv = static_cast<double>(adv->val.v[0]);
    report->total_g = static_cast<double>(total->val.v[0]);
    report->per_stack_l1 = std::move(per_stack);
  }
  return total;
}

}  // namespace rpk
