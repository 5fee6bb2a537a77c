#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "gradcheck.hpp"
#include "rpk/netgraph.hpp"
#include "rpk/objective.hpp"
#include "rpk/rng.hpp"

using namespace rpk;

namespace {

Var<double> const_image(double v, int c = 3, int hw = 4) {
  return constant(Tensor<double>::full(1, c, hw, hw, v));
}

PatchCritic<double> const_critic(std::vector<double> patch_scores) {
  return [patch_scores](const Var<double>&) {
    Tensor<double> t(1, 1, 1, static_cast<int>(patch_scores.size()));
    for (std::size_t i = 0; i < patch_scores.size(); ++i)
      t.v[static_cast<Eigen::Index>(i)] = patch_scores[i];
    return constant(t);
  };
}

GeneratorConfig tiny_gen_config() {
  GeneratorConfig g;
  g.n_stacks = 1;
  g.resolution = 8;
  g.pose_channels = 2;
  g.hourglass.depth = 2;
  g.hourglass.feat_channels = 4;
  return g;
}

}  // namespace

TEST_CASE("l1 loss per stack and total") {
  auto target = const_image(0.5);
  std::vector<Var<double>> outs = {const_image(0.3), const_image(0.6)};
  std::vector<double> per_stack;
  auto total = l1_loss(outs, target, &per_stack);
  REQUIRE(per_stack.size() == 2);
  CHECK(per_stack[0] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(per_stack[1] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(total->val.v[0] == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("l1 equals outputs when all stacks hit the target") {
  auto target = const_image(0.25);
  auto total = l1_loss<double>({const_image(0.25), const_image(0.25)}, target);
  CHECK(total->val.v[0] == 0.0);
}

TEST_CASE("single stack l1 is plain mean absolute error") {
  Rng rng(5);
  auto out = make_var(rpktest::random_tensor(rng, 2, 3, 4, 4));
  auto target = make_var(rpktest::random_tensor(rng, 2, 3, 4, 4));
  auto total = l1_loss<double>({out}, target);
  const double direct = (out->val.v - target->val.v).abs().mean();
  CHECK(total->val.v[0] == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("l1 is invariant under a shared pixel permutation") {
  Rng rng(6);
  auto out = rpktest::random_tensor(rng, 1, 3, 4, 4);
  auto target = rpktest::random_tensor(rng, 1, 3, 4, 4);
  std::vector<int> perm(16);
  for (int i = 0; i < 16; ++i) perm[i] = i;
  rng.shuffle(perm);
  Tensor<double> out_p = out, target_p = target;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 16; ++i) {
      out_p.plane(0, c)[perm[i]] = out.plane(0, c)[i];
      target_p.plane(0, c)[perm[i]] = target.plane(0, c)[i];
    }
  auto a = l1_loss<double>({make_var(out)}, make_var(target));
  auto b = l1_loss<double>({make_var(out_p)}, make_var(target_p));
  CHECK(a->val.v[0] == doctest::Approx(b->val.v[0]).epsilon(1e-12));
}

TEST_CASE("generator adversarial loss, constant critic 0.5, three stacks") {
  auto critic = const_critic({0.5});
  auto loss = generator_adv_loss<double>(
      critic, {const_image(0.1), const_image(0.2), const_image(0.3)});
  CHECK(loss->val.v[0] == doctest::Approx(-2.0794415416798359).epsilon(1e-9));
}

TEST_CASE("generator adversarial loss, fully fooled critic") {
  auto critic = const_critic({kProbEps});
  auto loss = generator_adv_loss<double>(
      critic, {const_image(0.1), const_image(0.2), const_image(0.3)});
  CHECK(std::abs(loss->val.v[0]) < 1e-6);
}

TEST_CASE("generator adversarial loss, mixed patch map") {
  auto critic = const_critic({0.8, 0.2});
  auto loss = generator_adv_loss<double>(critic, {const_image(0.0)});
  // mean(log(1-D)) over D = {0.8, 0.2}: (log 0.2 + log 0.8) / 2.
  CHECK(loss->val.v[0] == doctest::Approx(-0.91629073187415511).epsilon(1e-9));
}

TEST_CASE("non-saturating mode") {
  auto critic = const_critic({0.25});
  auto loss = generator_adv_loss<double>(critic, {const_image(0.0)}, true);
  CHECK(loss->val.v[0] == doctest::Approx(-std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("discriminator loss, constant 0.5") {
  auto critic = const_critic({0.5});
  auto loss =
      discriminator_loss<double>(critic, const_image(0.9), {const_image(0.1)});
  CHECK(loss->val.v[0] == doctest::Approx(1.3862943611198906).epsilon(1e-9));
}

TEST_CASE("discriminator loss at the optimum is near zero") {
  // Real scored 1, fakes scored ~0; both clamp to the eps boundary.
  auto critic = [](const Var<double>& img) {
    const double v = img->val.v[0] > 0.5 ? 1.0 : 0.0;
    return constant(Tensor<double>::full(1, 1, 1, 1, v));
  };
  auto loss =
      discriminator_loss<double>(critic, const_image(0.9), {const_image(0.1)});
  CHECK(std::abs(loss->val.v[0]) < 1e-5);
}

TEST_CASE("discriminator loss, two stacks hand example") {
  int call = 0;
  auto critic = [&call](const Var<double>&) {
    const double scores[] = {0.9, 0.1, 0.2};  // real, fake stack 1, fake stack 2
    return constant(Tensor<double>::full(1, 1, 1, 1, scores[call++]));
  };
  auto loss = discriminator_loss<double>(PatchCritic<double>(critic),
                                         const_image(0.9),
                                         {const_image(0.1), const_image(0.2)});
  // -[log 0.9 + 0.5*(log 0.9 + log 0.8)]
  CHECK(loss->val.v[0] == doctest::Approx(0.26961254914384428).epsilon(1e-9));
}

TEST_CASE("combined objective: lambda 0 collapses to the adversarial term") {
  auto critic = const_critic({0.4});
  std::vector<Var<double>> outs = {const_image(0.3)};
  LossReport rep;
  auto total = combined_generator_objective<double>(critic, outs,
                                                    const_image(0.5), 0.0, &rep);
  CHECK(total->val.v[0] == doctest::Approx(rep.g_adv).epsilon(1e-12));
  CHECK(rep.total_g == doctest::Approx(rep.g_adv + 0.0 * rep.l1).epsilon(1e-12));
}

TEST_CASE("combined objective hand example") {
  auto critic = const_critic({0.5});
  std::vector<Var<double>> outs = {const_image(0.3), const_image(0.6)};
  LossReport rep;
  auto total = combined_generator_objective<double>(
      critic, outs, const_image(0.5), 100.0, &rep);
  // 2*log(0.5) + 100*0.3
  CHECK(total->val.v[0] == doctest::Approx(28.613705638880049).epsilon(1e-9));
  CHECK(rep.l1 == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(rep.per_stack_l1.size() == 2);
  CHECK(rep.total_g == doctest::Approx(rep.g_adv + 100.0 * rep.l1).epsilon(1e-9));
}

TEST_CASE("gradient of the combined objective is affine in lambda") {
  GeneratorConfig gcfg = tiny_gen_config();
  Generator<double> gen(gcfg);
  init_parameters(gen.params(), 11);
  DiscriminatorConfig dcfg;
  dcfg.n_layers = 2;
  dcfg.base_channels = 4;
  Discriminator<double> disc(dcfg, gcfg.input_channels() + gcfg.image_channels);
  init_parameters(disc.params(), 13);

  Rng rng(17);
  auto u = constant(rpktest::random_tensor(rng, 2, gcfg.input_channels(), 8, 8));
  auto v = constant(rpktest::random_tensor(rng, 2, 3, 8, 8, 0.5));
  FwdCtx ctx;
  PatchCritic<double> critic = [&](const Var<double>& img) {
    return disc.forward(concat_c(u, img), ctx);
  };

  auto grads_at = [&](double lambda) {
    gen.params().zero_grad();
    disc.params().zero_grad();
    auto outs = gen.forward(u, ctx).images;
    auto total = combined_generator_objective<double>(critic, outs, v, lambda);
    backward(total);
    std::vector<double> g;
    for (auto& e : gen.params().entries())
      if (e.trainable)
        for (Eigen::Index i = 0; i < e.var->grad.size(); ++i)
          g.push_back(e.var->grad.v[i]);
    return g;
  };

  auto g0 = grads_at(0.0), g1 = grads_at(1.0), g100 = grads_at(100.0);
  REQUIRE(g0.size() == g1.size());
  double worst_abs = 0, scale = 0;
  for (std::size_t i = 0; i < g0.size(); ++i) {
    const double predicted = g0[i] + 100.0 * (g1[i] - g0[i]);
    worst_abs = std::max(worst_abs, std::abs(predicted - g100[i]));
    scale = std::max(scale, std::abs(g100[i]));
  }
  REQUIRE(scale > 0);
  CHECK(worst_abs / scale < 1e-9);
}

TEST_CASE("discriminator loss leaks no gradient into the generator") {
  GeneratorConfig gcfg = tiny_gen_config();
  Generator<double> gen(gcfg);
  init_parameters(gen.params(), 19);
  DiscriminatorConfig dcfg;
  dcfg.n_layers = 2;
  dcfg.base_channels = 4;
  Discriminator<double> disc(dcfg, gcfg.input_channels() + gcfg.image_channels);
  init_parameters(disc.params(), 23);

  Rng rng(29);
  auto u = constant(rpktest::random_tensor(rng, 1, gcfg.input_channels(), 8, 8));
  auto v = constant(rpktest::random_tensor(rng, 1, 3, 8, 8, 0.5));
  FwdCtx ctx;
  PatchCritic<double> critic = [&](const Var<double>& img) {
    return disc.forward(concat_c(u, img), ctx);
  };

  gen.params().zero_grad();
  disc.params().zero_grad();
  auto outs = gen.forward(u, ctx).images;
  auto dl = discriminator_loss<double>(critic, v, outs);
  backward(dl);
  for (auto& e : gen.params().entries())
    if (e.trainable)
      for (Eigen::Index i = 0; i < e.var->grad.size(); ++i)
        REQUIRE(e.var->grad.v[i] == 0.0);
  // ... while the discriminator itself does receive gradient.
  double dnorm = 0;
  for (auto& e : disc.params().entries())
    if (e.trainable) dnorm += e.var->grad.v.abs().sum();
  CHECK(dnorm > 0.0);
}
