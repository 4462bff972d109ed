#include <gtest/gtest.h>

#include <cmath>

#include "v2m/core/error.hpp"
#include "v2m/core/grad_check.hpp"
#include "v2m/core/ops.hpp"
#include "v2m/flowgen/flowgen.hpp"

using namespace v2m;
using namespace v2m::flowgen;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

DitConfig tiny(std::size_t layers = 1) {
  DitConfig c;
  c.latent_channels = 3;
  c.cond_dim = 4;
  c.hidden = 8;
  c.layers = layers;
  c.heads = 2;
  c.ffn = 12;
  c.time_dim = 6;
  return c;
}

}  // namespace

TEST(Interpolate, EndpointsAndMidpoint) {
  Rng rng(1);
  const Tensor a = random_tensor({4, 3}, rng), b = random_tensor({4, 3}, rng);
  EXPECT_EQ(interpolate(a, b, 0.0), a);
  EXPECT_EQ(interpolate(a, b, 1.0), b);
  const Tensor m = interpolate(a, b, 0.5);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(m[i], 0.5 * (a[i] + b[i]), 1e-15);
  for (double t : {0.1, 0.7}) EXPECT_EQ(interpolate(a, a, t), a);
  EXPECT_THROW(interpolate(a, b, -0.01), InputError);
  EXPECT_THROW(interpolate(a, b, 1.01), InputError);
}

TEST(Dit, ShapeForAnyLength) {
  ParamStore store;
  Rng rng(2);
  VelocityModel m(tiny(2), store, rng);
  for (std::size_t n : {1u, 5u, 17u}) {
    const Tensor z = random_tensor({n, 3}, rng), c = random_tensor({n, 4}, rng);
    EXPECT_EQ(m.velocity(z, 0.3, &c).shape(), z.shape());
    EXPECT_EQ(m.velocity(z, 0.3, nullptr).shape(), z.shape());
  }
}

TEST(Dit, LengthMismatchIsDimensionError) {
  ParamStore store;
  Rng rng(3);
  VelocityModel m(tiny(), store, rng);
  const Tensor z = random_tensor({5, 3}, rng), c = random_tensor({6, 4}, rng);
  EXPECT_THROW(m.velocity(z, 0.5, &c), DimensionError);
}

TEST(Dit, NullConditionChangesOutput) {
  ParamStore store;
  Rng rng(4);
  VelocityModel m(tiny(), store, rng);
  const Tensor z = random_tensor({6, 3}, rng), c = random_tensor({6, 4}, rng);
  EXPECT_NE(m.velocity(z, 0.5, &c), m.velocity(z, 0.5, nullptr));
  Tensor all({6}, 1.0);
  EXPECT_EQ(m.velocity(z, 0.5, &c, &all), m.velocity(z, 0.5, nullptr));
}

TEST(Dit, GradientOneLayer) {
  ParamStore store;
  Rng rng(5);
  VelocityModel m(tiny(1), store, rng);
  const std::vector<Tensor> in{random_tensor({2, 4, 3}, rng), random_tensor({2, 4, 4}, rng)};
  const Tensor probe = random_tensor({2, 4, 3}, rng);
  const auto f = [&](Graph& g, std::span<const Var> v) {
    return sum(mul(m.forward(g, v[0], {0.2, 0.8}, v[1]), g.constant(probe)));
  };
  EXPECT_LT(grad_check(f, in, 1e-5).max_rel_error, 1e-5);
}

TEST(Rfm, OracleModelHasZeroLoss) {
  Rng rng(6);
  const Tensor target = random_tensor({2, 5, 3}, rng);
  Graph g;
  EXPECT_EQ(rfm_objective(g.constant(target), target, {0, 2}).value().item(), 0.0);
}

TEST(Rfm, ZeroModelGivesMeanSquaredNorm) {
  Rng rng(7);
  const Tensor z1 = random_tensor({2, 5, 3}, rng);
  double expected = 0.0;
  for (double v : z1.data()) expected += v * v;
  expected /= 10.0;
  Graph g;
  // z0 = 0 so the target velocity is z1.
  EXPECT_NEAR(rfm_objective(g.constant(Tensor(z1.shape())), z1, {0, 0}).value().item(), expected, 1e-12);
}

TEST(Rfm, ContextFramesCarryNoLossOrGradient) {
  Rng rng(8);
  const Tensor target = random_tensor({2, 6, 3}, rng);
  Graph g;
  Var v = g.input(random_tensor({2, 6, 3}, rng));
  Var loss = rfm_objective(v, target, {6, 2});
  g.backward(loss);
  const Tensor gv = g.grad(v);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(gv.at({0, t, c}), 0.0);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(gv.at({1, t, c}), 0.0);
  EXPECT_NE(gv.at({1, 2, 0}), 0.0);

  Graph h;
  Var w = h.input(random_tensor({1, 4, 3}, rng));
  Var all = rfm_objective(w, random_tensor({1, 4, 3}, rng), {4});
  EXPECT_EQ(all.value().item(), 0.0);
  h.backward(all);
  const Tensor gw = h.grad(w);
  for (double x : gw.data()) EXPECT_EQ(x, 0.0);
}

TEST(Rfm, FullModelContextGradientIsZero) {
  ParamStore store;
  Rng rng(9);
  VelocityModel m(tiny(), store, rng);
  const Tensor z1 = random_tensor({1, 5, 3}, rng);
  RfmDraw d;
  d.t = {0.4};
  d.z0 = random_tensor({1, 5, 3}, rng);
  d.dropped = {false};
  d.context = {5};
  Graph g;
  Var loss = rfm_loss(m, g, z1, g.constant(random_tensor({1, 5, 4}, rng)), d);
  EXPECT_EQ(loss.value().item(), 0.0);
  g.backward(loss);
  for (const auto& [name, p] : store)
    for (double x : p.grad.data()) ASSERT_EQ(x, 0.0) << name;
}

TEST(Rfm, DrawFrequencies) {
  RfmConfig cfg;
  cfg.icl_prob = 0.8;
  Rng rng(10);
  std::size_t dropped = 0, icl = 0;
  const std::size_t n = 20000;
  const RfmDraw d = draw_rfm(n, 120, 1, cfg, rng);
  for (std::size_t b = 0; b < n; ++b) {
    dropped += d.dropped[b] ? 1 : 0;
    if (d.context[b] > 0) {
      ++icl;
      EXPECT_GE(d.context[b], 10u);
      EXPECT_LE(d.context[b], 39u);
    }
    EXPECT_GE(d.t[b], 0.0);
    EXPECT_LT(d.t[b], 1.0);
  }
  EXPECT_NEAR(static_cast<double>(dropped) / n, 0.2, 0.02);
  EXPECT_NEAR(static_cast<double>(icl) / n, 0.8, 0.02);
}

TEST(Cfg, Identities) {
  ParamStore store;
  Rng rng(11);
  VelocityModel m(tiny(), store, rng);
  const Tensor z = random_tensor({7, 3}, rng), c = random_tensor({7, 4}, rng);
  const Tensor vc = m.velocity(z, 0.6, &c), vn = m.velocity(z, 0.6, nullptr);
  EXPECT_EQ(cfg_velocity(m, z, 0.6, c, 1.0), vc);
  EXPECT_EQ(cfg_velocity(m, z, 0.6, c, 0.0), vn);
  const Tensor v4 = cfg_velocity(m, z, 0.6, c, 4.0);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(v4[i], 4.0 * vc[i] - 3.0 * vn[i], 1e-12);
}

TEST(Euler, ConstantFieldExactInOneStep) {
  Rng rng(12);
  const Tensor z0 = random_tensor({5, 3}, rng), z1 = random_tensor({5, 3}, rng);
  Tensor v(z0.shape());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = z1[i] - z0[i];
  const Tensor out = euler_integrate([&](const Tensor&, double) { return v; }, z0, 1);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out[i], z1[i], 1e-12);
}

TEST(Euler, FirstOrderConvergence) {
  const Tensor z0({1, 1}, 1.0);
  const auto field = [](const Tensor& z, double) {
    Tensor d = z;
    for (double& x : d.data()) x = -x;
    return d;
  };
  std::vector<double> err;
  for (std::size_t steps : {10u, 20u, 40u, 80u}) err.push_back(std::abs(euler_integrate(field, z0, steps)[0] - std::exp(-1.0)));
  for (std::size_t i = 1; i < err.size(); ++i) {
    const double ratio = err[i - 1] / err[i];
    EXPECT_GE(ratio, 1.8);
    EXPECT_LE(ratio, 2.2);
  }
}

TEST(Sample, PromptPrefixIsExact) {
  ParamStore store;
  Rng rng(13);
  VelocityModel m(tiny(), store, rng);
  const Tensor cond = random_tensor({9, 4}, rng), z0 = random_tensor({9, 3}, rng);
  const Tensor prompt = random_tensor({3, 3}, rng);
  const Tensor out = sample(m, cond, {8, 4.0}, z0, &prompt);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at({t, c}), prompt.at({t, c}));
  EXPECT_EQ(out, sample(m, cond, {8, 4.0}, z0, &prompt));
}
