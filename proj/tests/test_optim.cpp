#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hyperskel/manifold.hpp"
#include "hyperskel/optim.hpp"
#include "oracles.hpp"

using namespace hyperskel;

namespace {

void set_grad(Tensor& t, const std::vector<double>& g) {
  t.set_requires_grad();
  t.zero_grad();
  auto dst = t.mutable_grad();
  std::copy(g.begin(), g.end(), dst.begin());
}

ParamGroup group_of(std::vector<NamedParam> params, double lr, double wd = 0.0) {
  ParamGroup g;
  g.lr = lr;
  g.weight_decay = wd;
  g.params = std::move(params);
  return g;
}

}  // namespace

TEST(AdamW, ZeroGradientNoDecayLeavesParameters) {
  Tensor w({3}, {0.5, -1.0, 2.0});
  set_grad(w, {0, 0, 0});
  auto g = group_of({{"w", &w}}, 0.1);
  AdamState s;
  for (int i = 0; i < 5; ++i) adamw_step(g, s, g.lr);
  EXPECT_EQ(w.to_vector(), (std::vector<double>{0.5, -1.0, 2.0}));
}

TEST(AdamW, FirstStepByHand) {
  Tensor w = Tensor::scalar(0.3);
  set_grad(w, {1.0});
  auto g = group_of({{"w", &w}}, 0.01);
  AdamState s;
  adamw_step(g, s, g.lr);
  // m = 0.1, v = 0.001; bias correction gives m_hat = v_hat = 1.
  EXPECT_NEAR(w.item(), 0.3 - 0.01 * 1.0 / (1.0 + 1e-8), 1e-10);
}

TEST(AdamW, DecayOnlyShrinksByFactor) {
  Tensor w({2}, {3.0, -4.0});
  set_grad(w, {0, 0});
  auto g = group_of({{"w", &w}}, 0.1, 0.01);
  AdamState s;
  adamw_step(g, s, g.lr);
  EXPECT_NEAR(w.values()[0], 3.0 * (1 - 0.001), 1e-15);
  EXPECT_NEAR(w.values()[1], -4.0 * (1 - 0.001), 1e-15);
}

TEST(AdamW, MatchesReferenceTrajectory) {
  // f = 0.5 * sum a_i x_i^2 with a textbook AdamW loop as reference.
  const std::vector<double> a{1.0, 10.0, 0.1};
  std::vector<double> ref{1.0, -2.0, 3.0}, m(3, 0.0), v(3, 0.0);
  Tensor w({3}, ref);
  auto g = group_of({{"w", &w}}, 0.05, 0.01);
  AdamState s;
  for (int t = 1; t <= 10; ++t) {
    std::vector<double> grad(3);
    for (int i = 0; i < 3; ++i) grad[i] = a[i] * w.values()[i];
    set_grad(w, grad);
    adamw_step(g, s, g.lr);
    for (int i = 0; i < 3; ++i) {
      const double gi = a[i] * ref[i];
      ref[i] *= 1.0 - 0.05 * 0.01;
      m[i] = 0.9 * m[i] + 0.1 * gi;
      v[i] = 0.999 * v[i] + 0.001 * gi * gi;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(w.values()[i], ref[i], 1e-9) << "step " << t;
  }
}

TEST(RAdam, FirstStepFromOrigin) {
  for (double c : {0.5, 1.0, 2.0}) {
    PoincareBall ball(c);
    Tensor x = Tensor::zeros({3});
    const std::vector<double> grad{0.4, -1.2, 0.05};
    set_grad(x, grad);
    auto g = group_of({{"x", &x, ParamKind::kManifold}}, 0.01);
    AdamState s;
    radam_step(g, s, ball, g.lr);
    // Riemannian grad g/4; the first Adam step normalizes each coordinate.
    std::vector<double> v(3);
    for (int i = 0; i < 3; ++i) v[i] = -0.01 * (grad[i] / 4) / (std::abs(grad[i] / 4) + 1e-8);
    const double nv = std::sqrt(oracle::sq(v));
    const auto got = x.to_vector();
    for (int i = 0; i < 3; ++i) {
      EXPECT_NEAR(got[i], std::tanh(std::sqrt(c) * nv / 2) / (std::sqrt(c) * nv) * v[i], 1e-10);
    }
    EXPECT_NEAR(oracle::dist({0, 0, 0}, got, c), nv, 1e-10);
  }
}

TEST(RAdam, StaysInsideUnderAdversarialGradients) {
  std::mt19937_64 rng(1);
  for (double c : {0.1, 1.0, 2.0}) {
    PoincareBall ball(c);
    Tensor x({2, 4}, std::vector<double>(8, 0.0));
    auto g = group_of({{"x", &x, ParamKind::kManifold}}, 0.1);
    AdamState s;
    const Tensor dir = Tensor::randn({2, 4}, rng);
    for (int step = 0; step < 10000; ++step) {
      // Gradient pushing outward along a fixed direction.
      std::vector<double> grad(8);
      for (int i = 0; i < 8; ++i) grad[i] = -dir.values()[i] * 1e3;
      set_grad(x, grad);
      radam_step(g, s, ball, g.lr);
      for (int r = 0; r < 2; ++r) {
        double sq = 0.0;
        for (int k = 0; k < 4; ++k) sq += x.values()[r * 4 + k] * x.values()[r * 4 + k];
        ASSERT_LT(std::sqrt(c * sq), 1.0 - PoincareBall::kEpsBoundary) << "step " << step;
      }
    }
  }
}

TEST(RAdam, ConvergesToTarget) {
  std::mt19937_64 rng(2);
  const Tensor c = Tensor::scalar(1.0);
  PoincareBall ball(1.0);
  for (int inst = 0; inst < 5; ++inst) {
    Tensor target = Tensor::randn({3}, rng);
    target = target * (0.9 / norm_last(target).item() * std::uniform_real_distribution<double>(0.1, 1.0)(rng));
    Tensor x = Tensor::zeros({3});
    x.set_requires_grad();
    auto g = group_of({{"x", &x, ParamKind::kManifold}}, 0.01);
    AdamState s;
    for (int step = 0; step < 2000; ++step) {
      x.zero_grad();
      backward(square(dist(x, target, c)));
      radam_step(g, s, ball, g.lr);
    }
    EXPECT_LT(oracle::dist(x.to_vector(), target.to_vector(), 1.0), 1e-3) << "instance " << inst;
  }
}

TEST(RAdam, CurvatureIsPlainScalar) {
  PoincareBall ball(1.5, true);
  set_grad(ball.log_c(), {2.0});
  Tensor x({2}, {0.6, 0.5});
  set_grad(x, {0.0, 0.0});
  auto g = group_of({{"log_c", &ball.log_c(), ParamKind::kCurvature}, {"x", &x, ParamKind::kManifold}}, 0.5);
  AdamState s;
  radam_step(g, s, ball, g.lr);
  EXPECT_NEAR(ball.log_c().item(), std::log(1.5) - 0.5 * 2.0 / (2.0 + 1e-8), 1e-12);
  // The larger curvature shrinks the ball; the point is retracted into it.
  EXPECT_LT(std::sqrt(ball.c()) * std::hypot(x.values()[0], x.values()[1]), 1.0);
}

TEST(RAdam, RejectsEuclideanParameters) {
  PoincareBall ball(1.0);
  Tensor w({2}, {0.0, 0.0});
  auto g = group_of({{"w", &w, ParamKind::kEuclidean}}, 0.1);
  AdamState s;
  EXPECT_THROW(radam_step(g, s, ball, g.lr), std::invalid_argument);
}

TEST(GradClip, Examples) {
  Tensor a({2}, {0.3, 0.4});
  set_grad(a, {0.3, 0.4});
  EXPECT_EQ(clip_global_grad_norm({{"a", &a}}, 1.0), 1.0);
  EXPECT_EQ(a.grad()[0], 0.3);

  Tensor b({4}, {0, 0, 0, 0});
  set_grad(b, {2, 2, 2, 2});
  EXPECT_EQ(clip_global_grad_norm({{"b", &b}}, 1.0), 0.25);
  EXPECT_EQ(b.grad()[0], 0.5);

  std::mt19937_64 rng(3);
  Tensor m1 = Tensor::zeros({3, 4}), m2 = Tensor::zeros({5}), m3 = Tensor::zeros({2, 2, 2});
  set_grad(m1, Tensor::randn({3, 4}, rng, 3.0).to_vector());
  set_grad(m2, Tensor::randn({5}, rng, 3.0).to_vector());
  set_grad(m3, Tensor::randn({8}, rng, 3.0).to_vector());
  const std::vector<NamedParam> ps{{"m1", &m1}, {"m2", &m2}, {"m3", &m3}};
  EXPECT_LT(clip_global_grad_norm(ps, 1.0), 1.0);
  double sq = 0.0;
  for (auto* t : {&m1, &m2, &m3}) {
    for (double g : t->grad()) sq += g * g;
  }
  EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-9);
}

TEST(Schedule, CosineWithWarmup) {
  EXPECT_NEAR(cosine_warmup(0, 5, 100), 0.2, 1e-15);
  EXPECT_NEAR(cosine_warmup(4, 5, 100), 1.0, 1e-15);
  EXPECT_NEAR(cosine_warmup(5, 5, 100), 1.0, 1e-15);
  EXPECT_NEAR(cosine_warmup(100, 5, 100), 0.0, 1e-15);
  EXPECT_NEAR(cosine_warmup(52, 5, 99), 0.5, 1e-12);
  double prev = 2.0;
  for (std::size_t s = 5; s <= 100; ++s) {
    const double f = cosine_warmup(s, 5, 100);
    EXPECT_LE(f, prev);
    prev = f;
  }
}
