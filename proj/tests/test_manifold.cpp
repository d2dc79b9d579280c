#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hyperskel/manifold.hpp"
#include "oracles.hpp"

using namespace hyperskel;

namespace {

Tensor C(double c) { return Tensor::scalar(c); }

// Uniform direction, radius sqrt(c)|x| uniform in [0, rmax).
Tensor random_point(std::mt19937_64& rng, std::size_t d, double c, double rmax = 0.95) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, rmax);
  std::vector<double> x(d);
  double n = 0.0;
  for (auto& v : x) {
    v = g(rng);
    n += v * v;
  }
  const double r = u(rng) / std::sqrt(c);
  for (auto& v : x) v *= r / std::sqrt(n);
  return Tensor({d}, x);
}

double norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

double max_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

const double kCurvatures[] = {0.1, 1.0, 2.0};

}  // namespace

TEST(Ball, CurvatureIsPositive) {
  PoincareBall b(1.5, true);
  EXPECT_NEAR(b.c(), 1.5, 1e-15);
  EXPECT_TRUE(b.learnable());
  EXPECT_NEAR(b.max_norm(), (1 - 1e-5) / std::sqrt(1.5), 1e-15);
  EXPECT_THROW(PoincareBall(-1.0), DomainError);
  EXPECT_THROW(b.check_inside(Tensor({2}, {1.0, 0.0})), DomainError);
}

TEST(MobiusAdd, Examples) {
  std::mt19937_64 rng(1);
  const Tensor v = random_point(rng, 3, 1.0);
  EXPECT_LT(max_diff(mobius_add(Tensor::zeros({3}), v, C(1)), v), 1e-15);
  EXPECT_LT(norm(mobius_add(-v, v, C(1))), 1e-12);
  const Tensor r = mobius_add(Tensor({2}, {0.3, 0}), Tensor({2}, {0.4, 0}), C(1));
  EXPECT_NEAR(r.values()[0], 0.625, 1e-9);
  EXPECT_NEAR(r.values()[0], (0.3 + 0.4) / (1 + 0.3 * 0.4), 1e-12);
  EXPECT_NEAR(r.values()[1], 0.0, 1e-15);
}

TEST(MobiusAdd, LeftCancellation) {
  std::mt19937_64 rng(2);
  for (double c : kCurvatures) {
    for (int i = 0; i < 200; ++i) {
      const Tensor u = random_point(rng, 4, c, 0.9), v = random_point(rng, 4, c, 0.9);
      const Tensor back = mobius_add(-u, mobius_add(u, v, C(c)), C(c));
      EXPECT_LT(max_diff(back, v), 1e-9);
    }
  }
}

TEST(MobiusAdd, ShapeMismatchThrows) {
  EXPECT_THROW(mobius_add(Tensor::zeros({2}), Tensor::zeros({3}), C(1)), DimensionError);
}

TEST(Dist, Examples) {
  const Tensor u({2}, {0.1, -0.2});
  EXPECT_EQ(dist(u, u, C(1)).item(), 0.0);
  EXPECT_NEAR(dist(Tensor::zeros({2}), Tensor({2}, {0.5, 0}), C(1)).item(),
              2.0 * std::atanh(0.5), 1e-12);
  EXPECT_NEAR(dist(Tensor::zeros({2}), Tensor({2}, {0.5, 0}), C(1)).item(), 1.0986123, 1e-6);
  EXPECT_THROW(dist(Tensor({2}, {1.0, 0}), u, C(1)), DomainError);
}

TEST(Dist, MatchesArcoshForm) {
  std::mt19937_64 rng(3);
  for (double c : kCurvatures) {
    for (int i = 0; i < 200; ++i) {
      const Tensor u = random_point(rng, 3, c), v = random_point(rng, 3, c);
      const double ref = oracle::dist(u.to_vector(), v.to_vector(), c);
      EXPECT_NEAR(dist(u, v, C(c)).item(), ref, 1e-8 * std::max(1.0, ref));
    }
  }
}

TEST(Dist, SymmetricAndTriangle) {
  std::mt19937_64 rng(4);
  for (double c : kCurvatures) {
    for (int i = 0; i < 1000; ++i) {
      const Tensor a = random_point(rng, 3, c), b = random_point(rng, 3, c),
                   e = random_point(rng, 3, c);
      const double ab = dist(a, b, C(c)).item();
      if (i < 100) EXPECT_NEAR(ab, dist(b, a, C(c)).item(), 1e-10);
      EXPECT_LE(dist(a, e, C(c)).item(), ab + dist(b, e, C(c)).item() + 1e-9);
    }
  }
}

TEST(Dist, BatchedAndBroadcast) {
  std::mt19937_64 rng(5);
  const Tensor p = Tensor::uniform({3, 1, 2}, rng, -0.4, 0.4);
  const Tensor q = Tensor::uniform({1, 4, 2}, rng, -0.4, 0.4);
  const Tensor d = dist(p, q, C(1));
  ASSERT_EQ(d.shape(), (Shape{3, 4}));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const Tensor a({2}, {p.at({i, 0, 0}), p.at({i, 0, 1})});
      const Tensor b({2}, {q.at({0, j, 0}), q.at({0, j, 1})});
      EXPECT_DOUBLE_EQ(d.at({i, j}), dist(a, b, C(1)).item());
    }
}

TEST(Dist, BoundaryExpansion) {
  // Fixed Euclidean separation translated outward along a radius.
  for (double c : kCurvatures) {
    const double delta = 0.02 / std::sqrt(c);
    double prev = 0.0;
    for (int k = 0; k < 40; ++k) {
      const double r = (0.02 * k) / std::sqrt(c);
      const double d = dist(Tensor({2}, {r, 0}), Tensor({2}, {r + delta, 0}), C(c)).item();
      EXPECT_GT(d, prev);
      prev = d;
    }
  }
}

TEST(Dist, NearOriginFlatLimit) {
  // As c -> 0 the ball becomes flat with constant conformal factor 2, so point
  // distances tend to 2|u - v| while tangent coordinates map isometrically.
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const Tensor u = random_point(rng, 3, 1.0, 0.1), v = random_point(rng, 3, 1.0, 0.1);
    const double e = norm(u - v);
    if (e < 1e-9) continue;
    EXPECT_LT(std::abs(dist(u, v, C(1e-3)).item() - 2.0 * e) / (2.0 * e), 1e-2);
    const double t = dist(expmap0(u, C(1e-3)), expmap0(v, C(1e-3)), C(1e-3)).item();
    EXPECT_LT(std::abs(t - e) / e, 1e-2);
  }
}

TEST(DistGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (double c : kCurvatures) {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Tensor u = random_point(rng, 3, c, 0.9), v = random_point(rng, 3, c, 0.9);
      const DistGrad g = dist_grad(u.values(), v.values(), 3, c);
      const Tensor fu = finite_difference_grad(
          [&](const Tensor& x) { return dist(x, v, C(c)).item(); }, u);
      const Tensor fv = finite_difference_grad(
          [&](const Tensor& x) { return dist(u, x, C(c)).item(); }, v);
      const Tensor fc = finite_difference_grad(
          [&](const Tensor& x) { return dist(u, v, x).item(); }, C(c), 1e-7);
      worst = std::max({worst, relative_error(g.grad_u, fu.values()),
                        relative_error(g.grad_v, fv.values()),
                        relative_error(g.grad_c, fc.values())});
    }
    EXPECT_LT(worst, 1e-5) << "c=" << c;
  }
}

TEST(DistGrad, RolesSwapForTheSecondArgument) {
  std::mt19937_64 rng(8);
  const Tensor u = random_point(rng, 4, 1.0), v = random_point(rng, 4, 1.0);
  const DistGrad a = dist_grad(u.values(), v.values(), 4, 1.0);
  const DistGrad b = dist_grad(v.values(), u.values(), 4, 1.0);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_DOUBLE_EQ(a.grad_v[k], b.grad_u[k]);
    EXPECT_DOUBLE_EQ(a.grad_u[k], b.grad_v[k]);
  }
}

TEST(DistGrad, DegeneratePairIsZero) {
  const Tensor u({2}, {0.2, 0.1});
  const DistGrad g = dist_grad(u.values(), u.values(), 2, 1.0);
  EXPECT_EQ(g.degenerate[0], 1);
  for (double v : g.grad_u) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_v) EXPECT_EQ(v, 0.0);
}

TEST(DistGrad, IsTheRegisteredBackward) {
  std::mt19937_64 rng(9);
  Tensor u = Tensor::uniform({5, 3}, rng, -0.3, 0.3).set_requires_grad();
  Tensor v = Tensor::uniform({5, 3}, rng, -0.3, 0.3).set_requires_grad();
  backward(sum(dist(u, v, C(1.0))));
  const DistGrad g = dist_grad(u.values(), v.values(), 3, 1.0);
  for (std::size_t i = 0; i < 15; ++i) {
    EXPECT_EQ(u.grad()[i], g.grad_u[i]);
    EXPECT_EQ(v.grad()[i], g.grad_v[i]);
  }
}

TEST(Maps, OriginExamples) {
  EXPECT_EQ(norm(expmap0(Tensor::zeros({3}), C(1))), 0.0);
  const Tensor p = expmap0(Tensor({2}, {0.5, 0}), C(1));
  EXPECT_NEAR(dist(Tensor::zeros({2}), p, C(1)).item(), 0.5, 1e-9);
  EXPECT_THROW(expmap0(Tensor({1}, {NAN}), C(1)), DomainError);
}

TEST(Maps, OriginRoundTrip) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> len(0.0, 3.0);
  for (double c : kCurvatures) {
    for (int i = 0; i < 200; ++i) {
      Tensor v = Tensor::randn({4}, rng);
      v = v * (len(rng) / norm(v));
      const Tensor back = logmap0(expmap0(v, C(c)), C(c));
      EXPECT_LT(max_diff(back, v), 1e-9) << "c=" << c << " |v|=" << norm(v);
      EXPECT_NEAR(dist0(expmap0(v, C(c)), C(c)).item(), norm(v), 1e-9);
    }
  }
}

TEST(Maps, GeneralExamples) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const Tensor x = random_point(rng, 3, 1.0, 0.8);
    Tensor v = Tensor::randn({3}, rng);
    v = v * (std::uniform_real_distribution<double>(0.0, 2.0)(rng) / norm(v));
    EXPECT_LT(max_diff(expmap(x, Tensor::zeros({3}), C(1)), x), 1e-15);
    EXPECT_LT(norm(logmap(x, x, C(1))), 1e-12);
    const Tensor y = expmap(x, v, C(1));
    EXPECT_NEAR(dist(x, y, C(1)).item(), norm(v), 1e-8);
    EXPECT_LT(max_diff(logmap(x, y, C(1)), v), 1e-8);
  }
}

TEST(MobiusMatvec, Examples) {
  std::mt19937_64 rng(12);
  const Tensor x = random_point(rng, 3, 1.0, 0.9);
  EXPECT_LT(max_diff(mobius_matvec(Tensor::eye(3), x, C(1)), x), 1e-12);
  EXPECT_EQ(norm(mobius_matvec(Tensor::zeros({3, 3}), x, C(1))), 0.0);
  // M = 2I at (0.3, 0): logmap0 gives 2 artanh(0.3) along e1; doubling then
  // mapping back gives radius tanh(2 artanh(0.3)).
  const Tensor y = mobius_matvec(Tensor::eye(2) * 2.0, Tensor({2}, {0.3, 0}), C(1));
  EXPECT_NEAR(y.values()[0], std::tanh(2.0 * std::atanh(0.3)), 1e-12);
  const Tensor M = Tensor::randn({3, 3}, rng);
  const Tensor t = logmap0(x, C(1));
  std::vector<double> mt(3, 0.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) mt[i] += M.at({i, j}) * t.values()[j];
  EXPECT_LT(max_diff(mobius_matvec(M, x, C(1)), expmap0(Tensor({3}, mt), C(1))), 1e-14);
}

TEST(Projection, Examples) {
  for (double c : kCurvatures) {
    const double sc = std::sqrt(c);
    const Tensor inner({2}, {0.3 / sc, 0.1 / sc});
    EXPECT_EQ(project_to_ball(inner, C(c)).to_vector(), inner.to_vector());
    EXPECT_NEAR(norm(project_to_ball(Tensor({2}, {1.0 / sc, 0}), C(c))), (1 - 1e-5) / sc, 1e-15);
    EXPECT_NEAR(norm(project_to_ball(Tensor({2}, {0, 10.0 / sc}), C(c))), (1 - 1e-5) / sc, 1e-14);
  }
}

TEST(ClipTangent, Examples) {
  const Tensor small({2}, {0.3, 0.4});
  EXPECT_EQ(clip_tangent(small, C(1)).to_vector(), small.to_vector());
  const Tensor big({2}, {2.0, 0.0});
  EXPECT_NEAR(clip_tangent(big, C(1)).to_vector()[0], 2.0 / (2.0 + 1e-5), 1e-15);
  EXPECT_EQ(norm(clip_tangent(Tensor::zeros({3}), C(1))), 0.0);
}

TEST(Ball, OutputsStayInside) {
  std::mt19937_64 rng(13);
  for (double c : kCurvatures) {
    const double limit = (1 - 1e-5) / std::sqrt(c) * (1 + 1e-12);
    for (int i = 0; i < 100; ++i) {
      const Tensor v = Tensor::randn({3}, rng, 20.0);
      const Tensor x = random_point(rng, 3, c, 0.999);
      EXPECT_LE(norm(expmap0(v, C(c))), limit);
      EXPECT_LE(norm(expmap(x, v, C(c))), limit);
      EXPECT_LE(norm(mobius_add(x, x, C(c))), limit);
    }
  }
}

TEST(Ball, CurvatureGradientFlows) {
  PoincareBall b(0.7, true);
  const Tensor x({2}, {0.3, 0.4});
  backward(dist0(b, expmap0(b, x * 3.0)) + sum(dist(b, Tensor({2}, {0.1, 0.1}), x)));
  ASSERT_TRUE(b.log_c().has_grad());
  const double lc = b.log_c().item();
  auto f = [&](const Tensor& t) {
    const Tensor c = exp(t);
    return (dist0(expmap0(x * 3.0, c), c) + sum(dist(Tensor({2}, {0.1, 0.1}), x, c))).item();
  };
  const Tensor fd = finite_difference_grad(f, Tensor::scalar(lc));
  EXPECT_NEAR(b.log_c().grad()[0], fd.item(), 1e-7);
}
