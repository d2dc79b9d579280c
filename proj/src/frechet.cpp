#include "hyperskel/frechet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hyperskel/manifold.hpp"

namespace hyperskel {

void FrechetConfig::validate() const {
  if (max_iter < 1) throw std::invalid_argument("frechet: max_iter must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("frechet: tol must be > 0");
  if (!(step > 0.0 && step <= 2.0)) throw std::invalid_argument("frechet: step must be in (0, 2]");
  if (!(weight_temperature > 0.0)) throw std::invalid_argument("frechet: temperature must be > 0");
}

Tensor part_weights(const Tensor& points, const Tensor& c, double temperature) {
  if (points.rank() < 2 || points.dim(-2) == 0) {
    throw DimensionError("part_weights: need a nonempty point axis, got " +
                         shape_str(points.shape()));
  }
  return softmax(dist0(points, c) / temperature, -1);
}

namespace {

constexpr double kDescentSlack = 1e-14;
constexpr int kMaxHalvings = 40;

struct Batched {
  Tensor points;   // (R, N, d)
  Tensor weights;  // (R, N)
  bool squeeze = false;
};

Batched batch_inputs(const Tensor& points, const Tensor& weights) {
  Batched b{points, weights, false};
  if (points.rank() == 2 && weights.rank() == 1) {
    b.points = reshape(points, {1, points.dim(0), points.dim(1)});
    b.weights = reshape(weights, {1, weights.dim(0)});
    b.squeeze = true;
  }
  if (b.points.rank() != 3 || b.weights.rank() != 2 ||
      b.points.dim(0) != b.weights.dim(0) || b.points.dim(1) != b.weights.dim(1)) {
    throw DimensionError("frechet: points " + shape_str(points.shape()) + " and weights " +
                         shape_str(weights.shape()) + " disagree");
  }
  if (b.points.dim(1) == 0) throw DimensionError("frechet: no points to average");
  const std::size_t N = b.weights.dim(1);
  const auto w = b.weights.values();
  for (std::size_t r = 0; r < b.weights.dim(0); ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double wi = w[r * N + i];
      if (!(wi >= 0.0)) throw DomainError("frechet: negative weight", wi);
      s += wi;
    }
    if (std::abs(s - 1.0) > 1e-9) throw DomainError("frechet: weights do not sum to 1", s);
  }
  return b;
}

Tensor first_positive(const Batched& b) {
  const std::size_t R = b.points.dim(0), N = b.points.dim(1), d = b.points.dim(2);
  const auto w = b.weights.values();
  std::vector<std::size_t> idx(R);
  for (std::size_t r = 0; r < R; ++r) {
    std::size_t j = 0;
    while (j + 1 < N && w[r * N + j] <= 0.0) ++j;
    idx[r] = r * N + j;
  }
  return index_select(reshape(b.points, {R * N, d}), idx);
}

// Step along v = sum_i w_i log_mu(p_i) that minimizes the quadratic model of
// the objective, as a multiple of eta, shape (R, 1). In tangent coordinates
// half the squared distance to p_i has Hessian 1 along log_mu(p_i) and
// x coth(x) across it (x = sqrt(c) d_i), so
//   v'Hv = |v|^2 + c sum_i w_i q(x_i) (|v|^2 d_i^2 - (v . l_i)^2)
// with q(x) = (x coth(x) - 1) / x^2. The scale is 1 for collinear points and
// in the flat limit, where the plain iteration is exact. Kept on the tape
// since the unrolled iterations are differentiated.
Tensor step_scale(const Tensor& logs, const Tensor& v, const Tensor& weights, const Tensor& c) {
  const std::size_t R = logs.dim(0), N = logs.dim(1), d = logs.dim(2);
  const Tensor vv = clamp_min(sum(square(v), -1, true), 1e-300);
  const Tensor ll = sum(square(logs), -1);
  const Tensor vl = sum(logs * reshape(v, {R, 1, d}), -1);
  const Tensor x = clamp_min(sqrt(c) * reshape(norm_last(logs), {R, N}), 1e-3);
  const Tensor q = (x / tanh(x) - 1.0) / square(x);
  const Tensor across = ll - square(vl) / vv;
  return Tensor::scalar(1.0) / (c * sum(weights * q * across, -1, true) + 1.0);
}

}  // namespace

std::vector<double> frechet_objective(const Tensor& mean, const Tensor& points,
                                      const Tensor& weights, const Tensor& c) {
  const Batched b = batch_inputs(points.detach(), weights.detach());
  const std::size_t R = b.points.dim(0), d = b.points.dim(2);
  const Tensor mu = reshape(mean.detach(), {R, 1, d});
  const Tensor dd = dist(mu, b.points, c.detach());
  const Tensor f = sum(b.weights * square(dd), -1);
  return f.to_vector();
}

FrechetResult frechet_mean(const Tensor& points, const Tensor& weights, const Tensor& c,
                           const FrechetConfig& cfg, const std::optional<Tensor>& init,
                           bool record_objective) {
  cfg.validate();
  const Batched b = batch_inputs(points, weights);
  const std::size_t R = b.points.dim(0), d = b.points.dim(2);
  const Tensor w3 = reshape(b.weights, {R, b.weights.dim(1), 1});
  FrechetResult res;

  auto finish = [&](Tensor mu) {
    res.mean = b.squeeze ? reshape(mu, {d}) : mu;
    return res;
  };

  if (cfg.tangent_approx) {
    const Tensor v = sum(w3 * logmap0(b.points, c), 1);
    res.iterations = 1;
    res.converged = true;
    return finish(expmap0(v, c));
  }

  Tensor mu = init ? reshape(*init, {R, d}) : first_positive(b);
  std::vector<double> f_mu = frechet_objective(mu, b.points, b.weights, c);
  if (record_objective) {
    res.objective.resize(R);
    for (std::size_t r = 0; r < R; ++r) res.objective[r].push_back(f_mu[r]);
  }
  for (int k = 0; k < cfg.max_iter; ++k) {
    const Tensor logs = logmap(reshape(mu, {R, 1, d}), b.points, c);
    const Tensor v = sum(w3 * logs, 1);
    // Model step, halved per row while it would increase the objective.
    const Tensor eta = step_scale(logs, v, b.weights, c) * cfg.step;
    std::vector<double> factor(R, 1.0);
    Tensor next;
    std::vector<double> f_next;
    for (int attempt = 0;; ++attempt) {
      next = expmap(mu, clip_tangent(v * eta * Tensor({R, 1}, factor), c), c);
      f_next = frechet_objective(next, b.points, b.weights, c);
      bool accepted = true;
      for (std::size_t r = 0; r < R; ++r) {
        if (f_next[r] > f_mu[r] + kDescentSlack * std::max(1.0, f_mu[r])) {
          factor[r] = attempt < kMaxHalvings ? 0.5 * factor[r] : 0.0;
          accepted = false;
        }
      }
      if (accepted) break;
    }
    res.iterations = k + 1;
    if (record_objective) {
      for (std::size_t r = 0; r < R; ++r) res.objective[r].push_back(f_next[r]);
    }
    const auto moved = dist(next.detach(), mu.detach(), c.detach()).to_vector();
    const double worst = *std::max_element(moved.begin(), moved.end());
    mu = next;
    f_mu = std::move(f_next);
    if (worst < cfg.tol) {
      res.converged = true;
      break;
    }
  }
  return finish(mu);
}

Tensor weighted_midpoint(const Tensor& values, const Tensor& weights, const Tensor& c,
                         const FrechetConfig& cfg) {
  return frechet_mean(values, weights, c, cfg).mean;
}

}  // namespace hyperskel
