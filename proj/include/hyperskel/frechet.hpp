#pragma once

// Weighted Frechet (Karcher) means on the Poincare ball.

#include <optional>
#include <vector>

#include "hyperskel/tensor.hpp"

namespace hyperskel {

struct FrechetConfig {
  int max_iter = 50;
  /// Stop once consecutive iterates are closer than this (geodesic distance).
  double tol = 1e-5;
  /// Step size eta applied to the weighted tangent mean.
  double step = 1.0;
  /// lambda_w in part_weights.
  double weight_temperature = 1.0;
  /// Replace the iteration by a single tangent-at-origin average.
  bool tangent_approx = false;

  void validate() const;
};

struct FrechetResult {
  /// (R, d), or (d) for unbatched input.
  Tensor mean;
  int iterations = 0;
  bool converged = false;
  /// Per-row objective sum_i w_i dist^2(mu, h_i) at every iterate, starting
  /// with the initial point. Filled only when requested.
  std::vector<std::vector<double>> objective;
};

/// Softmax over the point axis of dist(0, h_p) / temperature.
/// points (..., P, d) -> weights (..., P).
Tensor part_weights(const Tensor& points, const Tensor& c, double temperature = 1.0);

/// Iterates mu <- expmap(mu, clip(eta * sum_i w_i logmap(mu, h_i))) from the
/// first positive-weight point of each row (or `init`).
/// points (R, N, d) with weights (R, N), or points (N, d) with weights (N).
/// Differentiable through the executed iterations.
FrechetResult frechet_mean(const Tensor& points, const Tensor& weights, const Tensor& c,
                           const FrechetConfig& cfg = {},
                           const std::optional<Tensor>& init = std::nullopt,
                           bool record_objective = false);

/// Weighted midpoint of `values` under each weight row; the Frechet mean
/// unless cfg.tangent_approx is set. Same shapes as frechet_mean.
Tensor weighted_midpoint(const Tensor& values, const Tensor& weights, const Tensor& c,
                         const FrechetConfig& cfg = {});

/// sum_i w_i dist^2(mu_r, h_ri) for each row, computed without a graph.
std::vector<double> frechet_objective(const Tensor& mean, const Tensor& points,
                                      const Tensor& weights, const Tensor& c);

}  // namespace hyperskel
