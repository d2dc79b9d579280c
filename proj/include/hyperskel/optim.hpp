#pragma once

// AdamW for Euclidean parameters and Riemannian Adam for points of the ball
// and the log-curvature.

#include <cstddef>
#include <vector>

#include "hyperskel/manifold.hpp"
#include "hyperskel/param.hpp"

namespace hyperskel {

enum class GroupKind { kEuclidean, kRiemannian };

struct ParamGroup {
  GroupKind kind = GroupKind::kEuclidean;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::vector<NamedParam> params;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long step = 0;
};

/// Decoupled weight decay, then the bias-corrected Adam update. Parameters
/// without a gradient are treated as having a zero gradient.
void adamw_step(ParamGroup& group, AdamState& state, double lr);

/// Riemannian Adam. For manifold parameters (rows along the last axis) the
/// Euclidean gradient is rescaled by 1/lambda_x^2, Adam moments are kept in
/// ambient coordinates, and the point moves by
///   x <- project(expmap(x, clip(-lr * m_hat / (sqrt(v_hat) + eps)))).
/// The curvature parameter is updated first, as a plain scalar, so the points
/// are retracted into the ball of the new curvature.
void radam_step(ParamGroup& group, AdamState& state, PoincareBall& ball, double lr);

/// Scales every gradient by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the scale applied (1 when unchanged).
double clip_global_grad_norm(const std::vector<NamedParam>& params, double max_norm = 1.0);

double global_grad_norm(const std::vector<NamedParam>& params);

/// Learning-rate factor: linear warmup over `warmup` steps, then cosine decay
/// to zero at `total`.
double cosine_warmup(std::size_t step, std::size_t warmup, std::size_t total);

/// Euclidean AdamW group plus a Riemannian group sharing one step counter each.
class Optimizer {
 public:
  Optimizer(ParamGroup euclidean, ParamGroup riemannian, PoincareBall& ball);

  void zero_grad();
  /// Applies both groups with their base learning rates scaled by `factor`.
  void step(double factor = 1.0);
  std::vector<NamedParam> all_params() const;
  const ParamGroup& euclidean() const { return euclid_; }
  const ParamGroup& riemannian() const { return riem_; }

 private:
  ParamGroup euclid_, riem_;
  AdamState euclid_state_, riem_state_;
  PoincareBall* ball_;
};

}  // namespace hyperskel
