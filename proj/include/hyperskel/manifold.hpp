#pragma once

// Poincare ball of curvature -c with c = exp(log_c) > 0.
//
// Points and tangent vectors are plain tensors whose last axis holds the
// coordinates; leading axes are batch axes. Curvature enters every op as a
// scalar tensor so gradients reach log_c when it is learnable.
//
// Tangent vectors are expressed in orthonormal coordinates of the tangent
// space, which makes the maps radially isometric:
//   dist(0, expmap0(v)) = |v|,   dist(x, expmap(x, v)) = |v|.

#include <cstdint>
#include <vector>

#include "hyperskel/tensor.hpp"

namespace hyperskel {

class PoincareBall {
 public:
  static constexpr double kEpsBoundary = 1e-5;
  static constexpr double kEpsDiv = 1e-15;
  static constexpr double kEpsClip = 1e-5;

  explicit PoincareBall(double c = 1.0, bool learnable = false);

  double c() const;
  /// exp(log_c) as a graph node; differentiable when the ball is learnable.
  Tensor c_tensor() const;
  Tensor& log_c() { return log_c_; }
  const Tensor& log_c() const { return log_c_; }
  bool learnable() const { return log_c_.requires_grad(); }
  void set_learnable(bool flag) { log_c_.set_requires_grad(flag); }
  void set_c(double c);
  /// Largest coordinate norm any returned point may have.
  double max_norm() const;
  /// Throws DomainError unless every row of x satisfies sqrt(c)|x| < 1.
  void check_inside(const Tensor& x) const;

 private:
  Tensor log_c_;
};

// Every op below takes the curvature as a scalar tensor `c` (see c_tensor()).

Tensor mobius_add(const Tensor& x, const Tensor& y, const Tensor& c);
/// Geodesic distance between matching rows; the last axis is consumed.
/// Leading axes broadcast. Custom backward (see dist_grad).
Tensor dist(const Tensor& u, const Tensor& v, const Tensor& c);
/// Distance from the origin, last axis consumed.
Tensor dist0(const Tensor& x, const Tensor& c);
/// Conformal factor 2 / (1 - c|x|^2), keepdim.
Tensor conformal_factor(const Tensor& x, const Tensor& c);

Tensor expmap0(const Tensor& v, const Tensor& c);
Tensor logmap0(const Tensor& y, const Tensor& c);
Tensor expmap(const Tensor& x, const Tensor& v, const Tensor& c);
Tensor logmap(const Tensor& x, const Tensor& y, const Tensor& c);
/// expmap0(M logmap0(x)), M (d,d) acting on column vectors.
Tensor mobius_matvec(const Tensor& M, const Tensor& x, const Tensor& c);
Tensor project_to_ball(const Tensor& x, const Tensor& c);
/// v / max(1, sqrt(c)|v| + eps).
Tensor clip_tangent(const Tensor& v, const Tensor& c);

/// Analytic gradients of dist(u_i, v_i) for each row i, flattened like u.
struct DistGrad {
  std::vector<double> grad_u;
  std::vector<double> grad_v;
  /// d dist_i / d c.
  std::vector<double> grad_c;
  /// Rows with u == v, where the zero subgradient is returned.
  std::vector<std::uint8_t> degenerate;
};

/// grad_u = -lambda_u * w/|w| with w = (-u) (+) v, and symmetrically for v.
DistGrad dist_grad(std::span<const double> u, std::span<const double> v, std::size_t d, double c);

// Convenience overloads using the ball's current curvature.
inline Tensor mobius_add(const PoincareBall& b, const Tensor& x, const Tensor& y) {
  return mobius_add(x, y, b.c_tensor());
}
inline Tensor dist(const PoincareBall& b, const Tensor& u, const Tensor& v) {
  return dist(u, v, b.c_tensor());
}
inline Tensor dist0(const PoincareBall& b, const Tensor& x) { return dist0(x, b.c_tensor()); }
inline Tensor expmap0(const PoincareBall& b, const Tensor& v) { return expmap0(v, b.c_tensor()); }
inline Tensor logmap0(const PoincareBall& b, const Tensor& y) { return logmap0(y, b.c_tensor()); }
inline Tensor expmap(const PoincareBall& b, const Tensor& x, const Tensor& v) {
  return expmap(x, v, b.c_tensor());
}
inline Tensor logmap(const PoincareBall& b, const Tensor& x, const Tensor& y) {
  return logmap(x, y, b.c_tensor());
}
inline Tensor mobius_matvec(const PoincareBall& b, const Tensor& M, const Tensor& x) {
  return mobius_matvec(M, x, b.c_tensor());
}
inline Tensor project_to_ball(const PoincareBall& b, const Tensor& x) {
  return project_to_ball(x, b.c_tensor());
}
inline Tensor clip_tangent(const PoincareBall& b, const Tensor& v) {
  return clip_tangent(v, b.c_tensor());
}

}  // namespace hyperskel
