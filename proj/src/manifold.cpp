#include "hyperskel/manifold.hpp"

#include <algorithm>
#include <cmath>

#include "autograd_internal.hpp"

namespace hyperskel {

using detail::data_of;
using detail::GradSink;

namespace {

double curvature_value(const Tensor& c) {
  if (c.numel() != 1) throw DimensionError("curvature must be a scalar, got " + shape_str(c.shape()));
  const double v = c.values()[0];
  if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("curvature must be positive", v);
  return v;
}

void require_finite(const Tensor& t, const char* who) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw DomainError(std::string(who) + ": non-finite input", v);
  }
}

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

// w = x (+) y for a single pair of d-vectors, without projection.
void mobius_add_raw(const double* x, const double* y, std::size_t d, double c, double* w) {
  double xy = 0.0, x2 = 0.0, y2 = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    xy += x[k] * y[k];
    x2 += x[k] * x[k];
    y2 += y[k] * y[k];
  }
  const double a = 1.0 + 2.0 * c * xy + c * y2;
  const double b = 1.0 - c * x2;
  const double den = std::max(1.0 + 2.0 * c * xy + c * c * x2 * y2, PoincareBall::kEpsDiv);
  for (std::size_t k = 0; k < d; ++k) w[k] = (a * x[k] + b * y[k]) / den;
}

double sq_norm(const double* x, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += x[k] * x[k];
  return s;
}

void check_row_inside(const double* x, std::size_t d, double c) {
  const double r = std::sqrt(c * sq_norm(x, d));
  if (!(r < 1.0)) throw DomainError("point on or outside the ball boundary (sqrt(c)|x|)", r);
}

double dist_row(const double* u, const double* v, std::size_t d, double c, double* w) {
  if (std::equal(u, u + d, v)) {
    std::fill(w, w + d, 0.0);
    return 0.0;
  }
  std::vector<double> neg(u, u + d);
  for (auto& e : neg) e = -e;
  mobius_add_raw(neg.data(), v, d, c, w);
  const double sc = std::sqrt(c);
  const double z = std::min(sc * std::sqrt(sq_norm(w, d)), kArtanhClamp);
  return 2.0 / sc * std::atanh(z);
}

}  // namespace

PoincareBall::PoincareBall(double c, bool learnable) {
  if (!(c > 0.0) || !std::isfinite(c)) throw DomainError("curvature must be positive", c);
  log_c_ = Tensor::scalar(std::log(c), learnable);
}

double PoincareBall::c() const { return std::exp(log_c_.item()); }

Tensor PoincareBall::c_tensor() const { return exp(log_c_); }

void PoincareBall::set_c(double c) {
  if (!(c > 0.0) || !std::isfinite(c)) throw DomainError("curvature must be positive", c);
  log_c_.mutable_values()[0] = std::log(c);
}

double PoincareBall::max_norm() const { return (1.0 - kEpsBoundary) / std::sqrt(c()); }

void PoincareBall::check_inside(const Tensor& x) const {
  const std::size_t d = x.rank() ? x.shape().back() : 1;
  const auto vals = x.values();
  for (std::size_t i = 0; d && i < vals.size(); i += d) check_row_inside(&vals[i], d, c());
}

Tensor mobius_add(const Tensor& x, const Tensor& y, const Tensor& c) {
  const Tensor x2 = sum(square(x), -1, true);
  const Tensor y2 = sum(square(y), -1, true);
  const Tensor xy = dot_last(x, y);
  const Tensor a = 1.0 + 2.0 * c * xy + c * y2;
  const Tensor b = 1.0 - c * x2;
  const Tensor den = 1.0 + 2.0 * c * xy + square(c) * x2 * y2;
  return project_to_ball((a * x + b * y) / clamp_min(den, PoincareBall::kEpsDiv), c);
}

DistGrad dist_grad(std::span<const double> u, std::span<const double> v, std::size_t d, double c) {
  if (d == 0 || u.size() != v.size() || u.size() % d != 0) {
    throw DimensionError("dist_grad: mismatched buffers");
  }
  const std::size_t rows = u.size() / d;
  DistGrad g;
  g.grad_u.assign(u.size(), 0.0);
  g.grad_v.assign(u.size(), 0.0);
  g.grad_c.assign(rows, 0.0);
  g.degenerate.assign(rows, 0);
  std::vector<double> w(d), w2(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* ur = &u[r * d];
    const double* vr = &v[r * d];
    const double dval = dist_row(ur, vr, d, c, w.data());
    dist_row(vr, ur, d, c, w2.data());
    const double nw = std::sqrt(sq_norm(w.data(), d));
    const double nw2 = std::sqrt(sq_norm(w2.data(), d));
    if (nw < 1e-15 || nw2 < 1e-15) {
      g.degenerate[r] = 1;
      continue;
    }
    const double lam_u = 2.0 / (1.0 - c * sq_norm(ur, d));
    const double lam_v = 2.0 / (1.0 - c * sq_norm(vr, d));
    double proj = -dval;
    for (std::size_t k = 0; k < d; ++k) {
      g.grad_u[r * d + k] = -lam_u * w[k] / nw;
      g.grad_v[r * d + k] = -lam_v * w2[k] / nw2;
      proj += g.grad_u[r * d + k] * ur[k] + g.grad_v[r * d + k] * vr[k];
    }
    g.grad_c[r] = proj / (2.0 * c);
  }
  return g;
}

Tensor dist(const Tensor& u_in, const Tensor& v_in, const Tensor& c) {
  if (u_in.rank() < 1 || v_in.rank() < 1 || u_in.shape().back() != v_in.shape().back()) {
    throw DimensionError("dist: incompatible shapes " + shape_str(u_in.shape()) + " and " +
                         shape_str(v_in.shape()));
  }
  Tensor u = u_in, v = v_in;
  if (u.shape() != v.shape()) {
    const Tensor probe = Tensor::zeros(u.shape()) + Tensor::zeros(v.shape());
    u = broadcast_to(u, probe.shape());
    v = broadcast_to(v, probe.shape());
  }
  const double cv = curvature_value(c);
  const std::size_t d = u.shape().back();
  const std::size_t rows = u.numel() / std::max<std::size_t>(d, 1);
  const auto& uv = data_of(u);
  const auto& vv = data_of(v);
  std::vector<double> out(rows);
  std::vector<double> w(d);
  for (std::size_t r = 0; r < rows; ++r) {
    check_row_inside(&uv[r * d], d, cv);
    check_row_inside(&vv[r * d], d, cv);
    out[r] = dist_row(&uv[r * d], &vv[r * d], d, cv, w.data());
  }
  return detail::make_op(
      "dist", drop_last(u.shape()), std::move(out), {u, v, c},
      [d, cv, us = detail::storage_of(u), vs = detail::storage_of(v)](std::span<const double> g,
                                                                      GradSink& sink) {
        const DistGrad dg = dist_grad(*us, *vs, d, cv);
        auto gu = sink[0];
        auto gv = sink[1];
        auto gc = sink[2];
        for (std::size_t r = 0; r < g.size(); ++r) {
          for (std::size_t k = 0; k < d; ++k) {
            if (!gu.empty()) gu[r * d + k] += g[r] * dg.grad_u[r * d + k];
            if (!gv.empty()) gv[r * d + k] += g[r] * dg.grad_v[r * d + k];
          }
          if (!gc.empty()) gc[0] += g[r] * dg.grad_c[r];
        }
      });
}

Tensor dist0(const Tensor& x, const Tensor& c) {
  const Tensor sc = sqrt(c);
  const Tensor r = 2.0 * artanh(norm_last(x) * sc) / sc;
  return reshape(r, drop_last(x.shape()));
}

Tensor conformal_factor(const Tensor& x, const Tensor& c) {
  return div(Tensor::scalar(2.0), 1.0 - c * sum(square(x), -1, true));
}

Tensor expmap0(const Tensor& v, const Tensor& c) {
  require_finite(v, "expmap0");
  curvature_value(c);
  const Tensor z = norm_last(v) * sqrt(c);
  return project_to_ball(v * (tanh(z * 0.5) / z), c);
}

Tensor logmap0(const Tensor& y, const Tensor& c) {
  require_finite(y, "logmap0");
  curvature_value(c);
  const Tensor z = norm_last(y) * sqrt(c);
  return y * (2.0 * artanh(z) / z);
}

Tensor expmap(const Tensor& x, const Tensor& v, const Tensor& c) {
  return mobius_add(x, expmap0(v, c), c);
}

Tensor logmap(const Tensor& x, const Tensor& y, const Tensor& c) {
  return logmap0(mobius_add(neg(x), y, c), c);
}

Tensor mobius_matvec(const Tensor& M, const Tensor& x, const Tensor& c) {
  if (M.rank() != 2 || M.shape()[0] != M.shape()[1] || x.rank() < 1 ||
      x.shape().back() != M.shape()[1]) {
    throw DimensionError("mobius_matvec: matrix " + shape_str(M.shape()) + " vs point " +
                         shape_str(x.shape()));
  }
  return expmap0(linear(logmap0(x, c), transpose(M)), c);
}

Tensor project_to_ball(const Tensor& x, const Tensor& c) {
  const Tensor max_norm = div(Tensor::scalar(1.0 - PoincareBall::kEpsBoundary), sqrt(c));
  return x * clamp_max(max_norm / norm_last(x), 1.0);
}

Tensor clip_tangent(const Tensor& v, const Tensor& c) {
  return v / clamp_min(norm_last(v) * sqrt(c) + PoincareBall::kEpsClip, 1.0);
}

}  // namespace hyperskel
