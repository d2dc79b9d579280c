#pragma once

// Reference computations used as independent oracles by the tests. They do
// not call into the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline double sq(const Vec& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

/// Hyperbolic distance from the arcosh form of the Poincare metric.
inline double dist(const Vec& u, const Vec& v, double c) {
  double diff = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) diff += (u[i] - v[i]) * (u[i] - v[i]);
  const double arg = 1.0 + 2.0 * c * diff / ((1.0 - c * sq(u)) * (1.0 - c * sq(v)));
  return std::acosh(std::max(arg, 1.0)) / std::sqrt(c);
}

inline double frechet_objective(const Vec& mu, const std::vector<Vec>& pts, const Vec& w,
                                double c) {
  double f = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = dist(mu, pts[i], c);
    f += w[i] * d * d;
  }
  return f;
}

/// Minimizes f over the 2-D disk of radius 1/sqrt(c): dense grid, then a
/// pattern search with a shrinking step.
inline Vec minimize_on_disk(const std::function<double(const Vec&)>& f, double c) {
  const double R = (1.0 - 1e-6) / std::sqrt(c);
  const int n = 200;
  Vec best = {0.0, 0.0};
  double fbest = f(best);
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      Vec p = {-R + 2.0 * R * i / n, -R + 2.0 * R * j / n};
      if (c * sq(p) >= 1.0 - 1e-6) continue;
      const double fp = f(p);
      if (fp < fbest) {
        fbest = fp;
        best = p;
      }
    }
  }
  double step = 2.0 * R / n;
  while (step > 1e-12) {
    bool improved = false;
    for (int axis = 0; axis < 2; ++axis) {
      for (double s : {step, -step}) {
        Vec p = best;
        p[axis] += s;
        if (c * sq(p) >= 1.0 - 1e-6) continue;
        const double fp = f(p);
        if (fp < fbest) {
          fbest = fp;
          best = p;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return best;
}

/// Brute-force weighted Frechet mean in 2-D.
inline Vec frechet_bruteforce(const std::vector<Vec>& pts, const Vec& w, double c) {
  return minimize_on_disk([&](const Vec& mu) { return frechet_objective(mu, pts, w, c); }, c);
}

}  // namespace oracle
