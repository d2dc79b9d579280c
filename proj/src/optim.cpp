#include "hyperskel/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hyperskel {

namespace {

void ensure_state(const ParamGroup& group, AdamState& state) {
  if (state.m.size() == group.params.size()) return;
  state.m.clear();
  state.v.clear();
  for (const auto& p : group.params) {
    state.m.emplace_back(p.tensor->numel(), 0.0);
    state.v.emplace_back(p.tensor->numel(), 0.0);
  }
}

double grad_at(const Tensor& t, std::size_t i) { return t.has_grad() ? t.grad()[i] : 0.0; }

// Bias-corrected Adam direction m_hat / (sqrt(v_hat) + eps) after folding in g.
double adam_direction(double g, double& m, double& v, const ParamGroup& group, double bc1,
                      double bc2) {
  m = group.beta1 * m + (1.0 - group.beta1) * g;
  v = group.beta2 * v + (1.0 - group.beta2) * g * g;
  return (m / bc1) / (std::sqrt(v / bc2) + group.eps);
}

}  // namespace

void adamw_step(ParamGroup& group, AdamState& state, double lr) {
  ensure_state(group, state);
  ++state.step;
  const double bc1 = 1.0 - std::pow(group.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(group.beta2, double(state.step));
  for (std::size_t k = 0; k < group.params.size(); ++k) {
    Tensor& t = *group.params[k].tensor;
    auto x = t.mutable_values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = grad_at(t, i);
      x[i] -= lr * group.weight_decay * x[i];
      x[i] -= lr * adam_direction(g, state.m[k][i], state.v[k][i], group, bc1, bc2);
    }
  }
}

void radam_step(ParamGroup& group, AdamState& state, PoincareBall& ball, double lr) {
  ensure_state(group, state);
  ++state.step;
  const double bc1 = 1.0 - std::pow(group.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(group.beta2, double(state.step));

  for (std::size_t k = 0; k < group.params.size(); ++k) {
    auto& p = group.params[k];
    if (p.kind != ParamKind::kCurvature) continue;
    Tensor& t = *p.tensor;
    auto x = t.mutable_values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] -= lr * adam_direction(grad_at(t, i), state.m[k][i], state.v[k][i], group, bc1, bc2);
    }
  }

  const double c = ball.c();
  const Tensor ct = Tensor::scalar(c);
  // One extra epsilon of margin keeps iterates strictly inside the shell that
  // project_to_ball clamps to.
  const double limit = (1.0 - 2.0 * PoincareBall::kEpsBoundary) / std::sqrt(c);
  for (std::size_t k = 0; k < group.params.size(); ++k) {
    auto& p = group.params[k];
    if (p.kind == ParamKind::kCurvature) continue;
    if (p.kind != ParamKind::kManifold) {
      throw std::invalid_argument("radam_step: euclidean parameter " + p.name +
                                  " in the riemannian group");
    }
    Tensor& t = *p.tensor;
    const std::size_t d = t.rank() ? t.shape().back() : 1;
    const std::size_t rows = t.numel() / d;
    const std::vector<double> cur = t.to_vector();
    std::vector<double> step(cur.size());
    for (std::size_t r = 0; r < rows; ++r) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += cur[r * d + j] * cur[r * d + j];
      const double lam = 2.0 / (1.0 - c * sq);
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t i = r * d + j;
        const double rg = grad_at(t, i) / (lam * lam);
        step[i] = -lr * adam_direction(rg, state.m[k][i], state.v[k][i], group, bc1, bc2);
      }
    }
    const Tensor xs({rows, d}, cur);
    const Tensor moved =
        expmap(project_to_ball(xs, ct), clip_tangent(Tensor({rows, d}, step), ct), ct);
    std::vector<double> next = moved.to_vector();
    for (std::size_t r = 0; r < rows; ++r) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) sq += next[r * d + j] * next[r * d + j];
      const double n = std::sqrt(sq);
      if (n > limit) {
        for (std::size_t j = 0; j < d; ++j) next[r * d + j] *= limit / n;
      }
    }
    std::copy(next.begin(), next.end(), t.mutable_values().begin());
  }
}

double global_grad_norm(const std::vector<NamedParam>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) continue;
    for (double g : p.tensor->grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_global_grad_norm(const std::vector<NamedParam>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) continue;
    for (double& g : p.tensor->mutable_grad()) g *= scale;
  }
  return scale;
}

double cosine_warmup(std::size_t step, std::size_t warmup, std::size_t total) {
  if (total == 0) return 1.0;
  if (step < warmup) return double(step + 1) / double(warmup);
  if (total <= warmup) return 1.0;
  const double progress = std::min(1.0, double(step - warmup) / double(total - warmup));
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

Optimizer::Optimizer(ParamGroup euclidean, ParamGroup riemannian, PoincareBall& ball)
    : euclid_(std::move(euclidean)), riem_(std::move(riemannian)), ball_(&ball) {
  euclid_.kind = GroupKind::kEuclidean;
  riem_.kind = GroupKind::kRiemannian;
}

void Optimizer::zero_grad() {
  for (auto& p : euclid_.params) p.tensor->zero_grad();
  for (auto& p : riem_.params) p.tensor->zero_grad();
}

void Optimizer::step(double factor) {
  adamw_step(euclid_, euclid_state_, euclid_.lr * factor);
  radam_step(riem_, riem_state_, *ball_, riem_.lr * factor);
}

std::vector<NamedParam> Optimizer::all_params() const {
  std::vector<NamedParam> all = euclid_.params;
  all.insert(all.end(), riem_.params.begin(), riem_.params.end());
  return all;
}

}  // namespace hyperskel
