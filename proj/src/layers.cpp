#include "hyperskel/layers.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "hyperskel/manifold.hpp"
#include "hyperskel/nn_ops.hpp"

namespace hyperskel {

namespace {

void require_finite(const Tensor& t, const char* who) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw DomainError(std::string(who) + ": non-finite input", v);
  }
}

// mask (B, T) must have a nonzero entry in every row.
void check_mask(const Tensor& mask, std::size_t B, std::size_t T, const char* who) {
  if (mask.shape() != Shape{B, T}) {
    throw DimensionError(std::string(who) + ": mask " + shape_str(mask.shape()) + " expected " +
                         shape_str({B, T}));
  }
  const auto m = mask.values();
  for (std::size_t b = 0; b < B; ++b) {
    bool any = false;
    for (std::size_t t = 0; t < T; ++t) any = any || m[b * T + t] != 0.0;
    if (!any) throw DomainError(std::string(who) + ": empty token mask in row", double(b));
  }
}

}  // namespace

HyperbolicProjection::HyperbolicProjection(std::size_t d_in, std::size_t d_hyp,
                                           std::mt19937_64& rng)
    : W(Tensor::randn({d_in, d_hyp}, rng, 1.0 / std::sqrt(double(d_in)))),
      log_scale(Tensor::scalar(0.0)) {}

HyperbolicProjection HyperbolicProjection::identity(std::size_t d) {
  HyperbolicProjection p;
  p.W = Tensor::eye(d);
  p.log_scale = Tensor::scalar(0.0);
  return p;
}

Tensor project(const Tensor& x, const HyperbolicProjection& layer, const Tensor& c) {
  require_finite(x, "project");
  const Tensor t = linear(x, layer.W) * exp(layer.log_scale);
  return expmap0(clip_tangent(t, c), c);
}

HyperbolicAttention::HyperbolicAttention(std::size_t d, double tau)
    : M_key(Tensor::eye(d)), b_key(Tensor::zeros({d})), log_tau_attn(Tensor::scalar(std::log(tau))) {}

PooledAlignment pooled_align(const Tensor& parts, const Tensor& tokens, const Tensor& mask,
                             const HyperbolicProjection& text_proj, const Tensor& c,
                             const FrechetConfig& cfg) {
  if (parts.rank() != 3 || tokens.rank() != 3 || parts.dim(0) != tokens.dim(0)) {
    throw DimensionError("pooled_align: parts " + shape_str(parts.shape()) + " vs tokens " +
                         shape_str(tokens.shape()));
  }
  const std::size_t B = tokens.dim(0), T = tokens.dim(1);
  check_mask(mask, B, T, "pooled_align");
  const Tensor m3 = reshape(mask, {B, T, 1});
  const Tensor sent = sum(tokens * m3, 1) / clamp_min(sum(m3, 1), 1.0);
  PooledAlignment out;
  out.part_weights = part_weights(parts, c, cfg.weight_temperature);
  out.pose = frechet_mean(parts, out.part_weights, c, cfg).mean;
  out.text = project(sent, text_proj, c);
  return out;
}

TokenAlignment token_align_values(const Tensor& parts, const Tensor& values, const Tensor& mask,
                                  const HyperbolicAttention& attn, const Tensor& c,
                                  const FrechetConfig& cfg) {
  if (parts.rank() != 3 || values.rank() != 3 || parts.dim(0) != values.dim(0) ||
      parts.dim(2) != values.dim(2)) {
    throw DimensionError("token_align: parts " + shape_str(parts.shape()) + " vs values " +
                         shape_str(values.shape()));
  }
  const std::size_t B = parts.dim(0), P = parts.dim(1), d = parts.dim(2), T = values.dim(1);
  check_mask(mask, B, T, "token_align");
  TokenAlignment out;
  out.values = values;
  out.keys = mobius_add(mobius_matvec(attn.M_key, values, c), attn.b_key, c);
  const Tensor scores = neg(dist(reshape(parts, {B, P, 1, d}), reshape(out.keys, {B, 1, T, d}), c));
  out.weights = softmax(scores / attn.tau(), -1, reshape(mask, {B, 1, T}));
  const Tensor vals = reshape(broadcast_to(reshape(values, {B, 1, T, d}), {B, P, T, d}), {B * P, T, d});
  const Tensor mid = frechet_mean(vals, reshape(out.weights, {B * P, T}), c, cfg).mean;
  out.context = reshape(mid, {B, P, d});
  return out;
}

TokenAlignment token_align(const Tensor& parts, const Tensor& tokens, const Tensor& mask,
                           const HyperbolicProjection& text_proj, const HyperbolicAttention& attn,
                           const Tensor& c, const FrechetConfig& cfg) {
  return token_align_values(parts, project(tokens, text_proj, c), mask, attn, c, cfg);
}

ContrastiveHead::ContrastiveHead(double tau0, double m0, double smoothing)
    : margin(Tensor::scalar(m0)), label_smoothing(smoothing) {
  log_tau = Tensor::scalar(0.0);
  set_tau(tau0);
}

Tensor ContrastiveHead::tau() const { return 2.0 * sigmoid(log_tau) + 0.01; }

void ContrastiveHead::set_tau(double tau) {
  const double p = (tau - 0.01) / 2.0;
  if (!(p > 0.0 && p < 1.0)) throw DomainError("contrastive temperature out of range", tau);
  log_tau.mutable_values()[0] = std::log(p / (1.0 - p));
}

Tensor contrastive_loss(const Tensor& pose, const Tensor& text, const ContrastiveHead& head,
                        const Tensor& c) {
  if (pose.rank() != 2 || pose.shape() != text.shape()) {
    throw DimensionError("contrastive_loss: pose " + shape_str(pose.shape()) + " vs text " +
                         shape_str(text.shape()));
  }
  const std::size_t B = pose.dim(0), d = pose.dim(1);
  if (B == 0) throw DimensionError("contrastive_loss: empty batch");
  const Tensor D = dist(reshape(pose, {B, 1, d}), reshape(text, {1, B, d}), c);
  std::vector<double> off(B * B, 1.0);
  for (std::size_t i = 0; i < B; ++i) off[i * B + i] = 0.0;
  const Tensor logits = neg(D) / head.tau() + Tensor({B, B}, off) * clamp_min(head.margin, 0.0);
  std::vector<int> targets(B);
  std::iota(targets.begin(), targets.end(), 0);
  return cross_entropy(logits, targets, head.label_smoothing);
}

AlphaSchedule::AlphaSchedule(double init, std::size_t total, double logit)
    : alpha_init(init), logit_alpha(Tensor::scalar(logit)), total_steps(total) {}

Tensor alpha(std::size_t step, const AlphaSchedule& sched) {
  if (sched.total_steps == 0) throw DomainError("alpha: total_steps must be positive", 0.0);
  if (step > sched.total_steps) throw DomainError("alpha: step beyond total_steps", double(step));
  const double progress = double(step) / double(sched.total_steps);
  return clamp(sigmoid(sched.logit_alpha) * 0.2 + (sched.alpha_init + 0.1 * progress), 0.1, 1.0);
}

Tensor total_loss(const Tensor& ce, const Tensor& hyp_reg, const Tensor& a) {
  return a * ce + (1.0 - a) * hyp_reg;
}

}  // namespace hyperskel
