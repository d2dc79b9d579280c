#pragma once

// Hyperbolic projection, alignment strategies, contrastive loss and the
// loss-blend schedule.

#include <cstddef>
#include <random>

#include "hyperskel/frechet.hpp"
#include "hyperskel/tensor.hpp"

namespace hyperskel {

/// x -> expmap0(clip(s * x W)), s = exp(log_scale).
struct HyperbolicProjection {
  Tensor W;          // (d_in, d_hyp)
  Tensor log_scale;  // scalar

  HyperbolicProjection() = default;
  HyperbolicProjection(std::size_t d_in, std::size_t d_hyp, std::mt19937_64& rng);
  /// W = I (d x d), log_scale = 0.
  static HyperbolicProjection identity(std::size_t d);
};

Tensor project(const Tensor& x, const HyperbolicProjection& layer, const Tensor& c);

struct HyperbolicAttention {
  Tensor M_key;         // (d, d)
  Tensor b_key;         // (d), a point of the ball
  Tensor log_tau_attn;  // scalar, tau_attn = exp(log_tau_attn)

  HyperbolicAttention() = default;
  /// M = I, b = 0, tau_attn = tau.
  explicit HyperbolicAttention(std::size_t d, double tau = 1.0);
  Tensor tau() const { return exp(log_tau_attn); }
};

struct PooledAlignment {
  Tensor pose;          // (B, d)
  Tensor text;          // (B, d)
  Tensor part_weights;  // (B, P)
};

/// parts (B, P, d) points; tokens (B, T, d_model); mask (B, T) of 0/1.
/// pose = Frechet mean of the parts under part_weights, text = projection of
/// the masked token mean.
PooledAlignment pooled_align(const Tensor& parts, const Tensor& tokens, const Tensor& mask,
                             const HyperbolicProjection& text_proj, const Tensor& c,
                             const FrechetConfig& cfg = {});

struct TokenAlignment {
  Tensor values;   // (B, T, d) projected tokens
  Tensor keys;     // (B, T, d)
  Tensor weights;  // (B, P, T), zero on masked tokens
  Tensor context;  // (B, P, d) weighted midpoints c_p
};

/// Per-part hyperbolic attention over the text tokens.
TokenAlignment token_align(const Tensor& parts, const Tensor& tokens, const Tensor& mask,
                           const HyperbolicProjection& text_proj, const HyperbolicAttention& attn,
                           const Tensor& c, const FrechetConfig& cfg = {});

/// Same as token_align but starting from already projected values (B, T, d).
TokenAlignment token_align_values(const Tensor& parts, const Tensor& values, const Tensor& mask,
                                  const HyperbolicAttention& attn, const Tensor& c,
                                  const FrechetConfig& cfg = {});

struct ContrastiveHead {
  Tensor log_tau;  // tau = 2 sigmoid(log_tau) + 0.01
  Tensor margin;   // used as max(margin, 0)
  double label_smoothing = 0.2;

  explicit ContrastiveHead(double tau0 = 0.5, double m0 = 0.1, double smoothing = 0.2);
  Tensor tau() const;
  /// Sets log_tau so that tau() == tau (tau in (0.01, 2.01)).
  void set_tau(double tau);
};

/// InfoNCE over geodesic distances. pose, text (B, d). Logits are
/// -dist(p_i, t_j)/tau, with the margin added to every j != i entry.
Tensor contrastive_loss(const Tensor& pose, const Tensor& text, const ContrastiveHead& head,
                        const Tensor& c);

struct AlphaSchedule {
  double alpha_init = 0.7;
  Tensor logit_alpha;
  std::size_t total_steps = 1;

  explicit AlphaSchedule(double alpha_init = 0.7, std::size_t total_steps = 1,
                         double logit = 0.0);
};

/// clamp(alpha_init + 0.1 * step/total + 0.2 * sigmoid(logit), 0.1, 1.0).
Tensor alpha(std::size_t step, const AlphaSchedule& sched);

/// a * ce + (1 - a) * hyp_reg.
Tensor total_loss(const Tensor& ce, const Tensor& hyp_reg, const Tensor& a);

}  // namespace hyperskel
