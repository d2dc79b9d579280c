#pragma once

// Fused neural-network kernels with hand-written backward passes. Activations
// use the (N, T, V, C) layout: batch, time, joint, channel.

#include <cstddef>
#include <span>
#include <vector>

#include "hyperskel/tensor.hpp"

namespace hyperskel {

/// Graph aggregation: out[n,t,v,:] = sum_w A[v,w] * x[n,t,w,:].
/// x (N,T,V,C), A (V,V).
Tensor mix_nodes(const Tensor& x, const Tensor& A);

/// Convolution along the time axis, shared over joints.
/// x (N,T,V,C), w (K,C,C'), bias (C') -> (N,T',V,C') with
/// T' = (T + 2*pad - K)/stride + 1 and zero padding.
Tensor temporal_conv(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                     std::size_t pad);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-channel normalization over every leading position of x (..., C).
/// `row_mask` (one entry per leading position, empty means all valid) excludes
/// rows from the statistics; excluded rows come out as exact zeros. In
/// training mode the batch statistics are used and folded into `state`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, std::span<const double> row_mask = {});

/// Mean label-smoothed cross-entropy of logits (R, K) against integer targets.
/// Rows whose target is negative are ignored. Smoothing spreads `smoothing`
/// mass uniformly over all K classes.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, double smoothing = 0.0);

}  // namespace hyperskel
