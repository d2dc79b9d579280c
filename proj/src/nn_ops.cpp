#include "hyperskel/nn_ops.hpp"

#include <algorithm>
#include <cmath>

#include "autograd_internal.hpp"
#include "eigen_util.hpp"

namespace hyperskel {

using detail::data_of;
using detail::GradSink;
using detail::make_op;
using detail::storage_of;

namespace {

using detail::add_into;
using detail::aligned_copy;
using detail::copy_out;
using detail::ix;
using detail::RowMat;

double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

void require_rank4(const Tensor& x, const char* who) {
  if (x.rank() != 4) {
    throw DimensionError(std::string(who) + ": expected (N,T,V,C), got " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor mix_nodes(const Tensor& x, const Tensor& A) {
  require_rank4(x, "mix_nodes");
  const auto& s = x.shape();
  const std::size_t V = s[2], C = s[3], blocks = s[0] * s[1];
  if (A.shape() != Shape{V, V}) {
    throw DimensionError("mix_nodes: adjacency " + shape_str(A.shape()) + " does not match " +
                         shape_str(s));
  }
  const RowMat a = aligned_copy(data_of(A).data(), V, V);
  const RowMat xm = aligned_copy(data_of(x).data(), blocks * V, C);
  RowMat om(ix(blocks * V), ix(C));
  for (std::size_t b = 0; b < blocks; ++b) {
    om.middleRows(ix(b * V), ix(V)).noalias() = a * xm.middleRows(ix(b * V), ix(V));
  }
  std::vector<double> out(xm.size());
  copy_out(om, out.data());
  return make_op("mix_nodes", s, std::move(out), {x, A},
                 [V, C, blocks, xs = storage_of(x), as = storage_of(A)](std::span<const double> g,
                                                                       GradSink& sink) {
                   auto gx = sink[0];
                   auto ga = sink[1];
                   const RowMat a = aligned_copy(as->data(), V, V);
                   const RowMat gm = aligned_copy(g.data(), blocks * V, C);
                   if (!gx.empty()) {
                     RowMat dx(ix(blocks * V), ix(C));
                     for (std::size_t b = 0; b < blocks; ++b) {
                       dx.middleRows(ix(b * V), ix(V)).noalias() =
                           a.transpose() * gm.middleRows(ix(b * V), ix(V));
                     }
                     add_into(dx, gx);
                   }
                   if (!ga.empty()) {
                     const RowMat xm = aligned_copy(xs->data(), blocks * V, C);
                     RowMat acc = RowMat::Zero(ix(V), ix(V));
                     for (std::size_t b = 0; b < blocks; ++b) {
                       acc.noalias() += gm.middleRows(ix(b * V), ix(V)) *
                                        xm.middleRows(ix(b * V), ix(V)).transpose();
                     }
                     add_into(acc, ga);
                   }
                 });
}

Tensor temporal_conv(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                     std::size_t pad) {
  require_rank4(x, "temporal_conv");
  const auto& s = x.shape();
  const std::size_t N = s[0], T = s[1], V = s[2], C = s[3];
  if (w.rank() != 3 || w.shape()[1] != C) {
    throw DimensionError("temporal_conv: kernel " + shape_str(w.shape()) + " does not match " +
                         shape_str(s));
  }
  const std::size_t K = w.shape()[0], Co = w.shape()[2];
  if (bias.shape() != Shape{Co}) {
    throw DimensionError("temporal_conv: bias " + shape_str(bias.shape()) + " expected (" +
                         std::to_string(Co) + ")");
  }
  if (stride == 0 || T + 2 * pad < K) {
    throw DimensionError("temporal_conv: sequence of length " + std::to_string(T) +
                         " too short for kernel " + std::to_string(K));
  }
  const std::size_t To = (T + 2 * pad - K) / stride + 1;
  const RowMat xm = aligned_copy(data_of(x).data(), N * T * V, C);
  const RowMat wm = aligned_copy(data_of(w).data(), K * C, Co);
  const auto& bv = data_of(bias);
  RowMat om(ix(N * To * V), ix(Co));
  om.rowwise() = Eigen::Map<const Eigen::RowVectorXd>(bv.data(), ix(Co));
  // Visits every (output frame, input frame, tap) triple with a valid input.
  auto for_taps = [N, T, To, K, stride, pad](auto&& f) {
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t to = 0; to < To; ++to) {
        for (std::size_t k = 0; k < K; ++k) {
          const std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(to * stride + k) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
          f(n * T + static_cast<std::size_t>(ti), n * To + to, k);
        }
      }
    }
  };
  for_taps([&](std::size_t in_frame, std::size_t out_frame, std::size_t k) {
    om.middleRows(ix(out_frame * V), ix(V)).noalias() +=
        xm.middleRows(ix(in_frame * V), ix(V)) * wm.middleRows(ix(k * C), ix(C));
  });
  std::vector<double> out(om.size());
  copy_out(om, out.data());
  return make_op(
      "temporal_conv", {N, To, V, Co}, std::move(out), {x, w, bias},
      [for_taps, N, T, To, K, V, C, Co, xs = storage_of(x), ws = storage_of(w)](
          std::span<const double> g, GradSink& sink) {
        auto gx = sink[0];
        auto gw = sink[1];
        auto gb = sink[2];
        const RowMat gm = aligned_copy(g.data(), N * To * V, Co);
        if (!gx.empty()) {
          const RowMat wm = aligned_copy(ws->data(), K * C, Co);
          RowMat dx = RowMat::Zero(ix(N * T * V), ix(C));
          for_taps([&](std::size_t in_frame, std::size_t out_frame, std::size_t k) {
            dx.middleRows(ix(in_frame * V), ix(V)).noalias() +=
                gm.middleRows(ix(out_frame * V), ix(V)) * wm.middleRows(ix(k * C), ix(C)).transpose();
          });
          add_into(dx, gx);
        }
        if (!gw.empty()) {
          const RowMat xm = aligned_copy(xs->data(), N * T * V, C);
          RowMat dw = RowMat::Zero(ix(K * C), ix(Co));
          for_taps([&](std::size_t in_frame, std::size_t out_frame, std::size_t k) {
            dw.middleRows(ix(k * C), ix(C)).noalias() +=
                xm.middleRows(ix(in_frame * V), ix(V)).transpose() * gm.middleRows(ix(out_frame * V), ix(V));
          });
          add_into(dw, gw);
        }
        if (!gb.empty()) add_into(gm.colwise().sum(), gb);
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training, std::span<const double> row_mask) {
  if (x.rank() < 1) throw DimensionError("batch_norm on a scalar");
  const std::size_t C = x.shape().back();
  const std::size_t R = x.numel() / std::max<std::size_t>(C, 1);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C} || state.running_mean.size() != C) {
    throw DimensionError("batch_norm: parameters do not match " + shape_str(x.shape()));
  }
  if (!row_mask.empty() && row_mask.size() != R) {
    throw DimensionError("batch_norm: row mask has " + std::to_string(row_mask.size()) +
                         " entries, expected " + std::to_string(R));
  }
  std::vector<double> mask(row_mask.begin(), row_mask.end());
  if (mask.empty()) mask.assign(R, 1.0);
  double count = 0.0;
  for (double m : mask) count += m != 0.0 ? 1.0 : 0.0;

  const auto& xv = data_of(x);
  const auto& gv = data_of(gamma);
  const auto& bv = data_of(beta);
  std::vector<double> mu(C, 0.0), var(C, 0.0);
  if (training) {
    if (count == 0.0) throw std::invalid_argument("batch_norm: no valid rows in the batch");
    for (std::size_t r = 0; r < R; ++r) {
      if (mask[r] == 0.0) continue;
      for (std::size_t c = 0; c < C; ++c) mu[c] += xv[r * C + c];
    }
    for (auto& m : mu) m /= count;
    for (std::size_t r = 0; r < R; ++r) {
      if (mask[r] == 0.0) continue;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = xv[r * C + c] - mu[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= count;
    const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu[c];
      state.running_var[c] =
          (1.0 - state.momentum) * state.running_var[c] + state.momentum * var[c] * unbias;
    }
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }
  std::vector<double> inv(C);
  for (std::size_t c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(var[c] + state.eps);

  auto xhat = std::make_shared<std::vector<double>>(xv.size(), 0.0);
  std::vector<double> out(xv.size(), 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    if (mask[r] == 0.0) continue;
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (xv[r * C + c] - mu[c]) * inv[c];
      (*xhat)[r * C + c] = h;
      out[r * C + c] = gv[c] * h + bv[c];
    }
  }
  return make_op(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [C, R, count, training, mask = std::move(mask), inv = std::move(inv), xhat,
       gs = storage_of(gamma)](std::span<const double> g, GradSink& sink) {
        auto gx = sink[0];
        auto gg = sink[1];
        auto gb = sink[2];
        std::vector<double> sum_g(C, 0.0), sum_gh(C, 0.0);
        for (std::size_t r = 0; r < R; ++r) {
          if (mask[r] == 0.0) continue;
          for (std::size_t c = 0; c < C; ++c) {
            sum_g[c] += g[r * C + c];
            sum_gh[c] += g[r * C + c] * (*xhat)[r * C + c];
          }
        }
        if (!gg.empty()) {
          for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gh[c];
        }
        if (!gb.empty()) {
          for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
        }
        if (gx.empty()) return;
        const auto& gam = *gs;
        for (std::size_t r = 0; r < R; ++r) {
          if (mask[r] == 0.0) continue;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = r * C + c;
            if (training) {
              gx[i] += gam[c] * inv[c] *
                       (g[i] - sum_g[c] / count - (*xhat)[i] * sum_gh[c] / count);
            } else {
              gx[i] += gam[c] * inv[c] * g[i];
            }
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, double smoothing) {
  if (logits.rank() != 2 || logits.shape()[0] != targets.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  const std::size_t R = logits.shape()[0], K = logits.shape()[1];
  const auto& z = data_of(logits);
  std::size_t valid = 0;
  for (int t : targets) {
    if (t >= static_cast<int>(K)) {
      throw DimensionError("cross_entropy: target " + std::to_string(t) + " out of range");
    }
    if (t >= 0) ++valid;
  }
  if (valid == 0) throw std::invalid_argument("cross_entropy: every target is ignored");
  auto probs = std::make_shared<std::vector<double>>(z.size(), 0.0);
  const double off = smoothing / static_cast<double>(K);
  // Sums run in sorted order so that permuting rows or classes leaves the
  // loss bit-identical.
  std::vector<double> row_losses, terms(K);
  for (std::size_t r = 0; r < R; ++r) {
    if (targets[r] < 0) continue;
    const double* row = &z[r * K];
    const double m = *std::max_element(row, row + K);
    for (std::size_t k = 0; k < K; ++k) terms[k] = std::exp(row[k] - m);
    const double lz = m + std::log(sorted_sum(terms));
    for (std::size_t k = 0; k < K; ++k) {
      const double q = off + (static_cast<int>(k) == targets[r] ? 1.0 - smoothing : 0.0);
      terms[k] = -q * (row[k] - lz);
      (*probs)[r * K + k] = std::exp(row[k] - lz);
    }
    row_losses.push_back(sorted_sum(terms));
  }
  const double loss = sorted_sum(row_losses);
  const double scale = 1.0 / static_cast<double>(valid);
  return make_op("cross_entropy", {}, {loss * scale}, {logits},
                 [R, K, off, smoothing, scale, probs,
                  tg = std::vector<int>(targets.begin(), targets.end())](std::span<const double> g,
                                                                         GradSink& sink) {
                   auto gz = sink[0];
                   if (gz.empty()) return;
                   for (std::size_t r = 0; r < R; ++r) {
                     if (tg[r] < 0) continue;
                     for (std::size_t k = 0; k < K; ++k) {
                       const double q =
                           off + (static_cast<int>(k) == tg[r] ? 1.0 - smoothing : 0.0);
                       gz[r * K + k] += g[0] * scale * ((*probs)[r * K + k] - q);
                     }
                   }
                 });
}

}  // namespace hyperskel
