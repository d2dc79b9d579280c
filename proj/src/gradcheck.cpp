#include "hyperskel/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>

#include "hyperskel/frechet.hpp"
#include "hyperskel/layers.hpp"
#include "hyperskel/manifold.hpp"
#include "hyperskel/nn_ops.hpp"
#include "hyperskel/stgcn.hpp"

namespace hyperskel {

namespace {

using Inputs = std::vector<Tensor>;
using Fn = std::function<Tensor(const Inputs&)>;

struct Case {
  Inputs inputs;
  Fn fn;
};

using Builder = std::function<std::vector<Case>(std::mt19937_64&)>;

struct Op {
  std::string name;
  Builder build;
};

constexpr double kFdStep = 1e-6;
constexpr double kErrorFloor = 1e-6;
const std::array<double, 3> kCurvatures{0.1, 1.0, 2.0};

// Rows of points strictly inside the ball of curvature c, radius up to
// max_frac of the boundary.
Tensor ball_points(Shape shape, double c, std::mt19937_64& rng, double max_frac = 0.8) {
  Tensor t = Tensor::randn(shape, rng);
  auto v = t.mutable_values();
  const std::size_t d = shape.back();
  std::uniform_real_distribution<double> u(0.05, max_frac);
  for (std::size_t r = 0; r < v.size() / d; ++r) {
    double sq = 0.0;
    for (std::size_t k = 0; k < d; ++k) sq += v[r * d + k] * v[r * d + k];
    const double s = u(rng) / std::sqrt(c * sq);
    for (std::size_t k = 0; k < d; ++k) v[r * d + k] *= s;
  }
  return t;
}

Tensor away_from_zero(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t = Tensor::uniform(shape, rng, lo, hi);
  std::bernoulli_distribution sign(0.5);
  for (double& x : t.mutable_values()) x = sign(rng) ? x : -x;
  return t;
}

double case_error(const Case& cs, std::mt19937_64& rng) {
  Inputs leaves;
  for (const auto& t : cs.inputs) {
    Tensor l(t.shape(), t.to_vector());
    l.set_requires_grad();
    leaves.push_back(l);
  }
  const Tensor out = cs.fn(leaves);
  const Tensor R = Tensor::uniform(out.shape(), rng, -1.0, 1.0);
  backward(sum(out * R));
  double worst = 0.0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const auto f = [&](const Tensor& x) {
      Inputs in;
      for (const auto& t : cs.inputs) in.push_back(t.detach());
      in[i] = x;
      return sum(cs.fn(in) * R).item();
    };
    const Tensor fd = finite_difference_grad(f, cs.inputs[i].detach(), kFdStep);
    const std::vector<double> analytic =
        leaves[i].has_grad() ? leaves[i].to_vector().size() == 0 ? std::vector<double>{}
                                                                 : leaves[i].grad_tensor().to_vector()
                             : std::vector<double>(leaves[i].numel(), 0.0);
    worst = std::max(worst, relative_error(analytic, fd.values(), kErrorFloor));
  }
  return worst;
}

std::vector<Case> per_curvature(std::mt19937_64& rng,
                                const std::function<Case(double, std::mt19937_64&)>& make) {
  std::vector<Case> out;
  for (double c : kCurvatures) out.push_back(make(c, rng));
  return out;
}

std::vector<Case> repeat(std::mt19937_64& rng, int n, const std::function<Case(std::mt19937_64&)>& make) {
  std::vector<Case> out;
  for (int i = 0; i < n; ++i) out.push_back(make(rng));
  return out;
}

// Positive weights rescaled to sum to one along the last axis.
Tensor normalized(const Tensor& w) {
  return w / sum(w, -1, true);
}

FrechetConfig fixed_iterations(int n) {
  FrechetConfig f;
  f.max_iter = n;
  f.tol = 1e-300;
  return f;
}

const std::vector<Op>& registry() {
  static const std::vector<Op> ops{
      // Tensor substrate.
      {"matmul", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::randn({3, 4}, r), Tensor::randn({4, 2}, r)},
                       [](const Inputs& x) { return matmul(x[0], x[1]); }};
         });
       }},
      {"linear", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::randn({2, 3, 4}, r), Tensor::randn({4, 5}, r), Tensor::randn({5}, r)},
                       [](const Inputs& x) { return linear(x[0], x[1], x[2]); }};
         });
       }},
      {"add_sub_broadcast", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::randn({2, 3, 4}, r), Tensor::randn({3, 1}, r), Tensor::randn({2, 1, 4}, r)},
                       [](const Inputs& x) { return x[0] + x[1] - x[2]; }};
         });
       }},
      {"mul_div_broadcast", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::randn({2, 3, 4}, r), Tensor::randn({4}, r),
                        away_from_zero({2, 3, 1}, r, 0.5, 2.0)},
                       [](const Inputs& x) { return x[0] * x[1] / x[2]; }};
         });
       }},
      {"tanh_sigmoid_exp", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::randn({5}, r)},
                       [](const Inputs& x) { return tanh(x[0]) + sigmoid(x[0]) * exp(x[0]); }};
         });
       }},
      {"artanh", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::uniform({5}, r, -0.9, 0.9)}, [](const Inputs& x) { return artanh(x[0]); }};
         });
       }},
      {"log_sqrt_square", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::uniform({5}, r, 0.2, 3.0)},
                       [](const Inputs& x) { return log(x[0]) + sqrt(x[0]) * square(x[0]); }};
         });
       }},
      {"relu_clamp", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{away_from_zero({6}, r, 0.1, 2.0)},
                       [](const Inputs& x) { return relu(x[0]) + clamp(x[0], -0.05, 0.05) * 3.0; }};
         });
       }},
      {"reduce_sum_mean_max", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::randn({3, 4}, r)}, [](const Inputs& x) {
                         return sum(x[0], 0) + mean(x[0], 0) * 2.0 + max(x[0], 0);
                       }};
         });
       }},
      {"softmax_masked", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           const Tensor mask({2, 4}, {1, 1, 0, 1, 0, 1, 1, 1});
           return Case{{Tensor::randn({2, 4}, r)},
                       [mask](const Inputs& x) { return softmax(x[0], -1, mask); }};
         });
       }},
      {"log_softmax", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::randn({3, 5}, r)}, [](const Inputs& x) { return log_softmax(x[0], -1); }};
         });
       }},
      {"shape_ops", [](auto& rng) {
         return repeat(rng, 2, [](auto& r) {
           return Case{{Tensor::randn({2, 3}, r), Tensor::randn({2, 2}, r)}, [](const Inputs& x) {
                         const Tensor cat = concat({x[0], x[1]}, 1);
                         const std::vector<std::size_t> rows{1, 0, 1};
                         return reshape(slice(cat, 1, 1, 3), {3, 2}) +
                                broadcast_to(reshape(index_select(x[1], rows), {3, 2}), {3, 2});
                       }};
         });
       }},
      {"norm_dot_last", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::randn({3, 4}, r), Tensor::randn({3, 4}, r)},
                       [](const Inputs& x) { return norm_last(x[0]) + dot_last(x[0], x[1]); }};
         });
       }},
      // Neural-network kernels.
      {"mix_nodes", [](auto& rng) {
         return repeat(rng, 2, [](auto& r) {
           return Case{{Tensor::randn({2, 3, 4, 2}, r), Tensor::randn({4, 4}, r)},
                       [](const Inputs& x) { return mix_nodes(x[0], x[1]); }};
         });
       }},
      {"temporal_conv", [](auto& rng) {
         return repeat(rng, 2, [](auto& r) {
           return Case{{Tensor::randn({2, 5, 3, 2}, r), Tensor::randn({3, 2, 3}, r), Tensor::randn({3}, r)},
                       [](const Inputs& x) { return temporal_conv(x[0], x[1], x[2], 2, 1); }};
         });
       }},
      {"batch_norm", [](auto& rng) {
         return repeat(rng, 2, [](auto& r) {
           const std::vector<double> rows{1, 1, 0, 1, 1, 1};
           return Case{{Tensor::randn({2, 3, 3}, r), Tensor::randn({3}, r), Tensor::randn({3}, r)},
                       [rows](const Inputs& x) {
                         BatchNormState st(3);
                         return batch_norm(x[0], x[1], x[2], st, true, rows);
                       }};
         });
       }},
      {"cross_entropy", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::randn({4, 5}, r)}, [](const Inputs& x) {
                         const std::vector<int> targets{0, 3, -1, 4};
                         return cross_entropy(x[0], targets, 0.2);
                       }};
         });
       }},
      // Poincare ball.
      {"mobius_add", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({3, 4}, c, r), ball_points({3, 4}, c, r), Tensor::scalar(c)},
                       [](const Inputs& x) { return mobius_add(x[0], x[1], x[2]); }};
         });
       }},
      {"dist", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({4, 3}, c, r), ball_points({4, 3}, c, r), Tensor::scalar(c)},
                       [](const Inputs& x) { return dist(x[0], x[1], x[2]); }};
         });
       }},
      {"dist0", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({4, 3}, c, r), Tensor::scalar(c)},
                       [](const Inputs& x) { return dist0(x[0], x[1]); }};
         });
       }},
      {"conformal_factor", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({4, 3}, c, r), Tensor::scalar(c)},
                       [](const Inputs& x) { return conformal_factor(x[0], x[1]); }};
         });
       }},
      {"expmap0", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{Tensor::randn({3, 4}, r, 0.5), Tensor::scalar(c)},
                       [](const Inputs& x) { return expmap0(x[0], x[1]); }};
         });
       }},
      {"logmap0", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({3, 4}, c, r), Tensor::scalar(c)},
                       [](const Inputs& x) { return logmap0(x[0], x[1]); }};
         });
       }},
      {"expmap", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({3, 4}, c, r, 0.6), Tensor::randn({3, 4}, r, 0.3), Tensor::scalar(c)},
                       [](const Inputs& x) { return expmap(x[0], x[1], x[2]); }};
         });
       }},
      {"logmap", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({3, 4}, c, r), ball_points({3, 4}, c, r), Tensor::scalar(c)},
                       [](const Inputs& x) { return logmap(x[0], x[1], x[2]); }};
         });
       }},
      {"mobius_matvec", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{Tensor::randn({4, 4}, r, 0.5), ball_points({3, 4}, c, r, 0.6), Tensor::scalar(c)},
                       [](const Inputs& x) { return mobius_matvec(x[0], x[1], x[2]); }};
         });
       }},
      {"project_to_ball", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           // Rows inside and outside the ball.
           Tensor x = Tensor::randn({4, 3}, r);
           auto v = x.mutable_values();
           for (std::size_t row = 0; row < 4; ++row) {
             double sq = 0.0;
             for (std::size_t k = 0; k < 3; ++k) sq += v[row * 3 + k] * v[row * 3 + k];
             const double target = (row % 2 ? 1.5 : 0.5) / std::sqrt(c);
             for (std::size_t k = 0; k < 3; ++k) v[row * 3 + k] *= target / std::sqrt(sq);
           }
           return Case{{x, Tensor::scalar(c)},
                       [](const Inputs& in) { return project_to_ball(in[0], in[1]); }};
         });
       }},
      {"clip_tangent", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           Tensor v = Tensor::randn({4, 3}, r);
           auto s = v.mutable_values();
           for (std::size_t i = 0; i < 6; ++i) s[i] *= 0.1 / std::sqrt(c);
           for (std::size_t i = 6; i < 12; ++i) s[i] *= 2.0 / std::sqrt(c);
           return Case{{v, Tensor::scalar(c)}, [](const Inputs& x) { return clip_tangent(x[0], x[1]); }};
         });
       }},
      // Frechet aggregation.
      {"part_weights", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({2, 4, 3}, c, r), Tensor::scalar(c)},
                       [](const Inputs& x) { return part_weights(x[0], x[1], 0.7); }};
         });
       }},
      {"frechet_mean", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({2, 3, 3}, c, r, 0.6), Tensor::uniform({2, 3}, r, 0.2, 1.0),
                        Tensor::scalar(c)},
                       [](const Inputs& x) {
                         return frechet_mean(x[0], normalized(x[1]), x[2], fixed_iterations(5)).mean;
                       }};
         });
       }},
      {"weighted_midpoint_tangent", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({2, 3, 3}, c, r, 0.6), Tensor::uniform({2, 3}, r, 0.2, 1.0),
                        Tensor::scalar(c)},
                       [](const Inputs& x) {
                         FrechetConfig f;
                         f.tangent_approx = true;
                         return weighted_midpoint(x[0], normalized(x[1]), x[2], f);
                       }};
         });
       }},
      // Hyperbolic layers.
      {"project", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{Tensor::randn({3, 4}, r), Tensor::randn({4, 3}, r, 0.3), Tensor::scalar(-0.5),
                        Tensor::scalar(c)},
                       [](const Inputs& x) {
                         HyperbolicProjection p;
                         p.W = x[1];
                         p.log_scale = x[2];
                         return project(x[0], p, x[3]);
                       }};
         });
       }},
      {"pooled_align", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           const Tensor mask({2, 3}, {1, 1, 0, 1, 1, 1});
           return Case{{ball_points({2, 4, 3}, c, r, 0.6), Tensor::randn({2, 3, 3}, r),
                        Tensor::randn({3, 3}, r, 0.3), Tensor::scalar(c)},
                       [mask](const Inputs& x) {
                         HyperbolicProjection p;
                         p.W = x[2];
                         p.log_scale = Tensor::scalar(0.0);
                         const auto a = pooled_align(x[0], x[1], mask, p, x[3], fixed_iterations(4));
                         return concat({a.pose, a.text}, -1);
                       }};
         });
       }},
      {"token_align", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           const Tensor mask({2, 3}, {1, 1, 0, 1, 1, 1});
           return Case{{ball_points({2, 4, 3}, c, r, 0.6), Tensor::randn({2, 3, 3}, r),
                        Tensor::randn({3, 3}, r, 0.3), Tensor::randn({3, 3}, r, 0.5),
                        ball_points({3}, c, r, 0.3), Tensor::scalar(0.2)},
                       [mask, c](const Inputs& x) {
                         HyperbolicProjection p;
                         p.W = x[2];
                         p.log_scale = Tensor::scalar(0.0);
                         HyperbolicAttention at;
                         at.M_key = x[3];
                         at.b_key = x[4];
                         at.log_tau_attn = x[5];
                         return token_align(x[0], x[1], mask, p, at, Tensor::scalar(c),
                                            fixed_iterations(4))
                             .context;
                       }};
         });
       }},
      {"contrastive_loss", [](auto& rng) {
         return per_curvature(rng, [](double c, auto& r) {
           return Case{{ball_points({4, 3}, c, r), ball_points({4, 3}, c, r), Tensor::scalar(0.3),
                        Tensor::scalar(0.2), Tensor::scalar(c)},
                       [](const Inputs& x) {
                         ContrastiveHead h(0.5, 0.1, 0.2);
                         h.log_tau = x[2];
                         h.margin = x[3];
                         return contrastive_loss(x[0], x[1], h, x[4]);
                       }};
         });
       }},
      {"alpha_total_loss", [](auto& rng) {
         return repeat(rng, 3, [](auto& r) {
           return Case{{Tensor::uniform({1}, r, -1.0, 1.0), Tensor::uniform({1}, r, 1.0, 3.0),
                        Tensor::uniform({1}, r, 0.0, 2.0)},
                       [](const Inputs& x) {
                         AlphaSchedule s(0.3, 100);
                         s.logit_alpha = reshape(x[0], {});
                         return total_loss(x[1], x[2], alpha(40, s));
                       }};
         });
       }},
      // Skeleton encoder.
      {"spatial_gcn", [](auto& rng) {
         return repeat(rng, 2, [](auto& r) {
           const SkeletonGraph g = build_graph("body");
           return Case{{Tensor::randn({2, 3, 9, 2}, r), Tensor::randn({1, 2, 3}, r), Tensor::randn({3}, r)},
                       [A = g.A](const Inputs& x) {
                         SpatialGcn layer;
                         layer.W = x[1];
                         layer.b = x[2];
                         // Bias under batch norm has no effect, so check the raw layer.
                         layer.use_norm = false;
                         return spatial_gcn(x[0], A, layer, true);
                       }};
         });
       }},
      {"stgcn_block", [](auto& rng) {
         return repeat(rng, 2, [](auto& r) {
           const SkeletonGraph g = build_graph("face");
           std::mt19937_64 init(r());
           auto block = std::make_shared<StgcnBlock>(1, 2, 3, 2, init);
           return Case{{Tensor::randn({2, 4, 16, 2}, r), block->gcn.W, block->W_t},
                       [A = g.A, block](const Inputs& x) {
                         StgcnBlock b = *block;
                         b.gcn.W = x[1];
                         b.W_t = x[2];
                         b.gcn.norm.state = BatchNormState(3);
                         b.tnorm.state = BatchNormState(3);
                         std::vector<double> mask{1, 1, 1, 0, 1, 1, 1, 1}, out;
                         return stgcn_block(x[0], A, b, true, mask, out);
                       }};
         });
       }},
      {"fuse_for_decoder", [](auto& rng) {
         return repeat(rng, 2, [](auto& r) {
           return Case{{Tensor::randn({2, 3, 2}, r), Tensor::randn({2, 3, 2}, r), Tensor::randn({2, 3, 2}, r),
                        Tensor::randn({2, 3, 2}, r), Tensor::randn({8, 3}, r), Tensor::randn({3}, r)},
                       [](const Inputs& x) {
                         return fuse_for_decoder({x[0], x[1], x[2], x[3]}, x[4], x[5]);
                       }};
         });
       }},
  };
  return ops;
}

// The closed-form distance gradient against central differences of the
// forward distance.
GradcheckEntry check_dist_grad(const GradcheckOptions& opts, std::mt19937_64& rng) {
  GradcheckEntry e;
  e.name = "dist_grad";
  e.threshold = opts.dist_threshold;
  const std::size_t d = 3;
  for (double c : kCurvatures) {
    for (std::size_t i = 0; i < opts.dist_pairs; ++i) {
      const auto u = ball_points({d}, c, rng, 0.9).to_vector();
      const auto v = ball_points({d}, c, rng, 0.9).to_vector();
      DistGrad g = dist_grad(u, v, d, c);
      if (opts.corrupt_dist_grad) {
        for (auto* vec : {&g.grad_u, &g.grad_v, &g.grad_c}) {
          for (double& x : *vec) x = -x;
        }
      }
      const Tensor ct = Tensor::scalar(c);
      const Tensor ut({d}, u), vt({d}, v);
      const auto fu = finite_difference_grad([&](const Tensor& x) { return dist(x, vt, ct).item(); }, ut);
      const auto fv = finite_difference_grad([&](const Tensor& x) { return dist(ut, x, ct).item(); }, vt);
      const auto fc = finite_difference_grad(
          [&](const Tensor& x) { return dist(ut, vt, x).item(); }, ct, 1e-7 * c);
      e.worst_error = std::max({e.worst_error, relative_error(g.grad_u, fu.values()),
                                relative_error(g.grad_v, fv.values()),
                                relative_error(g.grad_c, fc.values())});
      ++e.cases;
    }
  }
  e.passed = e.worst_error < e.threshold;
  return e;
}

}  // namespace

bool GradcheckReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradcheckReport::worst(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e.worst_error;
  }
  return -1.0;
}

std::vector<std::string> registered_ops() {
  std::vector<std::string> names{"dist_grad"};
  for (const auto& op : registry()) names.push_back(op.name);
  return names;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  GradcheckReport report;
  std::mt19937_64 rng(opts.seed);
  if (opts.filter.empty() || std::string("dist_grad").find(opts.filter) != std::string::npos) {
    report.entries.push_back(check_dist_grad(opts, rng));
  }
  for (const auto& op : registry()) {
    if (!opts.filter.empty() && op.name.find(opts.filter) == std::string::npos) continue;
    GradcheckEntry e;
    e.name = op.name;
    e.threshold = opts.threshold;
    for (const auto& cs : op.build(rng)) {
      e.worst_error = std::max(e.worst_error, case_error(cs, rng));
      ++e.cases;
    }
    e.passed = e.worst_error < e.threshold;
    report.entries.push_back(e);
  }
  return report;
}

std::string format_report(const GradcheckReport& report) {
  std::ostringstream s;
  s << std::left << std::setw(28) << "op" << std::setw(14) << "worst_rel_err" << std::setw(8)
    << "cases" << "status\n";
  for (const auto& e : report.entries) {
    s << std::left << std::setw(28) << e.name << std::setw(14) << std::setprecision(3)
      << std::scientific << e.worst_error << std::setw(8) << std::defaultfloat << e.cases
      << (e.passed ? "PASS" : "FAIL") << '\n';
  }
  s << (report.passed() ? "all ops passed" : "gradient check FAILED") << '\n';
  return s.str();
}

}  // namespace hyperskel
