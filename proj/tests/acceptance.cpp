// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 when
// every criterion ran to completion; pass --strict to also fail on a red
// criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hyperskel/frechet.hpp"
#include "hyperskel/gradcheck.hpp"
#include "hyperskel/layers.hpp"
#include "hyperskel/manifold.hpp"
#include "hyperskel/train.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace hyperskel;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
  bool pass = true;
  std::string detail;
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [miss]");
  }
};

Tensor C(double c) { return Tensor::scalar(c); }

// n rows of dimension d with sqrt(c)*norm uniform in [0, rmax).
Tensor ball_rows(std::mt19937_64& rng, std::size_t n, std::size_t d, double c, double rmax) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, rmax);
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += (x[i * d + k] = g(rng)) * x[i * d + k];
    const double r = u(rng) / std::sqrt(c * s);
    for (std::size_t k = 0; k < d; ++k) x[i * d + k] *= r;
  }
  return Tensor({n, d}, x);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

Outcome geometry() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  double roundtrip = 0.0, mobius = 0.0;
  std::size_t triangle_violations = 0, asym = 0;
  for (double c : {0.1, 1.0, 2.0}) {
    const Tensor ct = C(c);
    const std::size_t n = 1000, d = 5;
    // Tangent vectors with sqrt(c)*|v| < 3 and points with sqrt(c)*|x| < 0.9.
    const Tensor v = ball_rows(rng, n, d, c, 3.0);
    const Tensor x = ball_rows(rng, n, d, c, 0.9), y = ball_rows(rng, n, d, c, 0.9);
    const Tensor z = ball_rows(rng, n, d, c, 0.9);
    roundtrip = std::max(roundtrip, max_abs_diff(logmap0(expmap0(v, ct), ct), v));
    roundtrip = std::max(roundtrip, max_abs_diff(expmap(x, logmap(x, y, ct), ct), y));
    const Tensor zero = Tensor::zeros({n, d});
    mobius = std::max(mobius, max_abs_diff(mobius_add(zero, x, ct), x));
    mobius = std::max(mobius, max_abs_diff(mobius_add(x, zero, ct), x));
    mobius = std::max(mobius, max_abs_diff(mobius_add(neg(x), x, ct), zero));
    mobius = std::max(mobius, max_abs_diff(mobius_add(neg(x), mobius_add(x, y, ct), ct), y));
    const auto dxy = dist(x, y, ct).to_vector(), dyx = dist(y, x, ct).to_vector();
    const auto dyz = dist(y, z, ct).to_vector(), dxz = dist(x, z, ct).to_vector();
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(dxy[i] - dyx[i]) > 1e-9) ++asym;
      if (dxz[i] > dxy[i] + dyz[i] + 1e-12) ++triangle_violations;
    }
  }
  const double secs = seconds_since(t0);
  o.check(roundtrip < 1e-9, "exp/log round trip max err " + fmt(roundtrip, 3));
  o.check(mobius < 1e-9, "mobius identity/inverse/cancellation max err " + fmt(mobius, 3));
  o.check(asym == 0, "asymmetric pairs (beyond 1e-9) " + std::to_string(asym) + "/3000");
  o.check(triangle_violations == 0,
          "triangle violations " + std::to_string(triangle_violations) + "/3000");
  o.check(secs < 30.0, "runtime " + fmt(secs, 3) + " s");
  return o;
}

Outcome gradients() {
  Outcome o;
  const GradcheckReport r = run_gradcheck({});
  std::string failed;
  for (const auto& e : r.entries) {
    if (!e.passed) failed += " " + e.name;
  }
  o.check(r.worst("dist_grad") >= 0.0 && r.worst("dist_grad") < 1e-5,
          "dist gradient worst rel err " + fmt(r.worst("dist_grad"), 3) + " over 300 pairs");
  double worst_op = 0.0;
  for (const auto& e : r.entries) {
    if (e.name != "dist_grad") worst_op = std::max(worst_op, e.worst_error);
  }
  o.check(r.passed(), std::to_string(r.entries.size() - 1) + " ops, worst rel err " +
                          fmt(worst_op, 3) + (failed.empty() ? "" : ", failing:" + failed));
  const std::string cmd = std::string("\"") + HYPERSKEL_CLI_PATH + "\" check-grads > /dev/null";
  const int status = std::system(cmd.c_str());
  o.check(status == 0, "check-grads exit status " + std::to_string(status));
  return o;
}

Outcome frechet() {
  Outcome o;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uw(0.05, 1.0);
  const Tensor c = C(1.0);
  double worst_oracle = 0.0, worst_multi = 0.0;
  bool monotone = true, converged = true;
  FrechetConfig tight;
  tight.tol = 1e-9;
  tight.max_iter = 200;
  const int instances = 25;
  for (int inst = 0; inst < instances; ++inst) {
    const Tensor p = ball_rows(rng, 3, 2, 1.0, 0.9);
    std::vector<double> w(3);
    double s = 0.0;
    for (auto& x : w) s += (x = uw(rng));
    for (auto& x : w) x /= s;
    const Tensor wt({3}, w);
    const auto r = frechet_mean(p, wt, c, {}, std::nullopt, true);
    converged = converged && r.converged;
    for (std::size_t k = 1; k < r.objective[0].size(); ++k) {
      monotone = monotone && r.objective[0][k] <= r.objective[0][k - 1];
    }
    std::vector<oracle::Vec> pts;
    for (std::size_t i = 0; i < 3; ++i) pts.push_back({p.values()[2 * i], p.values()[2 * i + 1]});
    const auto ref = oracle::frechet_bruteforce(pts, w, 1.0);
    worst_oracle = std::max(worst_oracle, oracle::dist(r.mean.to_vector(), ref, 1.0));
    std::vector<oracle::Vec> starts;
    for (std::size_t i = 0; i < 3; ++i) {
      const Tensor init({1, 2}, pts[i]);
      starts.push_back(frechet_mean(reshape(p, {1, 3, 2}), reshape(wt, {1, 3}), c, tight, init)
                           .mean.to_vector());
    }
    for (std::size_t i = 1; i < 3; ++i) {
      worst_multi = std::max(worst_multi, oracle::dist(starts[0], starts[i], 1.0));
    }
  }
  o.check(converged, std::to_string(instances) + " instances converged");
  o.check(worst_oracle < 1e-4, "max geodesic distance to brute force " + fmt(worst_oracle, 3));
  o.check(monotone, "objective non-increasing");
  o.check(worst_multi < 1e-5, "multi-start spread " + fmt(worst_multi, 3));
  return o;
}

Tensor on_axis(double s, double c) {
  // Point at signed geodesic distance s from the origin along the first axis.
  return Tensor({1, 2}, {std::tanh(std::sqrt(c) * s / 2.0) / std::sqrt(c), 0.0});
}

Outcome contrastive() {
  Outcome o;
  const Tensor c = C(1.0);
  const double single =
      contrastive_loss(Tensor({1, 2}, {0.3, 0.2}), Tensor({1, 2}, {-0.4, 0.1}), ContrastiveHead(0.5, 0.1, 0.0), c)
          .item();
  o.check(single == 0.0, "B=1 loss " + fmt(single));
  // Positions on one geodesic: t1 = -1.25, p1 = -0.75, p2 = 0.75, t2 = 1.25.
  const Tensor p = concat({on_axis(-0.75, 1.0), on_axis(0.75, 1.0)}, 0);
  const Tensor t = concat({on_axis(-1.25, 1.0), on_axis(1.25, 1.0)}, 0);
  const double pair = contrastive_loss(p, t, ContrastiveHead(1.0, 0.0, 0.0), c).item();
  o.check(std::abs(pair - 0.20141) <= 1e-4, "B=2 loss " + fmt(pair, 7));
  std::mt19937_64 rng(4);
  bool invariant = true;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t B = 9;
    const Tensor ps = ball_rows(rng, B, 6, 1.5, 0.9), ts = ball_rows(rng, B, 6, 1.5, 0.9);
    std::vector<std::size_t> perm(B);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const ContrastiveHead head;
    invariant = invariant && contrastive_loss(ps, ts, head, C(1.5)).item() ==
                                 contrastive_loss(index_select(ps, perm), index_select(ts, perm), head, C(1.5)).item();
  }
  o.check(invariant, "permutation invariance exact over 50 batches");
  return o;
}

Outcome euclidean_limit() {
  Outcome o;
  std::mt19937_64 rng(5);
  const double c = kEuclideanCurvature;
  const Tensor ct = C(c);
  // Norm <= 0.1 in plain coordinates.
  const Tensor u = ball_rows(rng, 1000, 4, 1.0, 0.1), v = ball_rows(rng, 1000, 4, 1.0, 0.1);
  const auto d = dist(u, v, ct).to_vector();
  double worst = 0.0, ratio_lo = 1e300, ratio_hi = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) {
    double e = 0.0;
    for (std::size_t k = 0; k < 4; ++k) e += std::pow(u.values()[i * 4 + k] - v.values()[i * 4 + k], 2);
    e = std::sqrt(e);
    worst = std::max(worst, std::abs(d[i] - e) / e);
    ratio_lo = std::min(ratio_lo, d[i] / e);
    ratio_hi = std::max(ratio_hi, d[i] / e);
  }
  o.check(worst < 1e-2, "distance rel dev from Euclidean " + fmt(worst, 4) + " (dist/euclid in [" +
                            fmt(ratio_lo, 6) + ", " + fmt(ratio_hi, 6) + "])");
  double mean_err = 0.0;
  std::uniform_real_distribution<double> uw(0.05, 1.0);
  for (int inst = 0; inst < 100; ++inst) {
    const Tensor p = ball_rows(rng, 4, 3, 1.0, 0.1);
    std::vector<double> w(4);
    double s = 0.0;
    for (auto& x : w) s += (x = uw(rng));
    for (auto& x : w) x /= s;
    const auto m = frechet_mean(p, Tensor({4}, w), ct).mean.to_vector();
    for (std::size_t k = 0; k < 3; ++k) {
      double e = 0.0;
      for (std::size_t i = 0; i < 4; ++i) e += w[i] * p.values()[i * 3 + k];
      mean_err = std::max(mean_err, std::abs(m[k] - e));
    }
  }
  o.check(mean_err < 1e-3, "Frechet vs weighted mean max err " + fmt(mean_err, 3));
  return o;
}

struct TrendRun {
  std::uint64_t seed = 0;
  TrainResult hyp, euc;
};

TrainResult run(TrainConfig cfg, const SyntheticDataset& data, const std::string& out) {
  cfg.out_dir = out;
  TrainOptions opts;
  opts.write_files = true;
  return train(cfg, data, opts);
}

void print(int id, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << id << "  " << name
            << ": " << o.detail << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::string scratch = (fs::temp_directory_path() / "hyperskel-acceptance").string();
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") strict = true;
    else if (a == "--scratch" && i + 1 < argc) scratch = argv[++i];
  }
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  std::vector<bool> results;
  auto record = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& ex) {
      o.check(false, std::string("error: ") + ex.what());
    }
    print(id, name, o);
    results.push_back(o.pass);
  };

  record(1, "geometry suite", geometry);
  record(2, "gradient suite", gradients);
  record(3, "Frechet oracle", frechet);
  record(4, "contrastive loss", contrastive);
  record(5, "Euclidean limit", euclidean_limit);

  const SyntheticDataset data = generate_dataset(DataConfig{});
  const auto eval_idx = eval_indices(data, TrainConfig{}.eval_every);
  std::vector<TrendRun> trend;
  double trend_seconds = 0.0;
  bool trend_ok = true;
  std::string trend_error;
  try {
    for (std::uint64_t seed : {42, 43, 44}) {
      TrendRun r;
      r.seed = seed;
      TrainConfig cfg;
      cfg.seed = seed;
      cfg.strategy = Strategy::kToken;
      cfg.init_c = 1.5;
      const auto t0 = Clock::now();
      r.hyp = run(cfg, data, scratch + "/token_s" + std::to_string(seed));
      cfg.strategy = Strategy::kEuclideanToken;
      r.euc = run(cfg, data, scratch + "/euclidean_token_s" + std::to_string(seed));
      trend_seconds += seconds_since(t0);
      trend.push_back(std::move(r));
    }
  } catch (const std::exception& ex) {
    trend_ok = false;
    trend_error = ex.what();
  }

  record(6, "hyperbolic vs euclidean retrieval", [&] {
    Outcome o;
    if (!trend_ok) throw std::runtime_error(trend_error);
    std::vector<double> diffs;
    std::string per;
    for (const auto& r : trend) {
      diffs.push_back(r.hyp.eval.top1 - r.euc.eval.top1);
      per += " s" + std::to_string(r.seed) + " " + fmt(r.hyp.eval.top1) + "/" + fmt(r.euc.eval.top1);
    }
    o.check(median(diffs) >= 3.0, "median top-1 gain " + fmt(median(diffs)) + " points (hyp/euc:" + per + ")");
    o.check(trend_seconds < 1800.0, "runtime " + fmt(trend_seconds / 60.0, 3) + " min");
    return o;
  });

  record(7, "noise robustness", [&] {
    Outcome o;
    if (!trend_ok) throw std::runtime_error(trend_error);
    const std::vector<double> sigmas{0.0, 0.02, 0.03};
    std::vector<std::vector<double>> hyp(sigmas.size()), euc(sigmas.size());
    for (const auto& r : trend) {
      const auto rows = ablate_noise(*r.hyp.model, *r.euc.model, data, eval_idx, sigmas, r.seed);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        hyp[i].push_back(rows[i].hyp_degradation);
        euc[i].push_back(rows[i].euc_degradation);
      }
    }
    for (std::size_t i = 1; i < sigmas.size(); ++i) {
      const double h = median(hyp[i]), e = median(euc[i]);
      o.check(h <= e, "sigma " + fmt(sigmas[i]) + ": median degradation hyp " + fmt(100 * h, 3) +
                          "% vs euc " + fmt(100 * e, 3) + "%");
    }
    return o;
  });

  record(8, "radial structure", [&] {
    Outcome o;
    if (!trend_ok) throw std::runtime_error(trend_error);
    for (const auto& r : trend) {
      const auto& rad = r.hyp.eval.radius;
      const double hand = 0.5 * (rad[1] + rad[2]);
      o.check(hand > rad[0], "s" + std::to_string(r.seed) + " hand " + fmt(hand) + " > body " + fmt(rad[0]));
    }
    return o;
  });

  record(9, "learnable curvature", [&] {
    Outcome o;
    if (!trend_ok) throw std::runtime_error(trend_error);
    TrainConfig cfg;
    cfg.strategy = Strategy::kToken;
    cfg.init_c = 0.1;
    const TrainResult low = run(cfg, data, scratch + "/token_c0.1");
    double peak = 0.0;
    for (const auto& e : low.history) peak = std::max(peak, e.c);
    const double final_low = low.history.back().c;
    o.check(final_low >= 0.125, "from 0.1: final c " + fmt(final_low) + ", peak " + fmt(peak));
    for (const auto& r : trend) {
      const double c = r.hyp.history.back().c;
      o.check(c >= 0.75 && c <= 2.25, "from 1.5 (s" + std::to_string(r.seed) + "): final c " + fmt(c));
    }
    return o;
  });

  record(10, "determinism", [&] {
    Outcome o;
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.warmup_epochs = 1;
    std::vector<std::string> bytes;
    for (const char* name : {"/det_a", "/det_b"}) {
      const TrainResult r = run(cfg, data, scratch + name);
      std::ifstream f(r.metrics_path, std::ios::binary);
      bytes.emplace_back(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    o.check(!bytes[0].empty() && bytes[0] == bytes[1],
            "metrics files " + std::to_string(bytes[0].size()) + " bytes, " +
                (bytes[0] == bytes[1] ? "identical" : "different"));
    return o;
  });

  const auto passed = std::count(results.begin(), results.end(), true);
  std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
  return strict && passed != static_cast<long>(results.size()) ? 1 : 0;
}
