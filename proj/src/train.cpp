#include "hyperskel/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include "hyperskel/checkpoint.hpp"
#include "hyperskel/optim.hpp"
#include "json.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace hyperskel {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Keys that name files rather than describe the experiment; left out of the
// metrics header so runs written to different places stay comparable.
bool is_location_key(const std::string& k) {
  return k == "data_path" || k == "out_dir" || k == "hyp_checkpoint" || k == "euc_checkpoint";
}

json radius_json(const std::array<double, kNumParts>& r) {
  json j = json::object();
  for (std::size_t p = 0; p < kNumParts; ++p) j[kPartNames[p]] = r[p];
  return j;
}

// Activation buffers are a few MB each and are freed and reallocated every
// step; keeping them on the heap instead of mmap avoids a page-fault storm.
void keep_buffers_on_heap() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
  }();
  (void)once;
#endif
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::array<double, kNumParts> part_radius_sums(const Tensor& parts, const Tensor& c) {
  const Tensor r = dist0(parts.detach(), c.detach());  // (B, P)
  std::array<double, kNumParts> s{};
  const auto v = r.values();
  const std::size_t B = parts.dim(0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < kNumParts; ++p) s[p] += v[b * kNumParts + p];
  }
  return s;
}

[[noreturn]] void abort_non_finite(const TrainConfig& cfg, const Batch& batch,
                                   const ForwardResult& fr, Model& model, std::size_t epoch,
                                   std::size_t step, const std::string& what, bool write) {
  json dump{{"reason", what},
            {"epoch", epoch},
            {"step", step},
            {"sample_ids", batch.sample_ids},
            {"labels", batch.labels},
            {"frames", batch.frames},
            {"c", model.ball.c()}};
  auto num = [](const Tensor& t) -> json {
    if (!t.defined()) return nullptr;
    const double v = t.item();
    return std::isfinite(v) ? json(v) : json(std::to_string(v));
  };
  dump["ce"] = num(fr.ce);
  dump["hyp"] = num(fr.hyp);
  dump["alpha"] = num(fr.alpha);
  dump["total"] = num(fr.total);
  json bad = json::array();
  for (const auto& p : model.parameters()) {
    if (!all_finite(p.tensor->values()) || (p.tensor->has_grad() && !all_finite(p.tensor->grad()))) {
      bad.push_back(p.name);
    }
  }
  dump["non_finite_tensors"] = bad;
  std::string where = "(not written)";
  if (write) {
    fs::create_directories(cfg.out_dir);
    where = (fs::path(cfg.out_dir) / "nan_dump.json").string();
    std::ofstream(where) << dump.dump(2) << '\n';
  }
  throw NonFiniteError(what + " at epoch " + std::to_string(epoch) + " step " +
                       std::to_string(step) + "; diagnostic dump: " + where);
}

std::size_t rank_of(const double* row, std::size_t n, std::size_t target) {
  std::size_t rank = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == target) continue;
    if (row[j] <= row[target]) ++rank;
  }
  return rank;
}

}  // namespace

std::vector<double> retrieval_scores(Model& model, const SyntheticDataset& data,
                                     const Batch& batch) {
  const Batch sent = make_sentence_batch(data);
  const std::size_t K = sent.size, Ls = sent.steps, d = model.config().d_hyp, B = batch.size;
  const Tensor c = model.ball.c_tensor().detach();
  const Tensor S = model.decoder.states(sent.inputs, K, Ls);
  const Tensor parts = model.encode(batch, false).first.detach();
  const FrechetConfig fc = model.frechet_config();
  Tensor scores;
  if (uses_token_alignment(model.config().strategy)) {
    const Tensor values = model.text_values(S).detach();
    const Tensor parts_rep = reshape(broadcast_to(reshape(parts, {B, 1, kNumParts, d}),
                                                  {B, K, kNumParts, d}),
                                     {B * K, kNumParts, d});
    const Tensor vals_rep =
        reshape(broadcast_to(reshape(values, {1, K, Ls, d}), {B, K, Ls, d}), {B * K, Ls, d});
    const Tensor mask_rep =
        reshape(broadcast_to(reshape(sent.token_mask, {1, K, Ls}), {B, K, Ls}), {B * K, Ls});
    const TokenAlignment ta = token_align_values(parts_rep, vals_rep, mask_rep, model.attention, c, fc);
    scores = mean(dist(parts_rep, ta.context, c), 1);
  } else {
    const Tensor m3 = reshape(sent.token_mask, {K, Ls, 1});
    const Tensor text = project(sum(S * m3, 1) / clamp_min(sum(m3, 1), 1.0), model.text_proj, c);
    const Tensor pose = frechet_mean(parts, part_weights(parts, c), c, fc).mean;
    scores = dist(reshape(pose, {B, 1, d}), reshape(text.detach(), {1, K, d}), c);
  }
  return scores.to_vector();
}

EvalMetrics evaluate(Model& model, const SyntheticDataset& data,
                     const std::vector<std::size_t>& indices, double noise_sigma,
                     std::uint64_t noise_seed) {
  EvalMetrics m;
  std::mt19937_64 noise_rng(noise_seed);
  const std::size_t K = data.num_classes(), chunk = 32;
  const Tensor c = model.ball.c_tensor().detach();
  std::size_t hit1 = 0, hit5 = 0, tok_ok = 0, tok_n = 0;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::vector<std::size_t> ids(indices.begin() + std::ptrdiff_t(start),
                                       indices.begin() + std::ptrdiff_t(std::min(indices.size(), start + chunk)));
    const Batch batch = make_batch(data, ids, noise_sigma, noise_sigma > 0 ? &noise_rng : nullptr);
    const std::size_t B = batch.size;
    auto [parts, summary] = model.encode(batch, false);
    const auto r = part_radius_sums(parts, c);
    for (std::size_t p = 0; p < kNumParts; ++p) m.radius[p] += r[p];

    const Tensor S = model.decoder.states(batch.inputs, B, batch.steps);
    const auto logits = model.decoder.logits(S, summary).to_vector();
    const std::size_t V = model.vocab_size();
    for (std::size_t i = 0; i < batch.targets.size(); ++i) {
      if (batch.targets[i] < 0) continue;
      const auto row = logits.begin() + std::ptrdiff_t(i * V);
      const auto best = std::max_element(row, row + std::ptrdiff_t(V)) - row;
      tok_ok += best == batch.targets[i];
      ++tok_n;
    }

    const auto scores = retrieval_scores(model, data, batch);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t rank = rank_of(scores.data() + b * K, K, std::size_t(batch.labels[b]));
      hit1 += rank < 1;
      hit5 += rank < 5;
    }
  }
  m.samples = indices.size();
  const double n = double(std::max<std::size_t>(m.samples, 1));
  m.top1 = 100.0 * double(hit1) / n;
  m.top5 = 100.0 * double(hit5) / n;
  m.token_accuracy = 100.0 * double(tok_ok) / double(std::max<std::size_t>(tok_n, 1));
  for (auto& r : m.radius) r /= n;
  return m;
}

TrainResult train(const TrainConfig& cfg, const SyntheticDataset& data, const TrainOptions& opts) {
  cfg.validate();
  keep_buffers_on_heap();
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_ids = train_indices(data, cfg.eval_every);
  const auto eval_ids = eval_indices(data, cfg.eval_every);
  if (train_ids.empty()) throw std::invalid_argument("train: empty training split");
  const std::size_t per_epoch = (train_ids.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  const std::size_t warmup = per_epoch * cfg.warmup_epochs;

  TrainResult res;
  res.model = std::make_shared<Model>(cfg, data.vocab.size(), total);
  Model& model = *res.model;
  ParamGroup euclid, riem;
  euclid.lr = cfg.lr;
  euclid.weight_decay = cfg.weight_decay;
  riem.kind = GroupKind::kRiemannian;
  riem.lr = cfg.hyp_lr;
  for (const auto& p : model.parameters()) {
    (p.kind == ParamKind::kEuclidean ? euclid : riem).params.push_back(p);
  }
  Optimizer opt(euclid, riem, model.ball);
  const auto params = opt.all_params();

  std::ofstream metrics;
  if (opts.write_files) {
    fs::create_directories(cfg.out_dir);
    res.metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
    res.checkpoint_path = (fs::path(cfg.out_dir) / "model.ckpt").string();
    metrics.open(res.metrics_path, std::ios::binary);
    if (!metrics) throw std::runtime_error("cannot write " + res.metrics_path);
    json conf = json::object();
    for (const auto& [k, v] : config_entries(cfg)) {
      if (!is_location_key(k)) conf[k] = v;
    }
    metrics << json{{"format", "hyperskel-metrics"},
                    {"version", kMetricsVersion},
                    {"config", conf},
                    {"train_samples", train_ids.size()},
                    {"eval_samples", eval_ids.size()},
                    {"steps_per_epoch", per_epoch}}
                   .dump()
            << '\n';
  }

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5bd1e995ULL);
  std::size_t step = 0;
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    std::vector<std::size_t> order = train_ids;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochMetrics em;
    em.epoch = epoch;
    em.alpha_min = 1.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (opts.max_steps && step >= opts.max_steps) {
        stop = true;
        break;
      }
      const std::vector<std::size_t> ids(
          order.begin() + std::ptrdiff_t(start),
          order.begin() + std::ptrdiff_t(std::min(order.size(), start + cfg.batch_size)));
      const Batch batch = make_batch(data, ids);
      opt.zero_grad();
      const ForwardResult fr = model.forward(batch, step, true);
      if (!std::isfinite(fr.total.item()) || !std::isfinite(fr.hyp.item())) {
        abort_non_finite(cfg, batch, fr, model, epoch, step, "non-finite loss", opts.write_files);
      }
      backward(fr.total);
      clip_global_grad_norm(params, cfg.grad_clip);
      for (const auto& p : params) {
        if (p.tensor->has_grad() && !all_finite(p.tensor->grad())) {
          abort_non_finite(cfg, batch, fr, model, epoch, step, "non-finite gradient in " + p.name,
                           opts.write_files);
        }
      }
      em.lr_factor = cosine_warmup(step, warmup, total);
      opt.step(em.lr_factor);
      ++step;

      const double a = fr.alpha.item();
      em.ce += fr.ce.item() * double(batch.size);
      em.hyp += fr.hyp.item() * double(batch.size);
      em.total += fr.total.item() * double(batch.size);
      em.alpha = a;
      em.alpha_min = std::min(em.alpha_min, a);
      em.alpha_max = std::max(em.alpha_max, a);
      const auto r = part_radius_sums(fr.parts, model.ball.c_tensor());
      for (std::size_t p = 0; p < kNumParts; ++p) em.radius[p] += r[p];
      seen += batch.size;
      ++em.steps;
    }
    if (em.steps == 0) break;
    const double n = double(seen);
    em.ce /= n;
    em.hyp /= n;
    em.total /= n;
    for (auto& r : em.radius) r /= n;
    em.c = model.ball.c();
    res.history.push_back(em);
    if (metrics.is_open()) {
      metrics << json{{"epoch", em.epoch},   {"steps", em.steps},         {"ce", em.ce},
                      {"hyp", em.hyp},       {"total", em.total},         {"alpha", em.alpha},
                      {"alpha_min", em.alpha_min}, {"alpha_max", em.alpha_max}, {"c", em.c},
                      {"lr_factor", em.lr_factor}, {"radius", radius_json(em.radius)}}
                     .dump()
              << '\n';
    }
    if (opts.log) {
      *opts.log << "epoch " << em.epoch << " ce " << em.ce << " hyp " << em.hyp << " alpha "
                << em.alpha << " c " << em.c << '\n';
    }
  }
  res.steps = step;
  if (opts.evaluate && !eval_ids.empty()) {
    res.eval = evaluate(model, data, eval_ids);
    if (metrics.is_open()) {
      metrics << json{{"final", true},
                      {"steps", step},
                      {"c", model.ball.c()},
                      {"top1", res.eval.top1},
                      {"top5", res.eval.top5},
                      {"token_accuracy", res.eval.token_accuracy},
                      {"radius", radius_json(res.eval.radius)}}
                     .dump()
              << '\n';
    }
  }
  if (opts.write_files) {
    metrics.close();
    save_checkpoint(model, res.checkpoint_path);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (opts.log) {
    *opts.log << "done: " << step << " steps in " << res.seconds << " s, top1 " << res.eval.top1
              << " top5 " << res.eval.top5 << " token acc " << res.eval.token_accuracy << '\n';
  }
  return res;
}

std::vector<CurvatureRow> ablate_curvature(const TrainConfig& cfg, const SyntheticDataset& data,
                                           bool learnable, std::ostream* log) {
  std::vector<CurvatureRow> rows;
  for (double c : cfg.curvatures) {
    TrainConfig run = cfg;
    if (run.strategy == Strategy::kEuclideanToken) run.strategy = Strategy::kToken;
    if (run.strategy == Strategy::kEuclideanPooled) run.strategy = Strategy::kPooled;
    run.init_c = c;
    run.learn_c = learnable;
    run.out_dir = (fs::path(cfg.out_dir) /
                   ("c" + format_double(c) + (learnable ? "_learnable" : "_frozen")))
                      .string();
    if (log) *log << "curvature " << c << (learnable ? " (learnable)" : " (frozen)") << '\n';
    TrainOptions opts;
    opts.log = log;
    const TrainResult r = train(run, data, opts);
    CurvatureRow row;
    row.init_c = c;
    row.learnable = learnable;
    row.final_c = r.model->ball.c();
    row.top1 = r.eval.top1;
    row.top5 = r.eval.top5;
    row.token_accuracy = r.eval.token_accuracy;
    if (!r.history.empty()) {
      row.ce = r.history.back().ce;
      row.hyp = r.history.back().hyp;
    }
    for (const auto& e : r.history) row.c_trajectory.push_back(e.c);
    rows.push_back(row);
  }
  return rows;
}

std::string curvature_table(const std::vector<CurvatureRow>& rows) {
  std::ostringstream s;
  s << "| init c | mode | final c | top-1 | top-5 | token acc | CE | hyp |\n"
    << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    s << "| " << r.init_c << " | " << (r.learnable ? "learnable" : "frozen") << " | " << r.final_c
      << " | " << r.top1 << " | " << r.top5 << " | " << r.token_accuracy << " | " << r.ce << " | "
      << r.hyp << " |\n";
  }
  return s.str();
}

std::vector<NoiseRow> ablate_noise(Model& hyperbolic, Model& euclidean,
                                   const SyntheticDataset& data,
                                   const std::vector<std::size_t>& indices,
                                   const std::vector<double>& sigmas, std::uint64_t seed) {
  const double h0 = evaluate(hyperbolic, data, indices).top1;
  const double e0 = evaluate(euclidean, data, indices).top1;
  auto degradation = [](double base, double v) { return base > 0 ? (base - v) / base : 0.0; };
  std::vector<NoiseRow> rows;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    NoiseRow r;
    r.sigma = sigmas[i];
    // Both models see the same noise draws.
    r.hyp_top1 = sigmas[i] > 0 ? evaluate(hyperbolic, data, indices, sigmas[i], seed + i).top1 : h0;
    r.euc_top1 = sigmas[i] > 0 ? evaluate(euclidean, data, indices, sigmas[i], seed + i).top1 : e0;
    r.hyp_degradation = degradation(h0, r.hyp_top1);
    r.euc_degradation = degradation(e0, r.euc_top1);
    rows.push_back(r);
  }
  return rows;
}

std::string noise_table(const std::vector<NoiseRow>& rows) {
  std::ostringstream s;
  s << "| sigma | hyperbolic top-1 | degradation | euclidean top-1 | degradation |\n"
    << "|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    s << "| " << r.sigma << " | " << r.hyp_top1 << " | " << 100.0 * r.hyp_degradation << "% | "
      << r.euc_top1 << " | " << 100.0 * r.euc_degradation << "% |\n";
  }
  return s.str();
}

}  // namespace hyperskel
