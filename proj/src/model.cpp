#include "hyperskel/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hyperskel/nn_ops.hpp"

namespace hyperskel {

namespace {

// Initial tangent scale of the projections: keeps fresh embeddings well
// inside the clipping radius at every curvature of the sweep.
constexpr double kInitProjectionScale = 0.25;

Tensor init_weight(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  return Tensor::randn(std::move(shape), rng, 1.0 / std::sqrt(double(fan_in)));
}

}  // namespace

Batch make_batch(const SyntheticDataset& data, const std::vector<std::size_t>& indices,
                 double noise_sigma, std::mt19937_64* noise_rng) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no samples");
  if (noise_sigma > 0.0 && noise_rng == nullptr) {
    throw std::invalid_argument("make_batch: noise requested without a generator");
  }
  Batch b;
  b.size = indices.size();
  std::size_t max_words = 0;
  for (std::size_t i : indices) {
    const Sample& s = data.samples.at(i);
    b.frames = std::max(b.frames, s.length);
    max_words = std::max(max_words, s.tokens.size());
  }
  const std::size_t B = b.size, T = b.frames;
  b.steps = max_words + 1;
  const std::size_t L = b.steps;
  b.frame_mask.assign(B * T, 0.0);
  b.inputs.assign(B * L, kPadToken);
  b.targets.assign(B * L, -1);
  std::vector<double> tmask(B * L, 0.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::array<std::vector<double>, kNumParts> kp;
  for (std::size_t p = 0; p < kNumParts; ++p) kp[p].assign(B * T * kJointCounts[p] * 2, 0.0);
  for (std::size_t n = 0; n < B; ++n) {
    const Sample& s = data.samples[indices[n]];
    b.labels.push_back(s.label);
    b.sample_ids.push_back(s.id);
    for (std::size_t t = 0; t < s.length; ++t) b.frame_mask[n * T + t] = 1.0;
    for (std::size_t p = 0; p < kNumParts; ++p) {
      const std::size_t stride = kJointCounts[p] * 2;
      std::copy(s.keypoints[p].begin(), s.keypoints[p].end(), kp[p].begin() + n * T * stride);
    }
    b.inputs[n * L] = kBosToken;
    for (std::size_t k = 0; k < s.tokens.size(); ++k) {
      b.inputs[n * L + k + 1] = s.tokens[k];
      b.targets[n * L + k] = s.tokens[k];
    }
    b.targets[n * L + s.tokens.size()] = kEosToken;
    for (std::size_t k = 0; k <= s.tokens.size(); ++k) tmask[n * L + k] = 1.0;
  }
  if (noise_sigma > 0.0) {
    // Parts in order, then samples, frames and coordinates.
    for (std::size_t p = 0; p < kNumParts; ++p) {
      const std::size_t stride = kJointCounts[p] * 2;
      for (std::size_t n = 0; n < B; ++n) {
        const std::size_t len = data.samples[indices[n]].length;
        for (std::size_t i = 0; i < len * stride; ++i) {
          kp[p][n * T * stride + i] += noise_sigma * gauss(*noise_rng);
        }
      }
    }
  }
  for (std::size_t p = 0; p < kNumParts; ++p) {
    b.keypoints[p] = Tensor({B, T, kJointCounts[p], 2}, std::move(kp[p]));
  }
  b.token_mask = Tensor({B, L}, std::move(tmask));
  return b;
}

Batch make_sentence_batch(const SyntheticDataset& data) {
  Batch b;
  b.size = data.num_classes();
  std::size_t max_words = 0;
  for (const auto& t : data.class_tokens) max_words = std::max(max_words, t.size());
  const std::size_t L = b.steps = max_words + 1;
  b.inputs.assign(b.size * L, kPadToken);
  b.targets.assign(b.size * L, -1);
  std::vector<double> tmask(b.size * L, 0.0);
  for (std::size_t n = 0; n < b.size; ++n) {
    const auto& words = data.class_tokens[n];
    b.labels.push_back(int(n));
    b.inputs[n * L] = kBosToken;
    for (std::size_t k = 0; k < words.size(); ++k) {
      b.inputs[n * L + k + 1] = words[k];
      b.targets[n * L + k] = words[k];
    }
    b.targets[n * L + words.size()] = kEosToken;
    for (std::size_t k = 0; k <= words.size(); ++k) tmask[n * L + k] = 1.0;
  }
  b.token_mask = Tensor({b.size, L}, std::move(tmask));
  return b;
}

ToyDecoder::ToyDecoder(std::size_t vocab, std::size_t d, std::mt19937_64& rng)
    : embed(Tensor::randn({vocab, d}, rng, 1.0)),
      W_x(init_weight({d, d}, d, rng)),
      W_h(init_weight({d, d}, d, rng)),
      b(Tensor::zeros({d})),
      W_out(init_weight({2 * d, vocab}, 2 * d, rng)),
      b_out(Tensor::zeros({vocab})) {}

Tensor ToyDecoder::states(const std::vector<int>& inputs, std::size_t B, std::size_t L) const {
  if (inputs.size() != B * L) throw DimensionError("ToyDecoder: token count mismatch");
  const std::size_t d = W_h.dim(0);
  std::vector<std::size_t> ids(inputs.begin(), inputs.end());
  const Tensor x = reshape(linear(index_select(embed, ids), W_x, b), {B, L, d});
  Tensor s = Tensor::zeros({B, d});
  std::vector<Tensor> out;
  for (std::size_t t = 0; t < L; ++t) {
    s = tanh(reshape(slice(x, 1, t, 1), {B, d}) + linear(s, W_h));
    out.push_back(reshape(s, {B, 1, d}));
  }
  return concat(out, 1);
}

Tensor ToyDecoder::logits(const Tensor& states, const Tensor& pose) const {
  const std::size_t B = states.dim(0), L = states.dim(1), d = states.dim(2);
  const Tensor p = reshape(broadcast_to(reshape(pose, {B, 1, d}), {B, L, d}), {B * L, d});
  return linear(concat({reshape(states, {B * L, d}), p}, -1), W_out, b_out);
}

Model::Model(const TrainConfig& cfg, std::size_t vocab_size, std::size_t total_steps)
    : ball(is_euclidean(cfg.strategy) ? kEuclideanCurvature : cfg.init_c,
           !is_euclidean(cfg.strategy) && cfg.learn_c),
      head(cfg.tau, cfg.margin, cfg.contrastive_smoothing),
      schedule(cfg.alpha_init, total_steps),
      cfg_(cfg),
      vocab_(vocab_size) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const auto adj = parse_strategy(cfg.adjacency);
  for (std::size_t p = 0; p < kNumParts; ++p) {
    encoders[p] = PartEncoder(kPartNames[p], adj, cfg.d_gcn, rng);
  }
  W_fuse = init_weight({kNumParts * cfg.d_gcn, cfg.d_model}, kNumParts * cfg.d_gcn, rng);
  b_fuse = Tensor::zeros({cfg.d_model});
  decoder = ToyDecoder(vocab_size, cfg.d_model, rng);
  for (auto& proj : pose_proj) {
    proj = HyperbolicProjection(cfg.d_gcn, cfg.d_hyp, rng);
    proj.log_scale = Tensor::scalar(std::log(kInitProjectionScale));
  }
  text_proj = HyperbolicProjection(cfg.d_model, cfg.d_hyp, rng);
  text_proj.log_scale = Tensor::scalar(std::log(kInitProjectionScale));
  attention = HyperbolicAttention(cfg.d_hyp, cfg.tau_attn);
  for (auto& p : parameters()) p.tensor->set_requires_grad();
}

FrechetConfig Model::frechet_config() const {
  FrechetConfig f;
  f.max_iter = cfg_.frechet_iters;
  f.tol = cfg_.frechet_tol;
  return f;
}

std::pair<Tensor, Tensor> Model::encode(const Batch& batch, bool training) {
  const PartFeatures feats = encode_parts(batch.keypoints, encoders, training, batch.frame_mask);
  const std::size_t B = batch.size;
  const Tensor c = ball.c_tensor();
  std::vector<Tensor> parts;
  for (std::size_t p = 0; p < kNumParts; ++p) {
    parts.push_back(reshape(project(feats.pooled[p], pose_proj[p], c), {B, 1, cfg_.d_hyp}));
  }
  const Tensor fused = fuse_for_decoder(feats.Z, W_fuse, b_fuse);
  const Tensor fm({B, feats.frames, 1}, feats.frame_mask);
  const Tensor summary = sum(fused * fm, 1) / clamp_min(sum(fm, 1), 1.0);
  return {concat(parts, 1), summary};
}

Tensor Model::text_values(const Tensor& states) const {
  return project(states, text_proj, ball.c_tensor());
}

ForwardResult Model::forward(const Batch& batch, std::size_t step, bool training) {
  ForwardResult r;
  const std::size_t B = batch.size, L = batch.steps, d = cfg_.d_hyp;
  auto [parts, summary] = encode(batch, training);
  r.parts = parts;
  const Tensor S = decoder.states(batch.inputs, B, L);
  r.logits = decoder.logits(S, summary);
  r.ce = cross_entropy(r.logits, batch.targets, cfg_.ce_smoothing);
  r.alpha = alpha(std::min(step, schedule.total_steps), schedule);
  const Tensor c = ball.c_tensor();
  const FrechetConfig fc = frechet_config();
  switch (cfg_.strategy) {
    case Strategy::kNone:
      r.hyp = Tensor::scalar(0.0);
      r.total = r.ce;
      return r;
    case Strategy::kPooled:
    case Strategy::kEuclideanPooled: {
      const PooledAlignment pa = pooled_align(parts, S, batch.token_mask, text_proj, c, fc);
      r.hyp = contrastive_loss(pa.pose, pa.text, head, c);
      break;
    }
    case Strategy::kToken:
    case Strategy::kEuclideanToken: {
      const TokenAlignment ta = token_align(parts, S, batch.token_mask, text_proj, attention, c, fc);
      Tensor acc;
      for (std::size_t p = 0; p < kNumParts; ++p) {
        const Tensor lp = contrastive_loss(reshape(slice(parts, 1, p, 1), {B, d}),
                                           reshape(slice(ta.context, 1, p, 1), {B, d}), head, c);
        acc = p == 0 ? lp : acc + lp;
      }
      r.hyp = acc * (1.0 / double(kNumParts));
      break;
    }
  }
  r.total = total_loss(r.ce, r.hyp, r.alpha);
  return r;
}

std::vector<NamedParam> Model::parameters() {
  const bool hyperbolic = cfg_.strategy != Strategy::kNone;
  const bool token = uses_token_alignment(cfg_.strategy);
  std::vector<NamedParam> out;
  for (auto& p : state_tensors()) {
    const auto& n = p.name;
    const bool head_part = n.starts_with("proj.") || n.starts_with("head.") || n.starts_with("alpha.");
    if (head_part && !hyperbolic) continue;
    if (n.starts_with("attn.") && !token) continue;
    if (n == "ball.log_c" && !ball.learnable()) continue;
    out.push_back(p);
  }
  return out;
}

std::vector<NamedParam> Model::state_tensors() {
  std::vector<NamedParam> out;
  std::vector<NamedBuffer> unused;
  for (std::size_t p = 0; p < kNumParts; ++p) encoders[p].collect("enc." + kPartNames[p], out, unused);
  out.push_back({"fuse.W", &W_fuse});
  out.push_back({"fuse.b", &b_fuse});
  out.push_back({"dec.embed", &decoder.embed});
  out.push_back({"dec.W_x", &decoder.W_x});
  out.push_back({"dec.W_h", &decoder.W_h});
  out.push_back({"dec.b", &decoder.b});
  out.push_back({"dec.W_out", &decoder.W_out});
  out.push_back({"dec.b_out", &decoder.b_out});
  for (std::size_t p = 0; p < kNumParts; ++p) {
    out.push_back({"proj." + kPartNames[p] + ".W", &pose_proj[p].W});
    out.push_back({"proj." + kPartNames[p] + ".log_scale", &pose_proj[p].log_scale});
  }
  out.push_back({"proj.text.W", &text_proj.W});
  out.push_back({"proj.text.log_scale", &text_proj.log_scale});
  out.push_back({"head.log_tau", &head.log_tau});
  out.push_back({"head.margin", &head.margin});
  out.push_back({"alpha.logit", &schedule.logit_alpha});
  out.push_back({"attn.M_key", &attention.M_key});
  out.push_back({"attn.log_tau", &attention.log_tau_attn});
  out.push_back({"attn.b_key", &attention.b_key, ParamKind::kManifold});
  out.push_back({"ball.log_c", &ball.log_c(), ParamKind::kCurvature});
  return out;
}

std::vector<NamedBuffer> Model::buffers() {
  std::vector<NamedParam> unused;
  std::vector<NamedBuffer> out;
  for (std::size_t p = 0; p < kNumParts; ++p) encoders[p].collect("enc." + kPartNames[p], unused, out);
  return out;
}

}  // namespace hyperskel
