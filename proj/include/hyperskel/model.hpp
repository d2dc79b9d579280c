#pragma once

// The full pose-to-text model used by the training harness: per-part ST-GCN
// encoders, a small recurrent decoder standing in for the language model, and
// the hyperbolic alignment heads.

#include <array>
#include <cstddef>
#include <random>
#include <vector>

#include "hyperskel/config.hpp"
#include "hyperskel/dataset.hpp"
#include "hyperskel/layers.hpp"
#include "hyperskel/manifold.hpp"
#include "hyperskel/param.hpp"
#include "hyperskel/stgcn.hpp"

namespace hyperskel {

struct Batch {
  std::size_t size = 0;
  std::size_t frames = 0;
  /// (B, T, V_p, 2), zero on padded frames.
  std::array<Tensor, kNumParts> keypoints;
  /// (B*T) frame validity.
  std::vector<double> frame_mask;
  /// Decoder input (bos + words) and targets (words + eos), both (B, L)
  /// flattened; padded target positions are -1.
  std::vector<int> inputs;
  std::vector<int> targets;
  std::size_t steps = 0;
  /// (B, L) validity of the decoder positions.
  Tensor token_mask;
  std::vector<int> labels;
  std::vector<std::size_t> sample_ids;
};

/// Gathers samples into a padded batch. Gaussian noise of std `noise_sigma`
/// is added to every valid coordinate when positive.
Batch make_batch(const SyntheticDataset& data, const std::vector<std::size_t>& indices,
                 double noise_sigma = 0.0, std::mt19937_64* noise_rng = nullptr);

/// Token-only batch holding each label's sentence once, in label order.
Batch make_sentence_batch(const SyntheticDataset& data);

/// Recurrent decoder. Token states depend on the tokens alone, so they can be
/// computed for any sentence without a pose; the pose summary joins only at
/// the output layer.
struct ToyDecoder {
  Tensor embed;        // (vocab, d)
  Tensor W_x, W_h, b;  // (d, d), (d, d), (d)
  Tensor W_out, b_out; // (2d, vocab), (vocab)

  ToyDecoder() = default;
  ToyDecoder(std::size_t vocab, std::size_t d, std::mt19937_64& rng);
  /// (B, L, d) final-layer token states.
  Tensor states(const std::vector<int>& inputs, std::size_t B, std::size_t L) const;
  /// (B*L, vocab) logits from states and a (B, d) pose summary.
  Tensor logits(const Tensor& states, const Tensor& pose) const;
};

struct ForwardResult {
  Tensor ce, hyp, alpha, total;
  /// (B, P, d_hyp) part embeddings h_p.
  Tensor parts;
  /// (B*L, vocab)
  Tensor logits;
};

class Model {
 public:
  Model(const TrainConfig& cfg, std::size_t vocab_size, std::size_t total_steps);

  ForwardResult forward(const Batch& batch, std::size_t step, bool training);

  /// Part embeddings (B, P, d_hyp) and the fused pose summary (B, d_model).
  std::pair<Tensor, Tensor> encode(const Batch& batch, bool training);
  /// Hyperbolic text values (B, L, d_hyp) of token states.
  Tensor text_values(const Tensor& states) const;

  /// Trainable parameters, with their optimizer kind.
  std::vector<NamedParam> parameters();
  /// Everything a checkpoint stores: parameters, the curvature and the
  /// batch-norm statistics.
  std::vector<NamedParam> state_tensors();
  std::vector<NamedBuffer> buffers();

  const TrainConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_; }
  FrechetConfig frechet_config() const;

  PoincareBall ball;
  std::array<PartEncoder, kNumParts> encoders;
  Tensor W_fuse, b_fuse;
  ToyDecoder decoder;
  std::array<HyperbolicProjection, kNumParts> pose_proj;
  HyperbolicProjection text_proj;
  HyperbolicAttention attention;
  ContrastiveHead head;
  AlphaSchedule schedule;

 private:
  TrainConfig cfg_;
  std::size_t vocab_;
};

}  // namespace hyperskel
