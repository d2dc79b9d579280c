#pragma once

// Training loop, retrieval evaluation and the ablation runners.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperskel/config.hpp"
#include "hyperskel/dataset.hpp"
#include "hyperskel/model.hpp"

namespace hyperskel {

inline constexpr int kMetricsVersion = 1;

/// A loss or gradient turned NaN/Inf; the message names the diagnostic dump.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double ce = 0.0;
  double hyp = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double alpha_min = 0.0;
  double alpha_max = 0.0;
  double c = 0.0;
  double lr_factor = 0.0;
  /// Mean dist(0, h_p) over the epoch's training samples.
  std::array<double, kNumParts> radius{};
};

struct EvalMetrics {
  std::size_t samples = 0;
  double top1 = 0.0;
  double top5 = 0.0;
  double token_accuracy = 0.0;
  std::array<double, kNumParts> radius{};
};

struct TrainOptions {
  /// Write metrics.jsonl and model.ckpt into cfg.out_dir.
  bool write_files = true;
  /// Stop after this many optimizer steps (0 = the full schedule). The
  /// schedule itself is unchanged.
  std::size_t max_steps = 0;
  bool evaluate = true;
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  EvalMetrics eval;
  std::size_t steps = 0;
  double seconds = 0.0;
  std::string metrics_path;
  std::string checkpoint_path;
  std::shared_ptr<Model> model;
};

TrainResult train(const TrainConfig& cfg, const SyntheticDataset& data,
                  const TrainOptions& opts = {});

/// Retrieval of each sample's sentence among all class sentences by
/// geodesic score, plus teacher-forced token accuracy and mean part radii.
/// Gaussian keypoint noise of std `noise_sigma` is drawn from `noise_seed`.
EvalMetrics evaluate(Model& model, const SyntheticDataset& data,
                     const std::vector<std::size_t>& indices, double noise_sigma = 0.0,
                     std::uint64_t noise_seed = 0);

/// (samples x classes) retrieval scores; lower means a better match.
std::vector<double> retrieval_scores(Model& model, const SyntheticDataset& data,
                                     const Batch& batch);

struct CurvatureRow {
  double init_c = 0.0;
  bool learnable = false;
  double final_c = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double token_accuracy = 0.0;
  double ce = 0.0;
  double hyp = 0.0;
  /// c after every epoch.
  std::vector<double> c_trajectory;
};

/// One run per curvature in cfg.curvatures, each in its own out_dir
/// subdirectory. Euclidean strategies are swept as their hyperbolic
/// counterparts.
std::vector<CurvatureRow> ablate_curvature(const TrainConfig& cfg, const SyntheticDataset& data,
                                           bool learnable, std::ostream* log = nullptr);
std::string curvature_table(const std::vector<CurvatureRow>& rows);

struct NoiseRow {
  double sigma = 0.0;
  double hyp_top1 = 0.0;
  double euc_top1 = 0.0;
  /// (baseline - metric) / baseline, relative to sigma = 0.
  double hyp_degradation = 0.0;
  double euc_degradation = 0.0;
};

/// Paired evaluation of two trained models under the same keypoint noise.
std::vector<NoiseRow> ablate_noise(Model& hyperbolic, Model& euclidean,
                                   const SyntheticDataset& data,
                                   const std::vector<std::size_t>& indices,
                                   const std::vector<double>& sigmas, std::uint64_t seed);
std::string noise_table(const std::vector<NoiseRow>& rows);

}  // namespace hyperskel
