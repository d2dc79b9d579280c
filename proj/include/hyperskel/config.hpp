#pragma once

// Experiment configuration. The on-disk form is a flat "key = value" file;
// '#' starts a comment and unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace hyperskel {

enum class Strategy { kPooled, kToken, kEuclideanPooled, kEuclideanToken, kNone };

std::string strategy_name(Strategy s);
Strategy parse_alignment_strategy(const std::string& name);
bool is_euclidean(Strategy s);
bool uses_token_alignment(Strategy s);

/// Curvature used by the euclidean_* strategies (frozen).
inline constexpr double kEuclideanCurvature = 1e-3;

struct DataConfig {
  std::size_t num_classes = 20;
  std::size_t samples_per_class = 40;
  std::size_t frames = 32;
  /// Shortest valid sequence; lengths are drawn from [min_frames, frames].
  std::size_t min_frames = 24;
  /// Spatial scale of hands and face relative to a body of height ~1.
  double hand_scale = 0.08;
  double face_scale = 0.06;
  /// Smooth per-sample deformation, relative to each part's scale.
  double jitter = 0.15;
  /// i.i.d. Gaussian noise on every coordinate, absolute.
  double noise = 0.002;
  std::uint64_t seed = 7;

  void validate() const;
};

struct TrainConfig {
  std::size_t d_hyp = 64;
  std::size_t d_gcn = 32;
  std::size_t d_model = 32;
  double init_c = 1.5;
  bool learn_c = true;
  double alpha_init = 0.7;
  double ce_smoothing = 0.2;
  double contrastive_smoothing = 0.2;
  double tau = 0.5;
  double margin = 0.1;
  double tau_attn = 1.0;

  double lr = 1e-3;
  double hyp_lr = 1e-3;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::size_t epochs = 20;
  std::size_t warmup_epochs = 5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  Strategy strategy = Strategy::kToken;
  std::string adjacency = "uniform";
  int frechet_iters = 10;
  double frechet_tol = 1e-5;

  DataConfig data;
  /// Every k-th sample of each class goes to the evaluation split.
  std::size_t eval_every = 5;
  std::string data_path = "data/synthetic.jsonl";
  std::string out_dir = "runs/default";

  std::vector<double> curvatures{0.001, 0.1, 0.5, 1.0, 1.5, 2.0};
  std::vector<double> noise_levels{0.0, 0.01, 0.02, 0.03, 0.04, 0.05};
  /// Checkpoints compared by ablate-noise; trained on the fly when empty.
  std::string hyp_checkpoint;
  std::string euc_checkpoint;

  void validate() const;
};

/// Applies one setting; throws std::invalid_argument for unknown keys or bad values.
void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Parses a config file on top of the defaults.
TrainConfig load_config(const std::string& path);
TrainConfig parse_config(const std::string& text);

/// Every setting in a fixed order, values formatted to round-trip exactly.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg);
std::string dump_config(const TrainConfig& cfg);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

}  // namespace hyperskel
