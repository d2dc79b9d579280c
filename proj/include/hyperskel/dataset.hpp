#pragma once

// Hierarchical synthetic sign data. A label l belongs to group l / 5 (carried
// by the arm motion) and hand shape l % 5 (carried by the fingers), so classes
// form a two-level tree: body motion is shared within a group and the hands
// and face resolve the leaves.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "hyperskel/config.hpp"
#include "hyperskel/stgcn.hpp"

namespace hyperskel {

inline constexpr std::array<std::size_t, kNumParts> kJointCounts{9, 21, 21, 16};
inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kEosToken = 2;
inline constexpr int kDatasetVersion = 1;
inline constexpr std::size_t kShapesPerGroup = 5;

struct Sample {
  std::size_t id = 0;
  int label = 0;
  /// Number of valid frames.
  std::size_t length = 0;
  /// Per part, length x V x 2 coordinates, row-major.
  std::array<std::vector<double>, kNumParts> keypoints;
  /// Word ids without bos / eos.
  std::vector<int> tokens;
};

struct SyntheticDataset {
  DataConfig config;
  std::vector<std::string> vocab;
  /// The sentence of every label.
  std::vector<std::vector<int>> class_tokens;
  std::vector<Sample> samples;

  std::size_t num_classes() const { return class_tokens.size(); }
};

/// Deterministic in the config (seed included).
SyntheticDataset generate_dataset(const DataConfig& cfg);

std::vector<std::string> build_vocab(std::size_t num_classes);
std::vector<int> sentence_for(int label, std::size_t num_classes);

/// JSON lines: a header object, then one object per sample.
void save_dataset(const SyntheticDataset& data, const std::string& path);
SyntheticDataset load_dataset(const std::string& path);

/// Sample indices of the evaluation split: every `every`-th sample of each
/// label. The remaining indices form the training split.
std::vector<std::size_t> eval_indices(const SyntheticDataset& data, std::size_t every);
std::vector<std::size_t> train_indices(const SyntheticDataset& data, std::size_t every);

}  // namespace hyperskel
