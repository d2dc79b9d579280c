#pragma once

// Skeleton topologies for the four anatomical parts.

#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "hyperskel/tensor.hpp"

namespace hyperskel {

enum class AdjacencyStrategy { kUniform, kDistance };

AdjacencyStrategy parse_strategy(const std::string& name);

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

struct SkeletonGraph {
  std::string layout;
  std::size_t num_nodes = 0;
  /// Undirected joint pairs, self-loops included.
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::size_t center = 0;
  std::size_t max_hop = 1;
  /// Row-major V x V shortest-path lengths; kUnreachable beyond max_hop.
  std::vector<double> hop;
  /// (K, V, V) normalized adjacency kernels; K = 1 for both strategies.
  Tensor A;

  double hop_at(std::size_t i, std::size_t j) const { return hop[i * num_nodes + j]; }
};

/// Layouts: "body" (9), "left" / "right" (21 each), "face" (16, alias
/// "face_all"). Throws std::invalid_argument naming an unknown layout.
SkeletonGraph build_graph(const std::string& layout,
                          AdjacencyStrategy strategy = AdjacencyStrategy::kUniform,
                          std::size_t max_hop = 1);

}  // namespace hyperskel
