#pragma once

// Embedding export: one CSV row per (sample, part) with the geodesic radius,
// the tangent coordinates at the origin and a 2-D PCA of those coordinates
// scaled into the unit disk. Optionally an SVG scatter of the disk.

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "hyperskel/dataset.hpp"
#include "hyperskel/model.hpp"

namespace hyperskel {

struct ExportResult {
  std::size_t rows = 0;
  std::array<double, kNumParts> mean_radius{};
};

/// Writes `csv_path` (and `svg_path` unless empty) for the given samples.
ExportResult export_embeddings(Model& model, const SyntheticDataset& data,
                               const std::vector<std::size_t>& indices,
                               const std::string& csv_path, const std::string& svg_path = "");

/// Projects rows (n x d) onto their top two principal axes and scales the
/// result so every point lies strictly inside the unit disk.
std::vector<std::array<double, 2>> pca_to_disk(const std::vector<double>& rows, std::size_t d);

}  // namespace hyperskel
