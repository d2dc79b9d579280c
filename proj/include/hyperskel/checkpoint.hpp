#pragma once

// Checkpoint container:
//   line 1  "hyperskel-checkpoint 1"
//   line 2  JSON manifest: config entries, vocab size, schedule length, and
//           for every tensor and buffer its name, shape and element offset
//   rest    float64 little-endian payload, tensors then buffers, in manifest
//           order

#include <memory>
#include <string>

#include "hyperskel/model.hpp"

namespace hyperskel {

void save_checkpoint(Model& model, const std::string& path);
std::unique_ptr<Model> load_checkpoint(const std::string& path);

}  // namespace hyperskel
