#pragma once

#include <string>
#include <vector>

#include "hyperskel/tensor.hpp"

namespace hyperskel {

enum class ParamKind {
  kEuclidean,
  /// A point of the Poincare ball; updated by Riemannian Adam.
  kManifold,
  /// log of the curvature; Riemannian group, plain scalar update.
  kCurvature,
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
  ParamKind kind = ParamKind::kEuclidean;
};

/// Non-trainable state that still belongs in a checkpoint.
struct NamedBuffer {
  std::string name;
  std::vector<double>* values;
};

}  // namespace hyperskel
