#pragma once

// Private plumbing shared by the op implementations.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "hyperskel/tensor.hpp"

namespace hyperskel {
namespace detail {

class GradSink;
using BackwardFn = std::function<void(std::span<const double> gout, GradSink& sink)>;

struct Node {
  const char* name;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<double>> storage;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<double> grad;
  std::shared_ptr<Node> grad_fn;
};

/// Hands each backward closure the gradient buffer of input i, or an empty
/// span when that input does not need one.
class GradSink {
 public:
  explicit GradSink(std::vector<std::span<double>> buffers) : buffers_(std::move(buffers)) {}
  std::span<double> operator[](std::size_t i) const { return buffers_.at(i); }

 private:
  std::vector<std::span<double>> buffers_;
};

}  // namespace detail

struct TensorAccess {
  static const std::shared_ptr<detail::TensorImpl>& impl(const Tensor& t) { return t.impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }
};

namespace detail {

inline const std::vector<double>& data_of(const Tensor& t) {
  return *TensorAccess::impl(t)->storage;
}

inline std::shared_ptr<const std::vector<double>> storage_of(const Tensor& t) {
  return TensorAccess::impl(t)->storage;
}

/// Builds an op result. A graph node is recorded only if some input requires
/// a gradient.
Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               const std::vector<Tensor>& inputs, BackwardFn backward);

/// Builds an op result that shares `storage` (reshape, detach-like views).
Tensor make_view_op(const char* name, Shape shape, std::shared_ptr<std::vector<double>> storage,
                    const std::vector<Tensor>& inputs, BackwardFn backward);

int normalize_axis(int axis, std::size_t rank);

}  // namespace detail
}  // namespace hyperskel
