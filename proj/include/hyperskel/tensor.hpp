#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto shared, immutable storage. Operations on
// tensors that require gradients record a node holding their inputs and a
// backward closure; the graph reachable from a loss is the tape. There is no
// global recording state: whether an op records depends only on its inputs.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hyperskel {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an input lies outside an operation's (guarded) domain.
class DomainError : public std::domain_error {
 public:
  DomainError(const std::string& what, double value);
  double value() const noexcept { return value_; }

 private:
  double value_;
};

namespace detail {
struct TensorImpl;
struct Node;
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor eye(std::size_t n);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of dimension `axis`; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> values() const&;
  /// The span would dangle once the temporary dies; use to_vector().
  std::span<const double> values() const&& = delete;
  /// In-place access for optimizers and initializers. Never use on tensors
  /// that are inputs of a live graph.
  std::span<double> mutable_values();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  Tensor& set_requires_grad(bool flag = true);

  bool has_grad() const;
  std::span<const double> grad() const&;
  std::span<const double> grad() const&& = delete;
  /// Writable gradient, created as zeros when absent.
  std::span<double> mutable_grad();
  Tensor grad_tensor() const;
  void zero_grad();

  /// Shares storage, drops the graph.
  Tensor detach() const;
  /// Deep copy of values as a fresh leaf.
  Tensor clone() const;

  /// Identity of the underlying node, for graph bookkeeping.
  const void* id() const noexcept { return impl_.get(); }

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

/// Ordered record of the operations reachable from a root tensor, in
/// execution (topological) order. backward() visits them in reverse, once each.
class GradTape {
 public:
  static GradTape record(const Tensor& root);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::vector<std::string> op_names() const;
  /// Accumulates d(root)/d(leaf) into every reachable requires-grad leaf.
  void backward() const;

 private:
  Tensor root_;
  std::vector<std::shared_ptr<detail::TensorImpl>> nodes_;
};

/// Convenience wrapper: `GradTape::record(loss).backward()`. The loss must be
/// a single-element tensor.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

enum class UnaryOp { kNeg, kTanh, kArtanh, kExp, kLog, kSigmoid, kRelu, kSqrt, kSquare };
enum class BinaryOp { kAdd, kSub, kMul, kDiv };

/// Largest |x| passed to artanh; larger (up to 1 + 1e-9) is clamped.
inline constexpr double kArtanhClamp = 1.0 - 1e-12;

Tensor apply(UnaryOp op, const Tensor& a);
Tensor apply(BinaryOp op, const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor artanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);
Tensor clamp_max(const Tensor& a, double hi);
Tensor clamp(const Tensor& a, double lo, double hi);

// Numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add(neg(a), s); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul(a, 1.0 / s); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class ReduceOp { kSum, kMean, kMax };

Tensor reduce(const Tensor& a, ReduceOp op, int axis, bool keepdim = false);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
Tensor max(const Tensor& a, int axis, bool keepdim = false);
/// Sum of all elements, shape {}.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Softmax along `axis`. Where `mask` (broadcastable to `a`) is zero the output
/// is exactly 0. Throws if a row is fully masked.
Tensor softmax(const Tensor& a, int axis, const std::optional<Tensor>& mask = std::nullopt);
Tensor log_softmax(const Tensor& a, int axis);

// ---------------------------------------------------------------------------
// Linear algebra and shape
// ---------------------------------------------------------------------------

/// (m,k) x (k,n) -> (m,n).
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
/// x (..., in) * w (in, out) [+ bias (out)].
Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias = std::nullopt);

Tensor reshape(const Tensor& a, Shape shape);
Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length);
/// Gathers entries of `a` along axis 0.
Tensor index_select(const Tensor& a, std::span<const std::size_t> indices);

/// L2 norm over the last axis, keepdim, with squared norm clamped below at
/// `min_sq` so the gradient stays finite at zero.
Tensor norm_last(const Tensor& a, double min_sq = 1e-30);
/// Sum over the last axis of a*b, keepdim.
Tensor dot_last(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Central-difference estimate of d f / d x, one coordinate at a time.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                              double h = 1e-6);

/// ||a - b|| / max(||a||, ||b||, floor).
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

}  // namespace hyperskel
