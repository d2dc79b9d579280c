#include "hyperskel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "autograd_internal.hpp"
#include "eigen_util.hpp"

namespace hyperskel {

using detail::data_of;
using detail::GradSink;
using detail::make_op;
using detail::storage_of;
using detail::add_into;
using detail::aligned_copy;
using detail::copy_out;
using detail::RowMat;
using detail::TensorImpl;

namespace {

const std::shared_ptr<TensorImpl>& impl_of(const Tensor& t) {
  const auto& p = TensorAccess::impl(t);
  if (!p) throw std::invalid_argument("use of an undefined tensor");
  return p;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

DomainError::DomainError(const std::string& what, double value)
    : std::domain_error(what + " (value " + std::to_string(value) + ")"), value_(value) {}

namespace detail {

int normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return a;
}

Tensor make_view_op(const char* name, Shape shape, std::shared_ptr<std::vector<double>> storage,
                    const std::vector<Tensor>& inputs, BackwardFn backward) {
  auto out = std::make_shared<TensorImpl>();
  out->shape = std::move(shape);
  out->storage = std::move(storage);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || impl_of(in)->requires_grad;
  if (needs) {
    auto node = std::make_shared<Node>();
    node->name = name;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(impl_of(in));
    node->backward = std::move(backward);
    out->grad_fn = std::move(node);
    out->requires_grad = true;
  }
  return TensorAccess::wrap(std::move(out));
}

Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               const std::vector<Tensor>& inputs, BackwardFn backward) {
  return make_view_op(name, std::move(shape),
                      std::make_shared<std::vector<double>>(std::move(values)), inputs,
                      std::move(backward));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->storage = std::make_shared<std::vector<double>>(std::move(values));
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(v));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

const Shape& Tensor::shape() const { return impl_of(*this)->shape; }

std::size_t Tensor::dim(int axis) const {
  return shape()[static_cast<std::size_t>(detail::normalize_axis(axis, rank()))];
}

std::size_t Tensor::numel() const { return impl_of(*this)->storage->size(); }

std::span<const double> Tensor::values() const& { return *impl_of(*this)->storage; }

std::span<double> Tensor::mutable_values() { return *impl_of(*this)->storage; }

std::vector<double> Tensor::to_vector() const { return *impl_of(*this)->storage; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return (*impl_of(*this)->storage)[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i >= s[k]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return (*impl_of(*this)->storage)[flat];
}

bool Tensor::requires_grad() const { return impl_of(*this)->requires_grad; }

bool Tensor::is_leaf() const { return impl_of(*this)->grad_fn == nullptr; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw std::invalid_argument("set_requires_grad on a non-leaf tensor");
  impl_of(*this)->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl_of(*this)->has_grad; }

std::span<const double> Tensor::grad() const& {
  const auto& p = impl_of(*this);
  if (!p->has_grad) return {};
  return p->grad;
}

std::span<double> Tensor::mutable_grad() {
  const auto& p = impl_of(*this);
  if (!p->has_grad) {
    p->grad.assign(numel(), 0.0);
    p->has_grad = true;
  }
  return p->grad;
}

Tensor Tensor::grad_tensor() const {
  const auto& p = impl_of(*this);
  if (!p->has_grad) return {};
  return Tensor(p->shape, p->grad);
}

void Tensor::zero_grad() {
  const auto& p = impl_of(*this);
  p->has_grad = false;
  p->grad.clear();
}

Tensor Tensor::detach() const {
  auto out = std::make_shared<TensorImpl>();
  out->shape = shape();
  out->storage = impl_of(*this)->storage;
  return Tensor(std::move(out));
}

Tensor Tensor::clone() const { return Tensor(shape(), to_vector()); }

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

GradTape GradTape::record(const Tensor& root) {
  GradTape tape;
  tape.root_ = root;
  const auto& r = impl_of(root);
  if (!r->grad_fn) return tape;
  std::unordered_set<const TensorImpl*> visited{r.get()};
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(r, 0);
  while (!stack.empty()) {
    auto& top = stack.back();
    const auto& inputs = top.first->grad_fn->inputs;
    if (top.second < inputs.size()) {
      auto child = inputs[top.second++];
      if (child->grad_fn && visited.insert(child.get()).second) stack.emplace_back(child, 0);
    } else {
      tape.nodes_.push_back(top.first);
      stack.pop_back();
    }
  }
  return tape;
}

std::vector<std::string> GradTape::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.emplace_back(n->grad_fn->name);
  return names;
}

void GradTape::backward() const {
  const auto& r = impl_of(root_);
  if (r->storage->size() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " + shape_str(r->shape));
  }
  if (!r->requires_grad) throw std::invalid_argument("backward: loss is not on an active tape");
  if (!r->grad_fn) {
    if (!r->has_grad) {
      r->grad.assign(1, 0.0);
      r->has_grad = true;
    }
    r->grad[0] += 1.0;
    return;
  }

  std::unordered_map<const TensorImpl*, std::vector<double>> grads;
  grads[r.get()] = {1.0};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const auto& node = *it;
    auto found = grads.find(node.get());
    if (found == grads.end()) continue;
    const std::vector<double> gout = std::move(found->second);
    grads.erase(found);

    const auto& inputs = node->grad_fn->inputs;
    std::vector<std::span<double>> buffers;
    buffers.reserve(inputs.size());
    for (const auto& in : inputs) {
      const auto n = in->storage->size();
      if (in->grad_fn) {
        auto& g = grads[in.get()];
        if (g.size() != n) g.assign(n, 0.0);
        buffers.emplace_back(g);
      } else if (in->requires_grad) {
        if (!in->has_grad) {
          in->grad.assign(n, 0.0);
          in->has_grad = true;
        }
        buffers.emplace_back(in->grad);
      } else {
        buffers.emplace_back();
      }
    }
    GradSink sink(std::move(buffers));
    node->grad_fn->backward(gout, sink);
  }
}

void backward(const Tensor& loss) { GradTape::record(loss).backward(); }

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace {

template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto& x = data_of(a);
  auto ys = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) (*ys)[i] = fwd(x[i]);
  std::shared_ptr<const std::vector<double>> yc = ys;
  return detail::make_view_op(
      name, a.shape(), ys, {a},
      [xs = storage_of(a), yc, deriv](std::span<const double> g, GradSink& sink) {
        auto ga = sink[0];
        if (ga.empty()) return;
        const auto& xv = *xs;
        const auto& yv = *yc;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xv[i], yv[i]);
      });
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> sa, sb;
  std::size_t inner = 1;
  // kBlockA / kBlockB: the broadcast operand equals the output with one
  // contiguous run of axes collapsed, out = (outer, mid, inner).
  std::size_t outer = 1, mid = 1;
  enum class Kind { kSame, kScalarB, kScalarA, kRowB, kRowA, kBlockB, kBlockA, kGeneral } kind =
      Kind::kGeneral;
};

// Whether `s` equals `out` except for one contiguous run of broadcast axes;
// fills (outer, mid, inner) of that split.
bool block_split(const Shape& s, const Shape& out, Broadcast& p) {
  const std::size_t r = out.size();
  std::size_t first = r, last = 0;
  for (std::size_t i = 0; i < r; ++i) {
    if (s[i] != out[i]) {
      first = std::min(first, i);
      last = i;
    }
  }
  if (first == r) return false;
  for (std::size_t i = first; i <= last; ++i) {
    if (s[i] != 1 && s[i] != out[i]) return false;
    if (s[i] == out[i] && out[i] != 1) return false;
  }
  p.outer = p.mid = p.inner = 1;
  for (std::size_t i = 0; i < first; ++i) p.outer *= out[i];
  for (std::size_t i = first; i <= last; ++i) p.mid *= out[i];
  for (std::size_t i = last + 1; i < r; ++i) p.inner *= out[i];
  return true;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  p.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] == pb[i]) {
      p.out[i] = pa[i];
    } else if (pa[i] == 1) {
      p.out[i] = pb[i];
    } else if (pb[i] == 1) {
      p.out[i] = pa[i];
    } else {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
  }
  auto strides = [&](const Shape& s) {
    std::vector<std::size_t> st(r, 0);
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
      st[i] = (s[i] == 1 && p.out[i] != 1) ? 0 : acc;
      acc *= s[i];
    }
    return st;
  };
  p.sa = strides(pa);
  p.sb = strides(pb);
  const auto na = shape_numel(a), nb = shape_numel(b), no = shape_numel(p.out);
  if (pa == pb) {
    p.kind = Broadcast::Kind::kSame;
  } else if (nb == 1 && na == no) {
    p.kind = Broadcast::Kind::kScalarB;
  } else if (na == 1 && nb == no) {
    p.kind = Broadcast::Kind::kScalarA;
  } else if (r > 0) {
    // One operand carries a trailing singleton where the other is full, e.g.
    // per-row norms (R,1) against rows (R,d).
    const bool lead_equal = std::equal(pa.begin(), pa.end() - 1, pb.begin());
    if (lead_equal && pa == p.out && pb[r - 1] == 1) {
      p.kind = Broadcast::Kind::kRowB;
      p.inner = pa[r - 1];
    } else if (lead_equal && pb == p.out && pa[r - 1] == 1) {
      p.kind = Broadcast::Kind::kRowA;
      p.inner = pb[r - 1];
    } else if (pa == p.out && block_split(pb, p.out, p)) {
      p.kind = Broadcast::Kind::kBlockB;
    } else if (pb == p.out && block_split(pa, p.out, p)) {
      p.kind = Broadcast::Kind::kBlockA;
    }
  }
  return p;
}

template <class F>
void visit(const Broadcast& p, F&& f) {
  const std::size_t n = shape_numel(p.out);
  switch (p.kind) {
    case Broadcast::Kind::kSame:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    case Broadcast::Kind::kScalarB:
      for (std::size_t i = 0; i < n; ++i) f(i, i, 0);
      return;
    case Broadcast::Kind::kScalarA:
      for (std::size_t i = 0; i < n; ++i) f(i, 0, i);
      return;
    case Broadcast::Kind::kRowB:
      for (std::size_t i = 0; i < n; ++i) f(i, i, i / p.inner);
      return;
    case Broadcast::Kind::kRowA:
      for (std::size_t i = 0; i < n; ++i) f(i, i / p.inner, i);
      return;
    case Broadcast::Kind::kBlockB:
    case Broadcast::Kind::kBlockA: {
      const bool on_b = p.kind == Broadcast::Kind::kBlockB;
      std::size_t i = 0;
      for (std::size_t o = 0; o < p.outer; ++o) {
        for (std::size_t m = 0; m < p.mid; ++m) {
          for (std::size_t k = 0; k < p.inner; ++k, ++i) {
            const std::size_t j = o * p.inner + k;
            if (on_b) {
              f(i, i, j);
            } else {
              f(i, j, i);
            }
          }
        }
      }
      return;
    }
    case Broadcast::Kind::kGeneral:
      break;
  }
  const std::size_t r = p.out.size();
  if (n == 0) return;
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    std::size_t k = r;
    while (k-- > 0) {
      ++idx[k];
      ia += p.sa[k];
      ib += p.sb[k];
      if (idx[k] < p.out[k]) break;
      ia -= p.sa[k] * p.out[k];
      ib -= p.sb[k] * p.out[k];
      idx[k] = 0;
    }
  }
}

}  // namespace

Tensor apply(UnaryOp op, const Tensor& a) {
  switch (op) {
    case UnaryOp::kNeg:
      return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
    case UnaryOp::kTanh:
      return unary("tanh", a, [](double x) { return std::tanh(x); },
                   [](double, double y) { return 1.0 - y * y; });
    case UnaryOp::kArtanh:
      return unary(
          "artanh", a,
          [](double x) {
            if (!(std::abs(x) < 1.0 + 1e-9)) {
              throw DomainError("artanh argument outside (-1, 1)", x);
            }
            return std::atanh(std::clamp(x, -kArtanhClamp, kArtanhClamp));
          },
          [](double x, double) { return std::abs(x) > kArtanhClamp ? 0.0 : 1.0 / (1.0 - x * x); });
    case UnaryOp::kExp:
      return unary(
          "exp", a,
          [](double x) {
            const double y = std::exp(x);
            if (!std::isfinite(y)) throw DomainError("exp overflow", x);
            return y;
          },
          [](double, double y) { return y; });
    case UnaryOp::kLog:
      return unary(
          "log", a,
          [](double x) {
            if (!(x >= 0.0)) throw DomainError("log of negative value", x);
            return std::log(std::max(x, 1e-300));
          },
          [](double x, double) { return 1.0 / std::max(x, 1e-300); });
    case UnaryOp::kSigmoid:
      return unary("sigmoid", a,
                   [](double x) {
                     if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                     const double e = std::exp(x);
                     return e / (1.0 + e);
                   },
                   [](double, double y) { return y * (1.0 - y); });
    case UnaryOp::kRelu:
      return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
                   [](double x, double) { return x > 0 ? 1.0 : 0.0; });
    case UnaryOp::kSqrt:
      return unary(
          "sqrt", a,
          [](double x) {
            if (!(x >= -1e-12)) throw DomainError("sqrt of negative value", x);
            return std::sqrt(std::max(x, 0.0));
          },
          [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
    case UnaryOp::kSquare:
      return unary("square", a, [](double x) { return x * x; },
                   [](double x, double) { return 2.0 * x; });
  }
  throw std::invalid_argument("unknown unary op");
}

Tensor neg(const Tensor& a) { return apply(UnaryOp::kNeg, a); }
Tensor tanh(const Tensor& a) { return apply(UnaryOp::kTanh, a); }
Tensor artanh(const Tensor& a) { return apply(UnaryOp::kArtanh, a); }
Tensor exp(const Tensor& a) { return apply(UnaryOp::kExp, a); }
Tensor log(const Tensor& a) { return apply(UnaryOp::kLog, a); }
Tensor sigmoid(const Tensor& a) { return apply(UnaryOp::kSigmoid, a); }
Tensor relu(const Tensor& a) { return apply(UnaryOp::kRelu, a); }
Tensor sqrt(const Tensor& a) { return apply(UnaryOp::kSqrt, a); }
Tensor square(const Tensor& a) { return apply(UnaryOp::kSquare, a); }

Tensor clamp_min(const Tensor& a, double lo) {
  return unary("clamp_min", a, [lo](double x) { return std::max(x, lo); },
               [lo](double x, double) { return x >= lo ? 1.0 : 0.0; });
}

Tensor clamp_max(const Tensor& a, double hi) {
  return unary("clamp_max", a, [hi](double x) { return std::min(x, hi); },
               [hi](double x, double) { return x <= hi ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor add(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double s) {
  return unary("mul_scalar", a, [s](double x) { return x * s; },
               [s](double, double) { return s; });
}

Tensor apply(BinaryOp op, const Tensor& a, const Tensor& b) {
  const auto plan = std::make_shared<const Broadcast>(plan_broadcast(a.shape(), b.shape()));
  const auto& x = data_of(a);
  const auto& y = data_of(b);
  std::vector<double> out(shape_numel(plan->out));
  const char* name = "";
  switch (op) {
    case BinaryOp::kAdd:
      name = "add";
      visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = x[ia] + y[ib]; });
      break;
    case BinaryOp::kSub:
      name = "sub";
      visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = x[ia] - y[ib]; });
      break;
    case BinaryOp::kMul:
      name = "mul";
      visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = x[ia] * y[ib]; });
      break;
    case BinaryOp::kDiv:
      name = "div";
      visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        if (y[ib] == 0.0) throw DomainError("division by zero", x[ia]);
        out[i] = x[ia] / y[ib];
      });
      break;
  }
  return make_op(name, plan->out, std::move(out), {a, b},
                 [op, plan, xs = storage_of(a), ys = storage_of(b)](std::span<const double> g,
                                                                   GradSink& sink) {
                   auto ga = sink[0];
                   auto gb = sink[1];
                   const auto& xv = *xs;
                   const auto& yv = *ys;
                   const bool wa = !ga.empty(), wb = !gb.empty();
                   switch (op) {
                     case BinaryOp::kAdd:
                     case BinaryOp::kSub: {
                       const double sb = op == BinaryOp::kAdd ? 1.0 : -1.0;
                       if (wa) visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
                       if (wb) visit(*plan, [&](std::size_t i, std::size_t, std::size_t ib) { gb[ib] += sb * g[i]; });
                       break;
                     }
                     case BinaryOp::kMul:
                       if (wa) visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] * yv[ib]; });
                       if (wb) visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += g[i] * xv[ia]; });
                       break;
                     case BinaryOp::kDiv:
                       if (wa) visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += g[i] / yv[ib]; });
                       if (wb) {
                         visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                           gb[ib] -= g[i] * xv[ia] / (yv[ib] * yv[ib]);
                         });
                       }
                       break;
                   }
                 });
}

Tensor add(const Tensor& a, const Tensor& b) { return apply(BinaryOp::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return apply(BinaryOp::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return apply(BinaryOp::kMul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return apply(BinaryOp::kDiv, a, b); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace {

struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
  Shape out_shape;
};

AxisView axis_view(const Shape& s, int axis, bool keepdim) {
  const auto ax = static_cast<std::size_t>(detail::normalize_axis(axis, s.size()));
  AxisView v;
  for (std::size_t i = 0; i < ax; ++i) v.outer *= s[i];
  v.n = s[ax];
  for (std::size_t i = ax + 1; i < s.size(); ++i) v.inner *= s[i];
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != ax) {
      v.out_shape.push_back(s[i]);
    } else if (keepdim) {
      v.out_shape.push_back(1);
    }
  }
  return v;
}

}  // namespace

Tensor reduce(const Tensor& a, ReduceOp op, int axis, bool keepdim) {
  const AxisView v = axis_view(a.shape(), axis, keepdim);
  if (v.n == 0) throw DimensionError("reduction over an empty axis of " + shape_str(a.shape()));
  const auto& x = data_of(a);
  std::vector<double> out(v.outer * v.inner, 0.0);
  if (op == ReduceOp::kMax) {
    auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        std::size_t best = o * v.n * v.inner + i;
        for (std::size_t j = 1; j < v.n; ++j) {
          const std::size_t k = (o * v.n + j) * v.inner + i;
          if (x[k] > x[best]) best = k;
        }
        out[o * v.inner + i] = x[best];
        (*arg)[o * v.inner + i] = best;
      }
    }
    return make_op("max", v.out_shape, std::move(out), {a},
                   [arg](std::span<const double> g, GradSink& sink) {
                     auto ga = sink[0];
                     if (ga.empty()) return;
                     for (std::size_t i = 0; i < g.size(); ++i) ga[(*arg)[i]] += g[i];
                   });
  }
  const double scale = op == ReduceOp::kMean ? 1.0 / static_cast<double>(v.n) : 1.0;
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t j = 0; j < v.n; ++j) {
      const double* row = &x[(o * v.n + j) * v.inner];
      double* dst = &out[o * v.inner];
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += row[i];
    }
  }
  if (scale != 1.0) {
    for (auto& y : out) y *= scale;
  }
  return make_op(op == ReduceOp::kMean ? "mean" : "sum", v.out_shape, std::move(out), {a},
                 [v, scale](std::span<const double> g, GradSink& sink) {
                   auto ga = sink[0];
                   if (ga.empty()) return;
                   for (std::size_t o = 0; o < v.outer; ++o) {
                     for (std::size_t j = 0; j < v.n; ++j) {
                       double* dst = &ga[(o * v.n + j) * v.inner];
                       const double* src = &g[o * v.inner];
                       for (std::size_t i = 0; i < v.inner; ++i) dst[i] += scale * src[i];
                     }
                   }
                 });
}

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  return reduce(a, ReduceOp::kSum, axis, keepdim);
}
Tensor mean(const Tensor& a, int axis, bool keepdim) {
  return reduce(a, ReduceOp::kMean, axis, keepdim);
}
Tensor max(const Tensor& a, int axis, bool keepdim) {
  return reduce(a, ReduceOp::kMax, axis, keepdim);
}

Tensor sum(const Tensor& a) {
  const auto& x = data_of(a);
  double s = 0.0;
  for (double v : x) s += v;
  return make_op("sum_all", {}, {s}, {a}, [](std::span<const double> g, GradSink& sink) {
    auto ga = sink[0];
    for (auto& v : ga) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  const auto n = a.numel();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return mul(sum(a), 1.0 / static_cast<double>(n));
}

Tensor softmax(const Tensor& a, int axis, const std::optional<Tensor>& mask) {
  const AxisView v = axis_view(a.shape(), axis, true);
  if (v.n == 0) throw DimensionError("softmax over an empty axis");
  const auto& x = data_of(a);
  std::vector<double> keep;
  if (mask) keep = broadcast_to(mask->detach(), a.shape()).to_vector();
  auto ys = std::make_shared<std::vector<double>>(x.size(), 0.0);
  auto& y = *ys;
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * v.n + j) * v.inner + i; };
      auto live = [&](std::size_t j) { return keep.empty() || keep[at(j)] != 0.0; };
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < v.n; ++j) {
        if (live(j)) m = std::max(m, x[at(j)]);
      }
      if (m == -std::numeric_limits<double>::infinity()) {
        throw std::invalid_argument("softmax: row " + std::to_string(o * v.inner + i) +
                                    " is fully masked");
      }
      double z = 0.0;
      for (std::size_t j = 0; j < v.n; ++j) {
        if (live(j)) {
          y[at(j)] = std::exp(x[at(j)] - m);
          z += y[at(j)];
        }
      }
      for (std::size_t j = 0; j < v.n; ++j) y[at(j)] /= z;
    }
  }
  std::shared_ptr<const std::vector<double>> yc = ys;
  return detail::make_view_op("softmax", a.shape(), ys, {a},
                              [v, yc](std::span<const double> g, GradSink& sink) {
                                auto ga = sink[0];
                                if (ga.empty()) return;
                                const auto& yv = *yc;
                                for (std::size_t o = 0; o < v.outer; ++o) {
                                  for (std::size_t i = 0; i < v.inner; ++i) {
                                    double dot = 0.0;
                                    for (std::size_t j = 0; j < v.n; ++j) {
                                      const auto k = (o * v.n + j) * v.inner + i;
                                      dot += yv[k] * g[k];
                                    }
                                    for (std::size_t j = 0; j < v.n; ++j) {
                                      const auto k = (o * v.n + j) * v.inner + i;
                                      ga[k] += yv[k] * (g[k] - dot);
                                    }
                                  }
                                }
                              });
}

Tensor log_softmax(const Tensor& a, int axis) {
  const AxisView v = axis_view(a.shape(), axis, true);
  if (v.n == 0) throw DimensionError("log_softmax over an empty axis");
  const auto& x = data_of(a);
  auto ys = std::make_shared<std::vector<double>>(x.size());
  auto& y = *ys;
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      auto at = [&](std::size_t j) { return (o * v.n + j) * v.inner + i; };
      double m = x[at(0)];
      for (std::size_t j = 1; j < v.n; ++j) m = std::max(m, x[at(j)]);
      double z = 0.0;
      for (std::size_t j = 0; j < v.n; ++j) z += std::exp(x[at(j)] - m);
      const double lz = std::log(z);
      for (std::size_t j = 0; j < v.n; ++j) y[at(j)] = x[at(j)] - m - lz;
    }
  }
  std::shared_ptr<const std::vector<double>> yc = ys;
  return detail::make_view_op("log_softmax", a.shape(), ys, {a},
                              [v, yc](std::span<const double> g, GradSink& sink) {
                                auto ga = sink[0];
                                if (ga.empty()) return;
                                const auto& yv = *yc;
                                for (std::size_t o = 0; o < v.outer; ++o) {
                                  for (std::size_t i = 0; i < v.inner; ++i) {
                                    double gs = 0.0;
                                    for (std::size_t j = 0; j < v.n; ++j) {
                                      gs += g[(o * v.n + j) * v.inner + i];
                                    }
                                    for (std::size_t j = 0; j < v.n; ++j) {
                                      const auto k = (o * v.n + j) * v.inner + i;
                                      ga[k] += g[k] - std::exp(yv[k]) * gs;
                                    }
                                  }
                                }
                              });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n);
  const RowMat prod = aligned_copy(data_of(a).data(), m, k) * aligned_copy(data_of(b).data(), k, n);
  copy_out(prod, out.data());
  return make_op("matmul", {m, n}, std::move(out), {a, b},
                 [m, k, n, xs = storage_of(a), ys = storage_of(b)](std::span<const double> g,
                                                                   GradSink& sink) {
                   const RowMat G = aligned_copy(g.data(), m, n);
                   if (auto ga = sink[0]; !ga.empty()) {
                     add_into(G * aligned_copy(ys->data(), k, n).transpose(), ga);
                   }
                   if (auto gb = sink[1]; !gb.empty()) {
                     add_into(aligned_copy(xs->data(), m, k).transpose() * G, gb);
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(a.shape()));
  const auto m = a.shape()[0], n = a.shape()[1];
  const auto& x = data_of(a);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  }
  return make_op("transpose", {n, m}, std::move(out), {a},
                 [m, n](std::span<const double> g, GradSink& sink) {
                   auto ga = sink[0];
                   if (ga.empty()) return;
                   for (std::size_t i = 0; i < m; ++i) {
                     for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                   }
                 });
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.shape()[0]) {
    throw DimensionError("linear: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
  }
  const auto in = w.shape()[0];
  Shape out_shape = x.shape();
  out_shape.back() = w.shape()[1];
  Tensor y = matmul(reshape(x, {x.numel() / std::max<std::size_t>(in, 1), in}), w);
  y = reshape(y, out_shape);
  if (bias) y = add(y, *bias);
  return y;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return detail::make_view_op("reshape", std::move(shape), impl_of(a)->storage, {a},
                              [](std::span<const double> g, GradSink& sink) {
                                auto ga = sink[0];
                                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
                              });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  const auto plan = std::make_shared<const Broadcast>(plan_broadcast(a.shape(), shape));
  if (plan->out != shape) {
    throw DimensionError("cannot broadcast " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  const auto& x = data_of(a);
  std::vector<double> out(shape_numel(shape));
  visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t) { out[i] = x[ia]; });
  return make_op("broadcast_to", shape, std::move(out), {a},
                 [plan](std::span<const double> g, GradSink& sink) {
                   auto ga = sink[0];
                   if (ga.empty()) return;
                   visit(*plan, [&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += g[i]; });
                 });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const auto& s0 = parts[0].shape();
  const auto ax = static_cast<std::size_t>(detail::normalize_axis(axis, s0.size()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s0[i];
  for (std::size_t i = ax + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == s0[i];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0));
    }
    widths.push_back(s[ax] * inner);
    total += s[ax];
  }
  Shape out_shape = s0;
  out_shape[ax] = total;
  const std::size_t row = total * inner;
  std::vector<double> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& x = data_of(parts[p]);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(&x[o * widths[p]], widths[p], &out[o * row + offset]);
    }
    offset += widths[p];
  }
  return make_op("concat", out_shape, std::move(out), parts,
                 [widths, outer, row](std::span<const double> g, GradSink& sink) {
                   std::size_t offset = 0;
                   for (std::size_t p = 0; p < widths.size(); ++p) {
                     auto gp = sink[p];
                     if (!gp.empty()) {
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t i = 0; i < widths[p]; ++i) {
                           gp[o * widths[p] + i] += g[o * row + offset + i];
                         }
                       }
                     }
                     offset += widths[p];
                   }
                 });
}

Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length) {
  const auto& s = a.shape();
  const auto ax = static_cast<std::size_t>(detail::normalize_axis(axis, s.size()));
  if (start + length > s[ax]) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[ax];
  Shape out_shape = s;
  out_shape[ax] = length;
  const auto& x = data_of(a);
  std::vector<double> out(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(&x[(o * n + start) * inner], length * inner, &out[o * length * inner]);
  }
  return make_op("slice", out_shape, std::move(out), {a},
                 [outer, inner, n, start, length](std::span<const double> g, GradSink& sink) {
                   auto ga = sink[0];
                   if (ga.empty()) return;
                   for (std::size_t o = 0; o < outer; ++o) {
                     for (std::size_t i = 0; i < length * inner; ++i) {
                       ga[(o * n + start) * inner + i] += g[o * length * inner + i];
                     }
                   }
                 });
}

Tensor index_select(const Tensor& a, std::span<const std::size_t> indices) {
  if (a.rank() < 1) throw DimensionError("index_select on a scalar");
  const auto rows = a.shape()[0];
  const auto width = a.numel() / std::max<std::size_t>(rows, 1);
  for (auto i : indices) {
    if (i >= rows) {
      throw DimensionError("index " + std::to_string(i) + " out of range for " +
                           shape_str(a.shape()));
    }
  }
  Shape out_shape = a.shape();
  out_shape[0] = indices.size();
  const auto& x = data_of(a);
  std::vector<double> out(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(&x[indices[r] * width], width, &out[r * width]);
  }
  return make_op("index_select", out_shape, std::move(out), {a},
                 [idx = std::vector<std::size_t>(indices.begin(), indices.end()), width](
                     std::span<const double> g, GradSink& sink) {
                   auto ga = sink[0];
                   if (ga.empty()) return;
                   for (std::size_t r = 0; r < idx.size(); ++r) {
                     for (std::size_t i = 0; i < width; ++i) ga[idx[r] * width + i] += g[r * width + i];
                   }
                 });
}

Tensor norm_last(const Tensor& a, double min_sq) {
  return sqrt(clamp_min(sum(square(a), -1, true), min_sq));
}

Tensor dot_last(const Tensor& a, const Tensor& b) { return sum(mul(a, b), -1, true); }

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                              double h) {
  const auto base = x.to_vector();
  std::vector<double> g(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    g[i] = (f(Tensor(x.shape(), std::move(plus))) - f(Tensor(x.shape(), std::move(minus)))) /
           (2.0 * h);
  }
  return Tensor(x.shape(), std::move(g));
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw DimensionError("relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace hyperskel
