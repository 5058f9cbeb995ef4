#pragma once

// Minimal reverse-mode autodiff over dense row-major float64 tensors.
//
// Every op allocates a fresh output node. When gradient recording is enabled
// on the calling thread and at least one input requires a gradient, the node
// keeps its inputs and a backward closure. Node ids come from a global counter,
// so creation order is a valid topological order of any graph.

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace amoclust::ad {

using Shape = std::vector<std::size_t>;

enum class OpKind : std::uint8_t {
  kLeaf,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddScalar,
  kSoftmax,
  kLogSoftmax,
  kLayerNorm,
  kGelu,
  kRelu,
  kSoftplus,
  kConcat,
  kNarrow,
  kTranspose,
  kReshape,
  kL2Normalize,
  kLog,
  kExp,
  kSin,
  kSum,
  kMean,
  kSumLast,
  kMaskedFill,
  kGather,
  kGram,
};

inline std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kGelu: return "gelu";
    case OpKind::kRelu: return "relu";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kConcat: return "concat";
    case OpKind::kNarrow: return "narrow";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kL2Normalize: return "l2_normalize";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSin: return "sin";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSumLast: return "sum_last";
    case OpKind::kMaskedFill: return "masked_fill";
    case OpKind::kGather: return "gather";
    case OpKind::kGram: return "gram";
  }
  return "unknown";
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline constexpr double kLogFloor = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kNormFloor = 1e-12;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

struct Node {
  OpKind kind = OpKind::kLeaf;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

namespace detail {

inline std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->id = detail::next_id();
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t last_dim() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t numel() const { return node_->value.size(); }
  OpKind kind() const { return node_->kind; }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  /// Writable storage; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  double item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
  }
  double at(std::size_t i, std::size_t j) const { return node_->value[i * last_dim() + j]; }
  double operator[](std::size_t i) const { return node_->value[i]; }

 private:
  NodePtr node_;
};

namespace detail {

using BackwardFn = std::function<void(Node&)>;

inline Tensor make_op(OpKind kind, Shape shape, std::vector<double> value,
                      std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = next_id();
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  if (any && grad_mode()) {
    n->requires_grad = true;
    for (const Tensor* t : inputs) n->inputs.push_back(t->node());
    n->backward = std::move(fn);
  }
  return Tensor(std::move(n));
}

inline Tensor make_op_list(OpKind kind, Shape shape, std::vector<double> value,
                           const std::vector<Tensor>& inputs, BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = next_id();
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any && grad_mode()) {
    n->requires_grad = true;
    for (const auto& t : inputs) n->inputs.push_back(t.node());
    n->backward = std::move(fn);
  }
  return Tensor(std::move(n));
}

/// Gradient buffer of input `i` or an empty span when it needs none.
inline std::span<double> in_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return {};
  return in.grad_buffer();
}

// Layout of a reduction along one axis: outer x axis x inner.
struct AxisLayout {
  std::size_t outer = 1, axis = 1, inner = 1;
};

inline std::size_t normalize_axis(int axis, std::size_t rank, std::string_view op) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

inline AxisLayout axis_layout(const Shape& s, std::size_t axis) {
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  l.axis = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

// Broadcast of `b` into the shape of `a` (numpy rules, output shape = a's).
struct Broadcast {
  enum class Mode { kSame, kScalar, kTrailing, kRowwise, kGeneral } mode = Mode::kSame;
  std::size_t b_numel = 0;
  std::size_t last = 1;
  std::vector<std::size_t> index;  // only for kGeneral

  std::size_t map(std::size_t i) const {
    switch (mode) {
      case Mode::kSame: return i;
      case Mode::kScalar: return 0;
      case Mode::kTrailing: return i % b_numel;
      case Mode::kRowwise: return i / last;
      case Mode::kGeneral: return index[i];
    }
    return 0;
  }
};

inline Broadcast make_broadcast(const Shape& a, const Shape& b, std::string_view op) {
  Broadcast bc;
  bc.b_numel = numel_of(b);
  bc.last = a.empty() ? 1 : a.back();
  auto fail = [&] {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " into " + shape_str(a));
  };
  if (b.size() > a.size()) {
    // Allow leading unit dims on b.
    for (std::size_t i = 0; i + a.size() < b.size(); ++i)
      if (b[i] != 1) fail();
  }
  if (a == b) return bc;
  if (bc.b_numel == 1) {
    bc.mode = Broadcast::Mode::kScalar;
    return bc;
  }
  const std::size_t ra = a.size();
  Shape bp(ra, 1);
  const std::size_t off = ra >= b.size() ? ra - b.size() : 0;
  for (std::size_t i = 0; i < std::min(ra, b.size()); ++i) bp[off + i] = b[b.size() - std::min(ra, b.size()) + i];
  for (std::size_t i = 0; i < ra; ++i)
    if (bp[i] != 1 && bp[i] != a[i]) fail();
  // Trailing: bp = [1,..,1, a[j..]].
  {
    std::size_t j = 0;
    while (j < ra && bp[j] == 1) ++j;
    bool trailing = true;
    for (std::size_t i = j; i < ra; ++i) trailing = trailing && bp[i] == a[i];
    if (trailing) {
      bc.mode = Broadcast::Mode::kTrailing;
      return bc;
    }
  }
  // Rowwise: bp = [a[0..r-1], 1].
  {
    bool rowwise = ra >= 1 && bp[ra - 1] == 1;
    for (std::size_t i = 0; i + 1 < ra && rowwise; ++i) rowwise = bp[i] == a[i];
    if (rowwise) {
      bc.mode = Broadcast::Mode::kRowwise;
      return bc;
    }
  }
  bc.mode = Broadcast::Mode::kGeneral;
  const std::size_t n = numel_of(a);
  bc.index.resize(n);
  std::vector<std::size_t> bstride(ra, 0);
  std::size_t s = 1;
  for (std::size_t i = ra; i-- > 0;) {
    bstride[i] = bp[i] == 1 ? 0 : s;
    s *= bp[i];
  }
  std::vector<std::size_t> idx(ra, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t bi = 0;
    for (std::size_t d = 0; d < ra; ++d) bi += idx[d] * bstride[d];
    bc.index[flat] = bi;
    for (std::size_t d = ra; d-- > 0;) {
      if (++idx[d] < a[d]) break;
      idx[d] = 0;
    }
  }
  return bc;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

template <class F>
Tensor unary(OpKind kind, const Tensor& x, F&& f, std::function<double(double x, double y)> dfdx) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_op(kind, x.shape(), std::move(out), {&x}, [dfdx = std::move(dfdx)](Node& self) {
    auto gx = in_grad(self, 0);
    if (gx.empty()) return;
    const auto& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * dfdx(xv[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (b broadcasts into a).

inline Tensor add(const Tensor& a, const Tensor& b) {
  auto bc = detail::make_broadcast(a.shape(), b.shape(), "add");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[bc.map(i)];
  return detail::make_op(OpKind::kAdd, a.shape(), std::move(out), {&a, &b}, [bc](Node& self) {
    auto ga = detail::in_grad(self, 0);
    auto gb = detail::in_grad(self, 1);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    if (!gb.empty())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[bc.map(i)] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  auto bc = detail::make_broadcast(a.shape(), b.shape(), "sub");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[bc.map(i)];
  return detail::make_op(OpKind::kSub, a.shape(), std::move(out), {&a, &b}, [bc](Node& self) {
    auto ga = detail::in_grad(self, 0);
    auto gb = detail::in_grad(self, 1);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    if (!gb.empty())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[bc.map(i)] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  auto bc = detail::make_broadcast(a.shape(), b.shape(), "mul");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[bc.map(i)];
  return detail::make_op(OpKind::kMul, a.shape(), std::move(out), {&a, &b}, [bc](Node& self) {
    auto ga = detail::in_grad(self, 0);
    auto gb = detail::in_grad(self, 1);
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (!ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bv[bc.map(i)];
    if (!gb.empty())
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[bc.map(i)] += self.grad[i] * av[i];
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  auto bc = detail::make_broadcast(a.shape(), b.shape(), "div");
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[bc.map(i)];
  return detail::make_op(OpKind::kDiv, a.shape(), std::move(out), {&a, &b}, [bc](Node& self) {
    auto ga = detail::in_grad(self, 0);
    auto gb = detail::in_grad(self, 1);
    const auto& bv = self.inputs[1]->value;
    if (!ga.empty())
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] / bv[bc.map(i)];
    if (!gb.empty())
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double bi = bv[bc.map(i)];
        gb[bc.map(i)] -= self.grad[i] * self.value[i] / bi;
      }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c;
  return detail::make_op(OpKind::kScale, x.shape(), std::move(out), {&x}, [c](Node& self) {
    auto gx = detail::in_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * c;
  });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + c;
  return detail::make_op(OpKind::kAddScalar, x.shape(), std::move(out), {&x}, [](Node& self) {
    auto gx = detail::in_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------
// Matrix product. Supports [m,k]x[k,n], [...,m,k]x[k,n] (shared right operand)
// and [b,m,k]x[b,k,n] (batched).

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  auto fail = [&] {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) fail();
  const std::size_t k = a.shape().back();
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t n = b.shape().back();
  if (b.shape()[b.rank() - 2] != k) fail();
  std::size_t batch = 1;
  bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (a.rank() != b.rank()) fail();
    for (std::size_t i = 0; i + 2 < a.rank(); ++i) {
      if (a.dim(i) != b.dim(i)) fail();
      batch *= a.dim(i);
    }
  } else {
    for (std::size_t i = 0; i + 2 < a.rank(); ++i) batch *= a.dim(i);
  }
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<double> out(batch * m * n);
  if (shared_b) {
    detail::MapM(out.data(), batch * m, n).noalias() =
        detail::MapC(a.data().data(), batch * m, k) * detail::MapC(b.data().data(), k, n);
  } else {
    for (std::size_t t = 0; t < batch; ++t) {
      detail::MapM(out.data() + t * m * n, m, n).noalias() =
          detail::MapC(a.data().data() + t * m * k, m, k) * detail::MapC(b.data().data() + t * k * n, k, n);
    }
  }
  return detail::make_op(OpKind::kMatMul, std::move(out_shape), std::move(out), {&a, &b},
                         [batch, m, k, n, shared_b](Node& self) {
                           auto ga = detail::in_grad(self, 0);
                           auto gb = detail::in_grad(self, 1);
                           const double* av = self.inputs[0]->value.data();
                           const double* bv = self.inputs[1]->value.data();
                           const double* g = self.grad.data();
                           if (shared_b) {
                             detail::MapC G(g, batch * m, n);
                             if (!ga.empty())
                               detail::MapM(ga.data(), batch * m, k).noalias() += G * detail::MapC(bv, k, n).transpose();
                             if (!gb.empty())
                               detail::MapM(gb.data(), k, n).noalias() += detail::MapC(av, batch * m, k).transpose() * G;
                             return;
                           }
                           for (std::size_t t = 0; t < batch; ++t) {
                             detail::MapC G(g + t * m * n, m, n);
                             if (!ga.empty())
                               detail::MapM(ga.data() + t * m * k, m, k).noalias() +=
                                   G * detail::MapC(bv + t * k * n, k, n).transpose();
                             if (!gb.empty())
                               detail::MapM(gb.data() + t * k * n, k, n).noalias() +=
                                   detail::MapC(av + t * m * k, m, k).transpose() * G;
                           }
                         });
}

/// X^T X for an N x K matrix. Each entry is accumulated over rows in order
/// and mirrored, so relabeling columns permutes the result bit for bit.
inline Tensor gram(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("gram: expects a matrix, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), k = x.dim(1);
  const double* v = x.data().data();
  std::vector<double> out(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i; j < k; ++j) {
      double s = 0;
      for (std::size_t r = 0; r < n; ++r) s += v[r * k + i] * v[r * k + j];
      out[i * k + j] = out[j * k + i] = s;
    }
  return detail::make_op(OpKind::kGram, {k, k}, std::move(out), {&x}, [n, k](Node& self) {
    auto gx = detail::in_grad(self, 0);
    if (gx.empty()) return;
    const double* xv = self.inputs[0]->value.data();
    const double* g = self.grad.data();
    // d/dX of sum(G * X^T X) = X (G + G^T)
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t a = 0; a < k; ++a) {
        double s = 0;
        for (std::size_t b = 0; b < k; ++b) s += xv[r * k + b] * (g[b * k + a] + g[a * k + b]);
        gx[r * k + a] += s;
      }
  });
}

/// Swaps the last two axes.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t r = x.shape()[x.rank() - 2], c = x.shape().back();
  const std::size_t batch = x.numel() / (r * c);
  Shape s = x.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t t = 0; t < batch; ++t)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[t * r * c + j * r + i] = xv[t * r * c + i * c + j];
  return detail::make_op(OpKind::kTranspose, std::move(s), std::move(out), {&x}, [batch, r, c](Node& self) {
    auto gx = detail::in_grad(self, 0);
    if (gx.empty()) return;
    for (std::size_t t = 0; t < batch; ++t)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[t * r * c + i * c + j] += self.grad[t * r * c + j * r + i];
  });
}

inline Tensor reshape(const Tensor& x, Shape s) {
  if (numel_of(s) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(s) + " changes element count");
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_op(OpKind::kReshape, std::move(s), std::move(out), {&x}, [](Node& self) {
    auto gx = detail::in_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Last-axis normalizations.

inline Tensor softmax(const Tensor& x) {
  const std::size_t c = x.last_dim();
  const std::size_t rows = x.numel() / c;
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * c;
    double* o = out.data() + r * c;
    const double mx = *std::max_element(in, in + c);
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < c; ++j) o[j] /= s;
  }
  return detail::make_op(OpKind::kSoftmax, x.shape(), std::move(out), {&x}, [rows, c](Node& self) {
    auto gx = detail::in_grad(self, 0);
    if (gx.empty()) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * c;
      const double* g = self.grad.data() + r * c;
      double dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += y[j] * (g[j] - dot);
    }
  });
}

inline Tensor log_softmax(const Tensor& x) {
  const std::size_t c = x.last_dim();
  const std::size_t rows = x.numel() / c;
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * c;
    double* o = out.data() + r * c;
    const double mx = *std::max_element(in, in + c);
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(in[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) o[j] = in[j] - lse;
  }
  return detail::make_op(OpKind::kLogSoftmax, x.shape(), std::move(out), {&x}, [rows, c](Node& self) {
    auto gx = detail::in_grad(self, 0);
    if (gx.empty()) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * c;
      const double* g = self.grad.data() + r * c;
      double gs = 0;
      for (std::size_t j = 0; j < c; ++j) gs += g[j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[j] - std::exp(y[j]) * gs;
    }
  });
}

/// Normalizes each last-axis row to zero mean and unit variance (no affine).
inline Tensor layer_norm(const Tensor& x) {
  const std::size_t c = x.last_dim();
  const std::size_t rows = x.numel() / c;
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(rows);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * c;
    double mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += in[j];
    mean /= static_cast<double>(c);
    double var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = (in[j] - mean) * is;
  }
  return detail::make_op(OpKind::kLayerNorm, x.shape(), std::move(out), {&x},
                         [rows, c, inv_std = std::move(inv_std)](Node& self) {
                           auto gx = detail::in_grad(self, 0);
                           if (gx.empty()) return;
                           const double inv_c = 1.0 / static_cast<double>(c);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* y = self.value.data() + r * c;
                             const double* g = self.grad.data() + r * c;
                             double gm = 0, gy = 0;
                             for (std::size_t j = 0; j < c; ++j) {
                               gm += g[j];
                               gy += g[j] * y[j];
                             }
                             gm *= inv_c;
                             gy *= inv_c;
                             for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += inv_std[r] * (g[j] - gm - y[j] * gy);
                           }
                         });
}

inline Tensor l2_normalize(const Tensor& x) {
  const std::size_t c = x.last_dim();
  const std::size_t rows = x.numel() / c;
  std::vector<double> out(x.numel());
  std::vector<double> norms(rows);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += xv[r * c + j] * xv[r * c + j];
    const double nrm = std::max(std::sqrt(s), kNormFloor);
    norms[r] = nrm;
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xv[r * c + j] / nrm;
  }
  return detail::make_op(OpKind::kL2Normalize, x.shape(), std::move(out), {&x},
                         [rows, c, norms = std::move(norms)](Node& self) {
                           auto gx = detail::in_grad(self, 0);
                           if (gx.empty()) return;
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* y = self.value.data() + r * c;
                             const double* g = self.grad.data() + r * c;
                             double dot = 0;
                             for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
                             for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += (g[j] - y[j] * dot) / norms[r];
                           }
                         });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities.

inline Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return detail::unary(
      OpKind::kGelu, x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      OpKind::kRelu, x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      OpKind::kSoftplus, x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

/// Natural log with the argument floored at kLogFloor; zero gradient below the floor.
inline Tensor log(const Tensor& x) {
  return detail::unary(
      OpKind::kLog, x, [](double v) { return std::log(std::max(v, kLogFloor)); },
      [](double v, double) { return v > kLogFloor ? 1.0 / v : 0.0; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      OpKind::kExp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor sin(const Tensor& x) {
  return detail::unary(
      OpKind::kSin, x, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

// ---------------------------------------------------------------------------
// Reductions.

inline Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  return detail::make_op(OpKind::kSum, {}, {s}, {&x}, [](Node& self) {
    auto gx = detail::in_grad(self, 0);
    for (double& g : gx) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  const double n = static_cast<double>(x.numel());
  return detail::make_op(OpKind::kMean, {}, {s / n}, {&x}, [n](Node& self) {
    auto gx = detail::in_grad(self, 0);
    for (double& g : gx) g += self.grad[0] / n;
  });
}

/// Sums the last axis, keeping it as size 1.
inline Tensor sum_last(const Tensor& x) {
  const std::size_t c = x.last_dim();
  const std::size_t rows = x.numel() / c;
  Shape s = x.shape();
  if (s.empty()) s.push_back(1);
  s.back() = 1;
  std::vector<double> out(rows, 0.0);
  auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r] += xv[r * c + j];
  return detail::make_op(OpKind::kSumLast, std::move(s), std::move(out), {&x}, [rows, c](Node& self) {
    auto gx = detail::in_grad(self, 0);
    if (gx.empty()) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += self.grad[r];
  });
}

// ---------------------------------------------------------------------------
// Structural ops.

inline Tensor concat(const std::vector<Tensor>& xs, int axis = -1) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const std::size_t ax = detail::normalize_axis(axis, xs[0].rank(), "concat");
  Shape s = xs[0].shape();
  std::size_t total = 0;
  for (const auto& t : xs) {
    bool ok = t.rank() == s.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || t.dim(i) == s[i];
    if (!ok) throw ShapeError("concat: incompatible " + shape_str(xs[0].shape()) + " and " + shape_str(t.shape()));
    total += t.dim(ax);
  }
  s[ax] = total;
  const auto lay = detail::axis_layout(s, ax);
  std::vector<std::size_t> widths;
  for (const auto& t : xs) widths.push_back(t.dim(ax) * lay.inner);
  const std::size_t row = total * lay.inner;
  std::vector<double> out(numel_of(s));
  std::size_t off = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto xv = xs[t].data();
    for (std::size_t o = 0; o < lay.outer; ++o)
      std::copy_n(xv.data() + o * widths[t], widths[t], out.data() + o * row + off);
    off += widths[t];
  }
  return detail::make_op_list(OpKind::kConcat, std::move(s), std::move(out), xs,
                              [widths, row, outer = lay.outer](Node& self) {
                                std::size_t off = 0;
                                for (std::size_t t = 0; t < widths.size(); ++t) {
                                  auto g = detail::in_grad(self, t);
                                  if (!g.empty())
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t j = 0; j < widths[t]; ++j)
                                        g[o * widths[t] + j] += self.grad[o * row + off + j];
                                  off += widths[t];
                                }
                              });
}

/// Slice [start, start+len) along `axis`.
inline Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t len) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "narrow");
  if (start + len > x.dim(ax)) {
    throw ShapeError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") exceeds axis of " + shape_str(x.shape()));
  }
  const auto lay = detail::axis_layout(x.shape(), ax);
  Shape s = x.shape();
  s[ax] = len;
  const std::size_t in_row = lay.axis * lay.inner, out_row = len * lay.inner, off = start * lay.inner;
  std::vector<double> out(lay.outer * out_row);
  auto xv = x.data();
  for (std::size_t o = 0; o < lay.outer; ++o)
    std::copy_n(xv.data() + o * in_row + off, out_row, out.data() + o * out_row);
  return detail::make_op(OpKind::kNarrow, std::move(s), std::move(out), {&x},
                         [outer = lay.outer, in_row, out_row, off](Node& self) {
                           auto gx = detail::in_grad(self, 0);
                           if (gx.empty()) return;
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < out_row; ++j) gx[o * in_row + off + j] += self.grad[o * out_row + j];
                         });
}

/// Replaces entries where mask != 0 by `value`. The mask covers either every
/// element or one last-axis row (broadcast over leading axes).
inline Tensor masked_fill(const Tensor& x, const std::vector<std::uint8_t>& mask, double value) {
  const std::size_t c = x.last_dim();
  if (mask.size() != x.numel() && mask.size() != c) {
    throw ShapeError("masked_fill: mask of size " + std::to_string(mask.size()) + " does not fit " +
                     shape_str(x.shape()));
  }
  const bool row_mask = mask.size() != x.numel();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[row_mask ? i % c : i]) out[i] = value;
  return detail::make_op(OpKind::kMaskedFill, x.shape(), std::move(out), {&x}, [mask, row_mask, c](Node& self) {
    auto gx = detail::in_grad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!mask[row_mask ? i % c : i]) gx[i] += self.grad[i];
  });
}

/// Flat gather: out[i] = x.flat[indices[i]], shape [len(indices)].
inline Tensor gather(const Tensor& x, std::vector<std::size_t> indices) {
  std::vector<double> out(indices.size());
  auto xv = x.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= xv.size()) throw ShapeError("gather: index out of range for " + shape_str(x.shape()));
    out[i] = xv[indices[i]];
  }
  const std::size_t len = indices.size();
  return detail::make_op(OpKind::kGather, {len}, std::move(out), {&x},
                         [indices = std::move(indices)](Node& self) {
                           auto gx = detail::in_grad(self, 0);
                           if (gx.empty()) return;
                           for (std::size_t i = 0; i < indices.size(); ++i) gx[indices[i]] += self.grad[i];
                         });
}

/// Value copy that is never part of any graph.
inline Tensor detach(const Tensor& x) {
  return Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), false);
}

// ---------------------------------------------------------------------------
// Reverse pass.

/// Accumulates d(root)/d(leaf) into every leaf that requires a gradient.
/// A root can be propagated once; interior gradients are released afterwards.
inline void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw GraphError("backward: root must be a scalar, got " + (root.defined() ? shape_str(root.shape()) : "null"));
  }
  if (!root.requires_grad()) throw GraphError("backward: root is detached from any graph");
  if (root.node()->consumed) throw GraphError("backward: graph already consumed; rebuild before calling again");

  std::vector<Node*> order;
  std::vector<Node*> stack{root.node().get()};
  std::unordered_set<const Node*> seen{root.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (n->backward) order.push_back(n);
    for (auto& in : n->inputs) {
      if (!in->requires_grad || !seen.insert(in.get()).second) continue;
      stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });
  for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
  root.node()->grad[0] = 1.0;
  for (Node* n : order) {
    n->backward(*n);
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
  root.node()->consumed = true;
}

}  // namespace amoclust::ad
