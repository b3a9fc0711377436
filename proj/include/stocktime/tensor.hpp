#pragma once

// Dense 64-bit tensors with a define-by-run reverse-mode tape.
//
// Ops record onto the thread's active Tape (see TapeScope) when at least one
// input requires a gradient. With no active tape every op is a plain forward
// evaluation, which is how frozen inference paths run.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace stocktime {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class OpKind {
  matmul, add, sub, mul, div_scalar, tanh, sigmoid, gelu, softmax_last,
  layernorm_last, concat, slice, reshape, transpose_last_two, embedding,
  reduce_mean, reduce_sum
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div_scalar: return "div-by-scalar";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::gelu: return "gelu";
    case OpKind::softmax_last: return "softmax-last-axis";
    case OpKind::layernorm_last: return "layernorm-last-axis";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::reshape: return "reshape";
    case OpKind::transpose_last_two: return "transpose-last-two";
    case OpKind::embedding: return "embedding-lookup";
    case OpKind::reduce_mean: return "reduce-mean";
    case OpKind::reduce_sum: return "reduce-sum";
  }
  return "?";
}

class Tape;
class GradientMap;
class Tensor;
GradientMap backward(const Tensor& loss);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows in
  bool requires_grad = false;
  Tape* tape = nullptr;  // set for recorded (non-leaf) results
  std::optional<std::size_t> tape_id;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_size(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                       std::to_string(shape_size(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto sz = shape_size(shape);
    return from(std::move(shape), std::vector<double>(sz, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v) {
    const auto sz = shape_size(shape);
    return from(std::move(shape), std::vector<double>(sz, v));
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return from({}, {v}, requires_grad);
  }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    const auto n = v.size();
    return from({n}, std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  std::span<const double> values() const { return node_->value; }
  // In-place access for optimizers and finite-difference probes only.
  std::span<double> mutable_values() { return node_->value; }
  std::vector<double> to_vector() const { return node_->value; }
  double item() const {
    if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->tape == nullptr; }
  std::optional<std::size_t> tape_id() const { return node_->tape_id; }
  const std::vector<double>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  detail::Node* node() const { return node_.get(); }
  const detail::NodePtr& node_ptr() const { return node_; }

 private:
  detail::NodePtr node_;
};

/// Append-only record of differentiable ops; topological order is insertion
/// order. A tape is consumed by backward().
class Tape {
 public:
  struct Entry {
    OpKind kind;
    std::vector<detail::NodePtr> inputs;
    detail::NodePtr output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() { clear(); }

  std::size_t record(OpKind kind, std::vector<detail::NodePtr> inputs, detail::NodePtr output,
                     std::function<void()> backward) {
    const std::size_t id = entries_.size();
    output->tape = this;
    output->tape_id = id;
    entries_.push_back({kind, std::move(inputs), std::move(output), std::move(backward)});
    return id;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }

  void clear() {
    for (auto& e : entries_) {
      e.output->tape = nullptr;
      e.output->tape_id.reset();
    }
    entries_.clear();
  }

  // Visits entries from newest to oldest; test hook for traversal order.
  std::vector<std::size_t> reverse_order() const {
    std::vector<std::size_t> ids(entries_.size());
    std::iota(ids.rbegin(), ids.rend(), std::size_t{0});
    return ids;
  }

 private:
  friend class GradientMap;
  friend GradientMap backward(const Tensor& loss);
  std::vector<Entry> entries_;
};

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

/// Makes `tape` the recording target for this thread until destruction.
/// Passing nullptr disables recording (pure forward evaluation).
class TapeScope {
 public:
  explicit TapeScope(Tape* tape) : prev_(detail::active_tape_slot()) { detail::active_tape_slot() = tape; }
  ~TapeScope() { detail::active_tape_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

struct NoGradScope : TapeScope {
  NoGradScope() : TapeScope(nullptr) {}
};

/// Leaf gradients produced by one backward pass.
class GradientMap {
 public:
  const std::vector<double>* find(const Tensor& leaf) const {
    auto it = grads_.find(leaf.node());
    return it == grads_.end() ? nullptr : &it->second;
  }
  const std::vector<double>& at(const Tensor& leaf) const {
    const auto* g = find(leaf);
    if (!g) throw std::out_of_range("GradientMap: tensor received no gradient");
    return *g;
  }
  std::size_t size() const { return grads_.size(); }

 private:
  friend GradientMap backward(const Tensor& loss);
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
};

/// Runs reverse-mode accumulation from a scalar loss and consumes its tape.
/// Leaf gradients accumulate (+=) into each leaf's grad buffer and are also
/// returned as a snapshot.
inline GradientMap backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  Tape* tape = loss.node()->tape;
  if (!tape) throw std::logic_error("backward: loss is not recorded on a tape");

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;

  std::vector<detail::Node*> leaves;
  for (std::size_t i = tape->entries_.size(); i-- > 0;) {
    auto& e = tape->entries_[i];
    if (!e.output->grad.empty()) e.backward();
    for (auto& in : e.inputs) {
      if (in->requires_grad && in->tape == nullptr) leaves.push_back(in.get());
    }
  }
  GradientMap out;
  for (auto* leaf : leaves) {
    if (!leaf->grad.empty()) out.grads_.emplace(leaf, leaf->grad);
  }
  // Intermediate buffers are released with the tape.
  for (auto& e : tape->entries_) {
    e.output->grad.clear();
    e.output->grad.shrink_to_fit();
  }
  tape->clear();
  return out;
}

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  return std::any_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Builds the result tensor and records it when a tape is active and some
// input participates in differentiation.
template <class Backward>
Tensor make_result(OpKind kind, Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   Backward&& bw_factory) {
  auto out = std::make_shared<Node>();
  out->shape = std::move(shape);
  out->value = std::move(values);
  Tape* tape = active_tape();
  bool needs = false;
  for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (tape && needs) {
    out->requires_grad = true;
    std::vector<NodePtr> ins;
    ins.reserve(inputs.size());
    for (const auto& t : inputs) ins.push_back(t.node_ptr());
    Node* raw_out = out.get();
    tape->record(kind, ins, out, bw_factory(raw_out, ins));
  }
  return Tensor(std::move(out));
}

inline void check_defined(OpKind kind, const Tensor& a) {
  if (!a.defined()) throw ShapeError(std::string(op_name(kind)) + ": undefined input");
}

[[noreturn]] inline void shape_mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      c[i * k + p] += s;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Right operand either matches the left shape or matches its trailing dims.
inline std::size_t broadcast_period(OpKind kind, const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return a.size();
  if (sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) return b.size();
  shape_mismatch(kind, sa, sb);
}

template <class F, class DF>
Tensor unary(OpKind kind, const Tensor& a, F f, DF df_from_xy) {
  check_defined(kind, a);
  std::vector<double> y(a.size());
  const auto x = a.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[i]);
  return make_result(kind, a.shape(), std::move(y), {a}, [df_from_xy](Node* out, std::vector<NodePtr> ins) {
    return [out, ins, df_from_xy] {
      Node& in = *ins[0];
      if (!in.requires_grad) return;
      in.ensure_grad();
      for (std::size_t i = 0; i < in.value.size(); ++i) in.grad[i] += out->grad[i] * df_from_xy(in.value[i], out->value[i]);
    };
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

/// Matrix product over the last two axes. Supported forms:
/// [m,k]x[k,n], [k]x[k,n] -> [n], [B,m,k]x[k,n] (shared right operand) and
/// [B,m,k]x[B,k,n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  using namespace detail;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool batched_b = false;
  Shape out_shape;
  if (sb.size() == 2 && sa.size() >= 1 && sa.size() <= 3) {
    k = sb[0];
    n = sb[1];
    if (sa.back() != k) shape_mismatch(OpKind::matmul, sa, sb);
    m = a.size() / k;  // rows of the flattened left operand
    out_shape = sa;
    out_shape.back() = n;
  } else if (sa.size() == 3 && sb.size() == 3) {
    if (sa[0] != sb[0] || sa[2] != sb[1]) shape_mismatch(OpKind::matmul, sa, sb);
    batch = sa[0];
    m = sa[1];
    k = sa[2];
    n = sb[2];
    batched_b = true;
    out_shape = {batch, m, n};
  } else {
    shape_mismatch(OpKind::matmul, sa, sb);
  }
  std::vector<double> c(batch * m * n, 0.0);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    gemm_nn(a.values().data() + bi * m * k, b.values().data() + (batched_b ? bi * k * n : 0), c.data() + bi * m * n, m,
            k, n);
  }
  return make_result(OpKind::matmul, std::move(out_shape), std::move(c), {a, b},
                     [=](Node* out, std::vector<NodePtr> ins) {
                       return [=] {
                         Node& A = *ins[0];
                         Node& B = *ins[1];
                         for (std::size_t bi = 0; bi < batch; ++bi) {
                           const double* g = out->grad.data() + bi * m * n;
                           const std::size_t boff = batched_b ? bi * k * n : 0;
                           if (A.requires_grad) {
                             A.ensure_grad();
                             gemm_nt(g, B.value.data() + boff, A.grad.data() + bi * m * k, m, n, k);
                           }
                           if (B.requires_grad) {
                             B.ensure_grad();
                             gemm_tn(A.value.data() + bi * m * k, g, B.grad.data() + boff, m, k, n);
                           }
                         }
                       };
                     });
}

namespace detail {
template <class F, class DA, class DB>
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const std::size_t period = broadcast_period(kind, a, b);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(av[i], bv[i % period]);
  return make_result(kind, a.shape(), std::move(y), {a, b}, [=](Node* out, std::vector<NodePtr> ins) {
    return [=] {
      Node& A = *ins[0];
      Node& B = *ins[1];
      if (A.requires_grad) A.ensure_grad();
      if (B.requires_grad) B.ensure_grad();
      for (std::size_t i = 0; i < out->value.size(); ++i) {
        const double x = A.value[i];
        const double z = B.value[i % period];
        if (A.requires_grad) A.grad[i] += out->grad[i] * da(x, z);
        if (B.requires_grad) B.grad[i % period] += out->grad[i] * db(x, z);
      }
    };
  });
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::add, a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::sub, a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::mul, a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor div_scalar(const Tensor& a, double s) {
  return detail::unary(
      OpKind::div_scalar, a, [s](double x) { return x / s; }, [s](double, double) { return 1.0 / s; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      OpKind::tanh, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      OpKind::sigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

/// tanh approximation used by GPT-2 style blocks.
inline Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return detail::unary(
      OpKind::gelu, a, [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + k * x * x * x);
        const double t = std::tanh(u);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      });
}

inline Tensor softmax_last(const Tensor& a) {
  using namespace detail;
  if (a.rank() == 0) throw ShapeError("softmax-last-axis: scalar input");
  const std::size_t w = a.shape().back();
  const std::size_t rows = w ? a.size() / w : 0;
  std::vector<double> y(a.size());
  const auto x = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * w;
    double* yr = y.data() + r * w;
    const double mx = *std::max_element(xr, xr + w);
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) s += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < w; ++j) yr[j] /= s;
  }
  return make_result(OpKind::softmax_last, a.shape(), std::move(y), {a}, [=](Node* out, std::vector<NodePtr> ins) {
    return [=] {
      Node& A = *ins[0];
      if (!A.requires_grad) return;
      A.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = out->value.data() + r * w;
        const double* gr = out->grad.data() + r * w;
        double dot = 0.0;
        for (std::size_t j = 0; j < w; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < w; ++j) A.grad[r * w + j] += yr[j] * (gr[j] - dot);
      }
    };
  });
}

/// (x - mean) / sqrt(popvar + eps) over the last axis, no affine terms.
inline Tensor layernorm_last(const Tensor& a, double eps = 1e-5) {
  using namespace detail;
  if (a.rank() == 0) throw ShapeError("layernorm-last-axis: scalar input");
  const std::size_t w = a.shape().back();
  const std::size_t rows = w ? a.size() / w : 0;
  std::vector<double> y(a.size());
  std::vector<double> inv_std(rows);
  const auto x = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * w;
    double mean = 0.0;
    for (std::size_t j = 0; j < w; ++j) mean += xr[j];
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (std::size_t j = 0; j < w; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(w);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < w; ++j) y[r * w + j] = (xr[j] - mean) * inv_std[r];
  }
  return make_result(OpKind::layernorm_last, a.shape(), std::move(y), {a},
                     [=, inv_std = std::move(inv_std)](Node* out, std::vector<NodePtr> ins) {
                       return [=] {
                         Node& A = *ins[0];
                         if (!A.requires_grad) return;
                         A.ensure_grad();
                         const double nw = static_cast<double>(w);
                         for (std::size_t r = 0; r < rows; ++r) {
                           const double* yr = out->value.data() + r * w;
                           const double* gr = out->grad.data() + r * w;
                           double gsum = 0.0, gy = 0.0;
                           for (std::size_t j = 0; j < w; ++j) {
                             gsum += gr[j];
                             gy += gr[j] * yr[j];
                           }
                           for (std::size_t j = 0; j < w; ++j) {
                             A.grad[r * w + j] += inv_std[r] * (gr[j] - gsum / nw - yr[j] * gy / nw);
                           }
                         }
                       };
                     });
}

/// Concatenates along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  using namespace detail;
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_mismatch(OpKind::concat, s0, s);
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != s0[d]) shape_mismatch(OpKind::concat, s0, s);
    }
    total += s[axis];
  }
  const std::size_t outer = shape_size(Shape(s0.begin(), s0.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_size(Shape(s0.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s0.end()));
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::vector<double> y(shape_size(out_shape));
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = total * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const double* src = parts[pi].values().data() + o * widths[pi];
      std::copy(src, src + widths[pi], y.begin() + static_cast<std::ptrdiff_t>(o * row + off));
      off += widths[pi];
    }
  }
  return make_result(OpKind::concat, std::move(out_shape), std::move(y), parts,
                     [=](Node* out, std::vector<NodePtr> ins) {
                       return [=] {
                         for (std::size_t o = 0; o < outer; ++o) {
                           std::size_t off = 0;
                           for (std::size_t pi = 0; pi < ins.size(); ++pi) {
                             Node& P = *ins[pi];
                             if (P.requires_grad) {
                               P.ensure_grad();
                               for (std::size_t j = 0; j < widths[pi]; ++j) {
                                 P.grad[o * widths[pi] + j] += out->grad[o * row + off + j];
                               }
                             }
                             off += widths[pi];
                           }
                         }
                       };
                     });
}

inline Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  return concat(parts, parts[0].rank() - 1);
}

/// Elements [start, start+len) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  using namespace detail;
  const Shape& s = a.shape();
  if (axis >= s.size() || start + len > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) + ") on axis " +
                     std::to_string(axis) + " outside shape " + shape_str(s));
  }
  const std::size_t outer = shape_size(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_size(Shape(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end()));
  const std::size_t src_row = s[axis] * inner;
  const std::size_t dst_row = len * inner;
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<double> y(outer * dst_row);
  const auto x = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(o * src_row + start * inner), dst_row,
                y.begin() + static_cast<std::ptrdiff_t>(o * dst_row));
  }
  return make_result(OpKind::slice, std::move(out_shape), std::move(y), {a}, [=](Node* out, std::vector<NodePtr> ins) {
    return [=] {
      Node& A = *ins[0];
      if (!A.requires_grad) return;
      A.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < dst_row; ++j) A.grad[o * src_row + start * inner + j] += out->grad[o * dst_row + j];
      }
    };
  });
}

inline Tensor slice_last(const Tensor& a, std::size_t start, std::size_t len) {
  return slice(a, a.rank() - 1, start, len);
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  using namespace detail;
  if (shape_size(shape) != a.size()) shape_mismatch(OpKind::reshape, a.shape(), shape);
  return make_result(OpKind::reshape, std::move(shape), a.to_vector(), {a}, [](Node* out, std::vector<NodePtr> ins) {
    return [=] {
      Node& A = *ins[0];
      if (!A.requires_grad) return;
      A.ensure_grad();
      for (std::size_t i = 0; i < A.grad.size(); ++i) A.grad[i] += out->grad[i];
    };
  });
}

inline Tensor transpose_last_two(const Tensor& a) {
  using namespace detail;
  if (a.rank() < 2) throw ShapeError("transpose-last-two: rank " + std::to_string(a.rank()) + " input");
  const std::size_t r = a.shape()[a.rank() - 2];
  const std::size_t c = a.shape()[a.rank() - 1];
  const std::size_t batch = (r * c) != 0 ? a.size() / (r * c) : 0;
  Shape out_shape = a.shape();
  std::swap(out_shape[a.rank() - 2], out_shape[a.rank() - 1]);
  std::vector<double> y(a.size());
  const auto x = a.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) y[b * r * c + j * r + i] = x[b * r * c + i * c + j];
  return make_result(OpKind::transpose_last_two, std::move(out_shape), std::move(y), {a},
                     [=](Node* out, std::vector<NodePtr> ins) {
                       return [=] {
                         Node& A = *ins[0];
                         if (!A.requires_grad) return;
                         A.ensure_grad();
                         for (std::size_t b = 0; b < batch; ++b)
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               A.grad[b * r * c + i * c + j] += out->grad[b * r * c + j * r + i];
                       };
                     });
}

/// Rows of `table` [V,d] selected by `ids`; result [ids.size(), d].
inline Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  using namespace detail;
  if (table.rank() != 2) throw ShapeError("embedding-lookup: table must be rank 2, got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  std::vector<double> y(idx.size() * d);
  for (std::size_t t = 0; t < idx.size(); ++t) {
    if (idx[t] >= vocab) {
      throw ShapeError("embedding-lookup: id " + std::to_string(idx[t]) + " outside table " + shape_str(table.shape()));
    }
    std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(idx[t] * d), d,
                y.begin() + static_cast<std::ptrdiff_t>(t * d));
  }
  return make_result(OpKind::embedding, Shape{idx.size(), d}, std::move(y), {table},
                     [=](Node* out, std::vector<NodePtr> ins) {
                       return [=] {
                         Node& T = *ins[0];
                         if (!T.requires_grad) return;
                         T.ensure_grad();
                         for (std::size_t t = 0; t < idx.size(); ++t)
                           for (std::size_t j = 0; j < d; ++j) T.grad[idx[t] * d + j] += out->grad[t * d + j];
                       };
                     });
}

inline Tensor reduce_sum(const Tensor& a) {
  using namespace detail;
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result(OpKind::reduce_sum, Shape{}, {s}, {a}, [](Node* out, std::vector<NodePtr> ins) {
    return [=] {
      Node& A = *ins[0];
      if (!A.requires_grad) return;
      A.ensure_grad();
      for (double& g : A.grad) g += out->grad[0];
    };
  });
}

inline Tensor reduce_mean(const Tensor& a) {
  using namespace detail;
  if (a.size() == 0) throw ShapeError("reduce-mean: empty input");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double n = static_cast<double>(a.size());
  return make_result(OpKind::reduce_mean, Shape{}, {s / n}, {a}, [n](Node* out, std::vector<NodePtr> ins) {
    return [=] {
      Node& A = *ins[0];
      if (!A.requires_grad) return;
      A.ensure_grad();
      for (double& g : A.grad) g += out->grad[0] / n;
    };
  });
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckEntry {
  std::size_t param_index = 0;
  double max_rel_error = 0.0;
  std::size_t worst_element = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool all_passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
  }
  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_error);
    return w;
  }
};

/// Compares tape gradients of `f` against central differences
/// (f(p+h) - f(p-h)) / 2h for every element of every tensor in `params`.
/// Relative error is |a-b| / max(|a|, |b|, 1e-8).
inline GradCheckReport finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                               double step, double tolerance) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  for (auto& p : params) p.zero_grad();
  std::vector<std::vector<double>> analytic(params.size());
  {
    Tape tape;
    TapeScope scope(&tape);
    Tensor loss = f();
    if (loss.requires_grad()) {
      backward(loss);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    analytic[i] = params[i].grad().empty() ? std::vector<double>(params[i].size(), 0.0) : params[i].grad();
    params[i].zero_grad();
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  NoGradScope no_grad;
  for (std::size_t i = 0; i < params.size(); ++i) {
    GradCheckEntry entry;
    entry.param_index = i;
    auto vals = params[i].mutable_values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double orig = vals[j];
      vals[j] = orig + step;
      const double fp = f().item();
      vals[j] = orig - step;
      const double fm = f().item();
      vals[j] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[i][j];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_element = j;
      }
    }
    entry.passed = entry.max_rel_error <= tolerance;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace stocktime
