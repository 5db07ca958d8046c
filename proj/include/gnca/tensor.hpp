#pragma once

// Dense row-major tensors and a reverse-mode tape over a fixed op vocabulary.
//
// Every value on a tape is immutable once recorded. A node is "tracked" when
// it is a parameter or depends on one; only tracked nodes store a backward
// closure and receive gradients. Matrix products go through Eigen's GEMM
// kernels, which are single-threaded and deterministic for a fixed build.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gnca/errors.hpp"

namespace gnca {

using Shape = std::vector<std::size_t>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
// Aligned storage keeps Eigen's vectorised reductions on the same code path
// for every allocation, so repeated runs agree bit for bit.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor {
 public:
  Tensor() : shape_{0, 0} {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  Tensor(Shape shape, const std::vector<double>& data) : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, Storage{v}); }
  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(Shape{rows, cols}); }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    Storage data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
  }

  static Tensor row(std::initializer_list<double> values) {
    return Tensor(Shape{1, values.size()}, Storage(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  /// Leading dimension; 1 for scalars and vectors.
  std::size_t rows() const { return rank() >= 2 ? shape_[0] : 1; }
  /// Product of the trailing dimensions (the vector length for rank 1).
  std::size_t cols() const {
    if (rank() == 0) return 1;
    if (rank() == 1) return shape_[0];
    return std::accumulate(shape_.begin() + 1, shape_.end(), std::size_t{1}, std::multiplies<>());
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  Storage& values() { return data_; }
  const Storage& values() const { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Scalar value of a single-element tensor.
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  MatrixMap mat() {
    return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }
  ConstMatrixMap mat() const {
    return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t element_count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  Shape shape_;
  Storage data_;
};

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  bool tracked() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the gradient flowing into a node and pushes it to the inputs
  /// through Tape::grad_sink.
  using BackwardFn = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, true, nullptr); }
  Var parameter(Tensor value) { return push(std::move(value), true, true, nullptr); }

  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool any_tracked = false;
    for (const Var& in : inputs) {
      if (in.tape_ != this) throw std::logic_error(std::string(op) + ": input from a different tape");
      any_tracked = any_tracked || nodes_[in.id_].tracked;
    }
    if (!value.all_finite()) throw NonFiniteError(std::string(op) + " produced a non-finite value");
    return push(std::move(value), any_tracked, false, any_tracked ? std::move(fn) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool tracked(std::size_t id) const { return nodes_.at(id).tracked; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator of node `id`, zero-initialised on first use;
  /// nullptr for untracked nodes.
  Tensor* grad_sink(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.tracked) return nullptr;
    if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
    return &n.grad;
  }

  /// Reverse sweep from a scalar loss. Intermediate gradients are released as
  /// soon as they have been propagated; leaf gradients stay readable.
  void backward(Var loss) {
    if (loss.tape_ != this) throw std::logic_error("backward: loss from a different tape");
    if (value(loss.id_).size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_string(value(loss.id_).shape()));
    }
    Tensor* seed = grad_sink(loss.id_);
    if (seed == nullptr) return;
    (*seed)[0] += 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.tracked || n.leaf || n.grad.size() == 0 || !n.backward) continue;
      Tensor g = std::move(n.grad);
      n.grad = Tensor();
      n.backward(*this, g);
      n.backward = nullptr;
    }
  }

  /// Gradient of a leaf after backward(); zeros when the loss does not depend on it.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id_);
    if (n.grad.shape() == n.value.shape() && n.grad.size() == n.value.size()) return n.grad;
    return Tensor(n.value.shape());
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool tracked = false;
    bool leaf = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool tracked, bool leaf, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor(Shape{0}), tracked, leaf, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::tracked() const { return tape_->tracked(id_); }

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw std::logic_error(std::string(op) + ": operands on different tapes");
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

/// True when `b` broadcasts as a row vector over the rows of `a`.
inline bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  return a.shape() != b.shape() && b.rows() == 1 && b.cols() == a.cols() && (b.rank() == 1 || b.rank() == 2) &&
         a.rank() == 2;
}

inline void accumulate_broadcast(Tensor& sink, const Tensor& g, bool broadcast, double sign) {
  if (broadcast) {
    sink.mat().row(0) += sign * g.mat().colwise().sum();
  } else {
    sink.mat() += sign * g.mat();
  }
}

}  // namespace detail

/// Standard matrix product [m×k]·[k×n].
inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor out = Tensor::zeros(av.rows(), bv.cols());
  out.mat().noalias() = av.mat() * bv.mat();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("matmul", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->mat().noalias() += g.mat() * t.value(ib).mat().transpose();
    if (Tensor* gb = t.grad_sink(ib)) gb->mat().noalias() += t.value(ia).mat().transpose() * g.mat();
  });
}

/// x·W + b with b a row vector broadcast over the rows of x.
inline Var affine(const Var& x, const Var& w, const Var& b) {
  detail::require_same_tape(x, w, "affine");
  detail::require_same_tape(x, b, "affine");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  detail::require_matrix(xv, "affine");
  detail::require_matrix(wv, "affine");
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ShapeError("affine: " + shape_string(xv.shape()) + " x " + shape_string(wv.shape()) + " + " +
                     shape_string(bv.shape()));
  }
  Tensor out = Tensor::zeros(xv.rows(), wv.cols());
  out.mat().noalias() = xv.mat() * wv.mat();
  out.mat().rowwise() += bv.mat().row(0);
  const std::size_t ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape()->record("affine", std::move(out), {x, w, b}, [ix, iw, ib](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(ix)) gx->mat().noalias() += g.mat() * t.value(iw).mat().transpose();
    if (Tensor* gw = t.grad_sink(iw)) gw->mat().noalias() += t.value(ix).mat().transpose() * g.mat();
    if (Tensor* gb = t.grad_sink(ib)) gb->mat().row(0) += g.mat().colwise().sum();
  });
}

namespace detail {

inline Var add_or_sub(const char* op, const Var& a, const Var& b, double sign) {
  require_same_tape(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = is_row_broadcast(av, bv);
  if (!broadcast && av.shape() != bv.shape()) {
    throw ShapeError(std::string(op) + ": " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  Tensor out = av;
  if (broadcast) {
    out.mat().rowwise() += sign * bv.mat().row(0);
  } else {
    out.mat() += sign * bv.mat();
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(op, std::move(out), {a, b}, [ia, ib, broadcast, sign](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->mat() += g.mat();
    if (Tensor* gb = t.grad_sink(ib)) accumulate_broadcast(*gb, g, broadcast, sign);
  });
}

}  // namespace detail

/// a + b; b may be a row vector broadcast over the rows of a.
inline Var add(const Var& a, const Var& b) { return detail::add_or_sub("add", a, b, 1.0); }

/// a − b; b may be a row vector broadcast over the rows of a.
inline Var sub(const Var& a, const Var& b) { return detail::add_or_sub("sub", a, b, -1.0); }

/// Hadamard product of equally shaped tensors.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) throw ShapeError("mul: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  Tensor out(av.shape());
  out.mat() = av.mat().cwiseProduct(bv.mat());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->mat() += g.mat().cwiseProduct(t.value(ib).mat());
    if (Tensor* gb = t.grad_sink(ib)) gb->mat() += g.mat().cwiseProduct(t.value(ia).mat());
  });
}

inline Var scale(const Var& a, double factor) {
  Tensor out(a.value().shape());
  out.mat() = factor * a.value().mat();
  const std::size_t ia = a.id();
  return a.tape()->record("scale", std::move(out), {a}, [ia, factor](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->mat() += factor * g.mat();
  });
}

/// max(x, 0); the subgradient at exactly 0 is 0.
inline Var relu(const Var& a) {
  Tensor out(a.value().shape());
  out.mat() = a.value().mat().cwiseMax(0.0);
  const std::size_t ia = a.id();
  return a.tape()->record("relu", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_sink(ia);
    if (!ga) return;
    const auto x = t.value(ia).data();
    const auto gv = g.data();
    auto dst = ga->data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) dst[i] += gv[i];
    }
  });
}

inline Var tanh(const Var& a) {
  Tensor out(a.value().shape());
  out.mat() = a.value().mat().array().tanh().matrix();
  const std::size_t ia = a.id();
  const std::size_t io = a.tape()->size();
  return a.tape()->record("tanh", std::move(out), {a}, [ia, io](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) {
      const auto y = t.value(io).mat().array();
      ga->mat().array() += g.mat().array() * (1.0 - y * y);
    }
  });
}

namespace detail {

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var sigmoid(const Var& a) {
  Tensor out(a.value().shape());
  const auto x = a.value().data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = detail::stable_sigmoid(x[i]);
  const std::size_t ia = a.id();
  return a.tape()->record("sigmoid", std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) {
      const auto x = t.value(ia).data();
      const auto gv = g.data();
      auto dst = ga->data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = detail::stable_sigmoid(x[i]);
        dst[i] += gv[i] * s * (1.0 - s);
      }
    }
  });
}

/// Row-wise concatenation [n×p] ∥ [n×q] → [n×(p+q)].
inline Var concat_rows(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "concat_rows");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "concat_rows");
  detail::require_matrix(bv, "concat_rows");
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat_rows: row counts " + std::to_string(av.rows()) + " vs " + std::to_string(bv.rows()));
  }
  const auto p = static_cast<Eigen::Index>(av.cols());
  const auto q = static_cast<Eigen::Index>(bv.cols());
  Tensor out = Tensor::zeros(av.rows(), av.cols() + bv.cols());
  out.mat().leftCols(p) = av.mat();
  out.mat().rightCols(q) = bv.mat();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("concat_rows", std::move(out), {a, b}, [ia, ib, p, q](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->mat() += g.mat().leftCols(p);
    if (Tensor* gb = t.grad_sink(ib)) gb->mat() += g.mat().rightCols(q);
  });
}

/// Columns [start, start+count) of a matrix.
inline Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "slice_cols");
  if (start + count > av.cols()) throw IndexError("slice_cols: columns out of range");
  Tensor out = Tensor::zeros(av.rows(), count);
  const auto s = static_cast<Eigen::Index>(start);
  const auto c = static_cast<Eigen::Index>(count);
  out.mat() = av.mat().middleCols(s, c);
  const std::size_t ia = a.id();
  return a.tape()->record("slice_cols", std::move(out), {a}, [ia, s, c](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->mat().middleCols(s, c) += g.mat();
  });
}

/// Row selection; repeated indices accumulate gradient in the source row.
inline Var gather_rows(const Var& x, std::span<const std::size_t> idx) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "gather_rows");
  const std::size_t n = xv.rows();
  for (std::size_t i : idx) {
    if (i >= n) throw IndexError("gather_rows: index " + std::to_string(i) + " out of range for " + std::to_string(n) + " rows");
  }
  Tensor out = Tensor::zeros(idx.size(), xv.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.mat().row(static_cast<Eigen::Index>(r)) = xv.mat().row(static_cast<Eigen::Index>(idx[r]));
  }
  std::vector<std::size_t> saved(idx.begin(), idx.end());
  const std::size_t ix = x.id();
  return x.tape()->record("gather_rows", std::move(out), {x}, [ix, saved = std::move(saved)](Tape& t, const Tensor& g) {
    if (Tensor* gx = t.grad_sink(ix)) {
      for (std::size_t r = 0; r < saved.size(); ++r) {
        gx->mat().row(static_cast<Eigen::Index>(saved[r])) += g.mat().row(static_cast<Eigen::Index>(r));
      }
    }
  });
}

enum class Reduce { sum, mean };

namespace detail {

inline std::vector<double> segment_scales(std::span<const std::size_t> ids, std::size_t n_segments, Reduce mode) {
  std::vector<double> scale(n_segments, 1.0);
  if (mode == Reduce::mean) {
    std::vector<std::size_t> count(n_segments, 0);
    for (std::size_t s : ids) ++count[s];
    for (std::size_t s = 0; s < n_segments; ++s) scale[s] = count[s] ? 1.0 / static_cast<double>(count[s]) : 0.0;
  }
  return scale;
}

inline void check_segments(std::span<const std::size_t> ids, std::size_t n_segments, const char* op) {
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= n_segments) throw IndexError(std::string(op) + ": segment id out of range");
    if (k > 0 && ids[k] < ids[k - 1]) throw std::invalid_argument(std::string(op) + ": segment ids must be non-decreasing");
  }
}

}  // namespace detail

/// Per-segment sum or mean of rows, in ascending row order. Empty segments
/// give zero rows (also in mean mode).
inline Var segment_reduce(const Var& x, std::span<const std::size_t> segment_ids, std::size_t n_segments, Reduce mode) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "segment_reduce");
  if (segment_ids.size() != xv.rows()) throw ShapeError("segment_reduce: one segment id per row required");
  detail::check_segments(segment_ids, n_segments, "segment_reduce");
  std::vector<double> scales = detail::segment_scales(segment_ids, n_segments, mode);
  Tensor out = Tensor::zeros(n_segments, xv.cols());
  for (std::size_t r = 0; r < segment_ids.size(); ++r) {
    out.mat().row(static_cast<Eigen::Index>(segment_ids[r])) += xv.mat().row(static_cast<Eigen::Index>(r));
  }
  for (std::size_t s = 0; s < n_segments; ++s) out.mat().row(static_cast<Eigen::Index>(s)) *= scales[s];
  std::vector<std::size_t> ids(segment_ids.begin(), segment_ids.end());
  const std::size_t ix = x.id();
  return x.tape()->record("segment_reduce", std::move(out), {x},
                          [ix, ids = std::move(ids), scales = std::move(scales)](Tape& t, const Tensor& g) {
                            if (Tensor* gx = t.grad_sink(ix)) {
                              for (std::size_t r = 0; r < ids.size(); ++r) {
                                gx->mat().row(static_cast<Eigen::Index>(r)) +=
                                    scales[ids[r]] * g.mat().row(static_cast<Eigen::Index>(ids[r]));
                              }
                            }
                          });
}

/// Fused gather_rows + segment_reduce: out[receivers[e]] ⊕= x[senders[e]].
/// Equivalent to segment_reduce(gather_rows(x, senders), receivers, n, mode)
/// without materialising the per-edge rows.
inline Var aggregate_neighbors(const Var& x, std::span<const std::size_t> senders,
                               std::span<const std::size_t> receivers, std::size_t n_nodes, Reduce mode) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "aggregate_neighbors");
  if (senders.size() != receivers.size()) throw ShapeError("aggregate_neighbors: sender/receiver length mismatch");
  detail::check_segments(receivers, n_nodes, "aggregate_neighbors");
  for (std::size_t s : senders) {
    if (s >= xv.rows()) throw IndexError("aggregate_neighbors: sender out of range");
  }
  std::vector<double> scales = detail::segment_scales(receivers, n_nodes, mode);
  Tensor out = Tensor::zeros(n_nodes, xv.cols());
  for (std::size_t e = 0; e < senders.size(); ++e) {
    out.mat().row(static_cast<Eigen::Index>(receivers[e])) += xv.mat().row(static_cast<Eigen::Index>(senders[e]));
  }
  for (std::size_t s = 0; s < n_nodes; ++s) out.mat().row(static_cast<Eigen::Index>(s)) *= scales[s];
  std::vector<std::size_t> snd(senders.begin(), senders.end());
  std::vector<std::size_t> rcv(receivers.begin(), receivers.end());
  const std::size_t ix = x.id();
  return x.tape()->record(
      "aggregate_neighbors", std::move(out), {x},
      [ix, snd = std::move(snd), rcv = std::move(rcv), scales = std::move(scales)](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_sink(ix)) {
          for (std::size_t e = 0; e < snd.size(); ++e) {
            gx->mat().row(static_cast<Eigen::Index>(snd[e])) +=
                scales[rcv[e]] * g.mat().row(static_cast<Eigen::Index>(rcv[e]));
          }
        }
      });
}

/// Euclidean norm of every row, [r×c] → [r×1]. Gradient at a zero row is 0.
inline Var row_norm(const Var& x) {
  const Tensor& xv = x.value();
  detail::require_matrix(xv, "row_norm");
  Tensor out = Tensor::zeros(xv.rows(), 1);
  out.mat().col(0) = xv.mat().rowwise().norm();
  const std::size_t ix = x.id();
  const std::size_t io = x.tape()->size();
  return x.tape()->record("row_norm", std::move(out), {x}, [ix, io](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_sink(ix);
    if (!gx) return;
    const auto& xv = t.value(ix);
    const auto& nv = t.value(io);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const double n = nv(r, 0);
      if (n > 0.0) {
        gx->mat().row(static_cast<Eigen::Index>(r)) +=
            (g(r, 0) / n) * xv.mat().row(static_cast<Eigen::Index>(r));
      }
    }
  });
}

inline Var sum(const Var& a) {
  const double s = a.value().mat().sum();
  const std::size_t ia = a.id();
  return a.tape()->record("sum", Tensor::scalar(s), {a}, [ia](Tape& t, const Tensor& g) {
    if (Tensor* ga = t.grad_sink(ia)) ga->mat().array() += g[0];
  });
}

inline Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  if (count == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / count);
}

/// mean((a − b)²) over all elements.
inline Var mse(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "mse");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape()) throw ShapeError("mse: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  const double count = static_cast<double>(av.size());
  const double value = (av.mat() - bv.mat()).squaredNorm() / count;
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("mse", Tensor::scalar(value), {a, b}, [ia, ib, count](Tape& t, const Tensor& g) {
    const double k = 2.0 * g[0] / count;
    Tensor* ga = t.grad_sink(ia);
    Tensor* gb = t.grad_sink(ib);
    if (!ga && !gb) return;
    RowMatrix diff = t.value(ia).mat() - t.value(ib).mat();
    if (ga) ga->mat() += k * diff;
    if (gb) gb->mat() -= k * diff;
  });
}

/// Mean binary cross-entropy between sigmoid(logits) and targets in [0,1],
/// evaluated in the numerically stable logit form.
inline Var bce_with_logits(const Var& logits, const Var& targets) {
  detail::require_same_tape(logits, targets, "bce_with_logits");
  const Tensor& x = logits.value();
  const Tensor& y = targets.value();
  if (x.shape() != y.shape()) throw ShapeError("bce_with_logits: shape mismatch");
  const double count = static_cast<double>(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += std::max(x[i], 0.0) - x[i] * y[i] + std::log1p(std::exp(-std::abs(x[i])));
  }
  const std::size_t ix = logits.id(), iy = targets.id();
  return logits.tape()->record("bce_with_logits", Tensor::scalar(total / count), {logits, targets},
                               [ix, iy, count](Tape& t, const Tensor& g) {
                                 Tensor* gx = t.grad_sink(ix);
                                 Tensor* gy = t.grad_sink(iy);
                                 const Tensor& x = t.value(ix);
                                 const Tensor& y = t.value(iy);
                                 for (std::size_t i = 0; i < x.size(); ++i) {
                                   if (gx) (*gx)[i] += g[0] * (detail::stable_sigmoid(x[i]) - y[i]) / count;
                                   if (gy) (*gy)[i] -= g[0] * x[i] / count;
                                 }
                               });
}

}  // namespace gnca
