#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gncde/types.hpp"

namespace gncde {

using Shape = std::vector<Index>;

Index shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct TensorNode {
  Shape shape;
  std::shared_ptr<Eigen::ArrayXd> values;  // flat, row-major
  bool requires_grad = false;              // gradient is deposited here
  std::uint64_t tracked_tape = 0;          // tape id that produced this node
  mutable std::unique_ptr<Eigen::ArrayXd> grad;  // lazily allocated
};

Tensor make_tensor(std::shared_ptr<TensorNode> node);

}  // namespace detail

/// N-dimensional 64-bit-float array with value semantics over shared
/// storage. Operations record themselves on the active Tape (if any) so a
/// later Tape::backward can fill gradients of requires_grad tensors.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_array(Shape shape, Eigen::ArrayXd data);
  /// Row-major copy of a 2-d Eigen matrix.
  static Tensor from_matrix(const Matrix& m);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index size() const { return node_->values->size(); }

  const Eigen::ArrayXd& array() const { return *node_->values; }
  /// In-place access for initialization and optimizer updates. Do not
  /// mutate tensors that a live tape has already consumed.
  Eigen::ArrayXd& mutable_array() { return *node_->values; }
  Matrix matrix() const;  // 2-d tensors only
  double value() const;   // single-element tensors only

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  const Eigen::ArrayXd& grad() const;  // zeros until backward deposits
  Eigen::ArrayXd& mutable_grad();
  void zero_grad();

  /// Deep copy of values; gradient state is not carried over.
  Tensor clone() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
  friend Tensor detail::make_tensor(std::shared_ptr<detail::TensorNode> node);
};

/// Per-backward gradient accumulator; keys are graph nodes, values flat
/// gradient buffers. Requires-grad nodes get their entry added into the
/// persistent .grad when the pass finishes.
class GradSink {
 public:
  explicit GradSink(std::uint64_t tape_id) : tape_id_(tape_id) {}
  void add(const std::shared_ptr<detail::TensorNode>& node, const Eigen::ArrayXd& g);
  void add(const std::shared_ptr<detail::TensorNode>& node, Eigen::ArrayXd&& g);

 private:
  friend class Tape;
  bool participates(const detail::TensorNode& node) const;
  std::uint64_t tape_id_;
  // Keys stay alive through the record list / closure captures of the tape.
  std::unordered_map<detail::TensorNode*, Eigen::ArrayXd> grads_;
};

/// Ordered record of executed operations. Backward replays it in exact
/// reverse. One tape per thread at a time (see TapeScope).
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Reverse-mode sweep from a scalar loss. Accumulates into the .grad of
  /// every requires_grad tensor reached; repeated calls keep accumulating.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }
  std::uint64_t id() const { return id_; }

  using BackwardFn = std::function<void(const Eigen::ArrayXd&, GradSink&)>;
  void record(std::shared_ptr<detail::TensorNode> out, BackwardFn fn);

 private:
  struct Record {
    std::shared_ptr<detail::TensorNode> out;
    BackwardFn fn;
  };
  std::vector<Record> records_;
  std::uint64_t id_;
};

/// RAII guard making `tape` the active tape on this thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

Tape* active_tape();

// ---- elementwise (same shapes, or one shape a trailing suffix of the
// ---- other; the smaller operand is broadcast over the leading dims) ------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor abs(const Tensor& a);  // subgradient 0 at 0

// ---- contraction ----------------------------------------------------------
/// Einstein-style contraction, e.g. contract("kzmh,mh->kz", g, dh). Each
/// index must appear in the output or in the other operand; no repeated
/// index within one operand. Differentiable in both arguments.
Tensor contract(const std::string& spec, const Tensor& a, const Tensor& b);

/// Fused affine map: y = x.W + b over the trailing axis of x.
/// x: (..., in), w: (in, out), b: (out).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// matmul convenience for 2-d operands.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- reductions & shape ops ------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);  // shares storage
Tensor slice(const Tensor& a, Index axis, Index start, Index len);
Tensor concat(std::span<const Tensor> parts, Index axis);
Tensor softmax(const Tensor& a, Index axis);
Tensor transpose(const Tensor& a);  // 2-d

/// sum_i coeff_i * t_i over same-shaped tensors (one tape record).
Tensor lincomb(std::span<const std::pair<double, Tensor>> terms);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

/// Named, ordered collection of trainable tensors. Iteration order is the
/// insertion order everywhere (optimizer, checkpoints, gradient clipping),
/// which keeps every reduction deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  Index total_size() const;
  void zero_grad();
  ParamStore clone() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

namespace detail {
/// Raw einsum on flat row-major buffers; shared by forward and backward.
void einsum_raw(const std::string& spec_a, const std::string& spec_b,
                const std::string& spec_out, const double* a, const Shape& a_shape,
                const double* b, const Shape& b_shape, double* out,
                const Shape& out_shape);
}  // namespace detail

}  // namespace gncde
