#include "gncde/tensor.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

namespace gncde {

namespace {

using detail::TensorNode;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatMap = Eigen::Map<RowMat>;
using ConstRowMatMap = Eigen::Map<const RowMat>;
using RowArr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowArrMap = Eigen::Map<RowArr>;
using ConstRowArrMap = Eigen::Map<const RowArr>;
using ConstVecArrMap = Eigen::Map<const Eigen::Array<double, 1, Eigen::Dynamic>>;

thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_tape_counter{0};

bool tracked(const TensorNode& node) {
  if (node.requires_grad) return true;
  return g_active_tape != nullptr && node.tracked_tape == g_active_tape->id();
}

std::shared_ptr<TensorNode> make_node(Shape shape, Eigen::ArrayXd data) {
  if (shape_size(shape) != data.size()) {
    throw ValidationError("tensor shape " + shape_str(shape) + " does not match a buffer of " +
                          std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::make_shared<Eigen::ArrayXd>(std::move(data));
  return node;
}

/// Registers `node` as the output of a differentiable op when a tape is
/// active and at least one input participates in it.
Tensor finish(std::shared_ptr<TensorNode> node, bool needs_record, Tape::BackwardFn fn) {
  if (needs_record && g_active_tape != nullptr) {
    node->tracked_tape = g_active_tape->id();
    g_active_tape->record(node, std::move(fn));
  }
  return detail::make_tensor(std::move(node));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Eigen::ArrayXd reduce_to_suffix(const Eigen::ArrayXd& g, Index rows, Index cols) {
  ConstRowArrMap m(g.data(), rows, cols);
  Eigen::ArrayXd out(cols);
  Eigen::Map<Eigen::Array<double, 1, Eigen::Dynamic>>(out.data(), cols) = m.colwise().sum();
  return out;
}

/// Copies src (row-major, dims src_shape) into dst laid out with axis order
/// perm, i.e. dst axis i runs over src axis perm[i].
void permute_copy(const double* src, const Shape& src_shape, const std::vector<int>& perm,
                  double* dst) {
  const int rank = static_cast<int>(perm.size());
  Shape dst_shape(rank);
  std::vector<Index> src_stride(rank, 1);
  for (int i = rank - 2; i >= 0; --i) src_stride[i] = src_stride[i + 1] * src_shape[i + 1];
  std::vector<Index> step(rank);
  Index total = 1;
  for (int i = 0; i < rank; ++i) {
    dst_shape[i] = src_shape[perm[i]];
    step[i] = src_stride[perm[i]];
    total *= dst_shape[i];
  }
  std::vector<Index> idx(rank, 0);
  Index offset = 0;
  for (Index t = 0; t < total; ++t) {
    dst[t] = src[offset];
    for (int ax = rank - 1; ax >= 0; --ax) {
      ++idx[ax];
      offset += step[ax];
      if (idx[ax] < dst_shape[ax]) break;
      offset -= step[ax] * dst_shape[ax];
      idx[ax] = 0;
    }
  }
}

bool contains_char(const std::string& s, char c) { return s.find(c) != std::string::npos; }

const double* reorder_operand(const double* data, const Shape& shape, const std::string& from,
                              const std::string& to, std::vector<double>& buf) {
  if (from == to) return data;
  std::vector<int> perm(to.size());
  for (std::size_t i = 0; i < to.size(); ++i) perm[i] = static_cast<int>(from.find(to[i]));
  buf.resize(static_cast<std::size_t>(shape_size(shape)));
  permute_copy(data, shape, perm, buf.data());
  return buf.data();
}

struct AxisSplit {
  Index outer = 1;
  Index n = 1;
  Index inner = 1;
};

AxisSplit split_at_axis(const Shape& shape, Index axis) {
  AxisSplit s;
  s.n = shape[axis];
  for (Index i = 0; i < axis; ++i) s.outer *= shape[i];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ValidationError("tensor dimensions must be non-negative");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

namespace detail {
Tensor make_tensor(std::shared_ptr<TensorNode> node) { return Tensor(std::move(node)); }
}  // namespace detail

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  Index n = shape_size(shape);
  return detail::make_tensor(make_node(std::move(shape), Eigen::ArrayXd::Zero(n)));
}

Tensor Tensor::full(Shape shape, double value) {
  Index n = shape_size(shape);
  return detail::make_tensor(make_node(std::move(shape), Eigen::ArrayXd::Constant(n, value)));
}

Tensor Tensor::scalar(double value) { return full({}, value); }

Tensor Tensor::from_array(Shape shape, Eigen::ArrayXd data) {
  return detail::make_tensor(make_node(std::move(shape), std::move(data)));
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Eigen::ArrayXd flat(m.size());
  RowMatMap(flat.data(), m.rows(), m.cols()) = m;
  return from_array({m.rows(), m.cols()}, std::move(flat));
}

Matrix Tensor::matrix() const {
  if (rank() != 2) {
    throw ValidationError("matrix() needs a 2-d tensor, got shape " + shape_str(shape()));
  }
  return ConstRowMatMap(node_->values->data(), shape()[0], shape()[1]);
}

double Tensor::value() const {
  if (size() != 1) {
    throw ValidationError("value() needs a single-element tensor, got shape " +
                          shape_str(shape()));
  }
  return (*node_->values)(0);
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

const Eigen::ArrayXd& Tensor::grad() const {
  if (!node_->grad) node_->grad = std::make_unique<Eigen::ArrayXd>(Eigen::ArrayXd::Zero(size()));
  return *node_->grad;
}

Eigen::ArrayXd& Tensor::mutable_grad() {
  if (!node_->grad) node_->grad = std::make_unique<Eigen::ArrayXd>(Eigen::ArrayXd::Zero(size()));
  return *node_->grad;
}

void Tensor::zero_grad() {
  if (node_->grad) node_->grad->setZero();
}

Tensor Tensor::clone() const {
  Tensor copy = from_array(shape(), *node_->values);
  copy.node_->requires_grad = node_->requires_grad;
  return copy;
}

// ---- tape -------------------------------------------------------------------

Tape::Tape() : id_(++g_tape_counter) {}

void Tape::record(std::shared_ptr<TensorNode> out, BackwardFn fn) {
  records_.push_back({std::move(out), std::move(fn)});
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

bool GradSink::participates(const detail::TensorNode& node) const {
  return node.requires_grad || node.tracked_tape == tape_id_;
}

void GradSink::add(const std::shared_ptr<detail::TensorNode>& node, const Eigen::ArrayXd& g) {
  if (!participates(*node)) return;
  auto [it, inserted] = grads_.try_emplace(node.get());
  if (inserted) {
    it->second = g;
  } else {
    it->second += g;
  }
}

void GradSink::add(const std::shared_ptr<detail::TensorNode>& node, Eigen::ArrayXd&& g) {
  if (!participates(*node)) return;
  auto [it, inserted] = grads_.try_emplace(node.get());
  if (inserted) {
    it->second = std::move(g);
  } else {
    it->second += g;
  }
}

namespace {
void deposit(TensorNode* node, const Eigen::ArrayXd& g) {
  if (!node->grad) {
    node->grad = std::make_unique<Eigen::ArrayXd>(g);
  } else {
    *node->grad += g;
  }
}
}  // namespace

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ValidationError("backward expects a single-element loss tensor");
  }
  GradSink sink(id_);
  sink.add(loss.node(), Eigen::ArrayXd::Ones(1));
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    auto found = sink.grads_.find(it->out.get());
    if (found == sink.grads_.end()) continue;
    Eigen::ArrayXd g = std::move(found->second);
    sink.grads_.erase(found);
    if (it->out->requires_grad) deposit(it->out.get(), g);
    it->fn(g, sink);
  }
  for (auto& [node, g] : sink.grads_) {
    if (node->requires_grad) deposit(node, g);
  }
}

// ---- elementwise ops ----------------------------------------------------------

namespace {

enum class PairKind { Same, BroadcastB, BroadcastA };

PairKind classify_pair(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return PairKind::Same;
  if (is_suffix(b, a)) return PairKind::BroadcastB;
  if (is_suffix(a, b)) return PairKind::BroadcastA;
  throw ValidationError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                        " are not broadcast-compatible");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  PairKind kind = classify_pair("add", a.shape(), b.shape());
  const Tensor& big = kind == PairKind::BroadcastA ? b : a;
  Eigen::ArrayXd out;
  if (kind == PairKind::Same) {
    out = a.array() + b.array();
  } else {
    const Tensor& lo = kind == PairKind::BroadcastB ? b : a;
    out = big.array();
    const Index cols = lo.size();
    const Index rows = big.size() / std::max<Index>(cols, 1);
    RowArrMap(out.data(), rows, cols).rowwise() += ConstVecArrMap(lo.array().data(), cols);
  }
  auto an = a.node();
  auto bn = b.node();
  bool need = tracked(*an) || tracked(*bn);
  auto node = make_node(big.shape(), std::move(out));
  return finish(std::move(node), need, [an, bn, kind](const Eigen::ArrayXd& g, GradSink& sink) {
    auto pass = [&](const std::shared_ptr<TensorNode>& n, bool is_small) {
      if (!is_small) {
        sink.add(n, g);
      } else {
        const Index cols = n->values->size();
        sink.add(n, reduce_to_suffix(g, g.size() / std::max<Index>(cols, 1), cols));
      }
    };
    pass(an, kind == PairKind::BroadcastA);
    pass(bn, kind == PairKind::BroadcastB);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  PairKind kind = classify_pair("sub", a.shape(), b.shape());
  Eigen::ArrayXd out;
  Shape out_shape = kind == PairKind::BroadcastA ? b.shape() : a.shape();
  if (kind == PairKind::Same) {
    out = a.array() - b.array();
  } else if (kind == PairKind::BroadcastB) {
    out = a.array();
    const Index cols = b.size();
    RowArrMap(out.data(), a.size() / std::max<Index>(cols, 1), cols).rowwise() -=
        ConstVecArrMap(b.array().data(), cols);
  } else {
    out = -b.array();
    const Index cols = a.size();
    RowArrMap(out.data(), b.size() / std::max<Index>(cols, 1), cols).rowwise() +=
        ConstVecArrMap(a.array().data(), cols);
  }
  auto an = a.node();
  auto bn = b.node();
  bool need = tracked(*an) || tracked(*bn);
  auto node = make_node(std::move(out_shape), std::move(out));
  return finish(std::move(node), need, [an, bn, kind](const Eigen::ArrayXd& g, GradSink& sink) {
    if (kind == PairKind::BroadcastA) {
      const Index cols = an->values->size();
      sink.add(an, reduce_to_suffix(g, g.size() / std::max<Index>(cols, 1), cols));
    } else {
      sink.add(an, g);
    }
    if (kind == PairKind::BroadcastB) {
      const Index cols = bn->values->size();
      sink.add(bn, Eigen::ArrayXd(-reduce_to_suffix(g, g.size() / std::max<Index>(cols, 1), cols)));
    } else {
      sink.add(bn, Eigen::ArrayXd(-g));
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  PairKind kind = classify_pair("mul", a.shape(), b.shape());
  const Tensor& big = kind == PairKind::BroadcastA ? b : a;
  const Tensor& lo = kind == PairKind::BroadcastA ? a : b;
  Eigen::ArrayXd out;
  if (kind == PairKind::Same) {
    out = a.array() * b.array();
  } else {
    out = big.array();
    const Index cols = lo.size();
    RowArrMap(out.data(), big.size() / std::max<Index>(cols, 1), cols).rowwise() *=
        ConstVecArrMap(lo.array().data(), cols);
  }
  auto an = a.node();
  auto bn = b.node();
  bool need = tracked(*an) || tracked(*bn);
  auto node = make_node(big.shape(), std::move(out));
  return finish(std::move(node), need, [an, bn, kind](const Eigen::ArrayXd& g, GradSink& sink) {
    auto* big_n = kind == PairKind::BroadcastA ? bn.get() : an.get();
    auto* lo_n = kind == PairKind::BroadcastA ? an.get() : bn.get();
    if (kind == PairKind::Same) {
      sink.add(an, Eigen::ArrayXd(g * *bn->values));
      sink.add(bn, Eigen::ArrayXd(g * *an->values));
      return;
    }
    const Index cols = lo_n->values->size();
    const Index rows = g.size() / std::max<Index>(cols, 1);
    // d/d(big): g scaled rowwise by the small operand.
    Eigen::ArrayXd gbig = g;
    RowArrMap(gbig.data(), rows, cols).rowwise() *= ConstVecArrMap(lo_n->values->data(), cols);
    // d/d(small): columnwise sum of g * big.
    Eigen::ArrayXd gsmall = reduce_to_suffix(Eigen::ArrayXd(g * *big_n->values), rows, cols);
    if (kind == PairKind::BroadcastA) {
      sink.add(an, std::move(gsmall));
      sink.add(bn, std::move(gbig));
    } else {
      sink.add(an, std::move(gbig));
      sink.add(bn, std::move(gsmall));
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  auto an = a.node();
  bool need = tracked(*an);
  auto node = make_node(a.shape(), Eigen::ArrayXd(c * a.array()));
  return finish(std::move(node), need, [an, c](const Eigen::ArrayXd& g, GradSink& sink) {
    sink.add(an, Eigen::ArrayXd(c * g));
  });
}

Tensor relu(const Tensor& a) {
  auto an = a.node();
  bool need = tracked(*an);
  auto node = make_node(a.shape(), Eigen::ArrayXd(a.array().max(0.0)));
  return finish(std::move(node), need, [an](const Eigen::ArrayXd& g, GradSink& sink) {
    sink.add(an, Eigen::ArrayXd(g * (*an->values > 0.0).cast<double>()));
  });
}

Tensor tanh(const Tensor& a) {
  auto an = a.node();
  bool need = tracked(*an);
  auto node = make_node(a.shape(), Eigen::ArrayXd(a.array().tanh()));
  auto out_values = node->values;
  return finish(std::move(node), need, [an, out_values](const Eigen::ArrayXd& g, GradSink& sink) {
    sink.add(an, Eigen::ArrayXd(g * (1.0 - out_values->square())));
  });
}

Tensor abs(const Tensor& a) {
  auto an = a.node();
  bool need = tracked(*an);
  auto node = make_node(a.shape(), Eigen::ArrayXd(a.array().abs()));
  return finish(std::move(node), need, [an](const Eigen::ArrayXd& g, GradSink& sink) {
    sink.add(an, Eigen::ArrayXd(g * an->values->sign()));
  });
}

// ---- contraction ---------------------------------------------------------------

namespace detail {

void einsum_raw(const std::string& spec_a, const std::string& spec_b, const std::string& spec_out,
                const double* a, const Shape& a_shape, const double* b, const Shape& b_shape,
                double* out, const Shape& out_shape) {
  std::array<Index, 128> dim{};
  for (std::size_t i = 0; i < spec_a.size(); ++i) dim[static_cast<unsigned char>(spec_a[i])] = a_shape[i];
  for (std::size_t i = 0; i < spec_b.size(); ++i) dim[static_cast<unsigned char>(spec_b[i])] = b_shape[i];

  std::string batch, free_a, free_b, contracted;
  for (char c : spec_out) {
    const bool in_a = contains_char(spec_a, c);
    const bool in_b = contains_char(spec_b, c);
    if (in_a && in_b) {
      batch += c;
    } else if (in_a) {
      free_a += c;
    } else {
      free_b += c;
    }
  }
  for (char c : spec_a) {
    if (contains_char(spec_b, c) && !contains_char(spec_out, c)) contracted += c;
  }
  auto extent = [&dim](const std::string& labels) {
    Index p = 1;
    for (char c : labels) p *= dim[static_cast<unsigned char>(c)];
    return p;
  };
  const Index n_batch = extent(batch);
  const Index n_fa = extent(free_a);
  const Index n_k = extent(contracted);
  const Index n_fb = extent(free_b);

  std::vector<double> a_buf, b_buf, nat_buf;
  const double* pa = reorder_operand(a, a_shape, spec_a, batch + free_a + contracted, a_buf);
  const double* pb = reorder_operand(b, b_shape, spec_b, batch + contracted + free_b, b_buf);
  const std::string natural = batch + free_a + free_b;
  double* pc = out;
  if (natural != spec_out) {
    nat_buf.resize(static_cast<std::size_t>(n_batch * n_fa * n_fb));
    pc = nat_buf.data();
  }

  const bool use_gemm = n_fa * n_k * n_fb >= 4096;
  for (Index bi = 0; bi < n_batch; ++bi) {
    const double* ba = pa + bi * n_fa * n_k;
    const double* bb = pb + bi * n_k * n_fb;
    double* bc = pc + bi * n_fa * n_fb;
    if (use_gemm) {
      RowMatMap(bc, n_fa, n_fb).noalias() =
          ConstRowMatMap(ba, n_fa, n_k) * ConstRowMatMap(bb, n_k, n_fb);
    } else if (n_fb == 1) {
      for (Index i = 0; i < n_fa; ++i) {
        const double* row = ba + i * n_k;
        double acc = 0.0;
        for (Index k = 0; k < n_k; ++k) acc += row[k] * bb[k];
        bc[i] = acc;
      }
    } else {
      for (Index i = 0; i < n_fa; ++i) {
        double* crow = bc + i * n_fb;
        std::fill(crow, crow + n_fb, 0.0);
        const double* arow = ba + i * n_k;
        for (Index k = 0; k < n_k; ++k) {
          const double av = arow[k];
          const double* brow = bb + k * n_fb;
          for (Index j = 0; j < n_fb; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }

  if (natural != spec_out) {
    Shape nat_shape;
    for (char c : natural) nat_shape.push_back(dim[static_cast<unsigned char>(c)]);
    std::vector<int> perm(spec_out.size());
    for (std::size_t i = 0; i < spec_out.size(); ++i) {
      perm[i] = static_cast<int>(natural.find(spec_out[i]));
    }
    (void)out_shape;
    permute_copy(pc, nat_shape, perm, out);
  }
}

}  // namespace detail

namespace {

struct EinsumSpec {
  std::string a;
  std::string b;
  std::string out;
};

EinsumSpec parse_contract_spec(const std::string& spec) {
  const auto comma = spec.find(',');
  const auto arrow = spec.find("->");
  if (comma == std::string::npos || arrow == std::string::npos || comma > arrow) {
    throw ValidationError("contract spec must look like \"ab,bc->ac\", got '" + spec + "'");
  }
  EinsumSpec parts{spec.substr(0, comma), spec.substr(comma + 1, arrow - comma - 1),
                   spec.substr(arrow + 2)};
  auto check = [&spec](const std::string& labels, const char* role) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!std::isalpha(static_cast<unsigned char>(labels[i]))) {
        throw ValidationError("contract '" + spec + "': indices must be letters");
      }
      if (labels.find(labels[i], i + 1) != std::string::npos) {
        throw ValidationError("contract '" + spec + "': index '" + labels[i] +
                              "' repeats within the " + role + " operand");
      }
    }
  };
  check(parts.a, "first");
  check(parts.b, "second");
  check(parts.out, "output");
  for (char c : parts.out) {
    if (!contains_char(parts.a, c) && !contains_char(parts.b, c)) {
      throw ValidationError("contract '" + spec + "': output index '" + std::string(1, c) +
                            "' does not appear in any operand");
    }
  }
  for (char c : parts.a) {
    if (!contains_char(parts.out, c) && !contains_char(parts.b, c)) {
      throw ValidationError("contract '" + spec + "': index '" + std::string(1, c) +
                            "' of the first operand is neither contracted nor kept");
    }
  }
  for (char c : parts.b) {
    if (!contains_char(parts.out, c) && !contains_char(parts.a, c)) {
      throw ValidationError("contract '" + spec + "': index '" + std::string(1, c) +
                            "' of the second operand is neither contracted nor kept");
    }
  }
  return parts;
}

}  // namespace

Tensor contract(const std::string& spec, const Tensor& a, const Tensor& b) {
  EinsumSpec parts = parse_contract_spec(spec);
  if (static_cast<Index>(parts.a.size()) != a.rank() ||
      static_cast<Index>(parts.b.size()) != b.rank()) {
    throw ValidationError("contract '" + spec + "': operand shapes " + shape_str(a.shape()) +
                          " and " + shape_str(b.shape()) + " do not match the index lists");
  }
  std::array<Index, 128> dim{};
  std::array<bool, 128> seen{};
  auto bind = [&](const std::string& labels, const Shape& shape) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto c = static_cast<unsigned char>(labels[i]);
      if (seen[c] && dim[c] != shape[i]) {
        throw ValidationError("contract '" + spec + "': index '" + std::string(1, labels[i]) +
                              "' has size " + std::to_string(dim[c]) + " in one operand and " +
                              std::to_string(shape[i]) + " in the other");
      }
      seen[c] = true;
      dim[c] = shape[i];
    }
  };
  bind(parts.a, a.shape());
  bind(parts.b, b.shape());

  Shape out_shape;
  for (char c : parts.out) out_shape.push_back(dim[static_cast<unsigned char>(c)]);
  Eigen::ArrayXd out(shape_size(out_shape));
  detail::einsum_raw(parts.a, parts.b, parts.out, a.array().data(), a.shape(), b.array().data(),
                     b.shape(), out.data(), out_shape);

  auto an = a.node();
  auto bn = b.node();
  const bool need_a = tracked(*an);
  const bool need_b = tracked(*bn);
  auto node = make_node(out_shape, std::move(out));
  return finish(std::move(node), need_a || need_b,
                [an, bn, parts, out_shape, need_a, need_b](const Eigen::ArrayXd& g, GradSink& sink) {
                  if (need_a) {
                    Eigen::ArrayXd ga(an->values->size());
                    detail::einsum_raw(parts.out, parts.b, parts.a, g.data(), out_shape,
                                       bn->values->data(), bn->shape, ga.data(), an->shape);
                    sink.add(an, std::move(ga));
                  }
                  if (need_b) {
                    Eigen::ArrayXd gb(bn->values->size());
                    detail::einsum_raw(parts.a, parts.out, parts.b, an->values->data(), an->shape,
                                       g.data(), out_shape, gb.data(), bn->shape);
                    sink.add(bn, std::move(gb));
                  }
                });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ValidationError("matmul needs 2-d operands, got " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  }
  return contract("ij,jk->ik", a, b);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) {
    throw ValidationError("linear: weight must be 2-d, got " + shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.shape()[0] != w.shape()[1]) {
    throw ValidationError("linear: bias shape " + shape_str(b.shape()) +
                          " does not match weight " + shape_str(w.shape()));
  }
  if (x.rank() < 1 || x.shape().back() != w.shape()[0]) {
    throw ValidationError("linear: input shape " + shape_str(x.shape()) +
                          " does not end with the weight input size " +
                          std::to_string(w.shape()[0]));
  }
  const Index in_dim = w.shape()[0];
  const Index out_dim = w.shape()[1];
  const Index rows = x.size() / in_dim;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;

  Eigen::ArrayXd out(rows * out_dim);
  {
    RowMatMap y(out.data(), rows, out_dim);
    y.noalias() = ConstRowMatMap(x.array().data(), rows, in_dim) *
                  ConstRowMatMap(w.array().data(), in_dim, out_dim);
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.array().data(), out_dim);
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  const bool need_x = tracked(*xn);
  const bool need_w = tracked(*wn);
  const bool need_b = tracked(*bn);
  auto node = make_node(std::move(out_shape), std::move(out));
  return finish(std::move(node), need_x || need_w || need_b,
                [xn, wn, bn, rows, in_dim, out_dim, need_x, need_w,
                 need_b](const Eigen::ArrayXd& g, GradSink& sink) {
                  ConstRowMatMap gy(g.data(), rows, out_dim);
                  if (need_x) {
                    Eigen::ArrayXd gx(rows * in_dim);
                    RowMatMap(gx.data(), rows, in_dim).noalias() =
                        gy * ConstRowMatMap(wn->values->data(), in_dim, out_dim).transpose();
                    sink.add(xn, std::move(gx));
                  }
                  if (need_w) {
                    Eigen::ArrayXd gw(in_dim * out_dim);
                    RowMatMap(gw.data(), in_dim, out_dim).noalias() =
                        ConstRowMatMap(xn->values->data(), rows, in_dim).transpose() * gy;
                    sink.add(wn, std::move(gw));
                  }
                  if (need_b) {
                    Eigen::ArrayXd gb(out_dim);
                    Eigen::Map<Eigen::RowVectorXd>(gb.data(), out_dim) = gy.colwise().sum();
                    sink.add(bn, std::move(gb));
                  }
                });
}

// ---- reductions & shape ops ------------------------------------------------------

Tensor sum(const Tensor& a) {
  auto an = a.node();
  bool need = tracked(*an);
  Eigen::ArrayXd out(1);
  out(0) = a.array().sum();
  auto node = make_node({}, std::move(out));
  return finish(std::move(node), need, [an](const Eigen::ArrayXd& g, GradSink& sink) {
    sink.add(an, Eigen::ArrayXd(Eigen::ArrayXd::Constant(an->values->size(), g(0))));
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ValidationError("mean of an empty tensor is undefined");
  auto an = a.node();
  bool need = tracked(*an);
  const double inv = 1.0 / static_cast<double>(a.size());
  Eigen::ArrayXd out(1);
  out(0) = a.array().mean();
  auto node = make_node({}, std::move(out));
  return finish(std::move(node), need, [an, inv](const Eigen::ArrayXd& g, GradSink& sink) {
    sink.add(an, Eigen::ArrayXd(Eigen::ArrayXd::Constant(an->values->size(), g(0) * inv)));
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ValidationError("reshape from " + shape_str(a.shape()) + " to " + shape_str(shape) +
                          " changes the element count");
  }
  auto an = a.node();
  bool need = tracked(*an);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = an->values;  // storage is shared; only the shape changes
  return finish(std::move(node), need, [an](const Eigen::ArrayXd& g, GradSink& sink) {
    sink.add(an, g);
  });
}

Tensor slice(const Tensor& a, Index axis, Index start, Index len) {
  if (axis < 0 || axis >= a.rank()) {
    throw ValidationError("slice axis " + std::to_string(axis) + " is out of range for shape " +
                          shape_str(a.shape()));
  }
  if (len < 1 || start < 0 || start + len > a.shape()[axis]) {
    throw ValidationError("slice [" + std::to_string(start) + ", " + std::to_string(start + len) +
                          ") is out of range for axis " + std::to_string(axis) + " of shape " +
                          shape_str(a.shape()));
  }
  const AxisSplit ax = split_at_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  Eigen::ArrayXd out(shape_size(out_shape));
  const double* src = a.array().data();
  for (Index o = 0; o < ax.outer; ++o) {
    std::copy_n(src + (o * ax.n + start) * ax.inner, len * ax.inner,
                out.data() + o * len * ax.inner);
  }
  auto an = a.node();
  bool need = tracked(*an);
  auto node = make_node(std::move(out_shape), std::move(out));
  return finish(std::move(node), need,
                [an, ax, start, len](const Eigen::ArrayXd& g, GradSink& sink) {
                  Eigen::ArrayXd ga = Eigen::ArrayXd::Zero(an->values->size());
                  for (Index o = 0; o < ax.outer; ++o) {
                    Eigen::Map<Eigen::ArrayXd>(ga.data() + (o * ax.n + start) * ax.inner,
                                               len * ax.inner) +=
                        Eigen::Map<const Eigen::ArrayXd>(g.data() + o * len * ax.inner,
                                                         len * ax.inner);
                  }
                  sink.add(an, std::move(ga));
                });
}

Tensor concat(std::span<const Tensor> parts, Index axis) {
  if (parts.empty()) throw ValidationError("concat needs at least one tensor");
  const Index rank = parts[0].rank();
  if (axis < 0 || axis >= rank) {
    throw ValidationError("concat axis " + std::to_string(axis) + " is out of range for shape " +
                          shape_str(parts[0].shape()));
  }
  Shape out_shape = parts[0].shape();
  Index total_axis = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) {
      throw ValidationError("concat: ranks differ (" + shape_str(parts[0].shape()) + " vs " +
                            shape_str(p.shape()) + ")");
    }
    for (Index d = 0; d < rank; ++d) {
      if (d != axis && p.shape()[d] != out_shape[d]) {
        throw ValidationError("concat: shapes " + shape_str(parts[0].shape()) + " and " +
                              shape_str(p.shape()) + " differ off the concat axis");
      }
    }
    total_axis += p.shape()[axis];
  }
  out_shape[axis] = total_axis;

  const AxisSplit out_ax = split_at_axis(out_shape, axis);
  Eigen::ArrayXd out(shape_size(out_shape));
  std::vector<std::shared_ptr<TensorNode>> nodes;
  std::vector<Index> widths;
  bool need = false;
  Index at = 0;
  for (const Tensor& p : parts) {
    const Index w = p.shape()[axis];
    const double* src = p.array().data();
    for (Index o = 0; o < out_ax.outer; ++o) {
      std::copy_n(src + o * w * out_ax.inner, w * out_ax.inner,
                  out.data() + (o * out_ax.n + at) * out_ax.inner);
    }
    at += w;
    nodes.push_back(p.node());
    widths.push_back(w);
    need = need || tracked(*p.node());
  }
  auto node = make_node(std::move(out_shape), std::move(out));
  return finish(std::move(node), need,
                [nodes, widths, out_ax](const Eigen::ArrayXd& g, GradSink& sink) {
                  Index at = 0;
                  for (std::size_t i = 0; i < nodes.size(); ++i) {
                    const Index w = widths[i];
                    Eigen::ArrayXd gp(out_ax.outer * w * out_ax.inner);
                    for (Index o = 0; o < out_ax.outer; ++o) {
                      std::copy_n(g.data() + (o * out_ax.n + at) * out_ax.inner, w * out_ax.inner,
                                  gp.data() + o * w * out_ax.inner);
                    }
                    sink.add(nodes[i], std::move(gp));
                    at += w;
                  }
                });
}

Tensor softmax(const Tensor& a, Index axis) {
  if (axis < 0 || axis >= a.rank()) {
    throw ValidationError("softmax axis " + std::to_string(axis) + " is out of range for shape " +
                          shape_str(a.shape()));
  }
  const AxisSplit ax = split_at_axis(a.shape(), axis);
  Eigen::ArrayXd out(a.size());
  const double* src = a.array().data();
  for (Index o = 0; o < ax.outer; ++o) {
    for (Index i = 0; i < ax.inner; ++i) {
      const Index base = o * ax.n * ax.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < ax.n; ++k) mx = std::max(mx, src[base + k * ax.inner]);
      double total = 0.0;
      for (Index k = 0; k < ax.n; ++k) {
        const double e = std::exp(src[base + k * ax.inner] - mx);
        out(base + k * ax.inner) = e;
        total += e;
      }
      for (Index k = 0; k < ax.n; ++k) out(base + k * ax.inner) /= total;
    }
  }
  auto an = a.node();
  bool need = tracked(*an);
  auto node = make_node(a.shape(), std::move(out));
  auto out_values = node->values;
  return finish(std::move(node), need,
                [an, ax, out_values](const Eigen::ArrayXd& g, GradSink& sink) {
                  Eigen::ArrayXd ga(g.size());
                  const Eigen::ArrayXd& y = *out_values;
                  for (Index o = 0; o < ax.outer; ++o) {
                    for (Index i = 0; i < ax.inner; ++i) {
                      const Index base = o * ax.n * ax.inner + i;
                      double dot = 0.0;
                      for (Index k = 0; k < ax.n; ++k) {
                        const Index at = base + k * ax.inner;
                        dot += g(at) * y(at);
                      }
                      for (Index k = 0; k < ax.n; ++k) {
                        const Index at = base + k * ax.inner;
                        ga(at) = y(at) * (g(at) - dot);
                      }
                    }
                  }
                  sink.add(an, std::move(ga));
                });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw ValidationError("transpose needs a 2-d tensor, got " + shape_str(a.shape()));
  }
  const Index r = a.shape()[0];
  const Index c = a.shape()[1];
  Eigen::ArrayXd out(a.size());
  RowMatMap(out.data(), c, r) = ConstRowMatMap(a.array().data(), r, c).transpose();
  auto an = a.node();
  bool need = tracked(*an);
  auto node = make_node({c, r}, std::move(out));
  return finish(std::move(node), need, [an, r, c](const Eigen::ArrayXd& g, GradSink& sink) {
    Eigen::ArrayXd ga(g.size());
    RowMatMap(ga.data(), r, c) = ConstRowMatMap(g.data(), c, r).transpose();
    sink.add(an, std::move(ga));
  });
}

Tensor lincomb(std::span<const std::pair<double, Tensor>> terms) {
  if (terms.empty()) throw ValidationError("lincomb needs at least one term");
  const Shape& shape = terms[0].second.shape();
  Eigen::ArrayXd out = terms[0].first * terms[0].second.array();
  bool need = tracked(*terms[0].second.node());
  std::vector<std::pair<double, std::shared_ptr<TensorNode>>> captured;
  captured.emplace_back(terms[0].first, terms[0].second.node());
  for (std::size_t i = 1; i < terms.size(); ++i) {
    if (terms[i].second.shape() != shape) {
      throw ValidationError("lincomb: shapes " + shape_str(shape) + " and " +
                            shape_str(terms[i].second.shape()) + " differ");
    }
    out += terms[i].first * terms[i].second.array();
    need = need || tracked(*terms[i].second.node());
    captured.emplace_back(terms[i].first, terms[i].second.node());
  }
  auto node = make_node(shape, std::move(out));
  return finish(std::move(node), need, [captured](const Eigen::ArrayXd& g, GradSink& sink) {
    for (const auto& [coeff, n] : captured) sink.add(n, Eigen::ArrayXd(coeff * g));
  });
}

// ---- ParamStore -------------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ValidationError("parameter '" + name + "' is already registered");
  t.set_requires_grad(true);
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
  for (auto& [key, value] : items_) {
    if (key == name) return value;
  }
  throw ValidationError("unknown parameter '" + name + "'");
}

const Tensor& ParamStore::at(const std::string& name) const {
  for (const auto& [key, value] : items_) {
    if (key == name) return value;
  }
  throw ValidationError("unknown parameter '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [key, value] : items_) {
    if (key == name) return true;
  }
  return false;
}

Index ParamStore::total_size() const {
  Index n = 0;
  for (const auto& [key, value] : items_) n += value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [key, value] : items_) value.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore copy;
  for (const auto& [key, value] : items_) copy.items_.emplace_back(key, value.clone());
  return copy;
}

}  // namespace gncde
