#pragma once

// Tape-based reverse-mode differentiation over dense matrices. Every
// learnable operation in the library is expressed through these primitives
// so analytic gradients are available for all parameters and inputs.
//
// A Tape owns the nodes of one forward computation; Var is a cheap handle
// into it. Nodes created later only reference earlier nodes, so running
// the stored backward closures in reverse creation order is a valid
// reverse topological sweep.

#include <array>
#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fgrr/matrix.hpp"

namespace fgrr::ag {

using fgrr::Matrix;

// A named, trainable tensor with SGD momentum state. Lives outside the
// tape; a tape binds to it for one forward/backward pass.
struct Param {
  std::string name;
  Matrix value;
  Matrix velocity;

  Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
    velocity = Matrix::Zero(value.rows(), value.cols());
  }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  double scalar() const;
  int index() const { return index_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int index_ = -1;
};

class Tape {
 public:
  Var constant(Matrix v) { return emit(std::move(v), false); }

  // Leaf whose gradient is wanted (e.g. a probe input in tests).
  Var input(Matrix v) { return emit(std::move(v), true); }

  // Binds a Param for this pass; its gradient is retrievable after
  // backward() via param_grad().
  Var bind(Param& p) {
    Var v = emit(p.value, true);
    bound_.emplace_back(&p, v.index());
    return v;
  }

  Var emit(Matrix value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, requires_grad});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  void set_backward(Var v, std::function<void(Tape&)> fn) {
    nodes_[static_cast<std::size_t>(v.index())].backward = std::move(fn);
  }

  const Matrix& value(int i) const { return nodes_[static_cast<std::size_t>(i)].value; }

  Matrix& grad(int i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool grad_touched(int i) const { return nodes_[static_cast<std::size_t>(i)].grad.size() != 0; }
  bool requires_grad(int i) const { return nodes_[static_cast<std::size_t>(i)].requires_grad; }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse order.
  void backward(Var loss) {
    if (loss.value().rows() != 1 || loss.value().cols() != 1)
      throw std::invalid_argument("backward: loss must be a 1x1 scalar");
    grad(loss.index())(0, 0) = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && n.requires_grad && n.grad.size() != 0) n.backward(*this);
    }
  }

  const std::vector<std::pair<Param*, int>>& bound_params() const { return bound_; }

  // Gradient of the last backward() w.r.t. a bound Param (zero if unused).
  Matrix param_grad(const Param& p) {
    for (const auto& [ptr, idx] : bound_) {
      if (ptr == &p) return grad(idx);
    }
    return Matrix::Zero(p.value.rows(), p.value.cols());
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&)> backward;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<Param*, int>> bound_;
};

inline const Matrix& Var::value() const { return tape_->value(index_); }
inline const Matrix& Var::grad() const { return const_cast<Tape*>(tape_)->grad(index_); }
inline double Var::scalar() const {
  const Matrix& v = value();
  assert(v.rows() == 1 && v.cols() == 1);
  return v(0, 0);
}

namespace detail {

inline bool rg(const Var& a) { return a.tape()->requires_grad(a.index()); }

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("vars on different tapes");
  return *a.tape();
}

// Emits an op node and wires its backward closure.
inline Var make(Tape& t, Matrix value, bool need, std::function<void(Tape&)> back) {
  Var out = t.emit(std::move(value), need);
  if (need) t.set_backward(out, std::move(back));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / arithmetic primitives
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols())
    throw std::invalid_argument("add: shape mismatch");
  const bool need = detail::rg(a) || detail::rg(b);
  const int ia = a.index(), ib = b.index();
  Var out = t.emit(a.value() + b.value(), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, ib, io](Tape& t) {
      const Matrix& g = t.grad(io);
      if (t.requires_grad(ia)) t.grad(ia) += g;
      if (t.requires_grad(ib)) t.grad(ib) += g;
    });
  }
  return out;
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols())
    throw std::invalid_argument("sub: shape mismatch");
  const bool need = detail::rg(a) || detail::rg(b);
  const int ia = a.index(), ib = b.index();
  Var out = t.emit(a.value() - b.value(), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, ib, io](Tape& t) {
      const Matrix& g = t.grad(io);
      if (t.requires_grad(ia)) t.grad(ia) += g;
      if (t.requires_grad(ib)) t.grad(ib) -= g;
    });
  }
  return out;
}

inline Var hadamard(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols())
    throw std::invalid_argument("hadamard: shape mismatch");
  const bool need = detail::rg(a) || detail::rg(b);
  const int ia = a.index(), ib = b.index();
  Var out = t.emit(a.value().cwiseProduct(b.value()), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, ib, io](Tape& t) {
      const Matrix& g = t.grad(io);
      if (t.requires_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
      if (t.requires_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
    });
  }
  return out;
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape();
  const bool need = detail::rg(a);
  const int ia = a.index();
  Var out = t.emit(s * a.value(), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io, s](Tape& t) { t.grad(ia) += s * t.grad(io); });
  }
  return out;
}

inline Var add_scalar(Var a, double c) {
  Tape& t = *a.tape();
  const bool need = detail::rg(a);
  const int ia = a.index();
  Var out = t.emit(a.value().array() + c, need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io](Tape& t) { t.grad(ia) += t.grad(io); });
  }
  return out;
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (a.value().cols() != b.value().rows())
    throw std::invalid_argument("matmul: inner dimension mismatch");
  const bool need = detail::rg(a) || detail::rg(b);
  const int ia = a.index(), ib = b.index();
  Var out = t.emit(a.value() * b.value(), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, ib, io](Tape& t) {
      const Matrix& g = t.grad(io);
      if (t.requires_grad(ia)) t.grad(ia) += g * t.value(ib).transpose();
      if (t.requires_grad(ib)) t.grad(ib) += t.value(ia).transpose() * g;
    });
  }
  return out;
}

inline Var transpose(Var a) {
  Tape& t = *a.tape();
  const bool need = detail::rg(a);
  const int ia = a.index();
  Var out = t.emit(a.value().transpose(), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io](Tape& t) { t.grad(ia) += t.grad(io).transpose(); });
  }
  return out;
}

// Broadcast-add of a 1 x m row vector to every row of an n x m matrix.
inline Var add_rowvec(Var a, Var r) {
  Tape& t = detail::same_tape(a, r);
  if (r.value().rows() != 1 || r.value().cols() != a.value().cols())
    throw std::invalid_argument("add_rowvec: shape mismatch");
  const bool need = detail::rg(a) || detail::rg(r);
  const int ia = a.index(), ir = r.index();
  Matrix v = a.value();
  v.rowwise() += r.value().row(0);
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, ir, io](Tape& t) {
      const Matrix& g = t.grad(io);
      if (t.requires_grad(ia)) t.grad(ia) += g;
      if (t.requires_grad(ir)) t.grad(ir) += g.colwise().sum();
    });
  }
  return out;
}

namespace detail {

template <typename Fwd, typename Dfn>
Var unary_elem(Var a, Fwd fwd, Dfn dfn) {
  Tape& t = *a.tape();
  const bool need = rg(a);
  const int ia = a.index();
  Var out = t.emit(fwd(a.value()), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io, dfn](Tape& t) {
      t.grad(ia) += t.grad(io).cwiseProduct(dfn(t.value(ia), t.value(io)));
    });
  }
  return out;
}

}  // namespace detail

inline Var relu(Var a) {
  return detail::unary_elem(
      a, [](const Matrix& x) { return x.cwiseMax(0.0).eval(); },
      [](const Matrix& x, const Matrix&) {
        return (x.array() > 0.0).cast<double>().matrix().eval();
      });
}

inline Var leaky_relu(Var a, double slope) {
  return detail::unary_elem(
      a,
      [slope](const Matrix& x) {
        return (x.array() > 0.0).select(x, slope * x).eval();
      },
      [slope](const Matrix& x, const Matrix&) {
        return (x.array() > 0.0).select(Matrix::Ones(x.rows(), x.cols()),
                                        Matrix::Constant(x.rows(), x.cols(), slope))
            .eval();
      });
}

inline Var sigmoid(Var a) {
  return detail::unary_elem(
      a,
      [](const Matrix& x) {
        return (1.0 / (1.0 + (-x.array()).exp())).matrix().eval();
      },
      [](const Matrix&, const Matrix& y) {
        return (y.array() * (1.0 - y.array())).matrix().eval();
      });
}

inline Var exp_elem(Var a) {
  return detail::unary_elem(
      a, [](const Matrix& x) { return x.array().exp().matrix().eval(); },
      [](const Matrix&, const Matrix& y) { return y; });
}

inline Var log_elem(Var a) {
  return detail::unary_elem(
      a, [](const Matrix& x) { return x.array().log().matrix().eval(); },
      [](const Matrix& x, const Matrix&) { return x.cwiseInverse().eval(); });
}

inline Var sqrt_elem(Var a) {
  return detail::unary_elem(
      a, [](const Matrix& x) { return x.array().sqrt().matrix().eval(); },
      [](const Matrix&, const Matrix& y) {
        return (0.5 * y.array().inverse()).matrix().eval();
      });
}

inline Var rsqrt_elem(Var a) {
  return detail::unary_elem(
      a, [](const Matrix& x) { return x.array().rsqrt().matrix().eval(); },
      [](const Matrix& x, const Matrix& y) {
        return (-0.5 * y.array() / x.array()).matrix().eval();
      });
}

inline Var square(Var a) {
  return detail::unary_elem(
      a, [](const Matrix& x) { return x.array().square().matrix().eval(); },
      [](const Matrix& x, const Matrix&) { return (2.0 * x).eval(); });
}

// Gradient passes only where the input lies strictly inside (lo, hi).
inline Var clamp(Var a, double lo, double hi) {
  return detail::unary_elem(
      a,
      [lo, hi](const Matrix& x) {
        return x.array().max(lo).min(hi).matrix().eval();
      },
      [lo, hi](const Matrix& x, const Matrix&) {
        return ((x.array() > lo) && (x.array() < hi)).cast<double>().matrix().eval();
      });
}

// Identity forward; multiplies the incoming gradient by -eta. This is the
// adversarial contract between feature extractor and domain discriminator.
inline Var grad_reverse(Var a, double eta) {
  Tape& t = *a.tape();
  const bool need = detail::rg(a);
  const int ia = a.index();
  Var out = t.emit(a.value(), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io, eta](Tape& t) { t.grad(ia) -= eta * t.grad(io); });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum_all(Var a) {
  Tape& t = *a.tape();
  const bool need = detail::rg(a);
  const int ia = a.index();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io](Tape& t) {
      t.grad(ia).array() += t.grad(io)(0, 0);
    });
  }
  return out;
}

inline Var mean_all(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum_all(a), 1.0 / n);
}

// Column means: n x m -> 1 x m.
inline Var mean_rows(Var a) {
  Tape& t = *a.tape();
  const bool need = detail::rg(a);
  const int ia = a.index();
  const double n = static_cast<double>(a.value().rows());
  Var out = t.emit(a.value().colwise().mean(), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io, n](Tape& t) {
      const Matrix& g = t.grad(io);
      Matrix& ga = t.grad(ia);
      for (Eigen::Index i = 0; i < ga.rows(); ++i) ga.row(i) += g.row(0) / n;
    });
  }
  return out;
}

// Row sums: n x m -> n x 1.
inline Var row_sums(Var a) {
  Tape& t = *a.tape();
  const bool need = detail::rg(a);
  const int ia = a.index();
  Var out = t.emit(a.value().rowwise().sum(), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io](Tape& t) {
      const Matrix& g = t.grad(io);
      Matrix& ga = t.grad(ia);
      for (Eigen::Index j = 0; j < ga.cols(); ++j) ga.col(j) += g.col(0);
    });
  }
  return out;
}

// Frobenius norm as a 1x1 scalar; gradient guarded at zero.
inline Var l2_norm(Var a) {
  Tape& t = *a.tape();
  const bool need = detail::rg(a);
  const int ia = a.index();
  Matrix v(1, 1);
  v(0, 0) = a.value().norm();
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io](Tape& t) {
      const double norm = t.value(io)(0, 0);
      if (norm > 1e-12) t.grad(ia) += (t.grad(io)(0, 0) / norm) * t.value(ia);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural primitives
// ---------------------------------------------------------------------------

inline Var concat_rows(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (a.value().cols() != b.value().cols())
    throw std::invalid_argument("concat_rows: column mismatch");
  const bool need = detail::rg(a) || detail::rg(b);
  const int ia = a.index(), ib = b.index();
  const Eigen::Index na = a.value().rows(), nb = b.value().rows();
  Matrix v(na + nb, a.value().cols());
  v.topRows(na) = a.value();
  v.bottomRows(nb) = b.value();
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, ib, io, na, nb](Tape& t) {
      const Matrix& g = t.grad(io);
      if (t.requires_grad(ia)) t.grad(ia) += g.topRows(na);
      if (t.requires_grad(ib)) t.grad(ib) += g.bottomRows(nb);
    });
  }
  return out;
}

inline Var slice_rows(Var a, int first, int count) {
  Tape& t = *a.tape();
  if (first < 0 || count < 0 || first + count > a.value().rows())
    throw std::invalid_argument("slice_rows: out of range");
  const bool need = detail::rg(a);
  const int ia = a.index();
  Var out = t.emit(a.value().middleRows(first, count), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io, first, count](Tape& t) {
      t.grad(ia).middleRows(first, count) += t.grad(io);
    });
  }
  return out;
}

inline Var gather_rows(Var a, std::vector<int> idx) {
  Tape& t = *a.tape();
  for (int i : idx)
    if (i < 0 || i >= a.value().rows())
      throw std::invalid_argument("gather_rows: index out of range");
  const bool need = detail::rg(a);
  const int ia = a.index();
  Matrix v(static_cast<Eigen::Index>(idx.size()), a.value().cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    v.row(static_cast<Eigen::Index>(r)) = a.value().row(idx[r]);
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io, idx = std::move(idx)](Tape& t) {
      const Matrix& g = t.grad(io);
      Matrix& ga = t.grad(ia);
      for (std::size_t r = 0; r < idx.size(); ++r)
        ga.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    });
  }
  return out;
}

// out = base with rows[r] added at row idx[r]; residual fusion primitive.
inline Var scatter_add_rows(Var base, const std::vector<int>& idx, Var rows) {
  Tape& t = detail::same_tape(base, rows);
  if (static_cast<Eigen::Index>(idx.size()) != rows.value().rows())
    throw std::invalid_argument("scatter_add_rows: index/row count mismatch");
  if (base.value().cols() != rows.value().cols())
    throw std::invalid_argument("scatter_add_rows: column mismatch");
  for (int i : idx)
    if (i < 0 || i >= base.value().rows())
      throw std::invalid_argument("scatter_add_rows: index out of range");
  const bool need = detail::rg(base) || detail::rg(rows);
  const int ib = base.index(), ir = rows.index();
  Matrix v = base.value();
  for (std::size_t r = 0; r < idx.size(); ++r)
    v.row(idx[r]) += rows.value().row(static_cast<Eigen::Index>(r));
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ib, ir, io, idx](Tape& t) {
      const Matrix& g = t.grad(io);
      if (t.requires_grad(ib)) t.grad(ib) += g;
      if (t.requires_grad(ir)) {
        Matrix& gr = t.grad(ir);
        for (std::size_t r = 0; r < idx.size(); ++r)
          gr.row(static_cast<Eigen::Index>(r)) += g.row(idx[r]);
      }
    });
  }
  return out;
}

// Builds the symmetric augmented adjacency [[0, E], [E^T, 0]] from the
// bipartite cross-edge matrix E (Ns x Nt).
inline Var bipartite_adjacency(Var e) {
  Tape& t = *e.tape();
  const Eigen::Index ns = e.value().rows(), nt = e.value().cols();
  const bool need = detail::rg(e);
  const int ie = e.index();
  Matrix v = Matrix::Zero(ns + nt, ns + nt);
  v.block(0, ns, ns, nt) = e.value();
  v.block(ns, 0, nt, ns) = e.value().transpose();
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ie, io, ns, nt](Tape& t) {
      const Matrix& g = t.grad(io);
      t.grad(ie) += g.block(0, ns, ns, nt) + g.block(ns, 0, nt, ns).transpose();
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

inline Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const bool need = detail::rg(a);
  const int ia = a.index();
  Matrix v = a.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    v.row(i) = (v.row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io](Tape& t) {
      const Matrix& g = t.grad(io);
      const Matrix& y = t.value(io);
      Matrix& ga = t.grad(ia);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double dot = g.row(i).dot(y.row(i));
        ga.row(i) += (y.row(i).array() * (g.row(i).array() - dot)).matrix();
      }
    });
  }
  return out;
}

// Row-wise softmax restricted to mask != 0 entries; masked-out outputs are
// exactly zero. Throws if any row of the mask is empty.
inline Var masked_softmax_rows(Var scores, const Matrix& mask) {
  Tape& t = *scores.tape();
  const Matrix& s = scores.value();
  if (mask.rows() != s.rows() || mask.cols() != s.cols())
    throw std::invalid_argument("masked_softmax_rows: mask shape mismatch");
  Matrix v = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (mask(i, j) != 0.0) m = std::max(m, s(i, j));
    if (!std::isfinite(m))
      throw std::invalid_argument("masked_softmax_rows: empty neighborhood row");
    double den = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (mask(i, j) != 0.0) {
        v(i, j) = std::exp(s(i, j) - m);
        den += v(i, j);
      }
    }
    v.row(i) /= den;
  }
  const bool need = detail::rg(scores);
  const int ia = scores.index();
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io](Tape& t) {
      const Matrix& g = t.grad(io);
      const Matrix& y = t.value(io);
      Matrix& ga = t.grad(ia);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double dot = g.row(i).dot(y.row(i));
        ga.row(i) += (y.row(i).array() * (g.row(i).array() - dot)).matrix();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

// Mean cross-entropy of row-wise logits against 0-based class indices.
inline Var cross_entropy_mean(Var logits, std::vector<int> labels) {
  Tape& t = *logits.tape();
  const Matrix& x = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != x.rows())
    throw std::invalid_argument("cross_entropy_mean: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= x.cols())
      throw std::out_of_range("cross_entropy_mean: label out of range");
  auto probs = std::make_shared<Matrix>(x);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - m).exp();
    const double den = e.sum();
    probs->row(i) = e / den;
    loss += std::log(den) + m - x(i, labels[static_cast<std::size_t>(i)]);
  }
  const double n = static_cast<double>(x.rows());
  loss /= n;
  Matrix v(1, 1);
  v(0, 0) = loss;
  const bool need = detail::rg(logits);
  const int ia = logits.index();
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io, probs, labels = std::move(labels), n](Tape& t) {
      const double g = t.grad(io)(0, 0);
      Matrix d = *probs;
      for (Eigen::Index i = 0; i < d.rows(); ++i)
        d(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
      t.grad(ia) += (g / n) * d;
    });
  }
  return out;
}

// Numerically stable binary cross-entropy with logits, averaged over
// entries with weight > 0 (weighted sum divided by total weight).
inline Var bce_logits_mean(Var logits, const Matrix& targets, const Matrix& weights) {
  Tape& t = *logits.tape();
  const Matrix& x = logits.value();
  if (targets.rows() != x.rows() || targets.cols() != x.cols() ||
      weights.rows() != x.rows() || weights.cols() != x.cols())
    throw std::invalid_argument("bce_logits_mean: shape mismatch");
  const double wsum = weights.sum();
  double loss = 0.0;
  if (wsum > 0.0) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (weights(i, j) == 0.0) continue;
        const double z = x(i, j), y = targets(i, j);
        loss += weights(i, j) *
                (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))));
      }
    }
    loss /= wsum;
  }
  Matrix v(1, 1);
  v(0, 0) = loss;
  const bool need = detail::rg(logits);
  const int ia = logits.index();
  Var out = t.emit(std::move(v), need);
  if (need && wsum > 0.0) {
    const int io = out.index();
    t.set_backward(out, [ia, io, targets, weights, wsum](Tape& t) {
      const double g = t.grad(io)(0, 0);
      const Matrix& x = t.value(ia);
      Matrix& ga = t.grad(ia);
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j)
          if (weights(i, j) != 0.0) {
            const double s = 1.0 / (1.0 + std::exp(-x(i, j)));
            ga(i, j) += g * weights(i, j) * (s - targets(i, j)) / wsum;
          }
    });
  }
  return out;
}

// Smooth-L1 (Huber with delta = 1) averaged over all entries.
inline Var smooth_l1_mean(Var pred, const Matrix& target) {
  Tape& t = *pred.tape();
  const Matrix& x = pred.value();
  if (target.rows() != x.rows() || target.cols() != x.cols())
    throw std::invalid_argument("smooth_l1_mean: shape mismatch");
  const double n = static_cast<double>(x.size());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double d = x(i, j) - target(i, j);
      loss += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
    }
  loss /= n;
  Matrix v(1, 1);
  v(0, 0) = loss;
  const bool need = detail::rg(pred);
  const int ia = pred.index();
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ia, io, target, n](Tape& t) {
      const double g = t.grad(io)(0, 0);
      const Matrix& x = t.value(ia);
      Matrix& ga = t.grad(ia);
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
          const double d = x(i, j) - target(i, j);
          ga(i, j) += (g / n) * (std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0));
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution / pooling (feature maps stored as (H*W) x C, row = y*W + x)
// ---------------------------------------------------------------------------

namespace detail {

inline Matrix im2col(const Matrix& x, int h, int w, int k, int stride, int pad,
                     int oh, int ow) {
  const int cin = static_cast<int>(x.cols());
  Matrix col = Matrix::Zero(static_cast<Eigen::Index>(oh) * ow,
                            static_cast<Eigen::Index>(cin) * k * k);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index r = static_cast<Eigen::Index>(oy) * ow + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int y = oy * stride - pad + ky;
        if (y < 0 || y >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int xx = ox * stride - pad + kx;
          if (xx < 0 || xx >= w) continue;
          const Eigen::Index src = static_cast<Eigen::Index>(y) * w + xx;
          for (int c = 0; c < cin; ++c)
            col(r, static_cast<Eigen::Index>(c) * k * k + ky * k + kx) = x(src, c);
        }
      }
    }
  }
  return col;
}

inline void col2im_add(Matrix& gx, const Matrix& gcol, int h, int w, int k,
                       int stride, int pad, int oh, int ow) {
  const int cin = static_cast<int>(gx.cols());
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index r = static_cast<Eigen::Index>(oy) * ow + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int y = oy * stride - pad + ky;
        if (y < 0 || y >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int xx = ox * stride - pad + kx;
          if (xx < 0 || xx >= w) continue;
          const Eigen::Index dst = static_cast<Eigen::Index>(y) * w + xx;
          for (int c = 0; c < cin; ++c)
            gx(dst, c) += gcol(r, static_cast<Eigen::Index>(c) * k * k + ky * k + kx);
        }
      }
    }
  }
}

}  // namespace detail

struct ConvShape {
  int h = 0, w = 0;  // output spatial extent
};

// 2-D convolution. x: (H*W) x Cin, weight: (Cin*k*k) x Cout (row index
// c*k*k + ky*k + kx), bias: 1 x Cout. Returns (OH*OW) x Cout.
inline Var conv2d(Var x, Var weight, Var bias, int h, int w, int k, int stride,
                  int pad, ConvShape* out_shape = nullptr) {
  Tape& t = *x.tape();
  const int cin = static_cast<int>(x.value().cols());
  if (weight.value().rows() != static_cast<Eigen::Index>(cin) * k * k)
    throw std::invalid_argument("conv2d: weight rows != Cin*k*k");
  if (x.value().rows() != static_cast<Eigen::Index>(h) * w)
    throw std::invalid_argument("conv2d: input rows != H*W");
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  if (out_shape) *out_shape = ConvShape{oh, ow};
  auto col = std::make_shared<Matrix>(detail::im2col(x.value(), h, w, k, stride, pad, oh, ow));
  Matrix v = (*col) * weight.value();
  v.rowwise() += bias.value().row(0);
  const bool need = detail::rg(x) || detail::rg(weight) || detail::rg(bias);
  const int ix = x.index(), iw = weight.index(), ib = bias.index();
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ix, iw, ib, io, col, h, w, k, stride, pad, oh, ow](Tape& t) {
      const Matrix& g = t.grad(io);
      if (t.requires_grad(iw)) t.grad(iw) += col->transpose() * g;
      if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum();
      if (t.requires_grad(ix)) {
        Matrix gcol = g * t.value(iw).transpose();
        detail::col2im_add(t.grad(ix), gcol, h, w, k, stride, pad, oh, ow);
      }
    });
  }
  return out;
}

// Average-pools a feature map over a g x g grid of subcells per box.
// Boxes are given in feature-map coordinates. Output: Nb x (g*g*C) with
// column layout (cell_y*g + cell_x)*C + c.
inline Var roi_avg_pool(Var x, int h, int w,
                        const std::vector<std::array<double, 4>>& boxes, int g) {
  Tape& t = *x.tape();
  const int c = static_cast<int>(x.value().cols());
  if (x.value().rows() != static_cast<Eigen::Index>(h) * w)
    throw std::invalid_argument("roi_avg_pool: input rows != H*W");
  const int nb = static_cast<int>(boxes.size());
  Matrix v = Matrix::Zero(nb, static_cast<Eigen::Index>(g) * g * c);
  // Per output entry: list of contributing rows (shared with backward).
  auto cells = std::make_shared<std::vector<std::vector<int>>>();
  cells->resize(static_cast<std::size_t>(nb) * g * g);
  for (int b = 0; b < nb; ++b) {
    const auto& box = boxes[static_cast<std::size_t>(b)];
    const double x1 = box[0], y1 = box[1], x2 = box[2], y2 = box[3];
    for (int gy = 0; gy < g; ++gy) {
      for (int gx = 0; gx < g; ++gx) {
        const double cx1 = x1 + (x2 - x1) * gx / g;
        const double cx2 = x1 + (x2 - x1) * (gx + 1) / g;
        const double cy1 = y1 + (y2 - y1) * gy / g;
        const double cy2 = y1 + (y2 - y1) * (gy + 1) / g;
        int ix0 = std::clamp(static_cast<int>(std::floor(cx1)), 0, w - 1);
        int ix1 = std::clamp(static_cast<int>(std::ceil(cx2)), ix0 + 1, w);
        int iy0 = std::clamp(static_cast<int>(std::floor(cy1)), 0, h - 1);
        int iy1 = std::clamp(static_cast<int>(std::ceil(cy2)), iy0 + 1, h);
        auto& rows = (*cells)[(static_cast<std::size_t>(b) * g + gy) * g + gx];
        for (int y = iy0; y < iy1; ++y)
          for (int xx = ix0; xx < ix1; ++xx) rows.push_back(y * w + xx);
        const double inv = 1.0 / static_cast<double>(rows.size());
        for (int row : rows)
          for (int ch = 0; ch < c; ++ch)
            v(b, (static_cast<Eigen::Index>(gy) * g + gx) * c + ch) +=
                inv * x.value()(row, ch);
      }
    }
  }
  const bool need = detail::rg(x);
  const int ix = x.index();
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [ix, io, cells, g, c, nb](Tape& t) {
      const Matrix& gr = t.grad(io);
      Matrix& gx = t.grad(ix);
      for (int b = 0; b < nb; ++b)
        for (int cell = 0; cell < g * g; ++cell) {
          const auto& rows = (*cells)[static_cast<std::size_t>(b) * g * g + cell];
          const double inv = 1.0 / static_cast<double>(rows.size());
          for (int row : rows)
            for (int ch = 0; ch < c; ++ch)
              gx(row, ch) += inv * gr(b, static_cast<Eigen::Index>(cell) * c + ch);
        }
    });
  }
  return out;
}

// Learnable bipartite edge scores: E_ij = sigmoid([vs_i, vt_j] . theta),
// theta of length 2C stored as a (2C x 1) column.
inline Var pairwise_edge_scores(Var vs, Var vt, Var theta) {
  Tape& t = detail::same_tape(vs, vt);
  detail::same_tape(vs, theta);
  const Eigen::Index ns = vs.value().rows(), nt = vt.value().rows();
  const Eigen::Index c = vs.value().cols();
  if (vt.value().cols() != c) throw std::invalid_argument("edge scores: feature dim mismatch");
  if (theta.value().rows() != 2 * c || theta.value().cols() != 1)
    throw std::invalid_argument("edge scores: theta must be (2C x 1)");
  const Eigen::VectorXd th_s = theta.value().topRows(c).col(0);
  const Eigen::VectorXd th_t = theta.value().bottomRows(c).col(0);
  const Eigen::VectorXd u = vs.value() * th_s;
  const Eigen::VectorXd w = vt.value() * th_t;
  Matrix v(ns, nt);
  for (Eigen::Index i = 0; i < ns; ++i)
    for (Eigen::Index j = 0; j < nt; ++j)
      v(i, j) = 1.0 / (1.0 + std::exp(-(u(i) + w(j))));
  const bool need = detail::rg(vs) || detail::rg(vt) || detail::rg(theta);
  const int is = vs.index(), it = vt.index(), ith = theta.index();
  Var out = t.emit(std::move(v), need);
  if (need) {
    const int io = out.index();
    t.set_backward(out, [is, it, ith, io, c](Tape& t) {
      const Matrix& y = t.value(io);
      const Matrix s = t.grad(io).cwiseProduct(y.cwiseProduct(Matrix::Ones(y.rows(), y.cols()) - y));
      const Eigen::VectorXd du = s.rowwise().sum();
      const Eigen::VectorXd dw = s.colwise().sum().transpose();
      const Matrix& theta = t.value(ith);
      if (t.requires_grad(is))
        t.grad(is) += du * theta.topRows(c).col(0).transpose();
      if (t.requires_grad(it))
        t.grad(it) += dw * theta.bottomRows(c).col(0).transpose();
      if (t.requires_grad(ith)) {
        Matrix& gth = t.grad(ith);
        gth.topRows(c).col(0) += t.value(is).transpose() * du;
        gth.bottomRows(c).col(0) += t.value(it).transpose() * dw;
      }
    });
  }
  return out;
}

// Convenience: affine layer y = x W + b.
inline Var linear(Var x, Var weight, Var bias) {
  return add_rowvec(matmul(x, weight), bias);
}

}  // namespace fgrr::ag
