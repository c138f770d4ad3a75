#pragma once

// Differentiable graph machinery shared by pixel- and semantic-level
// reasoning: learnable bipartite edges, bipartite augmentation, stacked
// graph convolutions, and single-head neighborhood attention.

#include <stdexcept>
#include <vector>

#include "fgrr/autodiff.hpp"
#include "fgrr/matrix.hpp"

namespace fgrr::graph {

using ag::Param;
using ag::Tape;
using ag::Var;

constexpr double kLeakySlope = 0.2;

// ---------------------------------------------------------------------------
// Parameter bundles
// ---------------------------------------------------------------------------

// theta applied to concatenated node-feature pairs, length 2C.
struct EdgeScorerParams {
  Param theta;

  static EdgeScorerParams init(int channels, Rng& rng, const std::string& name) {
    return EdgeScorerParams{Param(name, rng.normal_matrix(2 * channels, 1, 0.1))};
  }
};

struct GcnParams {
  std::vector<Param> weights;  // L layer matrices

  static GcnParams init(const std::vector<int>& dims, Rng& rng, const std::string& name) {
    if (dims.size() < 2) throw std::invalid_argument("GcnParams: need at least one layer");
    GcnParams p;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const double s = std::sqrt(2.0 / dims[l]);
      p.weights.emplace_back(name + "_w" + std::to_string(l),
                             rng.normal_matrix(dims[l], dims[l + 1], s));
    }
    return p;
  }
};

struct GatParams {
  Param weight;  // C x C'
  Param attn;    // 2C' x 1

  static GatParams init(int in_dim, int out_dim, Rng& rng, const std::string& name) {
    const double s = std::sqrt(2.0 / in_dim);
    return GatParams{Param(name + "_w", rng.normal_matrix(in_dim, out_dim, s)),
                     Param(name + "_a", rng.normal_matrix(2 * out_dim, 1, 0.1))};
  }
};

// Tape-bound views of the bundles above.
struct GcnVars {
  std::vector<Var> weights;
};

struct GatVars {
  Var weight;
  Var attn;
};

inline GcnVars bind(Tape& t, GcnParams& p) {
  GcnVars v;
  for (Param& w : p.weights) v.weights.push_back(t.bind(w));
  return v;
}

inline GatVars bind(Tape& t, GatParams& p) {
  return GatVars{t.bind(p.weight), t.bind(p.attn)};
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// sigmoid([f_i, f_j] . theta) for a single node pair; 1x1 result in (0, 1).
inline Var edge_weight(Var f_i, Var f_j, Var theta) {
  if (f_i.value().rows() != 1 || f_j.value().rows() != 1)
    throw std::invalid_argument("edge_weight: expects 1xC node features");
  return ag::pairwise_edge_scores(f_i, f_j, theta);
}

// Dense learnable cross-edge matrix for all (source, target) pairs.
inline Var edge_matrix(Var vs, Var vt, Var theta) {
  return ag::pairwise_edge_scores(vs, vt, theta);
}

struct AugmentedGraph {
  Var nodes;      // (Ns+Nt) x C
  Var adjacency;  // (Ns+Nt) x (Ns+Nt), zero diagonal blocks
  int ns = 0;
  int nt = 0;
};

// nodes = [Vs; Vt], adjacency = [[0, E], [E^T, 0]].
inline AugmentedGraph augment_bipartite(Var vs, Var vt, Var e) {
  const Eigen::Index ns = vs.value().rows(), nt = vt.value().rows();
  if (e.value().rows() != ns || e.value().cols() != nt)
    throw std::invalid_argument("augment_bipartite: edge matrix must be Ns x Nt");
  if (e.value().size() > 0 &&
      (e.value().minCoeff() < 0.0 || e.value().maxCoeff() > 1.0))
    throw std::invalid_argument("augment_bipartite: edge weights must lie in [0, 1]");
  AugmentedGraph g;
  g.nodes = ag::concat_rows(vs, vt);
  g.adjacency = ag::bipartite_adjacency(e);
  g.ns = static_cast<int>(ns);
  g.nt = static_cast<int>(nt);
  return g;
}

// Symmetric renormalization with self-loops: D^{-1/2} (A + I) D^{-1/2},
// D the degree matrix of A + I. Differentiable in A.
inline Var normalize_adjacency(Var a) {
  const Eigen::Index n = a.value().rows();
  if (a.value().cols() != n) throw std::invalid_argument("normalize_adjacency: square input");
  Tape& t = *a.tape();
  Var a1 = ag::add(a, t.constant(Matrix::Identity(n, n)));
  Var d = ag::row_sums(a1);
  Var s = ag::rsqrt_elem(d);
  Var scaling = ag::matmul(s, ag::transpose(s));
  return ag::hadamard(scaling, a1);
}

// L stacked layers of X <- ReLU(A_hat X W_l).
inline Var gcn_forward(Var x, Var a_hat, const GcnVars& p) {
  if (p.weights.empty()) throw std::invalid_argument("gcn_forward: no layers");
  Var h = x;
  for (const Var& w : p.weights) h = ag::relu(ag::matmul(ag::matmul(a_hat, h), w));
  return h;
}

// Single-head graph attention over the given 0/1 neighborhood mask.
// Isolated nodes (empty mask rows) receive a self-loop so the softmax is
// defined. Attention rows sum to 1 over each neighborhood.
inline Var graph_attention(Var x, const Matrix& mask, const GatVars& p,
                           double leaky_slope = kLeakySlope) {
  const Eigen::Index n = x.value().rows();
  if (mask.rows() != n || mask.cols() != n)
    throw std::invalid_argument("graph_attention: mask must be n x n");
  Matrix m = mask;
  for (Eigen::Index i = 0; i < n; ++i) {
    if ((m.row(i).array() != 0.0).count() == 0) m(i, i) = 1.0;
  }
  Tape& t = *x.tape();
  const Eigen::Index cp = p.weight.value().cols();
  Var h = ag::matmul(x, p.weight);
  Var a_self = ag::slice_rows(p.attn, 0, static_cast<int>(cp));
  Var a_nbr = ag::slice_rows(p.attn, static_cast<int>(cp), static_cast<int>(cp));
  Var u = ag::matmul(h, a_self);  // n x 1
  Var v = ag::matmul(h, a_nbr);   // n x 1
  Var scores = ag::add(ag::matmul(u, t.constant(Matrix::Ones(1, n))),
                       ag::matmul(t.constant(Matrix::Ones(n, 1)), ag::transpose(v)));
  Var alpha = ag::masked_softmax_rows(ag::leaky_relu(scores, leaky_slope), m);
  return ag::matmul(alpha, h);
}

// Attention coefficients alone (used by tests asserting row sums).
inline Var attention_coefficients(Var x, const Matrix& mask, const GatVars& p,
                                  double leaky_slope = kLeakySlope) {
  const Eigen::Index n = x.value().rows();
  Matrix m = mask;
  for (Eigen::Index i = 0; i < n; ++i) {
    if ((m.row(i).array() != 0.0).count() == 0) m(i, i) = 1.0;
  }
  Tape& t = *x.tape();
  const Eigen::Index cp = p.weight.value().cols();
  Var h = ag::matmul(x, p.weight);
  Var u = ag::matmul(h, ag::slice_rows(p.attn, 0, static_cast<int>(cp)));
  Var v = ag::matmul(h, ag::slice_rows(p.attn, static_cast<int>(cp), static_cast<int>(cp)));
  Var scores = ag::add(ag::matmul(u, t.constant(Matrix::Ones(1, n))),
                       ag::matmul(t.constant(Matrix::Ones(n, 1)), ag::transpose(v)));
  return ag::masked_softmax_rows(ag::leaky_relu(scores, leaky_slope), m);
}

}  // namespace fgrr::graph
