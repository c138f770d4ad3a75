#pragma once

// Straight-line dense references for the graph forward passes: symmetric
// adjacency normalization, stacked graph convolutions, and single-head
// neighborhood attention. Everything is written with explicit loops,
// independent of the tape-based implementations. Must stay free of any
// other fgrr include.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace fgrr::oracle {

inline void check_node_cap(Eigen::Index n) {
  if (n > 64) throw std::invalid_argument("dense_graph_reference: more than 64 nodes, refusing");
}

// D^{-1/2} (A + I) D^{-1/2} with D the degree matrix of A + I.
inline Eigen::MatrixXd ref_normalize_adjacency(const Eigen::MatrixXd& a) {
  check_node_cap(a.rows());
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd a1 = a;
  for (Eigen::Index i = 0; i < n; ++i) a1(i, i) += 1.0;
  std::vector<double> dinv(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    double deg = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) deg += a1(i, j);
    dinv[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg);
  }
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      out(i, j) = dinv[static_cast<std::size_t>(i)] * a1(i, j) * dinv[static_cast<std::size_t>(j)];
  return out;
}

// L stacked layers of X <- ReLU(A_hat X W_l), explicit triple loops.
inline Eigen::MatrixXd ref_gcn(const Eigen::MatrixXd& x, const Eigen::MatrixXd& a_hat,
                               const std::vector<Eigen::MatrixXd>& weights) {
  check_node_cap(x.rows());
  Eigen::MatrixXd h = x;
  for (const Eigen::MatrixXd& w : weights) {
    Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(h.rows(), h.cols());
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      for (Eigen::Index j = 0; j < h.rows(); ++j)
        for (Eigen::Index c = 0; c < h.cols(); ++c) agg(i, c) += a_hat(i, j) * h(j, c);
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(h.rows(), w.cols());
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      for (Eigen::Index o = 0; o < w.cols(); ++o) {
        double acc = 0.0;
        for (Eigen::Index c = 0; c < w.rows(); ++c) acc += agg(i, c) * w(c, o);
        next(i, o) = acc > 0.0 ? acc : 0.0;
      }
    h = next;
  }
  return h;
}

// Attention coefficients: alpha_ij = softmax_j(LeakyReLU(a . [W x_i || W x_j]))
// over the neighborhood of i (mask row), output_i = sum_j alpha_ij (W x_j).
// Rows with an empty neighborhood get a self-loop.
inline Eigen::MatrixXd ref_gat(const Eigen::MatrixXd& x, const Eigen::MatrixXd& mask,
                               const Eigen::MatrixXd& w, const Eigen::VectorXd& a,
                               double leaky_slope) {
  check_node_cap(x.rows());
  const Eigen::Index n = x.rows();
  const Eigen::Index cp = w.cols();
  if (a.size() != 2 * cp) throw std::invalid_argument("ref_gat: attention vector length");
  Eigen::MatrixXd h(n, cp);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index o = 0; o < cp; ++o) {
      double acc = 0.0;
      for (Eigen::Index c = 0; c < x.cols(); ++c) acc += x(i, c) * w(c, o);
      h(i, o) = acc;
    }
  Eigen::MatrixXd local_mask = mask;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool empty = true;
    for (Eigen::Index j = 0; j < n; ++j)
      if (local_mask(i, j) != 0.0) empty = false;
    if (empty) local_mask(i, i) = 1.0;
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, cp);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Eigen::Index> nbrs;
    for (Eigen::Index j = 0; j < n; ++j)
      if (local_mask(i, j) != 0.0) nbrs.push_back(j);
    std::vector<double> scores;
    double max_score = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j : nbrs) {
      double s = 0.0;
      for (Eigen::Index o = 0; o < cp; ++o) s += a(o) * h(i, o);
      for (Eigen::Index o = 0; o < cp; ++o) s += a(cp + o) * h(j, o);
      s = s > 0.0 ? s : leaky_slope * s;
      scores.push_back(s);
      max_score = std::max(max_score, s);
    }
    double den = 0.0;
    for (double& s : scores) {
      s = std::exp(s - max_score);
      den += s;
    }
    for (std::size_t t = 0; t < nbrs.size(); ++t) {
      const double alpha = scores[t] / den;
      for (Eigen::Index o = 0; o < cp; ++o) out(i, o) += alpha * h(nbrs[t], o);
    }
  }
  return out;
}

enum class GraphRefMode { kGcn, kGat };

struct GraphRefWeights {
  std::vector<Eigen::MatrixXd> gcn_weights;  // used in kGcn mode
  Eigen::MatrixXd gat_w;                     // used in kGat mode
  Eigen::VectorXd gat_a;
  double leaky_slope = 0.2;
};

// Dispatcher matching the oracle surface: A is the raw adjacency for GCN
// (normalized here) or the neighborhood mask for GAT.
inline Eigen::MatrixXd dense_graph_reference(const Eigen::MatrixXd& x,
                                             const Eigen::MatrixXd& a,
                                             const GraphRefWeights& w, GraphRefMode mode) {
  if (mode == GraphRefMode::kGcn) return ref_gcn(x, ref_normalize_adjacency(a), w.gcn_weights);
  return ref_gat(x, a, w.gat_w, w.gat_a, w.leaky_slope);
}

}  // namespace fgrr::oracle
