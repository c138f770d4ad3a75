#pragma once

// Brute-force mutual nearest-neighbor reference for the pixel matching
// path. O(N*M) scans both directions with its own cosine; shares no code
// with the fast path. Must stay free of any other fgrr include.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace fgrr::oracle {

// (source_row, target_row, class) triples.
using PairSet = std::vector<std::tuple<int, int, int>>;

namespace nn_detail {

inline double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

// Highest cosine wins; ties go to the lowest row index.
inline int argmax_cosine(const Eigen::RowVectorXd& q, const Eigen::MatrixXd& pool) {
  int best = 0;
  double best_cos = cosine(q, pool.row(0));
  for (int r = 1; r < pool.rows(); ++r) {
    const double c = cosine(q, pool.row(r));
    if (c > best_cos) {
      best_cos = c;
      best = r;
    }
  }
  return best;
}

}  // namespace nn_detail

// Full-scan mutual NN matching. src_labels[i] is the class of source row i.
// A pair (i, j, k) is emitted when j is i's nearest target row and the
// nearest source row of j carries the same class k as i. When several
// sources claim one target, the highest-cosine pair survives (tie: lowest
// source row).
inline PairSet exhaustive_mutual_nn(const Eigen::MatrixXd& src_features,
                                    const std::vector<int>& src_labels,
                                    const Eigen::MatrixXd& tgt_features) {
  if (src_features.rows() + tgt_features.rows() > 4096)
    throw std::invalid_argument("exhaustive_mutual_nn: more than 4096 nodes, refusing");
  if (static_cast<int>(src_labels.size()) != src_features.rows())
    throw std::invalid_argument("exhaustive_mutual_nn: label count mismatch");
  PairSet out;
  if (src_features.rows() == 0 || tgt_features.rows() == 0) return out;

  std::vector<int> claimed_by(static_cast<std::size_t>(tgt_features.rows()), -1);
  std::vector<double> claimed_cos(static_cast<std::size_t>(tgt_features.rows()), 0.0);
  for (int i = 0; i < src_features.rows(); ++i) {
    const int j = nn_detail::argmax_cosine(src_features.row(i), tgt_features);
    const int back = nn_detail::argmax_cosine(tgt_features.row(j), src_features);
    if (src_labels[static_cast<std::size_t>(back)] != src_labels[static_cast<std::size_t>(i)])
      continue;
    const double c = nn_detail::cosine(src_features.row(i), tgt_features.row(j));
    const std::size_t ju = static_cast<std::size_t>(j);
    if (claimed_by[ju] < 0 || c > claimed_cos[ju]) {
      claimed_by[ju] = i;
      claimed_cos[ju] = c;
    }
  }
  for (int j = 0; j < tgt_features.rows(); ++j) {
    const int i = claimed_by[static_cast<std::size_t>(j)];
    if (i >= 0) out.emplace_back(i, j, src_labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

}  // namespace fgrr::oracle
