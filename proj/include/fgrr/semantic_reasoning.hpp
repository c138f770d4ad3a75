#pragma once

// Semantic-level relational reasoning over proposal nodes: class-balanced
// pseudo-label selection, hubness-corrected cross-domain similarity (CDSR)
// adjacency, bipartite graph convolution, prototype-based category-aware
// domain alignment, and the spatial-semantic intra-domain graph.

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fgrr/autodiff.hpp"
#include "fgrr/geometry.hpp"
#include "fgrr/feature_map.hpp"
#include "fgrr/graph_core.hpp"

namespace fgrr {

struct ProposalSet {
  std::vector<Box> boxes;   // image coordinates
  Matrix features;          // Np x d ROI features
  Matrix scores;            // Np x K foreground class probabilities (may be 0x0)
  std::vector<int> labels;  // 1..K (ground-truth or pseudo), kUnlabeled if unset
  Domain domain = Domain::kSource;

  int size() const { return static_cast<int>(boxes.size()); }

  void check() const {
    if (features.rows() != size()) throw std::invalid_argument("ProposalSet: feature rows");
    if (!labels.empty() && static_cast<int>(labels.size()) != size())
      throw std::invalid_argument("ProposalSet: label count");
    if (scores.size() > 0) {
      if (scores.rows() != size()) throw std::invalid_argument("ProposalSet: score rows");
      for (Eigen::Index i = 0; i < scores.rows(); ++i)
        if (std::abs(scores.row(i).sum() - 1.0) > 1e-6)
          throw std::invalid_argument("ProposalSet: score row does not sum to 1");
    }
  }
};

struct CdsrConfig {
  int k_nn = 10;  // clamped to the node-set sizes at call time
};

struct PseudoSelection {
  std::vector<int> indices;  // rows into the input set, ascending
  std::vector<int> labels;   // pseudo-label per kept row
};

// Class-balanced pseudo-label selection: each proposal is assigned the
// argmax class of its score row; per class the top ceil(keep_fraction * n_k)
// by score survive, subject to score >= min_score.
inline PseudoSelection select_pseudo_labeled_indices(const ProposalSet& target,
                                                     double keep_fraction, double min_score) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw std::invalid_argument("select_pseudo_labeled_proposals: keep_fraction in (0, 1]");
  if (target.scores.size() == 0 && target.size() > 0)
    throw std::invalid_argument("select_pseudo_labeled_proposals: scores required");
  target.check();

  struct Cand {
    int index;
    double score;
  };
  std::map<int, std::vector<Cand>> per_class;
  for (int i = 0; i < target.size(); ++i) {
    Eigen::Index best = 0;
    target.scores.row(i).maxCoeff(&best);
    per_class[static_cast<int>(best) + 1].push_back(Cand{i, target.scores(i, best)});
  }

  std::vector<std::pair<int, int>> kept;  // (index, label)
  for (auto& [cls, cands] : per_class) {
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });
    const int cap =
        static_cast<int>(std::ceil(keep_fraction * static_cast<double>(cands.size())));
    for (int r = 0; r < cap && r < static_cast<int>(cands.size()); ++r) {
      if (cands[static_cast<std::size_t>(r)].score < min_score) break;
      kept.emplace_back(cands[static_cast<std::size_t>(r)].index, cls);
    }
  }
  std::sort(kept.begin(), kept.end());
  PseudoSelection out;
  for (const auto& [idx, cls] : kept) {
    out.indices.push_back(idx);
    out.labels.push_back(cls);
  }
  return out;
}

inline ProposalSet select_pseudo_labeled_proposals(const ProposalSet& target,
                                                   double keep_fraction, double min_score) {
  const PseudoSelection sel = select_pseudo_labeled_indices(target, keep_fraction, min_score);
  ProposalSet out;
  out.domain = target.domain;
  out.labels = sel.labels;
  out.features.resize(static_cast<Eigen::Index>(sel.indices.size()), target.features.cols());
  if (target.scores.size() > 0)
    out.scores.resize(static_cast<Eigen::Index>(sel.indices.size()), target.scores.cols());
  for (std::size_t r = 0; r < sel.indices.size(); ++r) {
    const int src = sel.indices[r];
    out.boxes.push_back(target.boxes[static_cast<std::size_t>(src)]);
    out.features.row(static_cast<Eigen::Index>(r)) = target.features.row(src);
    if (target.scores.size() > 0)
      out.scores.row(static_cast<Eigen::Index>(r)) = target.scores.row(src);
  }
  return out;
}

// The cross-domain similarity measure itself.
inline double cdsr_score(double cos_st, double r_t, double r_s) {
  return 1.0 / (1.0 + std::exp(-(2.0 * cos_st - r_t - r_s)));
}

// CDSR adjacency (hubness-corrected): A_ij = sigmoid(2 cos(vs_i, vt_j)
// - r_T(vs_i) - r_S(vt_j)) where r_T / r_S are the mean cosines to each
// node's K nearest cross-domain neighbors. Entries lie in (0, 1).
inline Matrix cdsr_adjacency(const Matrix& vs, const Matrix& vt, const CdsrConfig& cfg) {
  const Eigen::Index ns = vs.rows(), nt = vt.rows();
  if (ns < 1 || nt < 1) throw std::invalid_argument("cdsr_adjacency: empty node set");
  if (vs.cols() != vt.cols()) throw std::invalid_argument("cdsr_adjacency: dim mismatch");
  const int k = std::max(1, std::min<int>({cfg.k_nn, static_cast<int>(ns), static_cast<int>(nt)}));

  Matrix cos(ns, nt);
  for (Eigen::Index i = 0; i < ns; ++i)
    for (Eigen::Index j = 0; j < nt; ++j)
      cos(i, j) = cosine_similarity(vs.row(i).transpose(), vt.row(j).transpose());

  auto mean_top_k = [k](std::vector<double> vals) {
    std::partial_sort(vals.begin(), vals.begin() + k, vals.end(), std::greater<double>());
    double s = 0.0;
    for (int r = 0; r < k; ++r) s += vals[static_cast<std::size_t>(r)];
    return s / static_cast<double>(k);
  };

  Vector r_t(ns), r_s(nt);
  for (Eigen::Index i = 0; i < ns; ++i) {
    std::vector<double> vals(nt);
    for (Eigen::Index j = 0; j < nt; ++j) vals[static_cast<std::size_t>(j)] = cos(i, j);
    r_t(i) = mean_top_k(std::move(vals));
  }
  for (Eigen::Index j = 0; j < nt; ++j) {
    std::vector<double> vals(ns);
    for (Eigen::Index i = 0; i < ns; ++i) vals[static_cast<std::size_t>(i)] = cos(i, j);
    r_s(j) = mean_top_k(std::move(vals));
  }

  Matrix a(ns, nt);
  for (Eigen::Index i = 0; i < ns; ++i)
    for (Eigen::Index j = 0; j < nt; ++j) a(i, j) = cdsr_score(cos(i, j), r_t(i), r_s(j));
  return a;
}

// Augment the semantic bipartite graph with the CDSR adjacency, normalize,
// and run the shared graph convolution stack. Returns (Ns+Nt) x d reasoned
// node features.
inline ag::Var semantic_bgcm_forward(ag::Var vs, ag::Var vt, const Matrix& adjacency,
                                     const graph::GcnVars& gcn) {
  ag::Tape& t = *vs.tape();
  graph::AugmentedGraph g = graph::augment_bipartite(vs, vt, t.constant(adjacency));
  ag::Var a_hat = graph::normalize_adjacency(g.adjacency);
  return graph::gcn_forward(g.nodes, a_hat, gcn);
}

struct PrototypeTable {
  std::map<int, ag::Var> source;  // class -> 1 x d prototype
  std::map<int, ag::Var> target;
  double xi = 1.0;  // margin
};

// Per-class mean of reasoned node features within each domain. The first
// ns rows of `reasoned` are source nodes, the rest target nodes; labels is
// row-aligned with classes in 1..K. Absent classes are absent from the map.
inline PrototypeTable class_prototypes(ag::Var reasoned, const std::vector<int>& labels,
                                       int ns) {
  if (static_cast<Eigen::Index>(labels.size()) != reasoned.value().rows())
    throw std::invalid_argument("class_prototypes: label/row mismatch");
  if (ns < 0 || ns > static_cast<int>(labels.size()))
    throw std::invalid_argument("class_prototypes: bad source count");
  PrototypeTable table;
  std::map<int, std::vector<int>> src_rows, tgt_rows;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    const int k = labels[static_cast<std::size_t>(i)];
    if (k < 1) throw std::invalid_argument("class_prototypes: unlabeled node");
    (i < ns ? src_rows : tgt_rows)[k].push_back(i);
  }
  for (const auto& [k, rows] : src_rows)
    table.source.emplace(k, ag::mean_rows(ag::gather_rows(reasoned, rows)));
  for (const auto& [k, rows] : tgt_rows)
    table.target.emplace(k, ag::mean_rows(ag::gather_rows(reasoned, rows)));
  return table;
}

// Category-aware domain alignment: pulls same-class prototype pairs
// together (L2) and pushes cross-class pairs apart with margin xi,
// over ordered pairs (m, n), m != n.
inline ag::Var cda_loss(ag::Tape& t, const PrototypeTable& pt) {
  ag::Var total = t.constant(Matrix::Zero(1, 1));
  for (const auto& [k, ps] : pt.source) {
    auto it = pt.target.find(k);
    if (it == pt.target.end()) continue;
    total = ag::add(total, ag::l2_norm(ag::sub(ps, it->second)));
  }
  for (const auto& [m, ps] : pt.source) {
    for (const auto& [n, ptg] : pt.target) {
      if (m == n) continue;
      ag::Var dist = ag::l2_norm(ag::sub(ps, ptg));
      total = ag::add(total, ag::relu(ag::add_scalar(ag::neg(dist), pt.xi)));
    }
  }
  return total;
}

// Spatial-semantic intra-domain adjacency (binary): spatial edge iff
// normalized center distance < 0.5 OR IoU > 0.5; semantic edge iff feature
// cosine > 0.5; final edge is their product. Diagonal forced to 1.
inline Matrix intra_semantic_adjacency(const ProposalSet& props, double image_diagonal) {
  props.check();
  const int n = props.size();
  if (n < 1) throw std::invalid_argument("intra_semantic_adjacency: empty proposal set");
  Matrix a = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const bool spatial =
          center_distance(props.boxes[static_cast<std::size_t>(i)],
                          props.boxes[static_cast<std::size_t>(j)], image_diagonal) < 0.5 ||
          iou(props.boxes[static_cast<std::size_t>(i)],
              props.boxes[static_cast<std::size_t>(j)]) > 0.5;
      const bool semantic = cosine_similarity(props.features.row(i).transpose(),
                                              props.features.row(j).transpose()) > 0.5;
      a(i, j) = a(j, i) = (spatial && semantic) ? 1.0 : 0.0;
    }
  }
  return a;
}

// Graph attention over the intra-domain adjacency (shared implementation).
inline ag::Var semantic_gam_forward(ag::Var reasoned, const Matrix& adjacency,
                                    const graph::GatVars& gat) {
  return graph::graph_attention(reasoned, adjacency, gat);
}

}  // namespace fgrr
