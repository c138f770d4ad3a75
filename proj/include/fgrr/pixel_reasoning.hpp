#pragma once

// Pixel-level relational reasoning: the bipartite graph over matched
// foreground pixels with learnable edges, inter-domain graph convolution,
// per-domain graph attention, node classification, and residual fusion of
// reasoned features back into the feature map.

#include <stdexcept>
#include <vector>

#include "fgrr/autodiff.hpp"
#include "fgrr/graph_core.hpp"
#include "fgrr/pixel_correspondence.hpp"

namespace fgrr {

struct PixelGraphBundle {
  bool empty = true;
  graph::AugmentedGraph inter;
  Matrix intra_src_mask;  // all-pairs within the source node set
  Matrix intra_tgt_mask;
  std::vector<int> labels;  // ns + nt entries, classes 1..K

  int ns() const { return inter.ns; }
  int nt() const { return inter.nt; }
};

// Builds the inter-domain bipartite graph (learnable Eq.-style edges over
// all cross pairs) and the fully connected intra-domain attention masks.
// src_feats/tgt_feats are the node features on the tape, row-aligned with
// the PixelSets. Fewer than one node on either side gives an EMPTY bundle.
inline PixelGraphBundle build_pixel_graphs(const PixelSet& src, const PixelSet& tgt,
                                           const MatchedPairs& pairs, ag::Var src_feats,
                                           ag::Var tgt_feats, ag::Var edge_theta) {
  PixelGraphBundle b;
  if (src.size() < 1 || tgt.size() < 1) return b;
  if (pairs.size() != tgt.size())
    throw std::invalid_argument("build_pixel_graphs: pairs/target misalignment");
  if (src_feats.value().rows() != src.size() || tgt_feats.value().rows() != tgt.size())
    throw std::invalid_argument("build_pixel_graphs: feature row misalignment");
  for (int i = 0; i < pairs.size(); ++i) {
    if (pairs.pairs[static_cast<std::size_t>(i)].label !=
        tgt.refs[static_cast<std::size_t>(i)].label)
      throw std::invalid_argument("build_pixel_graphs: pair/pseudo-label mismatch");
  }
  ag::Var e = graph::edge_matrix(src_feats, tgt_feats, edge_theta);
  b.inter = graph::augment_bipartite(src_feats, tgt_feats, e);
  b.intra_src_mask = Matrix::Ones(src.size(), src.size());
  b.intra_tgt_mask = Matrix::Ones(tgt.size(), tgt.size());
  for (const PixelRef& r : src.refs) b.labels.push_back(r.label);
  for (const PixelRef& r : tgt.refs) b.labels.push_back(r.label);
  b.empty = false;
  return b;
}

struct ClassifierParams {
  ag::Param weight;  // C x K
  ag::Param bias;    // 1 x K

  static ClassifierParams init(int in_dim, int classes, Rng& rng, const std::string& name) {
    const double s = std::sqrt(2.0 / in_dim);
    return ClassifierParams{ag::Param(name + "_w", rng.normal_matrix(in_dim, classes, s)),
                            ag::Param(name + "_b", Matrix::Zero(1, classes))};
  }
};

struct ClassifierVars {
  ag::Var weight;
  ag::Var bias;
};

inline ClassifierVars bind(ag::Tape& t, ClassifierParams& p) {
  return ClassifierVars{t.bind(p.weight), t.bind(p.bias)};
}

struct PixelReasonOut {
  ag::Var reasoned;  // (ns+nt) x C
  ag::Var logits;    // (ns+nt) x K
};

// Inter-domain GCN over the normalized augmented adjacency, then per-domain
// graph attention, then a linear map to K class logits.
inline PixelReasonOut pixel_reasoning_forward(const PixelGraphBundle& b,
                                              const graph::GcnVars& gcn,
                                              const graph::GatVars& gat_src,
                                              const graph::GatVars& gat_tgt,
                                              const ClassifierVars& cls) {
  if (b.empty) throw std::logic_error("pixel_reasoning_forward: EMPTY bundle");
  ag::Var a_hat = graph::normalize_adjacency(b.inter.adjacency);
  ag::Var h = graph::gcn_forward(b.inter.nodes, a_hat, gcn);
  ag::Var h_src = ag::slice_rows(h, 0, b.ns());
  ag::Var h_tgt = ag::slice_rows(h, b.ns(), b.nt());
  ag::Var z_src = graph::graph_attention(h_src, b.intra_src_mask, gat_src);
  ag::Var z_tgt = graph::graph_attention(h_tgt, b.intra_tgt_mask, gat_tgt);
  ag::Var reasoned = ag::concat_rows(z_src, z_tgt);
  return PixelReasonOut{reasoned, ag::linear(reasoned, cls.weight, cls.bias)};
}

// Mean cross-entropy over all nodes; an empty node list contributes 0.
inline ag::Var node_classification_loss(ag::Tape& t, ag::Var logits,
                                        const std::vector<int>& labels) {
  if (labels.empty()) return t.constant(Matrix::Zero(1, 1));
  std::vector<int> zero_based;
  zero_based.reserve(labels.size());
  for (int k : labels) {
    if (k < 1 || k > logits.value().cols())
      throw std::out_of_range("node_classification_loss: label outside 1..K");
    zero_based.push_back(k - 1);
  }
  return ag::cross_entropy_mean(logits, std::move(zero_based));
}

// Residual fusion: adds reasoned node features into the map rows of the
// selected pixels; all other rows pass through bitwise unchanged.
inline ag::Var fuse_back(ag::Var fm_rows, int height, int width, const PixelSet& pixels,
                         ag::Var reasoned) {
  if (reasoned.value().rows() != pixels.size())
    throw std::invalid_argument("fuse_back: reasoned/pixel misalignment");
  if (reasoned.value().cols() != fm_rows.value().cols())
    throw std::invalid_argument("fuse_back: channel mismatch");
  std::vector<int> idx;
  idx.reserve(pixels.refs.size());
  for (const PixelRef& r : pixels.refs) {
    if (r.y < 0 || r.y >= height || r.x < 0 || r.x >= width)
      throw std::out_of_range("fuse_back: pixel outside map");
    idx.push_back(r.y * width + r.x);
  }
  return ag::scatter_add_rows(fm_rows, idx, reasoned);
}

}  // namespace fgrr
