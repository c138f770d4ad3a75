#pragma once

// Minimal deterministic two-stage detector: a three-stage conv backbone
// with shallow (stride 4) and deep (stride 8) taps, an objectness scorer
// over a fixed anchor grid, greedy overlap suppression to a fixed proposal
// budget, ROI average pooling, and classification/regression heads.

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "fgrr/autodiff.hpp"
#include "fgrr/feature_map.hpp"
#include "fgrr/geometry.hpp"
#include "fgrr/semantic_reasoning.hpp"

namespace fgrr {

struct DetectorConfig {
  int image_size = 96;
  int in_channels = 3;
  int c1 = 8;
  int c2 = 8;   // shallow tap width
  int c3 = 16;  // deep tap width
  int num_classes = 4;
  std::vector<double> anchor_sizes = {15.0, 21.0, 28.0};
  int anchor_subgrid = 2;  // sub-positions per axis within a deep cell
  int top_n = 32;
  double suppress_iou = 0.7;
  int roi_grid = 2;

  int anchors_per_cell() const {
    return static_cast<int>(anchor_sizes.size()) * anchor_subgrid * anchor_subgrid;
  }
  int shallow_stride() const { return 4; }
  int deep_stride() const { return 8; }
  int roi_dim() const { return roi_grid * roi_grid * c3; }
};

struct DetectorParams {
  DetectorConfig cfg;
  ag::Param conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
  ag::Param obj_w, obj_b;  // 1x1 conv: deep -> anchors_per_cell logits
  ag::Param cls_w, cls_b;  // roi feature -> K+1 logits (background = column 0)
  ag::Param reg_w, reg_b;  // roi feature -> (dx, dy, dw, dh)

  static DetectorParams init(const DetectorConfig& cfg, Rng& rng) {
    auto he = [&](int fan_in, int rows, int cols) {
      return rng.normal_matrix(rows, cols, std::sqrt(2.0 / fan_in));
    };
    const int a = cfg.anchors_per_cell();
    return DetectorParams{
        cfg,
        ag::Param("conv1_w", he(cfg.in_channels * 9, cfg.in_channels * 9, cfg.c1)),
        ag::Param("conv1_b", Matrix::Zero(1, cfg.c1)),
        ag::Param("conv2_w", he(cfg.c1 * 9, cfg.c1 * 9, cfg.c2)),
        ag::Param("conv2_b", Matrix::Zero(1, cfg.c2)),
        ag::Param("conv3_w", he(cfg.c2 * 9, cfg.c2 * 9, cfg.c3)),
        ag::Param("conv3_b", Matrix::Zero(1, cfg.c3)),
        ag::Param("obj_w", he(cfg.c3, cfg.c3, a)),
        ag::Param("obj_b", Matrix::Zero(1, a)),
        ag::Param("cls_w", he(cfg.roi_dim(), cfg.roi_dim(), cfg.num_classes + 1)),
        ag::Param("cls_b", Matrix::Zero(1, cfg.num_classes + 1)),
        ag::Param("reg_w", he(cfg.roi_dim(), cfg.roi_dim(), 4)),
        ag::Param("reg_b", Matrix::Zero(1, 4))};
  }

  std::vector<ag::Param*> all() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &conv3_w, &conv3_b,
            &obj_w,   &obj_b,   &cls_w,   &cls_b,   &reg_w,   &reg_b};
  }
};

struct DetectorVars {
  ag::Var conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
  ag::Var obj_w, obj_b, cls_w, cls_b, reg_w, reg_b;
};

inline DetectorVars bind(ag::Tape& t, DetectorParams& p) {
  return DetectorVars{t.bind(p.conv1_w), t.bind(p.conv1_b), t.bind(p.conv2_w),
                      t.bind(p.conv2_b), t.bind(p.conv3_w), t.bind(p.conv3_b),
                      t.bind(p.obj_w),   t.bind(p.obj_b),   t.bind(p.cls_w),
                      t.bind(p.cls_b),   t.bind(p.reg_w),   t.bind(p.reg_b)};
}

// Anchor boxes in image coordinates for a deep map of dh x dw cells,
// clipped to the image. Index layout: (cell_y*dw + cell_x) * A + a.
inline std::vector<Box> anchor_grid(const DetectorConfig& cfg, int dh, int dw) {
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(dh) * dw * cfg.anchors_per_cell());
  const double stride = cfg.deep_stride();
  const int g = cfg.anchor_subgrid;
  const double s_max = cfg.image_size;
  for (int y = 0; y < dh; ++y) {
    for (int x = 0; x < dw; ++x) {
      for (int sy = 0; sy < g; ++sy) {
        for (int sx = 0; sx < g; ++sx) {
          const double cx = (x + (sx + 0.5) / g) * stride;
          const double cy = (y + (sy + 0.5) / g) * stride;
          for (double size : cfg.anchor_sizes) {
            Box b{cx - size / 2, cy - size / 2, cx + size / 2, cy + size / 2};
            b.x1 = std::clamp(b.x1, 0.0, s_max);
            b.y1 = std::clamp(b.y1, 0.0, s_max);
            b.x2 = std::clamp(b.x2, 0.0, s_max);
            b.y2 = std::clamp(b.y2, 0.0, s_max);
            anchors.push_back(b);
          }
        }
      }
    }
  }
  return anchors;
}

struct ShallowOut {
  ag::Var rows;
  int h = 0, w = 0;
};

inline ShallowOut backbone_shallow(ag::Tape& t, const Matrix& image, int image_size,
                                   const DetectorVars& v) {
  ag::ConvShape s1, s2;
  ag::Var x = t.constant(image);
  ag::Var h1 = ag::relu(ag::conv2d(x, v.conv1_w, v.conv1_b, image_size, image_size, 3, 2, 1, &s1));
  ag::Var h2 = ag::relu(ag::conv2d(h1, v.conv2_w, v.conv2_b, s1.h, s1.w, 3, 2, 1, &s2));
  return ShallowOut{h2, s2.h, s2.w};
}

struct DeepOut {
  ag::Var rows;
  int h = 0, w = 0;
  ag::Var global;  // 1 x c3 pooled image feature
};

inline DeepOut backbone_deep(ag::Tape& t, ag::Var shallow_rows, int h, int w,
                             const DetectorVars& v) {
  (void)t;
  ag::ConvShape s3;
  ag::Var h3 = ag::relu(ag::conv2d(shallow_rows, v.conv3_w, v.conv3_b, h, w, 3, 2, 1, &s3));
  return DeepOut{h3, s3.h, s3.w, ag::mean_rows(h3)};
}

struct HeadsOut {
  ag::Var obj_logits;  // (dh*dw) x anchors_per_cell
  std::vector<Box> prop_boxes;
  std::vector<int> prop_anchor;  // flat anchor index per proposal
  ag::Var roi_feats;             // top_n x roi_dim
  ag::Var cls_logits;            // top_n x (K+1)
  ag::Var reg;                   // top_n x 4
  ProposalSet proposals;         // value snapshot for graph-node selection
};

// Greedy overlap suppression over objectness-sorted anchors; always returns
// exactly top_n proposals (suppressed anchors are re-admitted by score if
// the budget is not met).
inline std::vector<int> select_proposals(const std::vector<Box>& anchors,
                                         const std::vector<double>& scores, int top_n,
                                         double suppress_iou) {
  std::vector<int> order(anchors.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    return a < b;
  });
  std::vector<int> kept;
  std::vector<char> used(anchors.size(), 0);
  for (int idx : order) {
    if (static_cast<int>(kept.size()) >= top_n) break;
    bool ok = true;
    for (int k : kept)
      if (iou(anchors[static_cast<std::size_t>(idx)], anchors[static_cast<std::size_t>(k)]) >
          suppress_iou) {
        ok = false;
        break;
      }
    if (ok) {
      kept.push_back(idx);
      used[static_cast<std::size_t>(idx)] = 1;
    }
  }
  for (int idx : order) {
    if (static_cast<int>(kept.size()) >= top_n) break;
    if (!used[static_cast<std::size_t>(idx)]) kept.push_back(idx);
  }
  if (static_cast<int>(kept.size()) < top_n)
    throw std::runtime_error("select_proposals: fewer anchors than the proposal budget");
  return kept;
}

inline HeadsOut detector_heads(ag::Tape& t, const DeepOut& deep, const DetectorVars& v,
                               const DetectorConfig& cfg, Domain domain) {
  HeadsOut out;
  out.obj_logits = ag::conv2d(deep.rows, v.obj_w, v.obj_b, deep.h, deep.w, 1, 1, 0);

  const std::vector<Box> anchors = anchor_grid(cfg, deep.h, deep.w);
  std::vector<double> scores;
  scores.reserve(anchors.size());
  const Matrix& logits = out.obj_logits.value();
  const int a = cfg.anchors_per_cell();
  for (Eigen::Index cell = 0; cell < logits.rows(); ++cell)
    for (int q = 0; q < a; ++q) scores.push_back(logits(cell, q));
  out.prop_anchor = select_proposals(anchors, scores, cfg.top_n, cfg.suppress_iou);
  std::vector<std::array<double, 4>> roi_boxes;
  for (int idx : out.prop_anchor) {
    const Box& b = anchors[static_cast<std::size_t>(idx)];
    out.prop_boxes.push_back(b);
    const double s = cfg.deep_stride();
    roi_boxes.push_back({b.x1 / s, b.y1 / s, b.x2 / s, b.y2 / s});
  }
  out.roi_feats = ag::roi_avg_pool(deep.rows, deep.h, deep.w, roi_boxes, cfg.roi_grid);
  out.cls_logits = ag::linear(out.roi_feats, v.cls_w, v.cls_b);
  out.reg = ag::linear(out.roi_feats, v.reg_w, v.reg_b);

  // Value snapshot used by the semantic graph machinery. Scores are the
  // foreground columns of the (K+1)-way softmax, renormalized to sum to 1.
  out.proposals.domain = domain;
  out.proposals.boxes = out.prop_boxes;
  out.proposals.features = out.roi_feats.value();
  const Matrix& cl = out.cls_logits.value();
  Matrix fg(cl.rows(), cfg.num_classes);
  for (Eigen::Index i = 0; i < cl.rows(); ++i) {
    const double m = cl.row(i).maxCoeff();
    Eigen::RowVectorXd p = (cl.row(i).array() - m).exp();
    p /= p.sum();
    double fg_sum = 0.0;
    for (int k = 1; k <= cfg.num_classes; ++k) fg_sum += p(k);
    if (fg_sum < 1e-300) {
      fg.row(i).setConstant(1.0 / cfg.num_classes);
    } else {
      for (int k = 1; k <= cfg.num_classes; ++k) fg(i, k - 1) = p(k) / fg_sum;
    }
  }
  out.proposals.scores = fg;
  out.proposals.labels.assign(static_cast<std::size_t>(cl.rows()), kUnlabeled);
  return out;
}

// Full pass for callers that do not insert reasoning between the taps.
struct DetectorForward {
  ShallowOut shallow;
  DeepOut deep;
  HeadsOut heads;
};

inline DetectorForward detector_forward(ag::Tape& t, const Matrix& image, int image_size,
                                        DetectorParams& params, Domain domain) {
  DetectorVars v = bind(t, params);
  DetectorForward f;
  f.shallow = backbone_shallow(t, image, image_size, v);
  f.deep = backbone_deep(t, f.shallow.rows, f.shallow.h, f.shallow.w, v);
  f.heads = detector_heads(t, f.deep, v, params.cfg, domain);
  return f;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct ProposalMatch {
  std::vector<int> target_class;  // 0 = background, else 1..K
  std::vector<int> positives;     // proposal indices with IoU >= 0.5
  std::vector<int> matched_gt;    // per positive, the matched ground-truth index
};

inline ProposalMatch match_proposals(const std::vector<Box>& proposals,
                                     const std::vector<Box>& gt_boxes,
                                     const std::vector<int>& gt_labels,
                                     double iou_threshold = 0.5) {
  ProposalMatch m;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(proposals[i], gt_boxes[g]);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best >= iou_threshold && best_gt >= 0) {
      m.target_class.push_back(gt_labels[static_cast<std::size_t>(best_gt)]);
      m.positives.push_back(static_cast<int>(i));
      m.matched_gt.push_back(best_gt);
    } else {
      m.target_class.push_back(0);
    }
  }
  return m;
}

inline Matrix box_regression_targets(const std::vector<Box>& proposals,
                                     const std::vector<int>& positives,
                                     const std::vector<int>& matched_gt,
                                     const std::vector<Box>& gt_boxes) {
  Matrix t(static_cast<Eigen::Index>(positives.size()), 4);
  for (std::size_t r = 0; r < positives.size(); ++r) {
    const Box& p = proposals[static_cast<std::size_t>(positives[r])];
    const Box& g = gt_boxes[static_cast<std::size_t>(matched_gt[r])];
    t(static_cast<Eigen::Index>(r), 0) = (g.center_x() - p.center_x()) / p.width();
    t(static_cast<Eigen::Index>(r), 1) = (g.center_y() - p.center_y()) / p.height();
    t(static_cast<Eigen::Index>(r), 2) = std::log(g.width() / p.width());
    t(static_cast<Eigen::Index>(r), 3) = std::log(g.height() / p.height());
  }
  return t;
}

// ROI-head detection loss: cross-entropy against IoU-matched classes
// (background = 0) plus smooth-L1 box regression over the positives.
inline ag::Var detection_loss(ag::Tape& t, ag::Var cls_logits, ag::Var reg,
                              const std::vector<Box>& proposals,
                              const std::vector<Box>& gt_boxes,
                              const std::vector<int>& gt_labels) {
  if (proposals.empty()) return t.constant(Matrix::Zero(1, 1));
  const ProposalMatch m = match_proposals(proposals, gt_boxes, gt_labels);
  ag::Var ce = ag::cross_entropy_mean(cls_logits, m.target_class);
  if (m.positives.empty()) return ce;
  const Matrix targets = box_regression_targets(proposals, m.positives, m.matched_gt, gt_boxes);
  ag::Var reg_pos = ag::gather_rows(reg, m.positives);
  return ag::add(ce, ag::smooth_l1_mean(reg_pos, targets));
}

// Anchor objectness loss: BCE with logits; positives at IoU >= 0.5 (plus
// the best anchor of each ground-truth box), negatives below 0.3, the band
// in between ignored. Positive and negative sets are weight-balanced so the
// handful of covered anchors is not swamped by the background grid.
inline ag::Var objectness_loss(ag::Tape& t, ag::Var obj_logits, const DetectorConfig& cfg,
                               int dh, int dw, const std::vector<Box>& gt_boxes) {
  const std::vector<Box> anchors = anchor_grid(cfg, dh, dw);
  const int a = cfg.anchors_per_cell();
  Matrix targets = Matrix::Zero(dh * dw, a);
  Matrix weights = Matrix::Ones(dh * dw, a);
  std::vector<int> best_anchor(gt_boxes.size(), -1);
  std::vector<double> best_iou(gt_boxes.size(), 0.0);
  for (std::size_t idx = 0; idx < anchors.size(); ++idx) {
    double top = 0.0;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(anchors[idx], gt_boxes[g]);
      top = std::max(top, v);
      if (v > best_iou[g]) {
        best_iou[g] = v;
        best_anchor[g] = static_cast<int>(idx);
      }
    }
    const Eigen::Index row = static_cast<Eigen::Index>(idx) / a;
    const Eigen::Index col = static_cast<Eigen::Index>(idx) % a;
    if (top >= 0.5)
      targets(row, col) = 1.0;
    else if (top >= 0.3)
      weights(row, col) = 0.0;  // ignore band
  }
  for (int idx : best_anchor) {
    if (idx < 0) continue;
    targets(idx / a, idx % a) = 1.0;
    weights(idx / a, idx % a) = 1.0;
  }
  double n_pos = 0.0, n_neg = 0.0;
  for (Eigen::Index i = 0; i < targets.rows(); ++i)
    for (Eigen::Index j = 0; j < targets.cols(); ++j) {
      if (weights(i, j) == 0.0) continue;
      (targets(i, j) > 0.0 ? n_pos : n_neg) += 1.0;
    }
  if (n_pos > 0.0 && n_neg > 0.0) {
    for (Eigen::Index i = 0; i < targets.rows(); ++i)
      for (Eigen::Index j = 0; j < targets.cols(); ++j) {
        if (weights(i, j) == 0.0) continue;
        weights(i, j) = targets(i, j) > 0.0 ? 0.5 / n_pos : 0.5 / n_neg;
      }
  }
  return ag::bce_logits_mean(obj_logits, targets, weights);
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct Detection {
  Box box;
  int label = 0;  // 1..K
  double score = 0.0;
};

inline Box apply_regression(const Box& p, double dx, double dy, double dw, double dh,
                            double image_size) {
  const double cx = p.center_x() + dx * p.width();
  const double cy = p.center_y() + dy * p.height();
  const double w = p.width() * std::exp(std::clamp(dw, -2.0, 2.0));
  const double h = p.height() * std::exp(std::clamp(dh, -2.0, 2.0));
  Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  b.x1 = std::clamp(b.x1, 0.0, image_size);
  b.y1 = std::clamp(b.y1, 0.0, image_size);
  b.x2 = std::clamp(b.x2, std::min(b.x1, image_size), image_size);
  b.y2 = std::clamp(b.y2, std::min(b.y1, image_size), image_size);
  return b;
}

// Final detections: per-class scores from the full (K+1)-way softmax,
// class-agnostic box refinement, then per-class greedy NMS.
inline std::vector<Detection> extract_detections(const HeadsOut& heads,
                                                 const DetectorConfig& cfg,
                                                 double score_threshold = 0.05,
                                                 double nms_iou = 0.5,
                                                 int max_per_class = 20) {
  const Matrix& cl = heads.cls_logits.value();
  const Matrix& rg = heads.reg.value();
  std::vector<Detection> all;
  for (Eigen::Index i = 0; i < cl.rows(); ++i) {
    const double m = cl.row(i).maxCoeff();
    Eigen::RowVectorXd p = (cl.row(i).array() - m).exp();
    p /= p.sum();
    const Box refined = apply_regression(heads.prop_boxes[static_cast<std::size_t>(i)],
                                         rg(i, 0), rg(i, 1), rg(i, 2), rg(i, 3),
                                         cfg.image_size);
    for (int k = 1; k <= cfg.num_classes; ++k)
      if (p(k) >= score_threshold) all.push_back(Detection{refined, k, p(k)});
  }
  std::vector<Detection> kept;
  for (int k = 1; k <= cfg.num_classes; ++k) {
    std::vector<const Detection*> cls;
    for (const Detection& d : all)
      if (d.label == k) cls.push_back(&d);
    std::stable_sort(cls.begin(), cls.end(),
                     [](const Detection* a, const Detection* b) { return a->score > b->score; });
    std::vector<const Detection*> cls_kept;
    for (const Detection* d : cls) {
      if (static_cast<int>(cls_kept.size()) >= max_per_class) break;
      bool ok = true;
      for (const Detection* q : cls_kept)
        if (iou(d->box, q->box) > nms_iou) {
          ok = false;
          break;
        }
      if (ok) cls_kept.push_back(d);
    }
    for (const Detection* d : cls_kept) kept.push_back(*d);
  }
  return kept;
}

}  // namespace fgrr
