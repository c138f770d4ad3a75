#pragma once

// Foreground-pixel selection on the source side (class centroids + cosine
// + centerness gates) and cross-domain mutual nearest-neighbor matching
// that pseudo-labels target pixels.

#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fgrr/feature_map.hpp"
#include "fgrr/geometry.hpp"
#include "fgrr/matrix.hpp"

namespace fgrr {

struct PixelSelectionConfig {
  double tau1 = 0.75;  // cosine-to-centroid threshold
  double tau2 = 0.5;   // centerness threshold

  void validate() const {
    if (!(tau1 >= -1.0 && tau1 <= 1.0) || !std::isfinite(tau1))
      throw std::invalid_argument("PixelSelectionConfig: tau1 must lie in [-1, 1]");
    if (!(tau2 >= 0.0 && tau2 <= 1.0) || !std::isfinite(tau2))
      throw std::invalid_argument("PixelSelectionConfig: tau2 must lie in [0, 1]");
  }
};

struct PixelSet {
  std::vector<PixelRef> refs;
  Matrix features;  // N x C, row-aligned with refs
  Domain domain = Domain::kSource;

  int size() const { return static_cast<int>(refs.size()); }

  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(refs.size());
    for (const PixelRef& r : refs) out.push_back(r.label);
    return out;
  }
};

struct MatchedPair {
  int source_index = 0;  // row into the source PixelSet
  int target_index = 0;  // linear pixel index (y*W + x) into the target map
  int label = kUnlabeled;
};

struct MatchedPairs {
  std::vector<MatchedPair> pairs;

  int size() const { return static_cast<int>(pairs.size()); }
};

// Per-class mean feature over the labeled pixels of one image. Classes not
// present are absent from the map; empty input gives an empty map.
inline std::map<int, Vector> class_centroids(const FeatureMap& fm,
                                             const std::vector<PixelRef>& labeled) {
  std::map<int, Vector> sums;
  std::map<int, int> counts;
  for (const PixelRef& r : labeled) {
    check_ref(r, fm);
    if (r.label < 1) throw std::invalid_argument("class_centroids: unlabeled pixel");
    auto [it, fresh] = sums.try_emplace(r.label, Vector::Zero(fm.channels()));
    it->second += fm.pixel(r.y, r.x);
    counts[r.label] += 1;
  }
  for (auto& [k, v] : sums) v /= static_cast<double>(counts[k]);
  return sums;
}

namespace detail {

// Pixel (y, x) is treated as the point (x + 0.5, y + 0.5); side distances
// feed the centerness gate, so on-edge pixels get centerness 0.
struct SideDistances {
  double l, r, t, b;
  bool inside() const { return l >= 0.0 && r >= 0.0 && t >= 0.0 && b >= 0.0; }
};

inline SideDistances side_distances(int y, int x, const Box& box) {
  const double px = x + 0.5, py = y + 0.5;
  return SideDistances{px - box.x1, box.x2 - px, py - box.y1, box.y2 - py};
}

}  // namespace detail

// Collects the per-class in-box pixel sets (deduplicated per class) for an
// image whose boxes are given in feature-map coordinates.
inline std::map<int, std::vector<PixelRef>> in_box_pixels(
    const FeatureMap& fm, const std::vector<std::pair<Box, int>>& boxes) {
  std::map<int, std::vector<PixelRef>> out;
  std::map<int, std::vector<char>> seen;
  for (const auto& [box, cls] : boxes) {
    require_valid(box, "in_box_pixels");
    if (cls < 1) throw std::invalid_argument("in_box_pixels: class id must be >= 1");
    auto& mask = seen[cls];
    if (mask.empty()) mask.assign(static_cast<std::size_t>(fm.height) * fm.width, 0);
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y1 - 0.5)));
    const int y1 = std::min(fm.height - 1, static_cast<int>(std::ceil(box.y2)));
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x1 - 0.5)));
    const int x1 = std::min(fm.width - 1, static_cast<int>(std::ceil(box.x2)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (!detail::side_distances(y, x, box).inside()) continue;
        auto& cell = mask[static_cast<std::size_t>(fm.linear(y, x))];
        if (cell) continue;
        cell = 1;
        out[cls].push_back(PixelRef{y, x, cls});
      }
    }
  }
  return out;
}

// A pixel enters the selected set of class k iff it lies inside a class-k
// box, its cosine to the class centroid exceeds tau1, and its centerness in
// that box exceeds tau2. Zero-feature pixels are treated as background.
inline PixelSet select_source_foreground(const FeatureMap& fm,
                                         const std::vector<std::pair<Box, int>>& boxes,
                                         const PixelSelectionConfig& cfg) {
  cfg.validate();
  const auto per_class = in_box_pixels(fm, boxes);
  std::map<int, Vector> centroids;
  for (const auto& [cls, refs] : per_class) {
    Vector sum = Vector::Zero(fm.channels());
    for (const PixelRef& r : refs) sum += fm.pixel(r.y, r.x);
    centroids[cls] = sum / static_cast<double>(refs.size());
  }

  PixelSet out;
  out.domain = Domain::kSource;
  std::map<int, std::vector<char>> taken;
  for (const auto& [box, cls] : boxes) {
    auto& mask = taken[cls];
    if (mask.empty()) mask.assign(static_cast<std::size_t>(fm.height) * fm.width, 0);
    const Vector& centroid = centroids.at(cls);
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y1 - 0.5)));
    const int y1 = std::min(fm.height - 1, static_cast<int>(std::ceil(box.y2)));
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x1 - 0.5)));
    const int x1 = std::min(fm.width - 1, static_cast<int>(std::ceil(box.x2)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const auto sd = detail::side_distances(y, x, box);
        if (!sd.inside()) continue;
        if (mask[static_cast<std::size_t>(fm.linear(y, x))]) continue;
        bool zero_norm = false;
        const double cos = cosine_similarity(fm.pixel(y, x), centroid, &zero_norm);
        if (zero_norm || cos <= cfg.tau1) continue;
        if (centerness(sd.l, sd.r, sd.t, sd.b) <= cfg.tau2) continue;
        mask[static_cast<std::size_t>(fm.linear(y, x))] = 1;
        out.refs.push_back(PixelRef{y, x, cls});
      }
    }
  }
  out.features.resize(static_cast<Eigen::Index>(out.refs.size()), fm.channels());
  for (std::size_t i = 0; i < out.refs.size(); ++i)
    out.features.row(static_cast<Eigen::Index>(i)) =
        fm.data.row(fm.linear(out.refs[i].y, out.refs[i].x));
  return out;
}

// Cross-domain mutual nearest-neighbor matching under cosine similarity.
// For source pixel i of class k with target NN j', the pair (i, j', k) is
// emitted iff the source NN of j' also carries class k. Ties break toward
// the lowest linear index; a target pixel claimed by several sources keeps
// the highest-cosine pair. The returned PixelSet carries the pseudo-labeled
// target pixels, row-aligned with the returned pairs.
inline std::pair<MatchedPairs, PixelSet> mutual_nn_match(const PixelSet& src,
                                                         const FeatureMap& tgt_fm) {
  MatchedPairs pairs;
  PixelSet tgt;
  tgt.domain = Domain::kTarget;
  tgt.features.resize(0, tgt_fm.channels());
  if (src.size() == 0) return {pairs, tgt};
  if (src.features.cols() != tgt_fm.channels())
    throw std::invalid_argument("mutual_nn_match: channel mismatch");

  // Row-normalize both sides; zero rows stay zero (cosine defined as 0).
  auto normalized = [](const Matrix& m) {
    Matrix out = m;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double n = out.row(i).norm();
      if (n > 0.0) out.row(i) /= n;
    }
    return out;
  };
  const Matrix sn = normalized(src.features);
  const Matrix tn = normalized(tgt_fm.data);
  const Matrix cos = sn * tn.transpose();  // Ns x (H*W)

  const Eigen::Index nt = tn.rows();
  std::vector<int> claimed_by(static_cast<std::size_t>(nt), -1);
  std::vector<double> claimed_cos(static_cast<std::size_t>(nt), 0.0);
  for (int i = 0; i < src.size(); ++i) {
    // Target NN of source i (lowest linear index on ties).
    int j = 0;
    double best = cos(i, 0);
    for (Eigen::Index c = 1; c < nt; ++c)
      if (cos(i, c) > best) {
        best = cos(i, c);
        j = static_cast<int>(c);
      }
    // Source NN of target j.
    int back = 0;
    double best_back = cos(0, j);
    for (int r = 1; r < src.size(); ++r)
      if (cos(r, j) > best_back) {
        best_back = cos(r, j);
        back = r;
      }
    if (src.refs[static_cast<std::size_t>(back)].label !=
        src.refs[static_cast<std::size_t>(i)].label)
      continue;
    const std::size_t ju = static_cast<std::size_t>(j);
    if (claimed_by[ju] < 0 || best > claimed_cos[ju]) {
      claimed_by[ju] = i;
      claimed_cos[ju] = best;
    }
  }

  std::vector<Eigen::Index> rows;
  for (Eigen::Index j = 0; j < nt; ++j) {
    const int i = claimed_by[static_cast<std::size_t>(j)];
    if (i < 0) continue;
    const int label = src.refs[static_cast<std::size_t>(i)].label;
    pairs.pairs.push_back(MatchedPair{i, static_cast<int>(j), label});
    tgt.refs.push_back(PixelRef{static_cast<int>(j) / tgt_fm.width,
                                static_cast<int>(j) % tgt_fm.width, label});
    rows.push_back(j);
  }
  tgt.features.resize(static_cast<Eigen::Index>(rows.size()), tgt_fm.channels());
  for (std::size_t r = 0; r < rows.size(); ++r)
    tgt.features.row(static_cast<Eigen::Index>(r)) = tgt_fm.data.row(rows[r]);
  return {pairs, tgt};
}

}  // namespace fgrr
