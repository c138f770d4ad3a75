#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include "fgrr/matrix.hpp"

namespace fgrr {

constexpr int kUnlabeled = 0;  // class ids run 1..K

enum class Domain { kSource, kTarget };

enum class Stage { kShallow, kDeep };

// Backbone activation map stored row-per-pixel: row y*W + x holds the
// C-dimensional feature of pixel (y, x).
struct FeatureMap {
  Matrix data;  // (H*W) x C
  int height = 0;
  int width = 0;
  Stage stage = Stage::kShallow;

  FeatureMap() = default;
  FeatureMap(Matrix d, int h, int w, Stage s)
      : data(std::move(d)), height(h), width(w), stage(s) {
    if (height < 1 || width < 1 || data.cols() < 1)
      throw std::invalid_argument("FeatureMap: C, H, W must all be >= 1");
    if (data.rows() != static_cast<Eigen::Index>(height) * width)
      throw std::invalid_argument("FeatureMap: data rows != H*W");
    if (!all_finite(data)) throw std::invalid_argument("FeatureMap: non-finite entries");
  }

  int channels() const { return static_cast<int>(data.cols()); }
  int linear(int y, int x) const { return y * width + x; }

  Vector pixel(int y, int x) const {
    if (y < 0 || y >= height || x < 0 || x >= width)
      throw std::out_of_range("FeatureMap::pixel: index out of bounds");
    return data.row(linear(y, x)).transpose();
  }
};

// Index into a FeatureMap plus a class id (1..K) or kUnlabeled.
struct PixelRef {
  int y = 0;
  int x = 0;
  int label = kUnlabeled;
};

inline void check_ref(const PixelRef& r, const FeatureMap& fm) {
  if (r.y < 0 || r.y >= fm.height || r.x < 0 || r.x >= fm.width)
    throw std::out_of_range("PixelRef outside feature map");
}

}  // namespace fgrr
