#pragma once

// Shared numeric/geometric primitives: cosine similarity, centerness,
// box arithmetic. Pure functions, thread-safe.

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fgrr/matrix.hpp"

namespace fgrr {

struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  bool valid() const {
    return x1 <= x2 && y1 <= y2 && std::isfinite(x1) && std::isfinite(y1) &&
           std::isfinite(x2) && std::isfinite(y2);
  }
};

inline void require_valid(const Box& b, const char* who) {
  if (!b.valid()) throw std::invalid_argument(std::string(who) + ": invalid box");
}

// Cosine similarity in [-1, 1]. A zero-norm input is defined as similarity 0;
// the optional flag reports that degenerate case instead of raising, so
// dead-feature pixels never abort a training step.
inline double cosine_similarity(const Vector& a, const Vector& b,
                                bool* zero_norm = nullptr) {
  if (a.size() != b.size() || a.size() < 1)
    throw std::invalid_argument("cosine_similarity: length mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    if (zero_norm) *zero_norm = true;
    return 0.0;
  }
  if (zero_norm) *zero_norm = false;
  const double c = a.dot(b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

// sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b)): 1 at the box center, 0 on an
// edge. Distances are from the pixel to the four box sides and must be
// nonnegative with l+r > 0 and t+b > 0 (pixel inside the box).
inline double centerness(double l, double r, double t, double b) {
  if (l < 0.0 || r < 0.0 || t < 0.0 || b < 0.0)
    throw std::invalid_argument("centerness: pixel outside box (negative distance)");
  if (l + r <= 0.0 || t + b <= 0.0)
    throw std::invalid_argument("centerness: degenerate box extent");
  const double horiz = std::min(l, r) / std::max(l, r);
  const double vert = std::min(t, b) / std::max(t, b);
  return std::sqrt(horiz * vert);
}

// Intersection over union. Any zero-area box yields 0.
inline double iou(const Box& a, const Box& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  if (a.area() <= 0.0 || b.area() <= 0.0) return 0.0;
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

// Euclidean distance between box centers, normalized by the image diagonal
// so the 0.5 spatial-graph threshold is scale-free.
inline double center_distance(const Box& a, const Box& b, double image_diagonal) {
  require_valid(a, "center_distance");
  require_valid(b, "center_distance");
  if (!(image_diagonal > 0.0))
    throw std::invalid_argument("center_distance: diagonal must be positive");
  const double dx = a.center_x() - b.center_x();
  const double dy = a.center_y() - b.center_y();
  return std::sqrt(dx * dx + dy * dy) / image_diagonal;
}

}  // namespace fgrr
