#pragma once

// Central-difference gradient oracle. Intentionally knows nothing about the
// main code paths: it sees a loss as an opaque callable over a parameter
// matrix. Must stay free of any other fgrr include.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace fgrr::oracle {

using LossFn = std::function<double(const Eigen::MatrixXd&)>;

struct Coord {
  int row = 0;
  int col = 0;
};

// Relative-error metric shared by all oracle comparisons.
inline double fd_relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Per-coordinate central differences, eps = 1e-5 * max(1, |p|).
// Throws if the loss is non-finite at a perturbation, naming the coordinate.
inline Eigen::MatrixXd finite_difference_gradients(
    const LossFn& loss, const Eigen::MatrixXd& params,
    const std::vector<Coord>& coords) {
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(params.rows(), params.cols());
  for (const Coord& c : coords) {
    const double p = params(c.row, c.col);
    const double eps = 1e-5 * std::max(1.0, std::abs(p));
    Eigen::MatrixXd plus = params, minus = params;
    plus(c.row, c.col) = p + eps;
    minus(c.row, c.col) = p - eps;
    const double fp = loss(plus);
    const double fm = loss(minus);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite differences: non-finite loss at coordinate (" +
                               std::to_string(c.row) + "," + std::to_string(c.col) + ")");
    grad(c.row, c.col) = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

inline std::vector<Coord> all_coords(const Eigen::MatrixXd& m) {
  std::vector<Coord> cs;
  cs.reserve(static_cast<std::size_t>(m.size()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) cs.push_back({i, j});
  return cs;
}

inline Eigen::MatrixXd finite_difference_gradients(const LossFn& loss,
                                                   const Eigen::MatrixXd& params) {
  return finite_difference_gradients(loss, params, all_coords(params));
}

struct GradientCheck {
  // Worst relative error over coordinates where the finite differences have
  // signal (either side >= kNegligible in magnitude).
  double max_rel_error = 0.0;
  Coord worst{-1, -1};
  // Worst absolute disagreement over the remaining (numerically zero)
  // coordinates; central differences cannot resolve relative error there.
  double max_small_abs_diff = 0.0;

  static constexpr double kNegligible = 1e-7;

  bool ok(double tol) const {
    return max_rel_error <= tol && max_small_abs_diff <= 1e-8;
  }
};

// Compares an analytic gradient against the finite-difference estimate on
// the given coordinates (all coordinates if empty).
inline GradientCheck check_gradient(const LossFn& loss, const Eigen::MatrixXd& params,
                                    const Eigen::MatrixXd& analytic,
                                    std::vector<Coord> coords = {}) {
  if (analytic.rows() != params.rows() || analytic.cols() != params.cols())
    throw std::invalid_argument("check_gradient: shape mismatch");
  if (coords.empty()) coords = all_coords(params);
  const Eigen::MatrixXd fd = finite_difference_gradients(loss, params, coords);
  GradientCheck res;
  for (const Coord& c : coords) {
    const double a = fd(c.row, c.col), b = analytic(c.row, c.col);
    if (std::max(std::abs(a), std::abs(b)) < GradientCheck::kNegligible) {
      res.max_small_abs_diff = std::max(res.max_small_abs_diff, std::abs(a - b));
      continue;
    }
    const double err = fd_relative_error(a, b);
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst = c;
    }
  }
  return res;
}

}  // namespace fgrr::oracle
