#pragma once

// Image-level object-aware reweighting: the prototype-similarity weight w1,
// the shared-category-count weight w2, and the reweighted adversarial
// domain loss with a gradient-reversal contract toward the extractor.

#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>

#include "fgrr/autodiff.hpp"
#include "fgrr/matrix.hpp"

namespace fgrr {

struct IorWeights {
  double w1 = 1.0;  // >= 1
  double w2 = 1.0;  // in [1, e]

  double mean() const { return 0.5 * (w1 + w2); }
};

// w1 = sum_k exp(-||c_s^k - c_t^k||^2) + 1 over the categories matched in
// both domains of the current image pair; an empty map gives 1.
inline double compute_w1(const std::map<int, std::pair<Vector, Vector>>& shared_centroids) {
  double w = 1.0;
  for (const auto& [k, pair] : shared_centroids) {
    if (pair.first.size() != pair.second.size())
      throw std::invalid_argument("compute_w1: centroid dimension mismatch");
    w += std::exp(-(pair.first - pair.second).squaredNorm());
  }
  return w;
}

// w2 = exp(N_k / K) where N_k counts the identical object categories of the
// current pair and K is the total class count.
inline double compute_w2(int n_k, int k_total) {
  if (k_total < 1) throw std::invalid_argument("compute_w2: K must be >= 1");
  if (n_k < 0 || n_k > k_total)
    throw std::invalid_argument("compute_w2: N_k must lie in [0, K]");
  return std::exp(static_cast<double>(n_k) / static_cast<double>(k_total));
}

// Small learnable map from a global image feature to P(source) in (0, 1).
struct DiscriminatorParams {
  ag::Param hidden_w;  // C x H
  ag::Param hidden_b;  // 1 x H
  ag::Param out_w;     // H x 1
  ag::Param out_b;     // 1 x 1

  static DiscriminatorParams init(int in_dim, int hidden, Rng& rng, const std::string& name) {
    const double s1 = std::sqrt(2.0 / in_dim);
    const double s2 = std::sqrt(2.0 / hidden);
    return DiscriminatorParams{
        ag::Param(name + "_hw", rng.normal_matrix(in_dim, hidden, s1)),
        ag::Param(name + "_hb", Matrix::Zero(1, hidden)),
        ag::Param(name + "_ow", rng.normal_matrix(hidden, 1, s2)),
        ag::Param(name + "_ob", Matrix::Zero(1, 1))};
  }
};

struct DiscriminatorVars {
  ag::Var hidden_w, hidden_b, out_w, out_b;
};

inline DiscriminatorVars bind(ag::Tape& t, DiscriminatorParams& p) {
  return DiscriminatorVars{t.bind(p.hidden_w), t.bind(p.hidden_b), t.bind(p.out_w),
                           t.bind(p.out_b)};
}

// P(source | features): sigmoid over a one-hidden-layer map.
inline ag::Var discriminator_forward(ag::Var features, const DiscriminatorVars& d) {
  ag::Var h = ag::relu(ag::linear(features, d.hidden_w, d.hidden_b));
  return ag::sigmoid(ag::linear(h, d.out_w, d.out_b));
}

// Reweighted adversarial image loss for one (source, target) pair:
//   -(w1+w2)/2 * [log D(g_s) + log(1 - D(g_t))]
// Both global features pass through gradient reversal (coefficient
// grl_eta), so the extractor is driven to increase this loss while the
// discriminator decreases it. Log arguments are clamped to
// [1e-7, 1 - 1e-7].
inline ag::Var ior_loss(ag::Tape& t, ag::Var src_global, ag::Var tgt_global,
                        const DiscriminatorVars& disc, const IorWeights& w,
                        double grl_eta = 1.0) {
  if (src_global.value().rows() != 1 || tgt_global.value().rows() != 1)
    throw std::invalid_argument("ior_loss: global features must be 1 x C");
  ag::Var d_src = discriminator_forward(ag::grad_reverse(src_global, grl_eta), disc);
  ag::Var d_tgt = discriminator_forward(ag::grad_reverse(tgt_global, grl_eta), disc);
  ag::Var one = t.constant(Matrix::Ones(1, 1));
  ag::Var log_src = ag::log_elem(ag::clamp(d_src, 1e-7, 1.0 - 1e-7));
  ag::Var log_tgt = ag::log_elem(ag::clamp(ag::sub(one, d_tgt), 1e-7, 1.0 - 1e-7));
  return ag::scale(ag::add(log_src, log_tgt), -w.mean());
}

}  // namespace fgrr
