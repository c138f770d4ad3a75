#pragma once

// The oracle battery behind `fgrr selfcheck`: compact agreement checks of
// every fast path against the independent brute-force references, printed
// as a pass/fail table.

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "fgrr/geometry.hpp"
#include "fgrr/graph_core.hpp"
#include "fgrr/image_reweighting.hpp"
#include "fgrr/oracle/dense_graph_reference.hpp"
#include "fgrr/oracle/exhaustive_nn.hpp"
#include "fgrr/oracle/finite_difference.hpp"
#include "fgrr/pixel_correspondence.hpp"
#include "fgrr/semantic_reasoning.hpp"

namespace fgrr {

struct SelfcheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline std::vector<SelfcheckResult> run_selfcheck() {
  std::vector<SelfcheckResult> results;
  auto check = [&](const std::string& name, const std::function<bool(std::string&)>& fn) {
    SelfcheckResult r;
    r.name = name;
    try {
      r.passed = fn(r.detail);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = e.what();
    }
    results.push_back(std::move(r));
  };

  check("finite-difference oracle (quadratic)", [](std::string& detail) {
    Rng rng(11);
    const Matrix p = rng.normal_matrix(3, 3, 1.0);
    const Matrix fd = oracle::finite_difference_gradients(
        [](const Matrix& m) { return 0.5 * m.squaredNorm(); }, p);
    const double err = (fd - p).cwiseAbs().maxCoeff();
    detail = "max abs err " + std::to_string(err);
    return err < 1e-7;
  });

  check("geometry closed forms", [](std::string& detail) {
    const bool ok = std::abs(centerness(1, 3, 2, 2) - std::sqrt(1.0 / 3.0)) < 1e-12 &&
                    std::abs(iou(Box{0, 0, 2, 2}, Box{1, 0, 3, 2}) - 1.0 / 3.0) < 1e-12 &&
                    std::abs(center_distance(Box{-1, -1, 1, 1}, Box{2, 3, 4, 5}, 10.0) - 0.5) <
                        1e-12;
    detail = ok ? "tabulated values reproduced" : "mismatch";
    return ok;
  });

  check("edge weights vs direct sigmoid (100 random)", [](std::string& detail) {
    Rng rng(12);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const int c = rng.uniform_int(1, 6);
      const Matrix fi = rng.normal_matrix(1, c, 1.0);
      const Matrix fj = rng.normal_matrix(1, c, 1.0);
      const Matrix th = rng.normal_matrix(2 * c, 1, 1.0);
      ag::Tape t;
      const double got =
          graph::edge_weight(t.constant(fi), t.constant(fj), t.constant(th)).scalar();
      double z = 0.0;
      for (int q = 0; q < c; ++q) z += fi(0, q) * th(q, 0) + fj(0, q) * th(c + q, 0);
      worst = std::max(worst, std::abs(got - 1.0 / (1.0 + std::exp(-z))));
    }
    detail = "max abs err " + std::to_string(worst);
    return worst < 1e-9;
  });

  check("gcn forward vs dense reference (50 random)", [](std::string& detail) {
    Rng rng(13);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const int n = rng.uniform_int(1, 6), c = rng.uniform_int(1, 4);
      const Matrix x = rng.normal_matrix(n, c, 1.0);
      Matrix a = rng.uniform_matrix(n, n, 0.0, 1.0);
      a = ((a + a.transpose()) / 2.0).eval();
      for (int q = 0; q < n; ++q) a(q, q) = 0.0;
      std::vector<Matrix> ws{rng.normal_matrix(c, c, 1.0), rng.normal_matrix(c, c, 1.0)};
      ag::Tape t;
      graph::GcnVars gv{{t.constant(ws[0]), t.constant(ws[1])}};
      const Matrix got =
          graph::gcn_forward(t.constant(x), graph::normalize_adjacency(t.constant(a)), gv)
              .value();
      oracle::GraphRefWeights w;
      w.gcn_weights = ws;
      worst = std::max(worst, max_abs_diff(got, oracle::dense_graph_reference(
                                                    x, a, w, oracle::GraphRefMode::kGcn)));
    }
    detail = "max abs err " + std::to_string(worst);
    return worst < 1e-9;
  });

  check("gat forward vs dense reference (50 random)", [](std::string& detail) {
    Rng rng(14);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const int n = rng.uniform_int(1, 6), c = rng.uniform_int(2, 4);
      const Matrix x = rng.normal_matrix(n, c, 1.0);
      Matrix mask(n, n);
      for (int r = 0; r < n; ++r)
        for (int q = 0; q < n; ++q) mask(r, q) = rng.uniform() < 0.4 ? 1.0 : 0.0;
      const Matrix w = rng.normal_matrix(c, c, 1.0);
      const Matrix a = rng.normal_matrix(2 * c, 1, 1.0);
      ag::Tape t;
      graph::GatVars gat{t.constant(w), t.constant(a)};
      const Matrix got = graph::graph_attention(t.constant(x), mask, gat).value();
      worst = std::max(worst, max_abs_diff(got, oracle::ref_gat(x, mask, w, a.col(0), 0.2)));
    }
    detail = "max abs err " + std::to_string(worst);
    return worst < 1e-9;
  });

  check("mutual NN vs exhaustive oracle (50 random)", [](std::string& detail) {
    Rng rng(15);
    for (int i = 0; i < 50; ++i) {
      const int c = rng.uniform_int(2, 8);
      const int h = rng.uniform_int(2, 12), w = rng.uniform_int(2, 12);
      const int ns = rng.uniform_int(1, 16);
      PixelSet src;
      src.domain = Domain::kSource;
      src.features = rng.normal_matrix(ns, c, 1.0);
      for (int q = 0; q < ns; ++q) src.refs.push_back(PixelRef{0, q, rng.uniform_int(1, 3)});
      const FeatureMap tgt(rng.normal_matrix(h * w, c, 1.0), h, w, Stage::kShallow);
      const auto [pairs, pseudo] = mutual_nn_match(src, tgt);
      const auto want = oracle::exhaustive_mutual_nn(src.features, src.labels(), tgt.data);
      if (pairs.size() != static_cast<int>(want.size())) {
        detail = "pair count mismatch at instance " + std::to_string(i);
        return false;
      }
      for (std::size_t q = 0; q < want.size(); ++q) {
        if (pairs.pairs[q].source_index != std::get<0>(want[q]) ||
            pairs.pairs[q].target_index != std::get<1>(want[q]) ||
            pairs.pairs[q].label != std::get<2>(want[q])) {
          detail = "pair mismatch at instance " + std::to_string(i);
          return false;
        }
      }
    }
    detail = "exact agreement";
    return true;
  });

  check("cdsr vs brute-force neighborhoods (30 random)", [](std::string& detail) {
    Rng rng(16);
    double worst = 0.0;
    for (int i = 0; i < 30; ++i) {
      const int ns = rng.uniform_int(1, 10), nt = rng.uniform_int(1, 10), c = 4;
      const Matrix vs = rng.normal_matrix(ns, c, 1.0);
      const Matrix vt = rng.normal_matrix(nt, c, 1.0);
      const int req_k = rng.uniform_int(1, 12);
      const Matrix got = cdsr_adjacency(vs, vt, CdsrConfig{req_k});
      const int k = std::max(1, std::min({req_k, ns, nt}));
      for (int r = 0; r < ns; ++r)
        for (int q = 0; q < nt; ++q) {
          std::vector<double> row, col;
          for (int j = 0; j < nt; ++j)
            row.push_back(vs.row(r).dot(vt.row(j)) / (vs.row(r).norm() * vt.row(j).norm()));
          for (int j = 0; j < ns; ++j)
            col.push_back(vs.row(j).dot(vt.row(q)) / (vs.row(j).norm() * vt.row(q).norm()));
          std::sort(row.rbegin(), row.rend());
          std::sort(col.rbegin(), col.rend());
          double rt = 0.0, rs = 0.0;
          for (int z = 0; z < k; ++z) {
            rt += row[static_cast<std::size_t>(z)];
            rs += col[static_cast<std::size_t>(z)];
          }
          const double cosv =
              vs.row(r).dot(vt.row(q)) / (vs.row(r).norm() * vt.row(q).norm());
          const double want = 1.0 / (1.0 + std::exp(-(2.0 * cosv - rt / k - rs / k)));
          worst = std::max(worst, std::abs(got(r, q) - want));
        }
    }
    detail = "max abs err " + std::to_string(worst);
    return worst < 1e-9;
  });

  check("reweighting closed forms", [](std::string& detail) {
    Vector a(2), b(2);
    a << std::sqrt(std::log(2.0)), 0.0;
    b << 0.0, 0.0;
    std::map<int, std::pair<Vector, Vector>> m;
    m.emplace(1, std::make_pair(a, b));
    const bool ok = std::abs(compute_w1(m) - 1.5) < 1e-12 &&
                    std::abs(compute_w2(1, 2) - std::exp(0.5)) < 1e-12 &&
                    std::abs(compute_w2(4, 4) - std::exp(1.0)) < 1e-12;
    detail = ok ? "tabulated values reproduced" : "mismatch";
    return ok;
  });

  return results;
}

// Prints the table; returns true when everything passed.
inline bool print_selfcheck() {
  const auto results = run_selfcheck();
  bool all = true;
  for (const auto& r : results) {
    std::printf("%-48s %s  (%s)\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                r.detail.c_str());
    all = all && r.passed;
  }
  std::printf("selfcheck: %s\n", all ? "all checks passed" : "FAILURES present");
  return all;
}

}  // namespace fgrr
