#include <catch2/catch_amalgamated.hpp>

#include "fgrr/graph_core.hpp"
#include "fgrr/oracle/dense_graph_reference.hpp"
#include "fgrr/oracle/finite_difference.hpp"

using namespace fgrr;
using ag::Tape;
using ag::Var;

TEST_CASE("edge weight tabulated values", "[graph_core]") {
  Tape t;
  Var zero_theta = t.constant(Matrix::Zero(4, 1));
  Matrix fi(1, 2), fj(1, 2);
  fi << 1, 0;
  fj << 0, 1;
  CHECK(graph::edge_weight(t.constant(fi), t.constant(fj), zero_theta).scalar() ==
        Catch::Approx(0.5).margin(1e-12));

  Matrix th(4, 1);
  th << std::log(3.0), 0, 0, std::log(3.0);
  const double w =
      graph::edge_weight(t.constant(fi), t.constant(fj), t.constant(th)).scalar();
  CHECK(w == Catch::Approx(0.9).margin(1e-9));  // sigmoid(2 ln 3) = 9/10
}

TEST_CASE("edge weight gradient matches finite differences", "[graph_core]") {
  Rng rng(701);
  for (int draw = 0; draw < 20; ++draw) {
    const int c = rng.uniform_int(2, 5);
    const Matrix fi = rng.normal_matrix(1, c, 1.0);
    const Matrix fj = rng.normal_matrix(1, c, 1.0);
    const Matrix th0 = rng.normal_matrix(2 * c, 1, 1.0);

    Tape t;
    Var theta = t.input(th0);
    Var w = graph::edge_weight(t.constant(fi), t.constant(fj), theta);
    t.backward(ag::sum_all(w));
    const Matrix analytic = theta.grad();

    auto loss = [&](const Matrix& thv) {
      Tape t2;
      return graph::edge_weight(t2.constant(fi), t2.constant(fj), t2.constant(thv))
          .scalar();
    };
    const auto rep = oracle::check_gradient(loss, th0, analytic);
    INFO("draw " << draw << " max rel err " << rep.max_rel_error);
    REQUIRE(rep.ok(1e-4));
  }
}

TEST_CASE("bipartite augmentation block layout", "[graph_core]") {
  Tape t;
  Matrix e(1, 1);
  e << 0.7;
  auto g = graph::augment_bipartite(t.constant(Matrix::Ones(1, 2)),
                                    t.constant(Matrix::Zero(1, 2)), t.constant(e));
  Matrix expect(2, 2);
  expect << 0, 0.7, 0.7, 0;
  CHECK(max_abs_diff(g.adjacency.value(), expect) < 1e-12);
  CHECK(g.nodes.value().rows() == 2);

  auto gz = graph::augment_bipartite(t.constant(Matrix::Ones(2, 3)),
                                     t.constant(Matrix::Ones(4, 3)),
                                     t.constant(Matrix::Zero(2, 4)));
  CHECK(gz.adjacency.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bipartite augmentation invariants on random edges", "[graph_core]") {
  Rng rng(702);
  for (int inst = 0; inst < 200; ++inst) {
    const int ns = rng.uniform_int(1, 6), nt = rng.uniform_int(1, 6), c = 3;
    Tape t;
    const Matrix e = rng.uniform_matrix(ns, nt, 0.0, 1.0);
    auto g = graph::augment_bipartite(t.constant(rng.normal_matrix(ns, c, 1.0)),
                                      t.constant(rng.normal_matrix(nt, c, 1.0)),
                                      t.constant(e));
    const Matrix& a = g.adjacency.value();
    REQUIRE(max_abs_diff(a, a.transpose()) == 0.0);
    REQUIRE(a.block(0, 0, ns, ns).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(a.block(ns, ns, nt, nt).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(a.minCoeff() >= 0.0);
    REQUIRE(a.maxCoeff() <= 1.0);
  }
}

TEST_CASE("adjacency normalization tabulated values", "[graph_core]") {
  Tape t;
  Var n4 = graph::normalize_adjacency(t.constant(Matrix::Zero(4, 4)));
  CHECK(max_abs_diff(n4.value(), Matrix::Identity(4, 4)) < 1e-12);
  for (int i = 0; i < 4; ++i) CHECK(n4.value().row(i).sum() == Catch::Approx(1.0));

  Matrix ring(2, 2);
  ring << 0, 1, 1, 0;
  Var n2 = graph::normalize_adjacency(t.constant(ring));
  CHECK(max_abs_diff(n2.value(), Matrix::Constant(2, 2, 0.5)) < 1e-12);
}

TEST_CASE("adjacency normalization preserves symmetry and nonnegativity",
          "[graph_core]") {
  Rng rng(703);
  for (int inst = 0; inst < 200; ++inst) {
    const int n = rng.uniform_int(1, 8);
    Matrix a = rng.uniform_matrix(n, n, 0.0, 1.0);
    a = ((a + a.transpose()) / 2.0).eval();
    for (int i = 0; i < n; ++i) a(i, i) = 0.0;
    Tape t;
    const Matrix norm = graph::normalize_adjacency(t.constant(a)).value();
    REQUIRE(max_abs_diff(norm, norm.transpose()) < 1e-12);
    REQUIRE(norm.minCoeff() >= 0.0);
    const Matrix ref = oracle::ref_normalize_adjacency(a);
    REQUIRE(max_abs_diff(norm, ref) < 1e-12);
  }
}

TEST_CASE("gcn forward identity and clamping behavior", "[graph_core]") {
  Rng rng(704);
  const Matrix x = rng.uniform_matrix(5, 3, 0.0, 2.0);  // nonnegative
  Tape t;
  graph::GcnVars identity{{t.constant(Matrix::Identity(3, 3)),
                           t.constant(Matrix::Identity(3, 3))}};
  Var out = graph::gcn_forward(t.constant(x), t.constant(Matrix::Identity(5, 5)), identity);
  CHECK(max_abs_diff(out.value(), x) < 1e-12);

  graph::GcnVars negate{{t.constant(-Matrix::Identity(3, 3))}};
  Var zero = graph::gcn_forward(t.constant(x), t.constant(Matrix::Identity(5, 5)), negate);
  CHECK(zero.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gcn forward matches the dense reference on random instances", "[graph_core]") {
  Rng rng(705);
  for (int inst = 0; inst < 100; ++inst) {
    const int n = rng.uniform_int(1, 6), c = rng.uniform_int(1, 4);
    const Matrix x = rng.normal_matrix(n, c, 1.0);
    Matrix a = rng.uniform_matrix(n, n, 0.0, 1.0);
    a = ((a + a.transpose()) / 2.0).eval();
    for (int i = 0; i < n; ++i) a(i, i) = 0.0;
    std::vector<Matrix> ws{rng.normal_matrix(c, c, 1.0), rng.normal_matrix(c, c, 1.0)};

    Tape t;
    graph::GcnVars gv{{t.constant(ws[0]), t.constant(ws[1])}};
    Var a_hat = graph::normalize_adjacency(t.constant(a));
    const Matrix got = graph::gcn_forward(t.constant(x), a_hat, gv).value();

    oracle::GraphRefWeights w;
    w.gcn_weights = ws;
    const Matrix want = oracle::dense_graph_reference(x, a, w, oracle::GraphRefMode::kGcn);
    REQUIRE(max_abs_diff(got, want) < 1e-9);
  }
}

TEST_CASE("gcn gradients match finite differences", "[graph_core]") {
  Rng rng(706);
  for (int draw = 0; draw < 20; ++draw) {
    const int n = rng.uniform_int(2, 5), c = rng.uniform_int(2, 4);
    const Matrix x = rng.normal_matrix(n, c, 1.0);
    Matrix a = rng.uniform_matrix(n, n, 0.0, 1.0);
    a = ((a + a.transpose()) / 2.0).eval();
    for (int i = 0; i < n; ++i) a(i, i) = 0.0;
    const Matrix w0 = rng.normal_matrix(c, c, 1.0);
    const Matrix w1 = rng.normal_matrix(c, c, 1.0);
    const Matrix probe = rng.normal_matrix(n, c, 1.0);

    auto build = [&](Tape& t, const Matrix& wv, int which) {
      graph::GcnVars gv{{t.constant(which == 0 ? wv : w0), t.constant(which == 1 ? wv : w1)}};
      Var a_hat = graph::normalize_adjacency(t.constant(a));
      return graph::gcn_forward(t.constant(x), a_hat, gv);
    };
    for (int which = 0; which < 2; ++which) {
      const Matrix& w_now = which == 0 ? w0 : w1;
      Tape t;
      Var wv = t.input(w_now);
      graph::GcnVars gv{{which == 0 ? wv : t.constant(w0), which == 1 ? wv : t.constant(w1)}};
      Var a_hat = graph::normalize_adjacency(t.constant(a));
      Var out = graph::gcn_forward(t.constant(x), a_hat, gv);
      t.backward(ag::sum_all(ag::hadamard(out, t.constant(probe))));
      const Matrix analytic = wv.grad();
      auto loss = [&](const Matrix& wcand) {
        Tape t2;
        return (build(t2, wcand, which).value().array() * probe.array()).sum();
      };
      const auto rep = oracle::check_gradient(loss, w_now, analytic);
      INFO("layer " << which << " max rel err " << rep.max_rel_error);
      REQUIRE(rep.ok(1e-4));
    }
  }
}

TEST_CASE("graph attention singleton and symmetric neighborhoods", "[graph_core]") {
  Rng rng(707);
  Tape t;
  graph::GatVars gat{t.constant(rng.normal_matrix(3, 3, 1.0)),
                     t.constant(rng.normal_matrix(6, 1, 1.0))};

  // Singleton neighborhood: attention coefficient 1 regardless of params.
  Matrix mask1 = Matrix::Zero(2, 2);
  mask1(0, 1) = 1.0;
  mask1(1, 0) = 1.0;
  const Matrix x = rng.normal_matrix(2, 3, 1.0);
  const Matrix alpha = graph::attention_coefficients(t.constant(x), mask1, gat).value();
  CHECK(alpha(0, 1) == Catch::Approx(1.0));
  CHECK(alpha(1, 0) == Catch::Approx(1.0));

  // Two neighbors with identical features split attention evenly.
  Matrix x3(3, 3);
  x3.row(0) = rng.normal_matrix(1, 3, 1.0);
  x3.row(1) = rng.normal_matrix(1, 3, 1.0);
  x3.row(2) = x3.row(1);
  Matrix mask3 = Matrix::Zero(3, 3);
  mask3(0, 1) = mask3(0, 2) = 1.0;
  mask3(1, 1) = mask3(2, 2) = 1.0;
  const Matrix alpha3 = graph::attention_coefficients(t.constant(x3), mask3, gat).value();
  CHECK(alpha3(0, 1) == Catch::Approx(0.5));
  CHECK(alpha3(0, 2) == Catch::Approx(0.5));
}

TEST_CASE("graph attention rows sum to one and match the dense reference",
          "[graph_core]") {
  Rng rng(708);
  for (int inst = 0; inst < 100; ++inst) {
    const int n = rng.uniform_int(1, 7), c = rng.uniform_int(2, 4);
    const int cp = rng.uniform_int(2, 4);
    const Matrix x = rng.normal_matrix(n, c, 1.0);
    Matrix mask(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) mask(i, j) = rng.uniform() < 0.4 ? 1.0 : 0.0;
    const Matrix w = rng.normal_matrix(c, cp, 1.0);
    const Matrix a = rng.normal_matrix(2 * cp, 1, 1.0);

    Tape t;
    graph::GatVars gat{t.constant(w), t.constant(a)};
    const Matrix alpha = graph::attention_coefficients(t.constant(x), mask, gat).value();
    for (int i = 0; i < n; ++i) REQUIRE(alpha.row(i).sum() == Catch::Approx(1.0).margin(1e-6));

    const Matrix got = graph::graph_attention(t.constant(x), mask, gat).value();
    const Matrix want = oracle::ref_gat(x, mask, w, a.col(0), 0.2);
    REQUIRE(max_abs_diff(got, want) < 1e-9);
  }
}

TEST_CASE("graph attention gradients match finite differences", "[graph_core]") {
  Rng rng(709);
  for (int draw = 0; draw < 20; ++draw) {
    const int n = rng.uniform_int(2, 5), c = 3, cp = 3;
    const Matrix x = rng.normal_matrix(n, c, 1.0);
    Matrix mask(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) mask(i, j) = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const Matrix w0 = rng.normal_matrix(c, cp, 1.0);
    const Matrix a0 = rng.normal_matrix(2 * cp, 1, 1.0);
    const Matrix probe = rng.normal_matrix(n, cp, 1.0);

    // w gradient
    {
      Tape t;
      Var wv = t.input(w0);
      graph::GatVars gat{wv, t.constant(a0)};
      Var out = graph::graph_attention(t.constant(x), mask, gat);
      t.backward(ag::sum_all(ag::hadamard(out, t.constant(probe))));
      auto loss = [&](const Matrix& wc) {
        Tape t2;
        graph::GatVars g2{t2.constant(wc), t2.constant(a0)};
        return (graph::graph_attention(t2.constant(x), mask, g2).value().array() *
                probe.array())
            .sum();
      };
      REQUIRE(oracle::check_gradient(loss, w0, wv.grad()).ok(1e-4));
    }
    // attention-vector gradient
    {
      Tape t;
      Var av = t.input(a0);
      graph::GatVars gat{t.constant(w0), av};
      Var out = graph::graph_attention(t.constant(x), mask, gat);
      t.backward(ag::sum_all(ag::hadamard(out, t.constant(probe))));
      auto loss = [&](const Matrix& ac) {
        Tape t2;
        graph::GatVars g2{t2.constant(w0), t2.constant(ac)};
        return (graph::graph_attention(t2.constant(x), mask, g2).value().array() *
                probe.array())
            .sum();
      };
      REQUIRE(oracle::check_gradient(loss, a0, av.grad()).ok(1e-4));
    }
  }
}
