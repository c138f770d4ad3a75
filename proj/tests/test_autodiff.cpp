#include <catch2/catch_amalgamated.hpp>

#include "fgrr/autodiff.hpp"
#include "fgrr/oracle/finite_difference.hpp"

using namespace fgrr;
using ag::Tape;
using ag::Var;

namespace {

// Fixed random projection turning any op output into a scalar probe loss.
double probe_loss(const Matrix& out, const Matrix& probe) {
  return (out.array() * probe.array()).sum();
}

Var probe_var(Tape& t, Var out, const Matrix& probe) {
  return ag::sum_all(ag::hadamard(out, t.constant(probe)));
}

// Checks d(probe . f(x)) / dx against central differences.
template <typename Builder>
void check_input_gradient(const Matrix& x0, Builder build, double tol = 1e-6) {
  Rng probe_rng(99);
  Tape t0;
  Var x = t0.input(x0);
  Var out = build(t0, x);
  const Matrix probe = probe_rng.normal_matrix(
      static_cast<int>(out.value().rows()), static_cast<int>(out.value().cols()), 1.0);
  Var loss = probe_var(t0, out, probe);
  t0.backward(loss);
  const Matrix analytic = x.grad();

  auto loss_fn = [&](const Matrix& xv) {
    Tape t;
    Var xi = t.input(xv);
    Var o = build(t, xi);
    return probe_loss(o.value(), probe);
  };
  const auto report = oracle::check_gradient(loss_fn, x0, analytic);
  INFO("max relative error " << report.max_rel_error);
  CHECK(report.ok(tol));
}

}  // namespace

TEST_CASE("arithmetic primitives match finite differences", "[autodiff]") {
  Rng rng(42);
  const Matrix x0 = rng.normal_matrix(3, 4, 1.0);
  const Matrix other = rng.normal_matrix(3, 4, 1.0);
  const Matrix right = rng.normal_matrix(4, 5, 1.0);

  check_input_gradient(x0, [&](Tape& t, Var x) {
    return ag::add(ag::hadamard(x, t.constant(other)), ag::scale(x, -1.7));
  });
  check_input_gradient(x0, [&](Tape& t, Var x) {
    return ag::matmul(ag::sub(x, t.constant(other)), t.constant(right));
  });
  check_input_gradient(x0, [&](Tape&, Var x) { return ag::transpose(x); });
  check_input_gradient(x0, [&](Tape&, Var x) { return ag::add_scalar(ag::square(x), 0.3); });
}

TEST_CASE("nonlinearities match finite differences", "[autodiff]") {
  Rng rng(43);
  const Matrix x0 = rng.normal_matrix(4, 3, 1.0);
  check_input_gradient(x0, [](Tape&, Var x) { return ag::relu(x); });
  check_input_gradient(x0, [](Tape&, Var x) { return ag::leaky_relu(x, 0.2); });
  check_input_gradient(x0, [](Tape&, Var x) { return ag::sigmoid(x); });
  check_input_gradient(x0, [](Tape&, Var x) { return ag::exp_elem(ag::scale(x, 0.3)); });

  const Matrix pos = (x0.array().abs() + 0.5).matrix();
  check_input_gradient(pos, [](Tape&, Var x) { return ag::log_elem(x); });
  check_input_gradient(pos, [](Tape&, Var x) { return ag::sqrt_elem(x); });
  check_input_gradient(pos, [](Tape&, Var x) { return ag::rsqrt_elem(x); });
}

TEST_CASE("reductions and structure ops match finite differences", "[autodiff]") {
  Rng rng(44);
  const Matrix x0 = rng.normal_matrix(5, 3, 1.0);
  check_input_gradient(x0, [](Tape&, Var x) { return ag::mean_rows(x); });
  check_input_gradient(x0, [](Tape&, Var x) { return ag::row_sums(x); });
  check_input_gradient(x0, [](Tape&, Var x) { return ag::l2_norm(x); });
  check_input_gradient(x0, [](Tape&, Var x) { return ag::slice_rows(x, 1, 3); });
  check_input_gradient(x0, [](Tape&, Var x) {
    return ag::gather_rows(x, std::vector<int>{4, 0, 0, 2});
  });
  check_input_gradient(x0, [&](Tape& t, Var x) {
    Var rows = ag::scale(ag::slice_rows(x, 0, 2), 2.0);
    return ag::scatter_add_rows(x, std::vector<int>{3, 1}, rows);
  });
  check_input_gradient(x0, [&](Tape& t, Var x) {
    return ag::concat_rows(x, ag::scale(x, -0.5));
  });
}

TEST_CASE("softmax and losses match finite differences", "[autodiff]") {
  Rng rng(45);
  const Matrix x0 = rng.normal_matrix(4, 5, 1.0);
  check_input_gradient(x0, [](Tape&, Var x) { return ag::softmax_rows(x); });

  Matrix mask = Matrix::Zero(4, 4);
  mask(0, 1) = mask(1, 0) = mask(1, 2) = mask(2, 1) = mask(3, 3) = 1.0;
  mask(0, 0) = mask(2, 2) = 1.0;
  const Matrix s0 = rng.normal_matrix(4, 4, 1.0);
  check_input_gradient(s0, [&](Tape&, Var x) { return ag::masked_softmax_rows(x, mask); });

  const std::vector<int> labels{1, 4, 0, 2};
  check_input_gradient(x0, [&](Tape&, Var x) { return ag::cross_entropy_mean(x, labels); });

  Matrix targets(3, 2), weights(3, 2);
  targets << 1, 0, 0, 1, 1, 0;
  weights << 1, 1, 0, 1, 1, 1;
  const Matrix logits0 = rng.normal_matrix(3, 2, 1.5);
  check_input_gradient(logits0, [&](Tape&, Var x) {
    return ag::bce_logits_mean(x, targets, weights);
  });

  const Matrix target = rng.normal_matrix(3, 4, 2.0);
  const Matrix pred0 = rng.normal_matrix(3, 4, 2.0);
  check_input_gradient(pred0, [&](Tape&, Var x) { return ag::smooth_l1_mean(x, target); });
}

TEST_CASE("conv2d matches finite differences in input and weights", "[autodiff]") {
  Rng rng(46);
  const int h = 5, w = 6, cin = 2, cout = 3;
  const Matrix x0 = rng.normal_matrix(h * w, cin, 1.0);
  const Matrix w0 = rng.normal_matrix(cin * 9, cout, 0.5);
  const Matrix b0 = rng.normal_matrix(1, cout, 0.5);

  check_input_gradient(x0, [&](Tape& t, Var x) {
    return ag::conv2d(x, t.constant(w0), t.constant(b0), h, w, 3, 2, 1);
  });
  check_input_gradient(w0, [&](Tape& t, Var wv) {
    return ag::conv2d(t.constant(x0), wv, t.constant(b0), h, w, 3, 2, 1);
  });
  check_input_gradient(b0, [&](Tape& t, Var bv) {
    return ag::conv2d(t.constant(x0), t.constant(w0), bv, h, w, 3, 2, 1);
  });

  // 1x1 convolution is a per-pixel linear map.
  const Matrix w1 = rng.normal_matrix(cin, cout, 0.5);
  Tape t;
  Var y = ag::conv2d(t.input(x0), t.constant(w1), t.constant(b0), h, w, 1, 1, 0);
  Matrix expect = x0 * w1;
  expect.rowwise() += b0.row(0);
  CHECK(max_abs_diff(y.value(), expect) < 1e-12);
}

TEST_CASE("roi average pooling matches finite differences", "[autodiff]") {
  Rng rng(47);
  const int h = 6, w = 6, c = 2;
  const Matrix x0 = rng.normal_matrix(h * w, c, 1.0);
  const std::vector<std::array<double, 4>> boxes{{0.5, 1.0, 4.5, 5.0}, {2.0, 2.0, 3.0, 3.0}};
  check_input_gradient(x0, [&](Tape&, Var x) { return ag::roi_avg_pool(x, h, w, boxes, 2); });

  // Constant map pools to the constant.
  Tape t;
  Var out = ag::roi_avg_pool(t.constant(Matrix::Constant(h * w, c, 3.5)), h, w, boxes, 2);
  CHECK(max_abs_diff(out.value(), Matrix::Constant(2, 8, 3.5)) < 1e-12);
}

TEST_CASE("pairwise edge scores match finite differences", "[autodiff]") {
  Rng rng(48);
  const Matrix vs0 = rng.normal_matrix(3, 4, 1.0);
  const Matrix vt0 = rng.normal_matrix(5, 4, 1.0);
  const Matrix th0 = rng.normal_matrix(8, 1, 0.7);
  check_input_gradient(vs0, [&](Tape& t, Var v) {
    return ag::pairwise_edge_scores(v, t.constant(vt0), t.constant(th0));
  });
  check_input_gradient(vt0, [&](Tape& t, Var v) {
    return ag::pairwise_edge_scores(t.constant(vs0), v, t.constant(th0));
  });
  check_input_gradient(th0, [&](Tape& t, Var th) {
    return ag::pairwise_edge_scores(t.constant(vs0), t.constant(vt0), th);
  });
}

TEST_CASE("gradient reversal flips the sign", "[autodiff]") {
  Tape t;
  Var x = t.input(Matrix::Constant(2, 2, 1.5));
  Var loss = ag::sum_all(ag::grad_reverse(x, 2.0));
  t.backward(loss);
  CHECK(max_abs_diff(x.grad(), Matrix::Constant(2, 2, -2.0)) < 1e-12);
}

TEST_CASE("clamp blocks gradient outside the interval", "[autodiff]") {
  Tape t;
  Matrix x0(1, 3);
  x0 << -0.5, 0.4, 1.5;
  Var x = t.input(x0);
  Var loss = ag::sum_all(ag::clamp(x, 0.0, 1.0));
  t.backward(loss);
  Matrix expect(1, 3);
  expect << 0, 1, 0;
  CHECK(max_abs_diff(x.grad(), expect) < 1e-12);
}

TEST_CASE("bound parameters receive gradients through bind", "[autodiff]") {
  Rng rng(49);
  ag::Param p("w", rng.normal_matrix(2, 2, 1.0));
  Tape t;
  Var w = t.bind(p);
  Var loss = ag::scale(ag::sum_all(ag::square(w)), 0.5);
  t.backward(loss);
  CHECK(max_abs_diff(t.param_grad(p), p.value) < 1e-12);
}
