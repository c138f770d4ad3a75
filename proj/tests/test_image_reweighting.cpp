#include <catch2/catch_amalgamated.hpp>

#include "fgrr/image_reweighting.hpp"
#include "fgrr/oracle/finite_difference.hpp"

using namespace fgrr;
using ag::Tape;
using ag::Var;

namespace {

std::map<int, std::pair<Vector, Vector>> shared_map(
    const std::vector<std::pair<Vector, Vector>>& pairs) {
  std::map<int, std::pair<Vector, Vector>> m;
  int k = 1;
  for (const auto& p : pairs) m.emplace(k++, p);
  return m;
}

}  // namespace

TEST_CASE("w1 tabulated values", "[image_reweighting]") {
  CHECK(compute_w1({}) == 1.0);

  Vector c(2);
  c << 0.4, -0.2;
  CHECK(compute_w1(shared_map({{c, c}, {c, c}, {c, c}})) == Catch::Approx(4.0));

  Vector a(2), b(2);
  a << std::sqrt(std::log(2.0)), 0.0;
  b << 0.0, 0.0;
  CHECK(compute_w1(shared_map({{a, b}})) == Catch::Approx(1.5).margin(1e-12));
}

TEST_CASE("w1 monotone as centroids approach", "[image_reweighting]") {
  Rng rng(1001);
  Vector c = rng.normal_matrix(3, 1, 1.0).col(0);
  Vector offset = rng.normal_matrix(3, 1, 1.0).col(0);
  double prev = -1.0;
  for (double s : {1.0, 0.7, 0.4, 0.1, 0.0}) {
    const double w = compute_w1(shared_map({{c, c + s * offset}}));
    REQUIRE(w >= 1.0);
    REQUIRE(w >= prev);
    prev = w;
  }
}

TEST_CASE("w2 tabulated values and errors", "[image_reweighting]") {
  CHECK(compute_w2(0, 4) == Catch::Approx(1.0));
  CHECK(compute_w2(4, 4) == Catch::Approx(2.71828183).margin(1e-8));
  CHECK(compute_w2(1, 2) == Catch::Approx(1.64872127).margin(1e-8));
  CHECK_THROWS_AS(compute_w2(5, 4), std::invalid_argument);
  CHECK_THROWS_AS(compute_w2(-1, 4), std::invalid_argument);

  double prev = 0.0;
  for (int n = 0; n <= 6; ++n) {
    const double w = compute_w2(n, 6);
    REQUIRE(w > prev);
    REQUIRE(w >= 1.0);
    REQUIRE(w <= std::exp(1.0) + 1e-12);
    prev = w;
  }
}

TEST_CASE("ior loss closed-form value at the indifferent discriminator",
          "[image_reweighting]") {
  Rng rng(1002);
  // All-zero discriminator outputs exactly 0.5 for any input.
  DiscriminatorParams disc{ag::Param("hw", Matrix::Zero(3, 4)),
                           ag::Param("hb", Matrix::Zero(1, 4)),
                           ag::Param("ow", Matrix::Zero(4, 1)),
                           ag::Param("ob", Matrix::Zero(1, 1))};
  Tape t;
  auto dv = bind(t, disc);
  Var src = t.constant(rng.normal_matrix(1, 3, 1.0));
  Var tgt = t.constant(rng.normal_matrix(1, 3, 1.0));
  const double base = ior_loss(t, src, tgt, dv, IorWeights{1.0, 1.0}).scalar();
  CHECK(base == Catch::Approx(2.0 * std::log(2.0)).margin(1e-9));

  const double doubled = ior_loss(t, src, tgt, dv, IorWeights{2.0, 2.0}).scalar();
  CHECK(doubled == Catch::Approx(2.0 * base).margin(1e-9));
}

TEST_CASE("ior loss depends only on the pooled features, not call order",
          "[image_reweighting]") {
  Rng rng(1003);
  DiscriminatorParams disc = DiscriminatorParams::init(3, 4, rng, "disc");
  const Matrix s = rng.normal_matrix(1, 3, 1.0);
  const Matrix g = rng.normal_matrix(1, 3, 1.0);
  Tape t1;
  auto d1 = bind(t1, disc);
  const double a = ior_loss(t1, t1.constant(s), t1.constant(g), d1, IorWeights{}).scalar();
  Tape t2;
  auto d2 = bind(t2, disc);
  const double b = ior_loss(t2, t2.constant(s), t2.constant(g), d2, IorWeights{}).scalar();
  CHECK(a == b);
}

TEST_CASE("discriminator gradients match finite differences", "[image_reweighting]") {
  Rng rng(1004);
  for (int draw = 0; draw < 20; ++draw) {
    DiscriminatorParams disc = DiscriminatorParams::init(3, 4, rng, "disc");
    const Matrix s = rng.normal_matrix(1, 3, 1.0);
    const Matrix g = rng.normal_matrix(1, 3, 1.0);
    const IorWeights w{rng.uniform(1.0, 2.0), rng.uniform(1.0, std::exp(1.0))};

    Tape t;
    auto dv = bind(t, disc);
    Var loss = ior_loss(t, t.constant(s), t.constant(g), dv, w);
    t.backward(loss);

    std::vector<ag::Param*> params{&disc.hidden_w, &disc.hidden_b, &disc.out_w, &disc.out_b};
    for (ag::Param* prm : params) {
      const Matrix analytic = t.param_grad(*prm);
      const Matrix saved = prm->value;
      auto loss_fn = [&](const Matrix& cand) {
        prm->value = cand;
        Tape t2;
        auto d2 = bind(t2, disc);
        const double v = ior_loss(t2, t2.constant(s), t2.constant(g), d2, w).scalar();
        prm->value = saved;
        return v;
      };
      const auto rep = oracle::check_gradient(loss_fn, saved, analytic);
      INFO("param " << prm->name << " err " << rep.max_rel_error);
      REQUIRE(rep.ok(1e-4));
      prm->value = saved;
    }
  }
}

TEST_CASE("adversarial contract: discriminator descends, extractor ascends",
          "[image_reweighting]") {
  Rng rng(1005);
  DiscriminatorParams disc = DiscriminatorParams::init(3, 8, rng, "disc");
  ag::Param src_feat("src", rng.normal_matrix(1, 3, 1.0));
  ag::Param tgt_feat("tgt", rng.normal_matrix(1, 3, 1.0));
  const double lr = 1e-3;

  auto eval_loss = [&]() {
    Tape t;
    auto dv = bind(t, disc);
    return ior_loss(t, t.constant(src_feat.value), t.constant(tgt_feat.value), dv,
                    IorWeights{})
        .scalar();
  };

  // One step on the discriminator only.
  {
    const double before = eval_loss();
    Tape t;
    auto dv = bind(t, disc);
    Var loss = ior_loss(t, t.constant(src_feat.value), t.constant(tgt_feat.value), dv,
                        IorWeights{});
    t.backward(loss);
    std::vector<ag::Param*> params{&disc.hidden_w, &disc.hidden_b, &disc.out_w, &disc.out_b};
    std::vector<Matrix> saved;
    for (ag::Param* p : params) {
      saved.push_back(p->value);
      p->value -= lr * t.param_grad(*p);
    }
    CHECK(eval_loss() < before);
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = saved[i];
  }

  // One step on the extractor (features) using the reversed gradients, the
  // way the training loop applies them.
  {
    const double before = eval_loss();
    Tape t;
    auto dv = bind(t, disc);
    Var s = t.bind(src_feat);
    Var g = t.bind(tgt_feat);
    Var loss = ior_loss(t, s, g, dv, IorWeights{});
    t.backward(loss);
    src_feat.value -= lr * t.param_grad(src_feat);
    tgt_feat.value -= lr * t.param_grad(tgt_feat);
    CHECK(eval_loss() > before);
  }
}
