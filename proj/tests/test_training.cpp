#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "fgrr/config_io.hpp"
#include "fgrr/run.hpp"
#include "fgrr/training.hpp"

using namespace fgrr;

namespace {

// Tiny dataset + config so training tests stay fast.
TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.detector.image_size = 64;
  cfg.detector.c1 = 4;
  cfg.detector.c2 = 4;
  cfg.detector.c3 = 8;
  cfg.detector.top_n = 16;
  cfg.epochs = 2;
  cfg.layout.source_train = 4;
  cfg.layout.target_train = 4;
  cfg.layout.source_val = 2;
  cfg.layout.target_val = 3;
  cfg.warmup_fraction = 0.2;
  cfg.tau1 = 0.3;  // permissive so the pixel machinery engages on tiny runs
  cfg.min_score = 0.3;
  return cfg;
}

std::string tiny_dataset(const TrainConfig& cfg, const std::string& tag) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("fgrr_train_" + tag);
  fs::remove_all(dir);
  export_dataset(dir.string(), cfg.layout, cfg.shift, cfg.detector.image_size,
                 cfg.detector.num_classes, 3);
  return dir.string();
}

}  // namespace

TEST_CASE("total loss composes linearly with the paper defaults", "[training]") {
  TrainConfig cfg;  // lambda1 = lambda2 = 0.1, lambda3 = 1
  LossBundle b{1.0, 2.0, 3.0, 4.0};
  CHECK(std::abs(total_loss(b, cfg) - 5.5) < 1e-12);

  Rng rng(1301);
  for (int it = 0; it < 100; ++it) {
    TrainConfig c2;
    c2.lambda1 = rng.uniform(0, 2);
    c2.lambda2 = rng.uniform(0, 2);
    c2.lambda3 = rng.uniform(0, 2);
    LossBundle r{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5)};
    const double want = r.det + c2.lambda1 * r.nc + c2.lambda2 * r.cda + c2.lambda3 * r.ior;
    REQUIRE(std::abs(total_loss(r, c2) - want) < 1e-12);
  }

  LossBundle bad{1.0, std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0};
  CHECK_THROWS_WITH(total_loss(bad, cfg), Catch::Matchers::ContainsSubstring("nc"));

  TrainConfig source_only;
  source_only.lambda1 = source_only.lambda2 = source_only.lambda3 = 0.0;
  CHECK(total_loss(LossBundle{1.5, 9.0, 9.0, 9.0}, source_only) == 1.5);
}

TEST_CASE("epoch pairing schedule is deterministic", "[training]") {
  const auto a = epoch_pairs(42, 3, 10, 12);
  const auto b = epoch_pairs(42, 3, 10, 12);
  REQUIRE(a == b);
  CHECK(a.size() == 10);
  const auto c = epoch_pairs(42, 4, 10, 12);
  CHECK(a != c);
}

TEST_CASE("identical config and seed reproduce metrics bitwise", "[training]") {
  TrainConfig cfg = tiny_config();
  cfg.seed = 11;
  const std::string data = tiny_dataset(cfg, "determinism");
  const Dataset ds = load_dataset(data);

  Rng r1(cfg.seed);
  FgrrModel m1 = FgrrModel::init(cfg, r1);
  const RunReport rep1 = train_on(m1, cfg, ds);
  Rng r2(cfg.seed);
  FgrrModel m2 = FgrrModel::init(cfg, r2);
  const RunReport rep2 = train_on(m2, cfg, ds);

  REQUIRE(metrics_csv(rep1) == metrics_csv(rep2));
  REQUIRE(rep1.final_map == rep2.final_map);
  std::filesystem::remove_all(data);
}

TEST_CASE("all-toggles-off training equals an independent source-only loop",
          "[training]") {
  TrainConfig cfg = tiny_config();
  cfg.prr = cfg.srr = cfg.ior = false;
  cfg.seed = 7;
  const std::string data = tiny_dataset(cfg, "source_only");
  const Dataset ds = load_dataset(data);

  // Loop A: the harness step with everything disabled.
  Rng ra(cfg.seed);
  FgrrModel ma = FgrrModel::init(cfg, ra);
  SgdOptimizer opt(ma, cfg);
  std::vector<double> losses_a;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = epoch >= cfg.epochs / 2 ? cfg.lr * cfg.lr_decay : cfg.lr;
    for (const auto& [si, ti] : epoch_pairs(cfg.seed, epoch, 4, 4)) {
      ag::Tape tape;
      ag::Var total;
      const StepOutcome out = adaptation_step(tape, ma, cfg, ds.source_train[si],
                                              ds.target_train[ti], true, &total);
      tape.backward(total);
      opt.step(tape, lr);
      losses_a.push_back(out.total);
    }
  }

  // Loop B: separately coded source-only training (plain detector loss,
  // manual momentum SGD over the detector parameters).
  Rng rb(cfg.seed);
  FgrrModel mb = FgrrModel::init(cfg, rb);
  std::map<ag::Param*, Matrix> velocity;
  std::vector<double> losses_b;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = epoch >= cfg.epochs / 2 ? cfg.lr * cfg.lr_decay : cfg.lr;
    for (const auto& [si, ti] : epoch_pairs(cfg.seed, epoch, 4, 4)) {
      const LoadedScene& scene = ds.source_train[si];
      ag::Tape tape;
      DetectorVars dv = bind(tape, mb.detector);
      ShallowOut sh = backbone_shallow(tape, scene.image, cfg.detector.image_size, dv);
      DeepOut dp = backbone_deep(tape, sh.rows, sh.h, sh.w, dv);
      HeadsOut heads = detector_heads(tape, dp, dv, cfg.detector, Domain::kSource);
      ag::Var loss = ag::add(
          detection_loss(tape, heads.cls_logits, heads.reg, heads.prop_boxes, scene.boxes,
                         scene.labels),
          objectness_loss(tape, heads.obj_logits, cfg.detector, dp.h, dp.w, scene.boxes));
      losses_b.push_back(loss.scalar());
      tape.backward(loss);
      for (ag::Param* p : mb.detector.all()) {
        const Matrix g = tape.param_grad(*p);
        auto [it, fresh] = velocity.try_emplace(p, Matrix::Zero(g.rows(), g.cols()));
        it->second = cfg.momentum * it->second + g;
        p->value -= lr * it->second;
      }
    }
  }

  REQUIRE(losses_a.size() == losses_b.size());
  for (std::size_t i = 0; i < losses_a.size(); ++i) {
    INFO("step " << i);
    REQUIRE(std::abs(losses_a[i] - losses_b[i]) < 1e-6);
  }
  std::filesystem::remove_all(data);
}

TEST_CASE("disabled modules contribute zero loss and stay frozen", "[training]") {
  TrainConfig cfg = tiny_config();
  cfg.prr = false;
  cfg.srr = false;
  cfg.ior = true;
  cfg.warmup_fraction = 0.0;
  cfg.seed = 9;
  const std::string data = tiny_dataset(cfg, "freeze");
  const Dataset ds = load_dataset(data);

  Rng rng(cfg.seed);
  FgrrModel model = FgrrModel::init(cfg, rng);
  std::vector<std::uint64_t> prr_hashes, srr_hashes, ior_hashes;
  for (ag::Param* p : model.prr_group()) prr_hashes.push_back(bytes_hash(p->value));
  for (ag::Param* p : model.srr_group()) srr_hashes.push_back(bytes_hash(p->value));
  for (ag::Param* p : model.ior_group()) ior_hashes.push_back(bytes_hash(p->value));

  SgdOptimizer opt(model, cfg);
  double nc_sum = 0.0, cda_sum = 0.0;
  for (const auto& [si, ti] : epoch_pairs(cfg.seed, 0, 4, 4)) {
    ag::Tape tape;
    ag::Var total;
    const StepOutcome out =
        adaptation_step(tape, model, cfg, ds.source_train[si], ds.target_train[ti], true,
                        &total);
    tape.backward(total);
    opt.step(tape, cfg.lr);
    nc_sum += std::abs(out.losses.nc);
    cda_sum += std::abs(out.losses.cda);
  }
  CHECK(nc_sum == 0.0);
  CHECK(cda_sum == 0.0);
  // Disabled groups are bitwise untouched; the active discriminator moved.
  std::size_t i = 0;
  for (ag::Param* p : model.prr_group())
    REQUIRE(bytes_hash(p->value) == prr_hashes[i++]);
  i = 0;
  for (ag::Param* p : model.srr_group())
    REQUIRE(bytes_hash(p->value) == srr_hashes[i++]);
  bool disc_moved = false;
  i = 0;
  for (ag::Param* p : model.ior_group())
    disc_moved = disc_moved || bytes_hash(p->value) != ior_hashes[i++];
  CHECK(disc_moved);
  std::filesystem::remove_all(data);
}

TEST_CASE("training with a huge learning rate aborts on divergence", "[training]") {
  TrainConfig cfg = tiny_config();
  cfg.lr = 1e14;
  cfg.epochs = 3;
  cfg.seed = 13;
  const std::string data = tiny_dataset(cfg, "diverge");
  const Dataset ds = load_dataset(data);
  Rng rng(cfg.seed);
  FgrrModel model = FgrrModel::init(cfg, rng);
  const RunReport rep = train_on(model, cfg, ds);
  CHECK(rep.diverged);
  CHECK(rep.history.size() < 3u);
  std::filesystem::remove_all(data);
}

TEST_CASE("config json round trip is field exact", "[training]") {
  TrainConfig cfg = tiny_config();
  cfg.lambda2 = 0.37;
  cfg.seed = 123456789ull;
  cfg.shift = "severe";
  cfg.detector.anchor_sizes = {11.0, 17.0};
  const TrainConfig back = config_from_json(to_json(cfg));
  CHECK(back.lambda2 == cfg.lambda2);
  CHECK(back.seed == cfg.seed);
  CHECK(back.shift == cfg.shift);
  CHECK(back.detector.anchor_sizes == cfg.detector.anchor_sizes);
  CHECK(back.detector.image_size == cfg.detector.image_size);
  CHECK(back.layout.target_val == cfg.layout.target_val);
  CHECK(back.tau1 == cfg.tau1);
}

TEST_CASE("checkpoint round trip restores parameters bitwise", "[training]") {
  namespace fs = std::filesystem;
  TrainConfig cfg = tiny_config();
  Rng rng(21);
  FgrrModel model = FgrrModel::init(cfg, rng);
  const fs::path path = fs::temp_directory_path() / "fgrr_ckpt_test.json";
  save_checkpoint(path.string(), model, cfg);

  Rng rng2(99);  // different init, should be fully overwritten
  FgrrModel other = FgrrModel::init(cfg, rng2);
  load_checkpoint(path.string(), other);
  auto a = model.all_params();
  auto b = other.all_params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    REQUIRE(bytes_hash(a[i]->value) == bytes_hash(b[i]->value));
  fs::remove(path);
}

TEST_CASE("run_training writes the full artifact set", "[training]") {
  namespace fs = std::filesystem;
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.seed = 31;
  const std::string data = tiny_dataset(cfg, "artifacts");
  const fs::path out = fs::temp_directory_path() / "fgrr_run_artifacts";
  fs::remove_all(out);
  const RunReport rep = run_training(cfg, data, out.string());
  CHECK(rep.history.size() == 1u);
  for (const char* name :
       {"metrics.csv", "report.json", "loss_curves.png", "map_curve.png", "checkpoint.json"})
    CHECK(fs::exists(out / name));
  fs::remove_all(out);
  fs::remove_all(data);
}
