#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "fgrr/scene.hpp"

using namespace fgrr;

namespace {

SceneSpec base_spec(std::uint64_t seed, const DomainStyle& style) {
  SceneSpec spec;
  spec.image_size = 96;
  spec.num_classes = 4;
  spec.style = style;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("scene generation is bitwise deterministic", "[scene]") {
  const SceneSpec spec = base_spec(1234, source_style());
  const Scene a = generate_scene(spec);
  const Scene b = generate_scene(spec);
  REQUIRE(a.image.rows() == b.image.rows());
  CHECK((a.image - b.image).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a.boxes.size() == b.boxes.size());
  for (std::size_t i = 0; i < a.boxes.size(); ++i) {
    CHECK(a.boxes[i].x1 == b.boxes[i].x1);
    CHECK(a.labels[i] == b.labels[i]);
  }
}

TEST_CASE("scenes respect object count and bounds", "[scene]") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene s = generate_scene(base_spec(seed, source_style()));
    REQUIRE(s.boxes.size() >= 1);
    REQUIRE(s.boxes.size() <= 5);
    REQUIRE(s.boxes.size() == s.labels.size());
    for (std::size_t i = 0; i < s.boxes.size(); ++i) {
      const Box& b = s.boxes[i];
      REQUIRE(b.valid());
      REQUIRE(b.area() > 0.0);
      REQUIRE(b.x1 >= 0.0);
      REQUIRE(b.y1 >= 0.0);
      REQUIRE(b.x2 <= 96.0);
      REQUIRE(b.y2 <= 96.0);
      REQUIRE(s.labels[i] >= 1);
      REQUIRE(s.labels[i] <= 4);
    }
    REQUIRE(s.image.minCoeff() >= 0.0);
    REQUIRE(s.image.maxCoeff() <= 1.0);
  }
}

TEST_CASE("domain styles produce a measurable shift", "[scene]") {
  double total_mad = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene src = generate_scene(base_spec(seed, source_style()));
    const Scene tgt = generate_scene(base_spec(seed, target_style("moderate")));
    total_mad += (src.image - tgt.image).cwiseAbs().mean();
  }
  const double mean_mad = total_mad / 100.0;
  INFO("mean per-pixel MAD " << mean_mad);
  CHECK(mean_mad > 0.05);
}

TEST_CASE("dataset export/import round trip", "[scene]") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fgrr_scene_roundtrip";
  fs::remove_all(dir);
  DatasetLayout layout;
  layout.source_train = 3;
  layout.target_train = 3;
  layout.source_val = 2;
  layout.target_val = 2;
  export_dataset(dir.string(), layout, "moderate", 96, 4, 7);

  const auto src = import_split((dir / "source_train").string());
  const auto tgt = import_split((dir / "target_train").string());
  REQUIRE(src.size() == 3);
  REQUIRE(tgt.size() == 3);
  for (const auto& s : src) {
    CHECK(s.domain == Domain::kSource);
    CHECK(s.image_size == 96);
    CHECK(s.image.minCoeff() >= 0.0);
    CHECK(s.image.maxCoeff() <= 1.0);
    REQUIRE(s.boxes.size() == s.labels.size());
    REQUIRE(s.boxes.size() >= 1);
  }

  // Round trip of the pixel data is exact up to 8-bit quantization.
  SceneSpec spec = base_spec(src[0].seed, source_style());
  const Scene regen = generate_scene(spec);
  CHECK((regen.image - src[0].image).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);
  fs::remove_all(dir);
}
