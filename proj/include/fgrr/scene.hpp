#pragma once

// Synthetic two-domain benchmark: scenes of colored shapes (circle, square,
// triangle, cross) on styled backgrounds, with a controllable domain shift
// (palette, background, noise, texture). Deterministic per (spec, seed).

#include <array>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fgrr/feature_map.hpp"
#include "fgrr/geometry.hpp"
#include "fgrr/matrix.hpp"
#include "fgrr/png_io.hpp"

namespace fgrr {

struct DomainStyle {
  std::array<double, 3> background{0.5, 0.5, 0.5};
  std::vector<std::array<double, 3>> object_palette;  // one entry per class
  double noise_sigma = 0.0;
  bool texture = false;  // horizontal stripe overlay on the background
};

struct SceneSpec {
  int image_size = 96;
  int num_classes = 4;
  DomainStyle style;
  std::uint64_t seed = 0;
  int min_objects = 1;
  int max_objects = 5;

  void validate() const {
    if (image_size < 32) throw std::invalid_argument("SceneSpec: image_size too small");
    if (num_classes < 1 || num_classes > 4)
      throw std::invalid_argument("SceneSpec: shapes support 1..4 classes");
    if (static_cast<int>(style.object_palette.size()) < num_classes)
      throw std::invalid_argument("SceneSpec: palette smaller than class count");
    if (min_objects < 1 || max_objects > 5 || min_objects > max_objects)
      throw std::invalid_argument("SceneSpec: object count must stay within [1, 5]");
  }
};

struct Scene {
  Matrix image;  // (S*S) x 3 in [0, 1]
  std::vector<Box> boxes;
  std::vector<int> labels;  // 1..K
};

namespace scene_detail {

inline bool inside_shape(int cls, double dx, double dy, double half) {
  switch (cls) {
    case 1:  // circle
      return dx * dx + dy * dy <= half * half;
    case 2:  // square
      return std::abs(dx) <= half && std::abs(dy) <= half;
    case 3: {  // upward triangle
      if (dy < -half || dy > half) return false;
      const double width_here = (dy + half) / (2.0 * half) * half;
      return std::abs(dx) <= width_here;
    }
    case 4:  // cross
      return (std::abs(dx) <= half / 3.0 && std::abs(dy) <= half) ||
             (std::abs(dy) <= half / 3.0 && std::abs(dx) <= half);
    default:
      throw std::invalid_argument("inside_shape: unknown class");
  }
}

}  // namespace scene_detail

inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int s = spec.image_size;
  Scene out;
  out.image.resize(static_cast<Eigen::Index>(s) * s, 3);

  // Background with optional stripes.
  for (int y = 0; y < s; ++y) {
    const double stripe = (spec.style.texture && (y / 4) % 2 == 0) ? 0.07 : 0.0;
    for (int x = 0; x < s; ++x)
      for (int c = 0; c < 3; ++c)
        out.image(y * s + x, c) = spec.style.background[static_cast<std::size_t>(c)] + stripe;
  }

  const int count = rng.uniform_int(spec.min_objects, spec.max_objects);
  for (int obj = 0; obj < count; ++obj) {
    const int cls = rng.uniform_int(1, spec.num_classes);
    const double size = rng.uniform(16.0, 30.0);
    const double half = size / 2.0;
    Box box;
    bool placed = false;
    for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
      const double cx = rng.uniform(half + 2.0, s - half - 2.0);
      const double cy = rng.uniform(half + 2.0, s - half - 2.0);
      box = Box{cx - half, cy - half, cx + half, cy + half};
      placed = true;
      for (const Box& other : out.boxes)
        if (iou(box, other) > 0.2) placed = false;
    }
    // After 40 rejections the last candidate is accepted as-is.
    const auto& base = spec.style.object_palette[static_cast<std::size_t>(cls - 1)];
    std::array<double, 3> color;
    for (int c = 0; c < 3; ++c) color[static_cast<std::size_t>(c)] =
        std::clamp(base[static_cast<std::size_t>(c)] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    const double cx = box.center_x(), cy = box.center_y();
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
    const int y1 = std::min(s - 1, static_cast<int>(std::ceil(box.y2)));
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
    const int x1 = std::min(s - 1, static_cast<int>(std::ceil(box.x2)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (scene_detail::inside_shape(cls, x + 0.5 - cx, y + 0.5 - cy, half))
          for (int c = 0; c < 3; ++c)
            out.image(y * s + x, c) = color[static_cast<std::size_t>(c)];
    out.boxes.push_back(box);
    out.labels.push_back(cls);
  }

  if (spec.style.noise_sigma > 0.0) {
    for (Eigen::Index r = 0; r < out.image.rows(); ++r)
      for (int c = 0; c < 3; ++c)
        out.image(r, c) += spec.style.noise_sigma * rng.normal();
  }
  for (Eigen::Index r = 0; r < out.image.rows(); ++r)
    for (int c = 0; c < 3; ++c) out.image(r, c) = std::clamp(out.image(r, c), 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Domain shift presets
// ---------------------------------------------------------------------------

inline DomainStyle source_style() {
  DomainStyle st;
  st.background = {0.12, 0.14, 0.18};
  st.object_palette = {{0.95, 0.30, 0.25},   // circle: red
                       {0.30, 0.90, 0.35},   // square: green
                       {0.30, 0.45, 0.95},   // triangle: blue
                       {0.95, 0.85, 0.30}};  // cross: yellow
  st.noise_sigma = 0.02;
  st.texture = false;
  return st;
}

// Target styles keep the class -> shape assignment but move every color,
// flip the background polarity at moderate+ levels, and add noise/texture.
inline DomainStyle target_style(const std::string& shift) {
  DomainStyle st;
  if (shift == "mild") {
    st.background = {0.22, 0.24, 0.28};
    st.object_palette = {{0.80, 0.28, 0.24},
                         {0.28, 0.75, 0.33},
                         {0.28, 0.40, 0.80},
                         {0.80, 0.72, 0.28}};
    st.noise_sigma = 0.04;
    st.texture = false;
  } else if (shift == "moderate") {
    st.background = {0.78, 0.74, 0.66};
    st.object_palette = {{0.55, 0.10, 0.35},
                         {0.10, 0.50, 0.55},
                         {0.15, 0.20, 0.50},
                         {0.60, 0.45, 0.10}};
    st.noise_sigma = 0.06;
    st.texture = true;
  } else if (shift == "severe") {
    st.background = {0.88, 0.86, 0.82};
    st.object_palette = {{0.35, 0.05, 0.45},
                         {0.05, 0.35, 0.40},
                         {0.40, 0.35, 0.05},
                         {0.10, 0.10, 0.15}};
    st.noise_sigma = 0.10;
    st.texture = true;
  } else {
    throw std::invalid_argument("target_style: shift must be mild|moderate|severe");
  }
  return st;
}

// ---------------------------------------------------------------------------
// Dataset export / import (PNG + per-image JSON annotation)
// ---------------------------------------------------------------------------

struct DatasetLayout {
  int source_train = 48;
  int target_train = 48;
  int source_val = 8;
  int target_val = 24;
};

struct LoadedScene {
  Matrix image;
  int image_size = 0;
  std::vector<Box> boxes;
  std::vector<int> labels;
  Domain domain = Domain::kSource;
  std::uint64_t seed = 0;
};

namespace scene_detail {

inline void write_annotation(const std::filesystem::path& path, const Scene& scene,
                             Domain domain, std::uint64_t seed) {
  nlohmann::json j;
  j["boxes"] = nlohmann::json::array();
  for (const Box& b : scene.boxes) j["boxes"].push_back({b.x1, b.y1, b.x2, b.y2});
  j["labels"] = scene.labels;
  j["domain"] = domain == Domain::kSource ? "source" : "target";
  j["seed"] = seed;
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

inline void export_split(const std::filesystem::path& dir, int count, const SceneSpec& base,
                         Domain domain, std::uint64_t seed_base) {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    SceneSpec spec = base;
    spec.seed = seed_base + static_cast<std::uint64_t>(i);
    const Scene scene = generate_scene(spec);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04d", i);
    write_png((dir / (std::string(name) + ".png")).string(),
              to_u8(scene.image, spec.image_size, spec.image_size));
    write_annotation(dir / (std::string(name) + ".json"), scene, domain, spec.seed);
  }
}

}  // namespace scene_detail

// Writes source_train/, target_train/, source_val/, target_val/ under dir.
inline void export_dataset(const std::string& dir, const DatasetLayout& layout,
                           const std::string& shift, int image_size, int num_classes,
                           std::uint64_t seed) {
  SceneSpec src;
  src.image_size = image_size;
  src.num_classes = num_classes;
  src.style = source_style();
  SceneSpec tgt = src;
  tgt.style = target_style(shift);

  const std::filesystem::path root(dir);
  // Disjoint seed blocks per split keep the scenes independent.
  scene_detail::export_split(root / "source_train", layout.source_train, src,
                             Domain::kSource, seed * 1000003ull + 1);
  scene_detail::export_split(root / "target_train", layout.target_train, tgt,
                             Domain::kTarget, seed * 1000003ull + 500000);
  scene_detail::export_split(root / "source_val", layout.source_val, src, Domain::kSource,
                             seed * 1000003ull + 900000);
  scene_detail::export_split(root / "target_val", layout.target_val, tgt, Domain::kTarget,
                             seed * 1000003ull + 950000);

  nlohmann::json meta;
  meta["shift"] = shift;
  meta["image_size"] = image_size;
  meta["num_classes"] = num_classes;
  meta["seed"] = seed;
  std::ofstream out(root / "dataset.json");
  out << meta.dump(2) << "\n";
}

inline std::vector<LoadedScene> import_split(const std::string& split_dir) {
  std::vector<std::filesystem::path> pngs;
  for (const auto& entry : std::filesystem::directory_iterator(split_dir))
    if (entry.path().extension() == ".png") pngs.push_back(entry.path());
  std::sort(pngs.begin(), pngs.end());
  std::vector<LoadedScene> out;
  for (const auto& png_path : pngs) {
    LoadedScene ls;
    const ImageU8 img = read_png(png_path.string());
    if (img.width != img.height)
      throw std::runtime_error("import_split: non-square image " + png_path.string());
    ls.image = to_matrix(img);
    ls.image_size = img.width;
    std::filesystem::path ann = png_path;
    ann.replace_extension(".json");
    std::ifstream in(ann);
    if (!in) throw std::runtime_error("import_split: missing annotation " + ann.string());
    nlohmann::json j;
    in >> j;
    for (const auto& b : j.at("boxes"))
      ls.boxes.push_back(Box{b.at(0).get<double>(), b.at(1).get<double>(),
                             b.at(2).get<double>(), b.at(3).get<double>()});
    ls.labels = j.at("labels").get<std::vector<int>>();
    ls.domain = j.at("domain").get<std::string>() == "source" ? Domain::kSource
                                                              : Domain::kTarget;
    ls.seed = j.at("seed").get<std::uint64_t>();
    out.push_back(std::move(ls));
  }
  return out;
}

}  // namespace fgrr
