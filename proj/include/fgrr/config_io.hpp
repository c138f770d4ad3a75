#pragma once

// JSON round-trips for configs, run reports, checkpoints, and the CSV
// outputs. The config file mirrors TrainConfig field-for-field.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "fgrr/training.hpp"

namespace fgrr {

using nlohmann::json;

inline json to_json(const DetectorConfig& d) {
  return json{{"image_size", d.image_size},   {"in_channels", d.in_channels},
              {"c1", d.c1},                   {"c2", d.c2},
              {"c3", d.c3},                   {"num_classes", d.num_classes},
              {"anchor_sizes", d.anchor_sizes}, {"anchor_subgrid", d.anchor_subgrid},
              {"top_n", d.top_n},             {"suppress_iou", d.suppress_iou},
              {"roi_grid", d.roi_grid}};
}

inline DetectorConfig detector_from_json(const json& j) {
  DetectorConfig d;
  d.image_size = j.value("image_size", d.image_size);
  d.in_channels = j.value("in_channels", d.in_channels);
  d.c1 = j.value("c1", d.c1);
  d.c2 = j.value("c2", d.c2);
  d.c3 = j.value("c3", d.c3);
  d.num_classes = j.value("num_classes", d.num_classes);
  d.anchor_sizes = j.value("anchor_sizes", d.anchor_sizes);
  d.anchor_subgrid = j.value("anchor_subgrid", d.anchor_subgrid);
  d.top_n = j.value("top_n", d.top_n);
  d.suppress_iou = j.value("suppress_iou", d.suppress_iou);
  d.roi_grid = j.value("roi_grid", d.roi_grid);
  return d;
}

inline json to_json(const TrainConfig& c) {
  return json{{"lambda1", c.lambda1},
              {"lambda2", c.lambda2},
              {"lambda3", c.lambda3},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"lr_decay", c.lr_decay},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"prr", c.prr},
              {"srr", c.srr},
              {"ior", c.ior},
              {"tau1", c.tau1},
              {"tau2", c.tau2},
              {"cdsr_k", c.cdsr_k},
              {"keep_fraction", c.keep_fraction},
              {"min_score", c.min_score},
              {"xi", c.xi},
              {"grl_eta", c.grl_eta},
              {"disc_hidden", c.disc_hidden},
              {"warmup_fraction", c.warmup_fraction},
              {"detector", to_json(c.detector)},
              {"layout",
               {{"source_train", c.layout.source_train},
                {"target_train", c.layout.target_train},
                {"source_val", c.layout.source_val},
                {"target_val", c.layout.target_val}}},
              {"shift", c.shift}};
}

inline TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.lambda3 = j.value("lambda3", c.lambda3);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.prr = j.value("prr", c.prr);
  c.srr = j.value("srr", c.srr);
  c.ior = j.value("ior", c.ior);
  c.tau1 = j.value("tau1", c.tau1);
  c.tau2 = j.value("tau2", c.tau2);
  c.cdsr_k = j.value("cdsr_k", c.cdsr_k);
  c.keep_fraction = j.value("keep_fraction", c.keep_fraction);
  c.min_score = j.value("min_score", c.min_score);
  c.xi = j.value("xi", c.xi);
  c.grl_eta = j.value("grl_eta", c.grl_eta);
  c.disc_hidden = j.value("disc_hidden", c.disc_hidden);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  if (j.contains("detector")) c.detector = detector_from_json(j.at("detector"));
  if (j.contains("layout")) {
    const json& l = j.at("layout");
    c.layout.source_train = l.value("source_train", c.layout.source_train);
    c.layout.target_train = l.value("target_train", c.layout.target_train);
    c.layout.source_val = l.value("source_val", c.layout.source_val);
    c.layout.target_val = l.value("target_val", c.layout.target_val);
  }
  c.shift = j.value("shift", c.shift);
  return c;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  json j;
  in >> j;
  TrainConfig c = config_from_json(j);
  c.validate();
  return c;
}

inline void save_config(const std::string& path, const TrainConfig& c) {
  std::ofstream out(path);
  out << to_json(c).dump(2) << "\n";
}

// FGRR_SEED overrides the config seed when set.
inline void apply_seed_env(TrainConfig& cfg) {
  if (const char* env = std::getenv("FGRR_SEED")) cfg.seed = std::strtoull(env, nullptr, 10);
}

// ---------------------------------------------------------------------------
// Run report + metrics
// ---------------------------------------------------------------------------

inline json to_json(const RunReport& r, const TrainConfig& cfg) {
  json hist = json::array();
  for (const EpochStats& e : r.history)
    hist.push_back(json{{"det", e.losses.det},
                        {"nc", e.losses.nc},
                        {"cda", e.losses.cda},
                        {"ior", e.losses.ior},
                        {"total", e.total},
                        {"target_map", e.target_map}});
  return json{{"history", hist},        {"final_map", r.final_map},
              {"best_map", r.best_map}, {"diverged", r.diverged},
              {"wall_seconds", r.wall_seconds}, {"seed", r.seed},
              {"config", to_json(cfg)}};
}

inline std::string metrics_csv(const RunReport& r) {
  std::ostringstream out;
  out << "epoch,loss_det,loss_nc,loss_cda,loss_ior,loss_total,target_map\n";
  char buf[256];
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    const EpochStats& s = r.history[e];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e,
                  s.losses.det, s.losses.nc, s.losses.cda, s.losses.ior, s.total,
                  s.target_map);
    out << buf;
  }
  return out.str();
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows,
                                const std::vector<std::uint64_t>& seeds) {
  std::ostringstream out;
  out << "variant";
  for (std::uint64_t s : seeds) out << ",seed_" << s;
  out << ",median\n";
  char buf[64];
  for (const AblationRow& row : rows) {
    out << row.variant;
    for (double v : row.final_maps) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.17g\n", row.median);
    out << buf;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::string& path, FgrrModel& model,
                            const TrainConfig& cfg) {
  json params = json::object();
  for (ag::Param* p : model.all_params()) {
    json entry;
    entry["rows"] = p->value.rows();
    entry["cols"] = p->value.cols();
    std::vector<double> data(p->value.data(), p->value.data() + p->value.size());
    entry["data"] = data;
    params[p->name] = std::move(entry);
  }
  json j{{"config", to_json(cfg)}, {"params", params}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump() << "\n";
}

// Loads parameters into a model whose shapes must already match.
inline TrainConfig load_checkpoint(const std::string& path, FgrrModel& model) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j;
  in >> j;
  const TrainConfig cfg = config_from_json(j.at("config"));
  const json& params = j.at("params");
  for (ag::Param* p : model.all_params()) {
    if (!params.contains(p->name))
      throw std::runtime_error("load_checkpoint: missing parameter " + p->name);
    const json& entry = params.at(p->name);
    const Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
    if (rows != p->value.rows() || cols != p->value.cols())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + p->name);
    const auto data = entry.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
      throw std::runtime_error("load_checkpoint: data size mismatch for " + p->name);
    std::copy(data.begin(), data.end(), p->value.data());
  }
  return cfg;
}

}  // namespace fgrr
