#pragma once

// End-to-end runners used by the CLI and the acceptance suite: training
// with all artifacts written to disk, and the ablation grid with its CSV.

#include <filesystem>
#include <fstream>

#include "fgrr/config_io.hpp"
#include "fgrr/plot.hpp"
#include "fgrr/training.hpp"

namespace fgrr {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

// Trains and writes metrics.csv, report.json, loss/mAP curves, and
// checkpoint.json under out_dir. Returns the report.
inline RunReport run_training(const TrainConfig& cfg, const std::string& data_dir,
                              const std::string& out_dir, FgrrModel* model_out = nullptr) {
  const Dataset data = load_dataset(data_dir);
  Rng rng(cfg.seed);
  FgrrModel model = FgrrModel::init(cfg, rng);
  const RunReport report = train_on(model, cfg, data);
  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "metrics.csv", metrics_csv(report));
    write_file(fs::path(out_dir) / "report.json", to_json(report, cfg).dump(2) + "\n");
    write_loss_chart((fs::path(out_dir) / "loss_curves.png").string(), report.history);
    write_map_chart((fs::path(out_dir) / "map_curve.png").string(), report.history);
    save_checkpoint((fs::path(out_dir) / "checkpoint.json").string(), model, cfg);
  }
  if (model_out) *model_out = std::move(model);
  return report;
}

inline std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                             const std::vector<std::string>& variant_names,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::string& data_dir,
                                             const std::string& out_dir, int workers = 2) {
  std::vector<AblationVariant> variants;
  for (const std::string& name : variant_names) variants.push_back(named_variant(name));
  const Dataset data = load_dataset(data_dir);
  const auto rows = ablate(base, variants, seeds, data, workers);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_file(std::filesystem::path(out_dir) / "ablation.csv", ablation_csv(rows, seeds));
  }
  return rows;
}

}  // namespace fgrr
