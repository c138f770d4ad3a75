// fgrr: synthetic two-domain detection benchmark with foreground-aware
// graph reasoning. Subcommands: gen-data, train, eval, ablate, selfcheck.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fgrr/config_io.hpp"
#include "fgrr/run.hpp"
#include "fgrr/selfcheck.hpp"

namespace {

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"foreground-aware graph reasoning on a synthetic detection benchmark"};
  app.require_subcommand(1);

  // --- gen-data ---
  std::string gen_out;
  std::uint64_t gen_seed = 1;
  std::string gen_shift = "moderate";
  std::string gen_config;
  auto* gen = app.add_subcommand("gen-data", "generate the two-domain dataset");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--shift", gen_shift, "domain shift level")
      ->check(CLI::IsMember({"mild", "moderate", "severe"}));
  gen->add_option("--config", gen_config, "optional config JSON for sizes/counts");

  // --- train ---
  std::string train_config, train_out, train_data;
  auto* train = app.add_subcommand("train", "run adaptation training");
  train->add_option("--config", train_config, "config JSON file")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--data", train_data, "dataset directory (default <out>/../data)");

  // --- eval ---
  std::string eval_ckpt, eval_data, eval_split = "target_val";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint.json path")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--split", eval_split, "split to evaluate");

  // --- ablate ---
  std::string ab_config, ab_variants = "full,no_prr,no_srr,no_ior,source_only";
  std::string ab_out, ab_data;
  int ab_seeds = 5;
  int ab_workers = 2;
  auto* ab = app.add_subcommand("ablate", "run the ablation grid");
  ab->add_option("--config", ab_config, "config JSON file")->required();
  ab->add_option("--variants", ab_variants, "comma-separated variant list");
  ab->add_option("--seeds", ab_seeds, "number of seeds");
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--workers", ab_workers, "parallel training workers");

  // --- selfcheck ---
  app.add_subcommand("selfcheck", "run the oracle battery");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      fgrr::TrainConfig cfg;
      if (!gen_config.empty()) cfg = fgrr::load_config(gen_config);
      cfg.shift = gen_shift;
      cfg.seed = gen_seed;
      fgrr::apply_seed_env(cfg);
      fgrr::export_dataset(gen_out, cfg.layout, cfg.shift, cfg.detector.image_size,
                           cfg.detector.num_classes, cfg.seed);
      std::cout << "dataset written to " << gen_out << " (shift=" << cfg.shift
                << ", seed=" << cfg.seed << ")\n";
      return 0;
    }
    if (train->parsed()) {
      fgrr::TrainConfig cfg = fgrr::load_config(train_config);
      fgrr::apply_seed_env(cfg);
      const std::string data_dir = train_data.empty()
                                       ? (std::filesystem::path(train_out) / ".." / "data").string()
                                       : train_data;
      const fgrr::RunReport report = fgrr::run_training(cfg, data_dir, train_out);
      std::cout << "final target mAP@0.5 " << report.final_map << " (best "
                << report.best_map << ") over " << report.history.size() << " epochs, "
                << report.wall_seconds << "s" << (report.diverged ? " [DIVERGED]" : "")
                << "\n";
      return report.diverged ? 2 : 0;
    }
    if (eval->parsed()) {
      fgrr::TrainConfig cfg;
      fgrr::Rng rng(0);
      fgrr::FgrrModel model = fgrr::FgrrModel::init(cfg, rng);
      // First load recovers the config; a second init matches shapes if the
      // checkpoint used a non-default detector.
      {
        std::ifstream in(eval_ckpt);
        if (!in) throw std::runtime_error("cannot open " + eval_ckpt);
        nlohmann::json j;
        in >> j;
        cfg = fgrr::config_from_json(j.at("config"));
      }
      fgrr::Rng rng2(cfg.seed);
      model = fgrr::FgrrModel::init(cfg, rng2);
      fgrr::load_checkpoint(eval_ckpt, model);
      const auto scenes =
          fgrr::import_split((std::filesystem::path(eval_data) / eval_split).string());
      const double map = fgrr::evaluate_target_map(model, cfg, scenes);
      std::cout << eval_split << " mAP@0.5 " << map << " over " << scenes.size()
                << " images\n";
      return 0;
    }
    if (ab->parsed()) {
      fgrr::TrainConfig cfg = fgrr::load_config(ab_config);
      fgrr::apply_seed_env(cfg);
      std::vector<std::uint64_t> seeds;
      for (int s = 0; s < ab_seeds; ++s) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(s));
      const auto rows = fgrr::run_ablation(cfg, split_list(ab_variants), seeds, ab_data,
                                           ab_out, ab_workers);
      std::cout << fgrr::ablation_csv(rows, seeds);
      return 0;
    }
    if (app.get_subcommand("selfcheck")->parsed()) {
      return fgrr::print_selfcheck() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
