// Experiment runner: training sweeps over layer kind x rank x placement,
// evaluation, lowering, cost reports and combining-weight heatmap export.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lrlc/experiment.hpp"

namespace {

lrlc::ExperimentConfig resolve_config(const std::string& config_path,
                                      const std::vector<std::string>& overrides) {
  lrlc::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = lrlc::load_experiment_config(config_path);
  return lrlc::apply_overrides(cfg, overrides);
}

void print_summary(const lrlc::SweepResult& result) {
  std::printf("%-14s %-9s %5s %6s %12s %12s %9s\n", "kind", "placement", "rank", "seeds",
              "val_top1", "test_top1", "selected");
  for (const auto& row : result.summary) {
    std::printf("%-14s %-9s %5s %6zu %6.4f+-%.4f %6.4f+-%.4f %9s\n", row.key.kind.c_str(),
                row.key.placement.c_str(),
                row.key.rank > 0 ? std::to_string(row.key.rank).c_str() : "-", row.seeds,
                row.val_mean, row.val_se, row.test_mean, row.test_se,
                row.selected ? "*" : "");
  }
  for (const auto& cell : result.cells)
    if (cell.failed)
      std::fprintf(stderr, "FAILED %s_%s seed %llu: %s\n", cell.key.kind.c_str(),
                   cell.key.placement.c_str(), static_cast<unsigned long long>(cell.seed),
                   cell.error.c_str());
  std::printf("raw: %s\nsummary: %s\n", result.cells_csv.c_str(), result.summary_csv.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"low-rank locally connected layer experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "experiment config (JSON)");
  app.add_option("--set", overrides, "override a config key, e.g. --set train.epochs=5");

  auto* cmd_train = app.add_subcommand("train", "train the configured model (all seeds)");
  auto* cmd_sweep = app.add_subcommand("sweep", "run the configured kind x rank x placement sweep");

  std::string checkpoint, out_path, split = "test";
  bool lowered = false;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  cmd_eval->add_option("checkpoint", checkpoint, "checkpoint directory")->required();
  cmd_eval->add_option("--split", split, "train|validation|test (default test)");
  cmd_eval->add_flag("--lowered", lowered, "lower fixed lrlc layers before evaluating");

  auto* cmd_lower = app.add_subcommand("lower", "materialize lrlc layers as locally connected");
  cmd_lower->add_option("checkpoint", checkpoint, "checkpoint directory")->required();
  cmd_lower->add_option("out", out_path, "output checkpoint directory")->required();

  std::size_t examples = 4;
  auto* cmd_heatmaps = app.add_subcommand("heatmaps", "export combining-weight heatmaps");
  cmd_heatmaps->add_option("checkpoint", checkpoint, "checkpoint directory")->required();
  cmd_heatmaps->add_option("out", out_path, "output directory")->required();
  cmd_heatmaps->add_option("--examples", examples, "example count for dynamic layers");

  std::string costs_csv;
  auto* cmd_costs = app.add_subcommand("costs", "parameter/MAC accounting for the configured model");
  cmd_costs->add_option("--csv", costs_csv, "also write the table to this CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed() || cmd_sweep->parsed()) {
      lrlc::ExperimentConfig cfg = resolve_config(config_path, overrides);
      if (cmd_train->parsed()) cfg.sweep = {};  // single cell: the configured model
      lrlc::SweepResult result = lrlc::run_experiment(cfg);
      print_summary(result);
      return result.any_failed ? 1 : 0;
    }
    if (cmd_eval->parsed()) {
      lrlc::ExperimentConfig cfg = resolve_config(config_path, overrides);
      lrlc::CheckpointEval r = lrlc::evaluate_checkpoint(checkpoint, cfg, split, lowered);
      std::printf("split=%s examples=%zu loss=%.6f top1=%.4f%s\n", split.c_str(), r.examples,
                  r.loss, r.top1, lowered ? " (lowered)" : "");
      return 0;
    }
    if (cmd_lower->parsed()) {
      lrlc::lower_checkpoint(checkpoint, out_path);
      std::printf("lowered checkpoint written to %s\n", out_path.c_str());
      return 0;
    }
    if (cmd_heatmaps->parsed()) {
      lrlc::ExperimentConfig cfg = resolve_config(config_path, overrides);
      const bool have_cfg = !config_path.empty() || !overrides.empty();
      std::size_t n = lrlc::export_heatmaps(checkpoint, out_path, examples,
                                            have_cfg ? &cfg : nullptr);
      std::printf("wrote %zu heatmaps to %s\n", n, out_path.c_str());
      return 0;
    }
    if (cmd_costs->parsed()) {
      lrlc::ExperimentConfig cfg = resolve_config(config_path, overrides);
      auto rows = lrlc::report_costs(cfg);
      std::printf("%-8s %-13s %12s %12s %12s %12s %14s %14s %12s\n", "layer", "kind", "params",
                  "basis", "combining", "biases", "train_macs", "infer_macs", "infer_bytes");
      for (const auto& r : rows)
        std::printf("%-8s %-13s %12zu %12zu %12zu %12zu %14zu %14zu %12zu\n", r.layer.c_str(),
                    r.layer == "total" ? "" : lrlc::layer_kind_name(r.kind),
                    r.params.params_total, r.params.params_basis, r.params.params_combining,
                    r.params.params_biases, r.train_macs, r.inference_macs,
                    r.inference_param_bytes);
      if (!costs_csv.empty()) {
        lrlc::write_costs_csv(costs_csv, rows);
        std::printf("costs csv: %s\n", costs_csv.c_str());
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
