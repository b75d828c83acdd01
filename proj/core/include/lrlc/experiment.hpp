#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrlc/cost.hpp"
#include "lrlc/datasets.hpp"

namespace lrlc {

struct TranslateConfig {
  bool enabled = false;
  std::size_t canvas = 0;  // 0 = 1.5x source extent
  std::uint64_t seed = 1234;
};

struct DatasetConfig {
  std::string name = "synthetic";  // mnist | cifar10 | synthetic
  std::string dir;                 // empty -> $LRLC_DATA_DIR, then "."
  TranslateConfig translate;
  SyntheticSpec synthetic;
};

struct ModelSection {
  std::size_t layers = 3, channels = 64, filter = 3;
  std::string kind = "conv";
  std::string placement = "third";
  std::size_t rank = 1;
  bool rank_given = false;  // tracks explicit presence for validation
  bool full_weights = false;
  DynamicNetShape gnet;
};

struct TrainSection {
  std::size_t batch = 128, epochs = 20, warmup_epochs = 2;
  double peak_lr = 0.01;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  bool test_mode = false;
  unsigned threads = 0;
};

/// Optional sweep axes; empty lists fall back to the single configured value.
/// Cells are independent jobs: they run sequentially unless `parallel` opts
/// into a worker pool.
struct SweepSection {
  std::vector<std::string> kinds;
  std::vector<std::size_t> ranks;
  std::vector<std::string> placements;
  std::size_t parallel = 1;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelSection model;
  TrainSection train;
  SweepSection sweep;
  std::string output_dir = "runs/experiment";
};

/// Parses and validates; throws ConfigError listing every violation.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

/// Canonical JSON with all defaults materialized (dumped into the output
/// directory for provenance).
std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// Applies `dotted.key=value` assignments (values parsed as JSON, falling
/// back to string); the result is validated once after all assignments.
ExperimentConfig apply_overrides(const ExperimentConfig& cfg,
                                 const std::vector<std::string>& assignments);

Dataset load_dataset(const DatasetConfig& cfg);

struct CellKey {
  std::string kind;
  std::string placement;
  std::size_t rank = 0;  // 0 = not applicable (non-lrlc kinds)
};

struct CellResult {
  CellKey key;
  std::uint64_t seed = 0;
  double val_top1 = 0, val_loss = 0;
  double test_top1 = 0, test_loss = 0;
  std::string cell_dir, checkpoint_dir, best_checkpoint_dir, metrics_csv;
  bool failed = false;
  std::string error;
};

struct SummaryRow {
  CellKey key;
  std::size_t seeds = 0;
  double val_mean = 0, val_se = 0;
  double test_mean = 0, test_se = 0;
  bool selected = false;  // argmax of val_mean within its (kind, placement) group
};

struct SweepResult {
  std::vector<CellResult> cells;
  std::vector<SummaryRow> summary;
  bool any_failed = false;
  std::string cells_csv, summary_csv;
};

/// Trains every (kind x placement x rank) x seed cell, writes metrics CSVs,
/// checkpoints, a raw per-seed CSV and a mean +/- SE summary CSV.
SweepResult run_experiment(const ExperimentConfig& cfg);

/// Recomputes summary rows from a raw cells.csv (the independent path used to
/// cross-check emitted summaries).
std::vector<SummaryRow> summarize_cells_csv(const std::string& cells_csv_path);

struct CheckpointEval {
  double loss = 0, top1 = 0;
  std::size_t examples = 0;
};
CheckpointEval evaluate_checkpoint(const std::string& checkpoint_dir, const ExperimentConfig& cfg,
                                   const std::string& split, bool lowered);

/// Materializes fixed-weight LRLC layers into locally connected layers and
/// writes the lowered checkpoint. Dynamic layers are unsupported.
void lower_checkpoint(const std::string& checkpoint_dir, const std::string& out_dir);

/// Writes combining-weight heatmaps (CSV + PGM) for every LRLC layer of a
/// checkpoint; dynamic layers get per-example maps over test images and need
/// a dataset config. Returns the number of maps written.
std::size_t export_heatmaps(const std::string& checkpoint_dir, const std::string& out_dir,
                            std::size_t examples = 4, const ExperimentConfig* cfg = nullptr);

struct CostTableRow {
  std::string layer;
  LayerKind kind = LayerKind::kConv;
  CostReport params;
  std::size_t train_macs = 0;
  std::size_t inference_macs = 0;  // lowered for lrlc, dynamic path for dynamic_lrlc
  std::size_t inference_param_bytes = 0;
};
std::vector<CostTableRow> report_costs(const ExperimentConfig& cfg);
void write_costs_csv(const std::string& path, const std::vector<CostTableRow>& rows);

}  // namespace lrlc
