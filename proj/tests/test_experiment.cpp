#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "lrlc/checkpoint.hpp"
#include "lrlc/experiment.hpp"
#include "lrlc/heatmap.hpp"
#include "lrlc/optimize.hpp"
#include "oracles.hpp"

using namespace lrlc;
namespace fs = std::filesystem;

namespace {

const std::string kTmp = (fs::temp_directory_path() / "lrlc_experiment_test").string();

struct TmpDir {
  TmpDir() {
    fs::remove_all(kTmp);
    fs::create_directories(kTmp);
  }
} tmp_guard;

ExperimentConfig tiny_config(const std::string& out) {
  ExperimentConfig cfg;
  cfg.dataset.name = "synthetic";
  cfg.dataset.synthetic = SyntheticSpec{96, 32, 32, 6, 6, 1, 4, 3};
  cfg.model.layers = 2;
  cfg.model.channels = 4;
  cfg.model.kind = "lrlc";
  cfg.model.placement = "second";
  cfg.model.rank = 2;
  cfg.model.rank_given = true;
  cfg.model.gnet.projection = 2;
  cfg.model.gnet.bottleneck = 2;
  cfg.model.gnet.expansion = 3;
  cfg.train.batch = 16;
  cfg.train.epochs = 2;
  cfg.train.warmup_epochs = 1;
  cfg.train.seeds = {0, 1};
  cfg.output_dir = out;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(static_cast<bool>(in));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config round-trip is semantically idempotent") {
  const std::string text = R"({
    "dataset": {"name": "synthetic", "synthetic": {"train": 64, "classes": 5}},
    "model": {"kind": "lrlc", "rank": 3, "placement": "first", "layers": 3},
    "train": {"epochs": 4, "seeds": [7, 8], "batch": 32},
    "output_dir": "runs/x"
  })";
  ExperimentConfig cfg = parse_experiment_config(text);
  CHECK(cfg.model.rank == 3);
  CHECK(cfg.dataset.synthetic.classes == 5);
  CHECK(cfg.train.seeds == std::vector<std::uint64_t>{7, 8});

  const std::string once = experiment_config_to_json(cfg);
  const std::string twice = experiment_config_to_json(parse_experiment_config(once));
  CHECK(once == twice);
}

TEST_CASE("config validation lists every violation at once") {
  const std::string text = R"({
    "dataset": {"name": "imagenet"},
    "model": {"kind": "lrlc", "placement": "fourth", "filter": 4},
    "train": {"batch": 0, "seeds": []},
    "mystery_key": 1
  })";
  try {
    parse_experiment_config(text);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("dataset.name") != std::string::npos);
    CHECK(msg.find("model.placement") != std::string::npos);
    CHECK(msg.find("model.filter") != std::string::npos);
    CHECK(msg.find("model.rank") != std::string::npos);  // lrlc without rank
    CHECK(msg.find("train.batch") != std::string::npos);
    CHECK(msg.find("train.seeds") != std::string::npos);
    CHECK(msg.find("mystery_key") != std::string::npos);
    // count the listed violations
    std::size_t bullets = 0;
    for (std::size_t p = msg.find("\n  - "); p != std::string::npos;
         p = msg.find("\n  - ", p + 1))
      ++bullets;
    CHECK(bullets >= 7);
  }
}

TEST_CASE("rank is rejected for non-lrlc kinds and required for lrlc kinds") {
  CHECK_THROWS_AS(parse_experiment_config(R"({"model": {"kind": "conv", "rank": 2}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"model": {"kind": "lrlc"}})"), ConfigError);
  CHECK_NOTHROW(parse_experiment_config(R"({"model": {"kind": "conv"}})"));
  CHECK_NOTHROW(
      parse_experiment_config(R"({"model": {"kind": "dynamic_lrlc", "rank": 2}})"));
  // sweep ranks satisfy the requirement
  CHECK_NOTHROW(parse_experiment_config(
      R"({"model": {"kind": "conv"}, "sweep": {"kinds": ["conv", "lrlc"], "ranks": [1, 2]}})"));
}

TEST_CASE("apply_overrides batches assignments before validation") {
  ExperimentConfig cfg;  // defaults: kind=conv, no rank
  cfg = apply_overrides(
      cfg, {"model.kind=lrlc", "model.rank=4", "train.epochs=1", "train.warmup_epochs=0"});
  CHECK(cfg.model.kind == "lrlc");
  CHECK(cfg.model.rank == 4);
  CHECK(cfg.train.epochs == 1);
  CHECK_THROWS_AS(apply_overrides(cfg, {"no_such_key=1"}), ConfigError);
}

TEST_CASE("run_experiment sweep: cells, summary, selection rule, independent recompute") {
  ExperimentConfig cfg = tiny_config(kTmp + "/sweep");
  cfg.sweep.kinds = {"conv", "lrlc"};
  cfg.sweep.ranks = {1, 2};
  cfg.sweep.placements = {"second"};
  SweepResult result = run_experiment(cfg);
  CHECK_FALSE(result.any_failed);
  // conv collapses the rank axis: 1 conv cell + 2 lrlc cells, x2 seeds
  CHECK(result.cells.size() == 6);
  CHECK(result.summary.size() == 3);

  // one summary row per lrlc rank; exactly one selected among them
  std::size_t lrlc_rows = 0, selected = 0;
  double best_val = -1;
  for (const auto& row : result.summary)
    if (row.key.kind == "lrlc") {
      ++lrlc_rows;
      best_val = std::max(best_val, row.val_mean);
    }
  for (const auto& row : result.summary)
    if (row.key.kind == "lrlc" && row.selected) {
      ++selected;
      CHECK(row.val_mean == best_val);
    }
  CHECK(lrlc_rows == 2);
  CHECK(selected >= 1);

  // independent recomputation from the raw csv matches the emitted summary
  std::vector<SummaryRow> recomputed = summarize_cells_csv(result.cells_csv);
  REQUIRE(recomputed.size() == result.summary.size());
  const std::string emitted = slurp(result.summary_csv);
  for (std::size_t i = 0; i < recomputed.size(); ++i) {
    CHECK(recomputed[i].key.kind == result.summary[i].key.kind);
    CHECK(recomputed[i].val_mean == result.summary[i].val_mean);  // bit-exact
    CHECK(recomputed[i].val_se == result.summary[i].val_se);
    CHECK(recomputed[i].test_mean == result.summary[i].test_mean);
    CHECK(recomputed[i].selected == result.summary[i].selected);
  }

  // config with defaults was dumped for provenance
  CHECK(fs::exists(kTmp + "/sweep/config.json"));
  ExperimentConfig reparsed = load_experiment_config(kTmp + "/sweep/config.json");
  CHECK(reparsed.model.rank == cfg.model.rank);

  // per-cell artifacts exist
  for (const auto& cell : result.cells) {
    CHECK(fs::exists(cell.metrics_csv));
    CHECK(fs::exists(cell.checkpoint_dir + "/manifest.json"));
  }
}

TEST_CASE("opt-in parallel cells produce the same cells as a sequential sweep") {
  ExperimentConfig seq_cfg = tiny_config(kTmp + "/par_seq");
  seq_cfg.sweep.ranks = {1, 2};
  seq_cfg.train.seeds = {0};
  SweepResult seq = run_experiment(seq_cfg);

  ExperimentConfig par_cfg = tiny_config(kTmp + "/par_par");
  par_cfg.sweep.ranks = {1, 2};
  par_cfg.train.seeds = {0};
  par_cfg.sweep.parallel = 2;
  SweepResult par = run_experiment(par_cfg);

  REQUIRE_FALSE(seq.any_failed);
  REQUIRE_FALSE(par.any_failed);
  REQUIRE(par.cells.size() == seq.cells.size());
  for (std::size_t i = 0; i < seq.cells.size(); ++i) {
    CHECK(par.cells[i].key.rank == seq.cells[i].key.rank);
    CHECK(par.cells[i].val_top1 == seq.cells[i].val_top1);
    CHECK(par.cells[i].test_top1 == seq.cells[i].test_top1);
  }
}

TEST_CASE("run_experiment with 0 epochs keeps the untrained model (pipeline integrity)") {
  ExperimentConfig cfg = tiny_config(kTmp + "/zero");
  cfg.train.epochs = 0;
  cfg.train.warmup_epochs = 0;
  cfg.train.seeds = {0};
  SweepResult result = run_experiment(cfg);
  CHECK_FALSE(result.any_failed);
  REQUIRE(result.summary.size() == 1);

  // the summary accuracy equals the untrained model's accuracy, recomputed
  Dataset data = load_dataset(cfg.dataset);
  Model<float> fresh = load_model<float>(result.cells[0].checkpoint_dir);
  EvalResult ev = evaluate(fresh, data.validation, cfg.train.batch);
  CHECK(result.summary[0].val_mean == doctest::Approx(ev.top1).epsilon(1e-12));
}

TEST_CASE("checkpoint round-trip preserves forward outputs") {
  ExperimentConfig cfg = tiny_config(kTmp + "/ckpt");
  Dataset data = load_dataset(cfg.dataset);
  ModelConfig mc;
  mc.input_h = mc.input_w = 6;
  mc.input_c = 1;
  mc.classes = 4;
  mc.channels = 4;
  mc.kinds = {LayerKind::kConv, LayerKind::kDynamicLrlc};
  mc.rank = 2;
  mc.gnet = cfg.model.gnet;
  Model<float> model(mc, 5);

  Tensor<float> x({3, 6, 6, 1});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = data.test.images[i];
  Tensor<float> before = model.forward(x, false);

  save_model(model, kTmp + "/ckpt/m");
  Model<float> loaded = load_model<float>(kTmp + "/ckpt/m");
  Tensor<float> after = loaded.forward(x, false);
  CHECK(before == after);  // bitwise

  // double-precision load casts the same parameters
  Model<double> loaded64 = load_model<double>(kTmp + "/ckpt/m");
  Tensor<double> x64 = cast<double>(x);
  Tensor<double> y64 = loaded64.forward(x64, false);
  CHECK(max_abs_diff(cast<double>(after), y64) < 1e-5);
}

TEST_CASE("lowered model predicts identical classes on the full test split") {
  ExperimentConfig cfg = tiny_config(kTmp + "/lower");
  Dataset data = load_dataset(cfg.dataset);
  ModelConfig mc;
  mc.input_h = mc.input_w = 6;
  mc.input_c = 1;
  mc.classes = 4;
  mc.channels = 4;
  mc.kinds = {LayerKind::kLrlc, LayerKind::kLrlc};
  mc.rank = 3;
  Model<double> model(mc, 9);
  Model<double> lowered = model.lowered();

  const std::size_t N = data.test.size();
  Tensor<double> x({N, 6, 6, 1});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = data.test.images[i];
  Tensor<double> y0 = model.forward(x, false);
  Tensor<double> y1 = lowered.forward(x, false);
  CHECK(max_abs_diff(y0, y1) <= 1e-10);
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t a0 = 0, a1 = 0;
    for (std::size_t c = 1; c < 4; ++c) {
      if (y0(n, c) > y0(n, a0)) a0 = c;
      if (y1(n, c) > y1(n, a1)) a1 = c;
    }
    CHECK(a0 == a1);
  }
}

TEST_CASE("lower_checkpoint writes a local model; dynamic layers refuse to lower") {
  ExperimentConfig cfg = tiny_config(kTmp + "/lowerckpt");
  cfg.train.epochs = 1;
  cfg.train.seeds = {0};
  SweepResult result = run_experiment(cfg);
  REQUIRE_FALSE(result.any_failed);
  const std::string src = result.cells[0].checkpoint_dir;

  lower_checkpoint(src, kTmp + "/lowerckpt/lowered");
  json manifest = load_manifest(kTmp + "/lowerckpt/lowered");
  bool has_lowered_block = false;
  for (const auto& b : manifest["blocks"])
    has_lowered_block = has_lowered_block || b.get<std::string>() == "lowered_lrlc";
  CHECK(has_lowered_block);

  // evaluating original and lowered checkpoints gives identical top-1
  CheckpointEval orig = evaluate_checkpoint(src, cfg, "test", false);
  CheckpointEval via_flag = evaluate_checkpoint(src, cfg, "test", true);
  CheckpointEval from_file = evaluate_checkpoint(kTmp + "/lowerckpt/lowered", cfg, "test", false);
  CHECK(orig.top1 == doctest::Approx(via_flag.top1).epsilon(1e-12));
  CHECK(orig.top1 == doctest::Approx(from_file.top1).epsilon(1e-12));

  // dynamic checkpoints cannot be lowered
  ExperimentConfig dyn_cfg = tiny_config(kTmp + "/dyn");
  dyn_cfg.model.kind = "dynamic_lrlc";
  dyn_cfg.train.epochs = 0;
  dyn_cfg.train.warmup_epochs = 0;
  dyn_cfg.train.seeds = {0};
  SweepResult dyn = run_experiment(dyn_cfg);
  REQUIRE_FALSE(dyn.any_failed);
  CHECK_THROWS_AS(lower_checkpoint(dyn.cells[0].checkpoint_dir, kTmp + "/dyn/lowered"),
                  UnsupportedError);
}

TEST_CASE("heatmap export: per-position weights sum to 1 across k") {
  ExperimentConfig cfg = tiny_config(kTmp + "/heat");
  cfg.train.epochs = 1;
  cfg.train.seeds = {3};
  SweepResult result = run_experiment(cfg);
  REQUIRE_FALSE(result.any_failed);

  const std::string out = kTmp + "/heat/maps";
  const std::size_t written = export_heatmaps(result.cells[0].checkpoint_dir, out);
  CHECK(written == 2);  // rank 2, one fixed lrlc layer

  TensorF k0 = read_heatmap_csv(out + "/layer1_k0.csv");
  TensorF k1 = read_heatmap_csv(out + "/layer1_k1.csv");
  REQUIRE(k0.shape() == Shape{6, 6});
  for (std::size_t p = 0; p < 36; ++p) {
    CHECK(k0[p] >= 0.0f);
    CHECK(k1[p] >= 0.0f);
    CHECK(std::abs(double(k0[p]) + double(k1[p]) - 1.0) <= 1e-6);
  }

  // PGM header
  std::string pgm = slurp(out + "/layer1_k0.pgm");
  CHECK(pgm.substr(0, 3) == "P5\n");
  CHECK(pgm.find("6 6\n255\n") != std::string::npos);

  // dynamic heatmaps need a dataset and emit per-example maps
  ExperimentConfig dyn_cfg = tiny_config(kTmp + "/heatdyn");
  dyn_cfg.model.kind = "dynamic_lrlc";
  dyn_cfg.train.epochs = 0;
  dyn_cfg.train.warmup_epochs = 0;
  dyn_cfg.train.seeds = {0};
  SweepResult dyn = run_experiment(dyn_cfg);
  REQUIRE_FALSE(dyn.any_failed);
  CHECK_THROWS_AS(export_heatmaps(dyn.cells[0].checkpoint_dir, kTmp + "/heatdyn/maps"),
                  ConfigError);
  const std::size_t dyn_written =
      export_heatmaps(dyn.cells[0].checkpoint_dir, kTmp + "/heatdyn/maps", 3, &dyn_cfg);
  CHECK(dyn_written == 6);  // 3 examples x rank 2
  TensorF ex0k0 = read_heatmap_csv(kTmp + "/heatdyn/maps/layer1_ex0_k0.csv");
  TensorF ex0k1 = read_heatmap_csv(kTmp + "/heatdyn/maps/layer1_ex0_k1.csv");
  for (std::size_t p = 0; p < 36; ++p)
    CHECK(std::abs(double(ex0k0[p]) + double(ex0k1[p]) - 1.0) <= 1e-6);
}

TEST_CASE("report_costs covers every layer and totals add up") {
  ExperimentConfig cfg = tiny_config(kTmp + "/costs");
  cfg.model.layers = 3;
  cfg.model.kind = "lrlc";
  cfg.model.placement = "third";
  cfg.model.rank = 2;
  auto rows = report_costs(cfg);
  REQUIRE(rows.size() == 4);  // 3 layers + total
  CHECK(rows[3].layer == "total");
  std::size_t total = 0, macs = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    total += rows[i].params.params_total;
    macs += rows[i].train_macs;
  }
  CHECK(rows[3].params.params_total == total);
  CHECK(rows[3].train_macs == macs);

  write_costs_csv(kTmp + "/costs/table.csv", rows);
  const std::string csv = slurp(kTmp + "/costs/table.csv");
  CHECK(csv.find("layer,kind,params_total") == 0);
  CHECK(csv.find("total,") != std::string::npos);
}

TEST_CASE("full (non-factorized) combining weights flow through the config path") {
  ExperimentConfig cfg = tiny_config(kTmp + "/fullw");
  cfg.model.full_weights = true;
  cfg.train.epochs = 1;
  cfg.train.seeds = {0};
  SweepResult result = run_experiment(cfg);
  REQUIRE_FALSE(result.any_failed);
  // the checkpoint stores the H x W x K logit table instead of alpha/beta
  json manifest = load_manifest(result.cells[0].checkpoint_dir);
  bool has_table = false, has_alpha = false;
  for (const auto& t : manifest["tensors"]) {
    const std::string name = t.get<std::string>();
    has_table = has_table || name == "layer1.table";
    has_alpha = has_alpha || name == "layer1.alpha";
  }
  CHECK(has_table);
  CHECK_FALSE(has_alpha);
}

TEST_CASE("failed cells are reported and flagged, not fatal") {
  ExperimentConfig cfg = tiny_config(kTmp + "/fail");
  // batch larger than the training split -> the cell itself fails
  cfg.train.batch = 4096;
  SweepResult result = run_experiment(cfg);
  CHECK(result.any_failed);
  REQUIRE_FALSE(result.cells.empty());
  CHECK(result.cells[0].failed);
  CHECK_FALSE(result.cells[0].error.empty());
  const std::string csv = slurp(result.cells_csv);
  CHECK(csv.find("failed") != std::string::npos);
}
