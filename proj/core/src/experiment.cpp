#include "lrlc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "lrlc/checkpoint.hpp"
#include "lrlc/heatmap.hpp"
#include "lrlc/optimize.hpp"

namespace lrlc {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kKindNames = {"conv", "local", "coordconv", "lrlc", "dynamic_lrlc"};
const std::vector<std::string> kPlacements = {"first", "second", "third", "all"};
const std::vector<std::string> kDatasetNames = {"mnist", "cifar10", "synthetic"};

bool is_lrlc_kind(const std::string& kind) { return kind == "lrlc" || kind == "dynamic_lrlc"; }

struct Validator {
  std::vector<std::string> errors;

  void fail(std::string msg) { errors.push_back(std::move(msg)); }

  void check(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
  }

  void finish() const {
    if (errors.empty()) return;
    std::string all = "invalid experiment config (" + std::to_string(errors.size()) + " violation";
    if (errors.size() > 1) all += "s";
    all += "):";
    for (const auto& e : errors) all += "\n  - " + e;
    throw ConfigError(all);
  }
};

template <typename T>
bool get_to(const json& j, const std::string& key, T& out, Validator& v,
            const std::string& where) {
  if (!j.contains(key)) return false;
  try {
    j.at(key).get_to(out);
    return true;
  } catch (const json::exception&) {
    v.fail(where + "." + key + ": wrong type (got " + std::string(j.at(key).type_name()) + ")");
    return false;
  }
}

void check_known_keys(const json& j, const std::vector<std::string>& known, Validator& v,
                      const std::string& where) {
  if (!j.is_object()) {
    v.fail(where + ": expected an object");
    return;
  }
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      v.fail(where + ": unknown key \"" + key + "\"");
}

std::string data_root(const DatasetConfig& cfg) {
  if (!cfg.dir.empty()) return cfg.dir;
  if (const char* env = std::getenv("LRLC_DATA_DIR")) return env;
  return ".";
}

void atomic_write(const std::string& path, const std::string& text) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    require<FormatError>(static_cast<bool>(out), "cannot open ", tmp, " for writing");
    out << text;
  }
  fs::rename(tmp, path);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string cell_name(const CellKey& key, std::uint64_t seed) {
  std::string name = key.kind + "_" + key.placement;
  if (key.rank > 0) name += "_r" + std::to_string(key.rank);
  name += "_s" + std::to_string(seed);
  return name;
}

ModelConfig model_config_for(const ExperimentConfig& cfg, const Dataset& data,
                             const CellKey& key) {
  ModelConfig mc;
  mc.input_h = data.height();
  mc.input_w = data.width();
  mc.input_c = data.channels();
  mc.classes = data.classes;
  mc.channels = cfg.model.channels;
  mc.filter = cfg.model.filter;
  mc.kinds = kinds_from_placement(layer_kind_from_name(key.kind), key.placement,
                                  cfg.model.layers);
  mc.rank = key.rank > 0 ? key.rank : 1;
  mc.full_weights = cfg.model.full_weights;
  mc.gnet = cfg.model.gnet;
  return mc;
}

template <typename T>
CellResult run_cell(const ExperimentConfig& cfg, const Dataset& data, const CellKey& key,
                    std::uint64_t seed, const std::string& out_dir) {
  CellResult result;
  result.key = key;
  result.seed = seed;
  result.cell_dir = out_dir;
  fs::create_directories(out_dir);

  ModelConfig mc = model_config_for(cfg, data, key);
  Model<T> model(mc, /*init_seed=*/seed);

  TrainConfig tc;
  tc.batch = cfg.train.batch;
  tc.epochs = cfg.train.epochs;
  tc.warmup_epochs = cfg.train.warmup_epochs;
  tc.peak_lr = cfg.train.peak_lr;
  tc.seed = seed + 1000003;  // distinct stream from parameter init
  tc.test_mode = cfg.train.test_mode;
  tc.metrics_csv = (fs::path(out_dir) / "metrics.csv").string();
  result.metrics_csv = tc.metrics_csv;
  if (fs::exists(tc.metrics_csv)) fs::remove(tc.metrics_csv);

  result.checkpoint_dir = (fs::path(out_dir) / "ckpt_final").string();
  result.best_checkpoint_dir = (fs::path(out_dir) / "ckpt_best").string();
  auto sink = [&](Model<T>& m, std::size_t, bool is_best) {
    save_model(m, result.checkpoint_dir);
    if (is_best) save_model(m, result.best_checkpoint_dir);
  };
  TrainResult<T> tr = train<T>(model, data, tc, sink);
  if (cfg.train.epochs == 0) {
    // Pipeline-integrity path: persist the untrained model so downstream
    // verbs (eval/lower/heatmaps) still have a checkpoint to work with.
    save_model(model, result.checkpoint_dir);
    save_model(model, result.best_checkpoint_dir);
  }

  EvalResult val = evaluate(model, data.validation, cfg.train.batch);
  EvalResult test = evaluate(model, data.test, cfg.train.batch);
  result.val_loss = val.loss;
  result.val_top1 = val.top1;
  result.test_loss = test.loss;
  result.test_top1 = test.top1;
  return result;
}

void write_cells_csv(const std::string& path, const std::vector<CellResult>& cells) {
  std::ostringstream out;
  out << "kind,placement,rank,seed,val_loss,val_top1,test_loss,test_top1,status,checkpoint\n";
  for (const auto& c : cells) {
    out << c.key.kind << ',' << c.key.placement << ',';
    if (c.key.rank > 0) out << c.key.rank;
    out << ',' << c.seed << ',' << format_double(c.val_loss) << ',' << format_double(c.val_top1)
        << ',' << format_double(c.test_loss) << ',' << format_double(c.test_top1) << ','
        << (c.failed ? "failed" : "ok") << ',' << c.checkpoint_dir << '\n';
  }
  atomic_write(path, out.str());
}

struct Stats {
  std::size_t n = 0;
  double mean = 0, se = 0;
};

Stats mean_se(const std::vector<double>& xs) {
  Stats s;
  s.n = xs.size();
  if (s.n == 0) return s;
  double sum = 0;
  for (double x : xs) sum += x;
  s.mean = sum / double(s.n);
  if (s.n >= 2) {
    double ss = 0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    const double sample_sd = std::sqrt(ss / double(s.n - 1));
    s.se = sample_sd / std::sqrt(double(s.n));
  }
  return s;
}

std::vector<SummaryRow> summarize(const std::vector<CellResult>& cells) {
  // Preserve first-seen cell order.
  std::vector<CellKey> keys;
  auto key_eq = [](const CellKey& a, const CellKey& b) {
    return a.kind == b.kind && a.placement == b.placement && a.rank == b.rank;
  };
  for (const auto& c : cells) {
    if (c.failed) continue;
    bool seen = false;
    for (const auto& k : keys) seen = seen || key_eq(k, c.key);
    if (!seen) keys.push_back(c.key);
  }
  std::vector<SummaryRow> rows;
  for (const auto& key : keys) {
    std::vector<double> val, test;
    for (const auto& c : cells)
      if (!c.failed && key_eq(c.key, key)) {
        val.push_back(c.val_top1);
        test.push_back(c.test_top1);
      }
    const Stats vs = mean_se(val), ts = mean_se(test);
    SummaryRow row;
    row.key = key;
    row.seeds = vs.n;
    row.val_mean = vs.mean;
    row.val_se = vs.se;
    row.test_mean = ts.mean;
    row.test_se = ts.se;
    rows.push_back(row);
  }
  // Optimal rank per (kind, placement) group: argmax of mean validation
  // top-1, first row on ties so selection is deterministic.
  for (auto& row : rows) {
    const SummaryRow* best = nullptr;
    for (const auto& other : rows)
      if (other.key.kind == row.key.kind && other.key.placement == row.key.placement &&
          (best == nullptr || other.val_mean > best->val_mean))
        best = &other;
    row.selected = best == &row;
  }
  return rows;
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "kind,placement,rank,seeds,val_top1_mean,val_top1_se,test_top1_mean,test_top1_se,"
         "selected\n";
  for (const auto& r : rows) {
    out << r.key.kind << ',' << r.key.placement << ',';
    if (r.key.rank > 0) out << r.key.rank;
    out << ',' << r.seeds << ',' << format_double(r.val_mean) << ',' << format_double(r.val_se)
        << ',' << format_double(r.test_mean) << ',' << format_double(r.test_se) << ','
        << (r.selected ? 1 : 0) << '\n';
  }
  atomic_write(path, out.str());
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j = json::parse(json_text, nullptr, /*allow_exceptions=*/false);
  require<ConfigError>(!j.is_discarded(), "experiment config is not valid JSON");

  Validator v;
  ExperimentConfig cfg;
  check_known_keys(j, {"dataset", "model", "train", "sweep", "output_dir"}, v, "config");

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_known_keys(d, {"name", "dir", "translate", "synthetic"}, v, "dataset");
    get_to(d, "name", cfg.dataset.name, v, "dataset");
    get_to(d, "dir", cfg.dataset.dir, v, "dataset");
    if (std::find(kDatasetNames.begin(), kDatasetNames.end(), cfg.dataset.name) ==
        kDatasetNames.end())
      v.fail("dataset.name: must be one of mnist|cifar10|synthetic, got \"" + cfg.dataset.name +
             "\"");
    if (d.contains("translate")) {
      const json& t = d["translate"];
      check_known_keys(t, {"enabled", "canvas", "seed"}, v, "dataset.translate");
      get_to(t, "enabled", cfg.dataset.translate.enabled, v, "dataset.translate");
      get_to(t, "canvas", cfg.dataset.translate.canvas, v, "dataset.translate");
      get_to(t, "seed", cfg.dataset.translate.seed, v, "dataset.translate");
    }
    if (d.contains("synthetic")) {
      const json& s = d["synthetic"];
      check_known_keys(s,
                       {"train", "validation", "test", "height", "width", "channels", "classes",
                        "seed"},
                       v, "dataset.synthetic");
      get_to(s, "train", cfg.dataset.synthetic.train, v, "dataset.synthetic");
      get_to(s, "validation", cfg.dataset.synthetic.validation, v, "dataset.synthetic");
      get_to(s, "test", cfg.dataset.synthetic.test, v, "dataset.synthetic");
      get_to(s, "height", cfg.dataset.synthetic.height, v, "dataset.synthetic");
      get_to(s, "width", cfg.dataset.synthetic.width, v, "dataset.synthetic");
      get_to(s, "channels", cfg.dataset.synthetic.channels, v, "dataset.synthetic");
      get_to(s, "classes", cfg.dataset.synthetic.classes, v, "dataset.synthetic");
      get_to(s, "seed", cfg.dataset.synthetic.seed, v, "dataset.synthetic");
    }
    if (cfg.dataset.name != "synthetic") {
      const std::string root = data_root(cfg.dataset);
      if (!fs::exists(root))
        v.fail("dataset.dir: path \"" + root + "\" does not exist (set dataset.dir or "
               "LRLC_DATA_DIR)");
    }
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    check_known_keys(
        m, {"layers", "channels", "filter", "kind", "placement", "rank", "full_weights", "gnet"},
        v, "model");
    get_to(m, "layers", cfg.model.layers, v, "model");
    get_to(m, "channels", cfg.model.channels, v, "model");
    get_to(m, "filter", cfg.model.filter, v, "model");
    get_to(m, "kind", cfg.model.kind, v, "model");
    get_to(m, "placement", cfg.model.placement, v, "model");
    cfg.model.rank_given = get_to(m, "rank", cfg.model.rank, v, "model");
    get_to(m, "full_weights", cfg.model.full_weights, v, "model");
    if (m.contains("gnet")) {
      try {
        cfg.model.gnet = dynamic_net_shape_from_json(m["gnet"]);
      } catch (const json::exception&) {
        v.fail("model.gnet: malformed");
      }
    }
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    check_known_keys(t, {"batch", "epochs", "warmup_epochs", "peak_lr", "seeds", "test_mode",
                         "threads"},
                     v, "train");
    get_to(t, "batch", cfg.train.batch, v, "train");
    get_to(t, "epochs", cfg.train.epochs, v, "train");
    get_to(t, "warmup_epochs", cfg.train.warmup_epochs, v, "train");
    get_to(t, "peak_lr", cfg.train.peak_lr, v, "train");
    get_to(t, "seeds", cfg.train.seeds, v, "train");
    get_to(t, "test_mode", cfg.train.test_mode, v, "train");
    get_to(t, "threads", cfg.train.threads, v, "train");
  }

  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    check_known_keys(s, {"kinds", "ranks", "placements", "parallel"}, v, "sweep");
    get_to(s, "kinds", cfg.sweep.kinds, v, "sweep");
    get_to(s, "ranks", cfg.sweep.ranks, v, "sweep");
    get_to(s, "placements", cfg.sweep.placements, v, "sweep");
    get_to(s, "parallel", cfg.sweep.parallel, v, "sweep");
  }

  get_to(j, "output_dir", cfg.output_dir, v, "config");

  // Semantic checks.
  v.check(std::find(kKindNames.begin(), kKindNames.end(), cfg.model.kind) != kKindNames.end(),
          "model.kind: must be conv|local|coordconv|lrlc|dynamic_lrlc, got \"" + cfg.model.kind +
              "\"");
  v.check(std::find(kPlacements.begin(), kPlacements.end(), cfg.model.placement) !=
              kPlacements.end(),
          "model.placement: must be first|second|third|all, got \"" + cfg.model.placement + "\"");
  for (const auto& k : cfg.sweep.kinds)
    v.check(std::find(kKindNames.begin(), kKindNames.end(), k) != kKindNames.end(),
            "sweep.kinds: unknown kind \"" + k + "\"");
  for (const auto& p : cfg.sweep.placements)
    v.check(std::find(kPlacements.begin(), kPlacements.end(), p) != kPlacements.end(),
            "sweep.placements: unknown placement \"" + p + "\"");
  v.check(cfg.model.layers >= 1, "model.layers: must be >= 1");
  v.check(cfg.model.filter % 2 == 1, "model.filter: must be odd");
  v.check(cfg.train.batch >= 1, "train.batch: must be >= 1");
  v.check(cfg.train.warmup_epochs <= cfg.train.epochs,
          "train.warmup_epochs: exceeds train.epochs");
  v.check(!cfg.train.seeds.empty(), "train.seeds: must list at least one seed");
  v.check(cfg.train.peak_lr > 0, "train.peak_lr: must be positive");
  v.check(!cfg.output_dir.empty(), "output_dir: must not be empty");
  v.check(cfg.sweep.parallel >= 1, "sweep.parallel: must be >= 1");
  for (const auto& [pool, dilation] : cfg.model.gnet.branches)
    v.check(pool >= 1 && dilation >= 1, "model.gnet.branches: pool and dilation must be >= 1");

  const bool sweep_has_lrlc =
      std::any_of(cfg.sweep.kinds.begin(), cfg.sweep.kinds.end(), is_lrlc_kind);
  const bool lrlc_selected = is_lrlc_kind(cfg.model.kind) || sweep_has_lrlc;
  if (lrlc_selected) {
    v.check(cfg.model.rank_given || !cfg.sweep.ranks.empty(),
            "model.rank: required when an lrlc/dynamic_lrlc kind is configured");
    v.check(cfg.model.rank >= 1, "model.rank: must be >= 1");
    for (std::size_t r : cfg.sweep.ranks)
      v.check(r >= 1, "sweep.ranks: rank " + std::to_string(r) + " must be >= 1");
  } else {
    v.check(!cfg.model.rank_given && cfg.sweep.ranks.empty(),
            "model.rank / sweep.ranks: only valid for lrlc/dynamic_lrlc kinds");
  }

  v.finish();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  require<ConfigError>(static_cast<bool>(in), "cannot open config file ", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = {{"name", cfg.dataset.name},
                  {"dir", cfg.dataset.dir},
                  {"translate",
                   {{"enabled", cfg.dataset.translate.enabled},
                    {"canvas", cfg.dataset.translate.canvas},
                    {"seed", cfg.dataset.translate.seed}}},
                  {"synthetic",
                   {{"train", cfg.dataset.synthetic.train},
                    {"validation", cfg.dataset.synthetic.validation},
                    {"test", cfg.dataset.synthetic.test},
                    {"height", cfg.dataset.synthetic.height},
                    {"width", cfg.dataset.synthetic.width},
                    {"channels", cfg.dataset.synthetic.channels},
                    {"classes", cfg.dataset.synthetic.classes},
                    {"seed", cfg.dataset.synthetic.seed}}}};
  j["model"] = {{"layers", cfg.model.layers},   {"channels", cfg.model.channels},
                {"filter", cfg.model.filter},   {"kind", cfg.model.kind},
                {"placement", cfg.model.placement},
                {"full_weights", cfg.model.full_weights},
                {"gnet", dynamic_net_shape_to_json(cfg.model.gnet)}};
  if (cfg.model.rank_given || is_lrlc_kind(cfg.model.kind)) j["model"]["rank"] = cfg.model.rank;
  j["train"] = {{"batch", cfg.train.batch},
                {"epochs", cfg.train.epochs},
                {"warmup_epochs", cfg.train.warmup_epochs},
                {"peak_lr", cfg.train.peak_lr},
                {"seeds", cfg.train.seeds},
                {"test_mode", cfg.train.test_mode},
                {"threads", cfg.train.threads}};
  if (!cfg.sweep.kinds.empty() || !cfg.sweep.ranks.empty() || !cfg.sweep.placements.empty() ||
      cfg.sweep.parallel != 1) {
    j["sweep"] = json::object();
    if (!cfg.sweep.kinds.empty()) j["sweep"]["kinds"] = cfg.sweep.kinds;
    if (!cfg.sweep.ranks.empty()) j["sweep"]["ranks"] = cfg.sweep.ranks;
    if (!cfg.sweep.placements.empty()) j["sweep"]["placements"] = cfg.sweep.placements;
    j["sweep"]["parallel"] = cfg.sweep.parallel;
  }
  j["output_dir"] = cfg.output_dir;
  return j.dump(2);
}

ExperimentConfig apply_overrides(const ExperimentConfig& cfg,
                                 const std::vector<std::string>& assignments) {
  json j = json::parse(experiment_config_to_json(cfg));
  for (const std::string& assignment : assignments) {
    const auto eq = assignment.find('=');
    require<ConfigError>(eq != std::string::npos && eq > 0,
                         "override must be key.path=value, got ", assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    std::string pointer = "/";
    for (char c : key) pointer += (c == '.') ? '/' : c;
    json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) parsed = value;  // plain string
    try {
      j[json::json_pointer(pointer)] = parsed;
    } catch (const json::exception& e) {
      throw ConfigError(detail::concat("cannot apply override ", assignment, ": ", e.what()));
    }
  }
  return parse_experiment_config(j.dump());
}

Dataset load_dataset(const DatasetConfig& cfg) {
  Dataset data;
  if (cfg.name == "synthetic") {
    data = make_synthetic(cfg.synthetic);
  } else {
    const std::string root = data_root(cfg);
    // Look for the files either directly in the root or under root/<name>.
    std::string dir = root;
    if (fs::exists(fs::path(root) / cfg.name)) dir = (fs::path(root) / cfg.name).string();
    data = cfg.name == "mnist" ? load_mnist(dir, /*standardize_pixels=*/false)
                               : load_cifar10(dir, /*standardize_pixels=*/false);
  }
  if (cfg.translate.enabled) {
    TranslateSpec spec;
    spec.canvas = cfg.translate.canvas;
    spec.seed = cfg.translate.seed;
    data = translate_dataset(data, spec);
  }
  standardize(data);
  return data;
}

SweepResult run_experiment(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  atomic_write((fs::path(cfg.output_dir) / "config.json").string(),
               experiment_config_to_json(cfg));
  exec::set_threads(cfg.train.threads);

  const Dataset data = load_dataset(cfg.dataset);

  std::vector<std::string> kinds =
      cfg.sweep.kinds.empty() ? std::vector<std::string>{cfg.model.kind} : cfg.sweep.kinds;
  std::vector<std::string> placements = cfg.sweep.placements.empty()
                                            ? std::vector<std::string>{cfg.model.placement}
                                            : cfg.sweep.placements;
  std::vector<std::size_t> ranks =
      cfg.sweep.ranks.empty() ? std::vector<std::size_t>{cfg.model.rank} : cfg.sweep.ranks;

  std::vector<CellKey> cells;
  for (const auto& kind : kinds)
    for (const auto& placement : placements) {
      if (is_lrlc_kind(kind)) {
        for (std::size_t rank : ranks) cells.push_back({kind, placement, rank});
      } else {
        cells.push_back({kind, placement, 0});
      }
    }

  std::vector<std::pair<CellKey, std::uint64_t>> jobs;
  for (const auto& key : cells)
    for (std::uint64_t seed : cfg.train.seeds) jobs.emplace_back(key, seed);

  SweepResult result;
  result.cells.resize(jobs.size());
  auto run_job = [&](std::size_t i) {
    const auto& [key, seed] = jobs[i];
    const std::string dir = (fs::path(cfg.output_dir) / cell_name(key, seed)).string();
    CellResult& cell = result.cells[i];
    try {
      cell = cfg.train.test_mode ? run_cell<double>(cfg, data, key, seed, dir)
                                 : run_cell<float>(cfg, data, key, seed, dir);
    } catch (const std::exception& e) {
      cell.key = key;
      cell.seed = seed;
      cell.cell_dir = dir;
      cell.failed = true;
      cell.error = e.what();
    }
  };
  const std::size_t workers = std::min<std::size_t>(cfg.sweep.parallel, jobs.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) run_job(i);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& cell : result.cells) result.any_failed = result.any_failed || cell.failed;

  result.summary = summarize(result.cells);
  result.cells_csv = (fs::path(cfg.output_dir) / "cells.csv").string();
  result.summary_csv = (fs::path(cfg.output_dir) / "summary.csv").string();
  write_cells_csv(result.cells_csv, result.cells);
  write_summary_csv(result.summary_csv, result.summary);
  return result;
}

std::vector<SummaryRow> summarize_cells_csv(const std::string& cells_csv_path) {
  std::ifstream in(cells_csv_path);
  require<FormatError>(static_cast<bool>(in), "cannot open ", cells_csv_path);
  std::string line;
  require<FormatError>(static_cast<bool>(std::getline(in, line)), cells_csv_path, ": empty");
  std::vector<CellResult> cells;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    require<FormatError>(fields.size() >= 9, cells_csv_path, ": malformed row \"", line, "\"");
    CellResult c;
    c.key.kind = fields[0];
    c.key.placement = fields[1];
    c.key.rank = fields[2].empty() ? 0 : std::stoul(fields[2]);
    c.seed = std::stoull(fields[3]);
    c.val_loss = std::strtod(fields[4].c_str(), nullptr);
    c.val_top1 = std::strtod(fields[5].c_str(), nullptr);
    c.test_loss = std::strtod(fields[6].c_str(), nullptr);
    c.test_top1 = std::strtod(fields[7].c_str(), nullptr);
    c.failed = fields[8] != "ok";
    cells.push_back(std::move(c));
  }
  return summarize(cells);
}

CheckpointEval evaluate_checkpoint(const std::string& checkpoint_dir, const ExperimentConfig& cfg,
                                   const std::string& split, bool lowered) {
  Dataset data = load_dataset(cfg.dataset);
  const DatasetSplit* s = nullptr;
  if (split == "train")
    s = &data.train;
  else if (split == "validation")
    s = &data.validation;
  else if (split == "test")
    s = &data.test;
  require<ConfigError>(s != nullptr, "split must be train|validation|test, got \"", split, "\"");

  Model<float> model = load_model<float>(checkpoint_dir);
  CheckpointEval out;
  out.examples = s->size();
  if (lowered) {
    Model<float> low = model.lowered();
    EvalResult r = evaluate(low, *s, cfg.train.batch);
    out.loss = r.loss;
    out.top1 = r.top1;
  } else {
    EvalResult r = evaluate(model, *s, cfg.train.batch);
    out.loss = r.loss;
    out.top1 = r.top1;
  }
  return out;
}

void lower_checkpoint(const std::string& checkpoint_dir, const std::string& out_dir) {
  Model<float> model = load_model<float>(checkpoint_dir);
  Model<float> low = model.lowered();
  save_model(low, out_dir);
}

std::size_t export_heatmaps(const std::string& checkpoint_dir, const std::string& out_dir,
                            std::size_t examples, const ExperimentConfig* cfg) {
  Model<float> model = load_model<float>(checkpoint_dir);
  fs::create_directories(out_dir);
  std::size_t written = 0;

  Tensor<float> sample;  // lazily loaded test examples for dynamic layers
  for (std::size_t i = 0; i < model.depth(); ++i) {
    const std::string kind = model.block(i).kind_name();
    const std::string prefix = (fs::path(out_dir) / ("layer" + std::to_string(i))).string();
    if (kind == "lrlc") {
      auto& block = dynamic_cast<LrlcBlock<float>&>(model.block(i));
      const TensorF weights = normalized_weight_map(block.layer());  // [H, W, K]
      const std::size_t H = weights.extent(0), W = weights.extent(1), K = weights.extent(2);
      for (std::size_t k = 0; k < K; ++k) {
        TensorF map({H, W});
        for (std::size_t p = 0; p < H * W; ++p) map[p] = weights[p * K + k];
        write_heatmap_csv(prefix + "_k" + std::to_string(k) + ".csv", map);
        write_heatmap_pgm(prefix + "_k" + std::to_string(k) + ".pgm", map);
        ++written;
      }
    } else if (kind == "dynamic_lrlc") {
      require<ConfigError>(cfg != nullptr,
                           "dynamic lrlc heatmaps need a dataset config for example inputs");
      if (sample.empty()) {
        Dataset data = load_dataset(cfg->dataset);
        const std::size_t n = std::min<std::size_t>(examples, data.test.size());
        const std::size_t hw =
            data.test.images.extent(1) * data.test.images.extent(2) * data.test.images.extent(3);
        sample = Tensor<float>({n, data.test.images.extent(1), data.test.images.extent(2),
                                data.test.images.extent(3)});
        std::copy(data.test.images.data(), data.test.images.data() + n * hw, sample.data());
      }
      // Per-example weight maps need the layer's own input: run the stack up
      // to this block in inference mode.
      Tensor<float> h = sample;
      for (std::size_t b = 0; b < i; ++b) {
        h = model.block(b).forward(h, false);
        h = batchnorm_forward(h, model.batchnorm(b), BnMode::kInference);
        h = relu(h);
      }
      auto& block = dynamic_cast<DynamicLrlcBlock<float>&>(model.block(i));
      const TensorF weights = dynamic_weight_map(block.layer(), h);  // [N, H, W, K]
      const std::size_t n = weights.extent(0), H = weights.extent(1), W = weights.extent(2),
                        K = weights.extent(3);
      for (std::size_t e = 0; e < n; ++e)
        for (std::size_t k = 0; k < K; ++k) {
          TensorF map({H, W});
          for (std::size_t p = 0; p < H * W; ++p) map[p] = weights[(e * H * W + p) * K + k];
          const std::string name =
              prefix + "_ex" + std::to_string(e) + "_k" + std::to_string(k);
          write_heatmap_csv(name + ".csv", map);
          write_heatmap_pgm(name + ".pgm", map);
          ++written;
        }
    }
  }
  require<ConfigError>(written > 0, "checkpoint has no lrlc layers to export heatmaps from");
  return written;
}

std::vector<CostTableRow> report_costs(const ExperimentConfig& cfg) {
  // Spatial extents come from the dataset geometry without loading payloads
  // for the known datasets.
  std::size_t H, W, C;
  if (cfg.dataset.name == "mnist") {
    H = W = 28;
    C = 1;
  } else if (cfg.dataset.name == "cifar10") {
    H = W = 32;
    C = 3;
  } else {
    H = cfg.dataset.synthetic.height;
    W = cfg.dataset.synthetic.width;
    C = cfg.dataset.synthetic.channels;
  }
  if (cfg.dataset.translate.enabled) {
    const std::size_t canvas =
        cfg.dataset.translate.canvas == 0 ? H * 3 / 2 : cfg.dataset.translate.canvas;
    H = W = canvas;
  }

  const std::vector<LayerKind> kinds = kinds_from_placement(
      layer_kind_from_name(cfg.model.kind), cfg.model.placement, cfg.model.layers);

  std::vector<CostTableRow> rows;
  CostTableRow total;
  total.layer = "total";
  std::size_t cin = C;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    LayerCostSpec spec;
    spec.kind = kinds[i];
    spec.height = H;
    spec.width = W;
    spec.in_channels = cin;
    spec.out_channels = cfg.model.channels;
    spec.filter_h = spec.filter_w = cfg.model.filter;
    spec.rank = cfg.model.rank;
    spec.factorized = !cfg.model.full_weights;
    spec.gnet = cfg.model.gnet;

    CostTableRow row;
    row.layer = "layer" + std::to_string(i);
    row.kind = kinds[i];
    row.params = count_params(spec);
    row.train_macs = count_flops(spec, CostMode::kTrain).macs;
    const CostMode infer_mode = kinds[i] == LayerKind::kDynamicLrlc
                                    ? CostMode::kDynamic
                                    : CostMode::kLoweredInference;
    const CostReport infer = count_flops(spec, infer_mode);
    row.inference_macs = infer.macs;
    row.inference_param_bytes = infer.lowered_param_bytes;
    rows.push_back(row);

    total.params.params_total += row.params.params_total;
    total.params.params_basis += row.params.params_basis;
    total.params.params_combining += row.params.params_combining;
    total.params.params_biases += row.params.params_biases;
    total.train_macs += row.train_macs;
    total.inference_macs += row.inference_macs;
    total.inference_param_bytes += row.inference_param_bytes;
    cin = cfg.model.channels;
  }
  rows.push_back(total);
  return rows;
}

void write_costs_csv(const std::string& path, const std::vector<CostTableRow>& rows) {
  std::ostringstream out;
  out << "layer,kind,params_total,params_basis,params_combining,params_biases,train_macs,"
         "inference_macs,inference_param_bytes\n";
  for (const auto& r : rows) {
    out << r.layer << ',' << (r.layer == "total" ? "" : layer_kind_name(r.kind)) << ','
        << r.params.params_total << ',' << r.params.params_basis << ','
        << r.params.params_combining << ',' << r.params.params_biases << ',' << r.train_macs
        << ',' << r.inference_macs << ',' << r.inference_param_bytes << '\n';
  }
  atomic_write(path, out.str());
}

}  // namespace lrlc
