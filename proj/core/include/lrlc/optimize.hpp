#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <span>

#include "lrlc/datasets.hpp"
#include "lrlc/exec.hpp"
#include "lrlc/model.hpp"

namespace lrlc {

template <typename T>
struct LossResult {
  double loss = 0;
  Tensor<T> dlogits;
  std::size_t correct = 0;  // top-1 hits in the batch
};

/// Mean cross entropy with gradient, stable via max subtraction.
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require<ShapeError>(logits.rank() == 2, "cross_entropy expects N x classes logits");
  const std::size_t N = logits.extent(0), classes = logits.extent(1);
  require<ShapeError>(labels.size() == N, "cross_entropy label count mismatch");
  LossResult<T> out;
  out.dlogits = Tensor<T>(logits.shape());
  double total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const int label = labels[n];
    require<DataError>(label >= 0 && static_cast<std::size_t>(label) < classes,
                       "cross_entropy: label ", label, " out of range [0, ", classes, ")");
    const T* row = logits.data() + n * classes;
    T m = row[0];
    std::size_t argmax = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (row[c] > m) {
        m = row[c];
        argmax = c;
      }
    if (argmax == static_cast<std::size_t>(label)) ++out.correct;
    double denom = 0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(double(row[c]) - double(m));
    const double log_denom = std::log(denom);
    total += log_denom - (double(row[label]) - double(m));
    T* drow = out.dlogits.data() + n * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(double(row[c]) - double(m)) / denom;
      drow[c] = static_cast<T>(p / double(N));
    }
    drow[label] -= static_cast<T>(1.0 / double(N));
  }
  out.loss = total / double(N);
  require<DataError>(std::isfinite(out.loss), "cross_entropy produced a non-finite loss");
  return out;
}

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. Rejects non-finite
/// gradients before touching any parameter.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<ParamRef<T>> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      require<ConfigError>(p.grad != nullptr, "Adam: parameter ", p.name, " has no gradient");
      m_.emplace_back(p.value->shape());
      v_.emplace_back(p.value->shape());
    }
  }

  void step(double rate) {
    for (const auto& p : params_) {
      require<ShapeError>(p.grad->same_shape(*p.value), "Adam: gradient shape mismatch for ",
                          p.name);
      require<DataError>(p.grad->all_finite(), "Adam: non-finite gradient for ", p.name,
                         "; aborting step");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& value = *params_[i].value;
      const Tensor<T>& grad = *params_[i].grad;
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t e = 0; e < value.size(); ++e) {
        const double g = grad[e];
        const double mn = cfg_.beta1 * double(m[e]) + (1.0 - cfg_.beta1) * g;
        const double vn = cfg_.beta2 * double(v[e]) + (1.0 - cfg_.beta2) * g * g;
        m[e] = static_cast<T>(mn);
        v[e] = static_cast<T>(vn);
        value[e] -= static_cast<T>(rate * (mn / c1) / (std::sqrt(vn / c2) + cfg_.epsilon));
      }
    }
  }

  std::size_t step_count() const { return step_; }

 private:
  std::vector<ParamRef<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  AdamConfig cfg_;
  std::size_t step_ = 0;
};

/// Linear warmup to the peak rate, then cosine decay to zero at the final
/// step.
struct Schedule {
  std::size_t total_epochs = 20;
  std::size_t warmup_epochs = 2;
  std::size_t steps_per_epoch = 1;
  double peak = 0.01;

  std::size_t total_steps() const { return total_epochs * steps_per_epoch; }
  std::size_t warmup_steps() const { return warmup_epochs * steps_per_epoch; }

  double rate(std::size_t step) const {
    const std::size_t ws = warmup_steps();
    if (ws > 0 && step < ws) return peak * double(step) / double(ws);
    const std::size_t total = total_steps();
    if (total <= ws + 1) return peak;
    double t = double(step - ws) / double(total - ws - 1);
    t = std::clamp(t, 0.0, 1.0);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
};

struct MetricRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0, top1 = 0, lr = 0, seconds = 0;
};

inline void append_metric_csv(const std::string& path, const MetricRow& row, bool write_header) {
  std::ofstream out(path, std::ios::app);
  require<FormatError>(static_cast<bool>(out), "cannot open metrics csv ", path);
  if (write_header) out << "epoch,split,loss,top1,lr,seconds\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu,%s,%.10g,%.10g,%.10g,%.3f\n", row.epoch, row.split.c_str(),
                row.loss, row.top1, row.lr, row.seconds);
  out << buf;
}

struct EvalResult {
  double loss = 0;
  double top1 = 0;
};

/// Inference over a full split (batch norm running statistics, remainder
/// batch included).
template <typename T>
EvalResult evaluate(Model<T>& model, const DatasetSplit& split, std::size_t batch) {
  require<ConfigError>(batch >= 1, "evaluate: batch must be >= 1");
  const std::size_t N = split.size();
  const std::size_t H = split.images.extent(1), W = split.images.extent(2),
                    C = split.images.extent(3);
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t b0 = 0; b0 < N; b0 += batch) {
    const std::size_t b1 = std::min(N, b0 + batch);
    Tensor<T> xb({b1 - b0, H, W, C});
    for (std::size_t n = b0; n < b1; ++n)
      for (std::size_t e = 0; e < H * W * C; ++e)
        xb[(n - b0) * H * W * C + e] = static_cast<T>(split.images[n * H * W * C + e]);
    Tensor<T> logits = model.forward(xb, /*training=*/false);
    LossResult<T> res =
        cross_entropy(logits, std::span<const int>(split.labels.data() + b0, b1 - b0));
    loss_sum += res.loss * double(b1 - b0);
    correct += res.correct;
  }
  return {loss_sum / double(N), double(correct) / double(N)};
}

struct TrainConfig {
  std::size_t batch = 128;
  std::size_t epochs = 20;
  std::size_t warmup_epochs = 2;
  double peak_lr = 0.01;
  std::uint64_t seed = 0;
  /// Pins 64-bit scalars and serial reductions; metric files become bitwise
  /// reproducible (wall-clock column written as 0).
  bool test_mode = false;
  std::string metrics_csv;  // empty = no file
  bool eval_validation = true;
};

template <typename T>
struct TrainResult {
  std::vector<MetricRow> history;
  double best_val_top1 = -1;
  std::size_t best_epoch = 0;
};

/// Shuffled minibatch training with Adam and the warmup+cosine schedule.
/// `checkpoint_sink(model, epoch, is_best)` is invoked once per epoch so the
/// caller can persist snapshots; train itself does no file I/O beyond the
/// metrics CSV.
template <typename T>
TrainResult<T> train(Model<T>& model, const Dataset& data, const TrainConfig& cfg,
                     const std::function<void(Model<T>&, std::size_t, bool)>& checkpoint_sink = {}) {
  require<ConfigError>(!cfg.test_mode || std::is_same_v<T, double>,
                       "test mode requires the 64-bit training path");
  require<ConfigError>(cfg.warmup_epochs <= cfg.epochs, "warmup exceeds total epochs");
  exec::set_test_mode(cfg.test_mode);

  TrainResult<T> result;
  if (cfg.epochs == 0) return result;

  const std::size_t N = data.train.size();
  const std::size_t steps_per_epoch = N / cfg.batch;  // drop-last batching
  require<ConfigError>(steps_per_epoch >= 1, "training split (", N,
                       ") smaller than one batch (", cfg.batch, ")");
  const std::size_t H = data.train.images.extent(1), W = data.train.images.extent(2),
                    C = data.train.images.extent(3);

  Schedule sched{cfg.epochs, cfg.warmup_epochs, steps_per_epoch, cfg.peak_lr};
  Adam<T> adam(model.parameters());
  Rng shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;

  bool csv_header = !cfg.metrics_csv.empty();
  Tensor<T> xb({cfg.batch, H, W, C});
  std::vector<int> yb(cfg.batch);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0;
    std::size_t correct = 0;
    double lr = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        const std::size_t src = order[s * cfg.batch + b];
        yb[b] = data.train.labels[src];
        const float* img = data.train.images.data() + src * H * W * C;
        T* dst = xb.data() + b * H * W * C;
        for (std::size_t e = 0; e < H * W * C; ++e) dst[e] = static_cast<T>(img[e]);
      }
      Tensor<T> logits = model.forward(xb, /*training=*/true);
      LossResult<T> res = cross_entropy(logits, yb);
      model.backward(res.dlogits);
      lr = sched.rate(step);
      adam.step(lr);
      loss_sum += res.loss * double(cfg.batch);
      correct += res.correct;
    }
    const double seen = double(steps_per_epoch * cfg.batch);
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
    MetricRow train_row{epoch, "train", loss_sum / seen, double(correct) / seen, lr,
                        cfg.test_mode ? 0.0 : elapsed.count()};
    result.history.push_back(train_row);
    if (!cfg.metrics_csv.empty()) {
      append_metric_csv(cfg.metrics_csv, train_row, csv_header);
      csv_header = false;
    }

    bool is_best = false;
    if (cfg.eval_validation && data.validation.size() > 0) {
      const auto v0 = std::chrono::steady_clock::now();
      EvalResult val = evaluate(model, data.validation, cfg.batch);
      const auto vdt = std::chrono::duration<double>(std::chrono::steady_clock::now() - v0);
      MetricRow val_row{epoch, "validation", val.loss, val.top1, lr,
                        cfg.test_mode ? 0.0 : vdt.count()};
      result.history.push_back(val_row);
      if (!cfg.metrics_csv.empty()) append_metric_csv(cfg.metrics_csv, val_row, false);
      if (val.top1 > result.best_val_top1) {
        result.best_val_top1 = val.top1;
        result.best_epoch = epoch;
        is_best = true;
      }
    }
    if (checkpoint_sink) checkpoint_sink(model, epoch, is_best);
  }
  return result;
}

}  // namespace lrlc
