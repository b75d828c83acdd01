#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lrlc/tensor.hpp"

namespace lrlc {

/// Outcome of one finite-difference check of an analytic gradient.
struct GradCheckReport {
  std::string op;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;  // true iff max_rel_err <= tolerance and grads were finite
};

struct GradCheckOptions {
  double tolerance = 1e-5;
  /// Optional kink filter: return true to exclude element `element` of input
  /// `input` (non-differentiable points such as relu at exactly 0).
  std::function<bool(std::size_t input, std::size_t element)> skip;
};

/// Checks analytic gradients of a scalar-reducing composite against central
/// finite differences. 64-bit only; every trainable backward pass in this
/// library is certified through this harness.
///
/// `forward_scalar` maps the inputs to a scalar (typically sum-of-outputs or
/// a loss); `analytic_grads` returns d scalar / d input_i, same shapes as the
/// inputs. The step is per element: max(1e-5, 1e-4 * |x|).
inline GradCheckReport grad_check(
    std::string op_name,
    const std::function<double(const std::vector<TensorD>&)>& forward_scalar,
    const std::function<std::vector<TensorD>(const std::vector<TensorD>&)>& analytic_grads,
    std::vector<TensorD> inputs, GradCheckOptions opts = {}) {
  GradCheckReport report;
  report.op = std::move(op_name);
  report.tolerance = opts.tolerance;

  std::vector<TensorD> grads = analytic_grads(inputs);
  require<ConfigError>(grads.size() == inputs.size(), "grad_check(", report.op,
                       "): expected one gradient per input");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite()) {
      report.max_abs_err = std::numeric_limits<double>::infinity();
      report.max_rel_err = std::numeric_limits<double>::infinity();
      report.pass = false;
      return report;
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    require<ShapeError>(grads[i].same_shape(inputs[i]), "grad_check(", report.op,
                        "): gradient ", i, " shape mismatch");
    for (std::size_t e = 0; e < inputs[i].size(); ++e) {
      if (opts.skip && opts.skip(i, e)) continue;
      const double x = inputs[i][e];
      const double eps = std::max(1e-5, 1e-4 * std::abs(x));
      inputs[i][e] = x + eps;
      const double up = forward_scalar(inputs);
      inputs[i][e] = x - eps;
      const double down = forward_scalar(inputs);
      inputs[i][e] = x;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = grads[i][e];
      const double abs_err = std::abs(analytic - numeric);
      const double rel_err = abs_err / std::max({1.0, std::abs(analytic), std::abs(numeric)});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, rel_err);
    }
  }
  report.pass = report.max_rel_err <= report.tolerance;
  return report;
}

}  // namespace lrlc
