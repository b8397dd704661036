#pragma once

// Finite-difference verification of backward() in 64-bit mode.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "leancnn/arch.hpp"
#include "leancnn/engine.hpp"
#include "leancnn/loss.hpp"
#include "leancnn/params.hpp"

namespace leancnn {

struct GradCheckOptions {
  double step = 1e-5;
  /// Lower bound on the denominator of the relative error, so that two
  /// gradients that are both essentially zero do not register as a mismatch.
  double floor = 1e-6;
  Mode mode = Mode::train;
  std::uint64_t seed = 0;
};

struct GradCheckRow {
  std::string name;  // "<layer>.weight" or "<layer>.bias"
  std::size_t count = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckRow> rows;

  double max_rel_error() const {
    double m = 0;
    for (const auto& r : rows) m = std::max(m, r.max_rel_error);
    return m;
  }
  bool passed(double tolerance) const { return max_rel_error() < tolerance; }
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares backward() against central differences of the batch loss for
/// every trainable parameter element.
inline GradCheckReport grad_check(const ArchitectureSpec& spec, const ParameterSet<double>& params,
                                  const Tensor<double>& batch, std::span<const int> labels, LossKind loss,
                                  const GradCheckOptions& opt = {}) {
  const auto fwd = forward(spec, params, batch, opt.mode, opt.seed);
  const auto lg = loss_and_gradient(loss, fwd.output, labels);
  const auto analytic = backward(spec, params, fwd.cache, lg.gradient).gradients;

  ParameterSet<double> probe = params;
  auto loss_at = [&]() {
    return loss_and_gradient(loss, forward(spec, probe, batch, opt.mode, opt.seed).output, labels).value;
  };

  GradCheckReport report;
  for (const auto& entry : params.entries()) {
    if (!entry.trainable) continue;
    const auto& g = analytic.at(entry.name);
    for (int part = 0; part < 2; ++part) {
      GradCheckRow row{entry.name + (part == 0 ? ".weight" : ".bias"), 0, 0, 0};
      const std::size_t n = part == 0 ? entry.weights.size() : entry.bias.size();
      for (std::size_t i = 0; i < n; ++i) {
        auto value = [&]() -> double& {
          auto& e = probe.at(entry.name);
          return part == 0 ? e.weights[i] : e.bias[i];
        };
        const double original = value();
        value() = original + opt.step;
        const double up = loss_at();
        value() = original - opt.step;
        const double down = loss_at();
        value() = original;
        const double numeric = (up - down) / (2.0 * opt.step);
        const double a = part == 0 ? g.weights[i] : g.bias[i];
        row.max_rel_error = std::max(row.max_rel_error, relative_error(a, numeric, opt.floor));
        row.max_abs_error = std::max(row.max_abs_error, std::abs(a - numeric));
        ++row.count;
      }
      if (row.count) report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace leancnn
