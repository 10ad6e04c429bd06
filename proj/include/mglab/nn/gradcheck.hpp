#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mglab/nn/layers.hpp"

namespace mglab::nn {

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  // Coordinates sampled per parameter tensor; 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  // Denominator floor of the relative error.
  double abs_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +/-h probes switched a relu on or off; a central
  // difference across a kink does not estimate the derivative.
  std::size_t skipped_kinks = 0;
  std::string worst;
  double tolerance = 0.0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares analytic gradients against central differences.
///   loss()      -> scalar loss at the current parameter values
///   analytic()  -> fills Param::grad for every parameter (grads pre-zeroed)
///   kinks()     -> on/off signature of all data-dependent kinks
template <typename LossFn, typename AnalyticFn, typename KinkFn>
GradCheckReport finite_diff_check(const std::vector<Param<double>*>& params, LossFn&& loss, AnalyticFn&& analytic,
                                  KinkFn&& kinks, const GradCheckOptions& opt) {
  for (auto* p : params) p->zero_grad();
  analytic();
  const auto base_kinks = kinks();

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  std::mt19937_64 rng(opt.seed);
  for (auto* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords_per_param > 0 && coords.size() > opt.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (auto i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + opt.h;
      const double up = loss();
      const bool kink_up = kinks() != base_kinks;
      p->value[i] = saved - opt.h;
      const double down = loss();
      const bool kink_down = kinks() != base_kinks;
      p->value[i] = saved;
      if (kink_up || kink_down) {
        ++report.skipped_kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opt.h);
      const double err = relative_error(p->grad[i], numeric, opt.abs_floor);
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  report.passed = report.checked > 0 && report.max_rel_error <= opt.tolerance;
  return report;
}

/// Gradient check of a Sequential under a loss of its output.
/// `output_loss(out, grad_out)` returns the loss and writes d(loss)/d(out).
template <typename OutputLoss>
GradCheckReport finite_diff_check(Sequential<double>& net, OutputLoss&& output_loss, const Tensor64& input,
                                  const GradCheckOptions& opt) {
  const auto loss = [&] {
    Tensor64 out = net.forward(input);
    Tensor64 scratch(out.shape());
    return output_loss(out, scratch);
  };
  const auto analytic = [&] {
    Tape<double> tape;
    Tensor64 out = net.forward(input, tape);
    Tensor64 grad_out(out.shape());
    output_loss(out, grad_out);
    net.backward(tape, grad_out, false);
  };
  const auto kinks = [&] {
    std::vector<std::uint8_t> sig;
    net.collect_kinks(input, sig);
    return sig;
  };
  return finite_diff_check(net.params(), loss, analytic, kinks, opt);
}

}  // namespace mglab::nn
