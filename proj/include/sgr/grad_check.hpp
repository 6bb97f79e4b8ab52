#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgr/tensor.hpp"

namespace sgr {

struct GradCheckReport {
  bool passed = false;
  double max_relative_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  double loss = 0.0;  // f at the sample point
  std::string message;
};

inline constexpr double kGradCheckFloor = 1e-8;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

// Compares the taped gradient of `f` with central differences on every
// element of every leaf. `f` must rebuild its graph from the current leaf
// values on each call.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                  double step = 1e-5, double tol = 1e-4) {
  if (!(step > 0.0 && step <= 1e-2)) throw std::invalid_argument("grad_check: step must lie in (0, 1e-2]");
  GradCheckReport report;

  std::vector<std::vector<double>> analytic(leaves.size());
  {
    for (auto& leaf : leaves) {
      leaf.set_requires_grad(true);
      leaf.zero_grad();
    }
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    report.loss = loss.item();
    if (!std::isfinite(report.loss)) {
      report.message = "non-finite loss at the sample point";
      return report;
    }
    tape.backward(loss);
    for (std::size_t l = 0; l < leaves.size(); ++l) {
      auto g = leaves[l].grad();
      analytic[l].assign(g.begin(), g.end());
      if (analytic[l].empty()) analytic[l].assign(leaves[l].size(), 0.0);
    }
  }

  NoGradScope no_grad;
  report.passed = true;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = f().item();
      values[i] = saved - step;
      const double down = f().item();
      values[i] = saved;
      ++report.checked;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.passed = false;
        report.message = "non-finite evaluation during differencing";
        report.worst_leaf = l;
        report.worst_index = i;
        report.max_relative_error = std::numeric_limits<double>::infinity();
        return report;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[l][i], numeric);
      if (err > report.max_relative_error || report.checked == 1) {
        report.max_relative_error = err;
        report.worst_leaf = l;
        report.worst_index = i;
        report.worst_analytic = analytic[l][i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_relative_error < tol;
  std::ostringstream oss;
  oss << (report.passed ? "pass" : "FAIL") << " max_rel_err=" << report.max_relative_error
      << " at leaf " << report.worst_leaf << "[" << report.worst_index
      << "] analytic=" << report.worst_analytic << " numeric=" << report.worst_numeric;
  report.message = oss.str();
  for (auto& leaf : leaves) leaf.zero_grad();
  return report;
}

}  // namespace sgr
