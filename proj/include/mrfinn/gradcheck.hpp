#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/Dense>

#include "mrfinn/errors.hpp"

namespace mrfinn::nn {

struct GradcheckReport {
  double max_relative_error = 0.0;
  Eigen::Index worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  Eigen::Index checked = 0;
  double tolerance = 0.0;
  bool passed = true;
};

/// Compares `analytic` against central differences of `loss` around `params`.
///
/// The relative error of one component is |a - n| / max(|a|, |n|, floor); the
/// floor keeps components whose true gradient is zero from reporting pure
/// round-off as a relative failure.
inline GradcheckReport gradcheck(const std::function<double(const Eigen::VectorXd&)>& loss,
                                 const Eigen::VectorXd& params, const Eigen::VectorXd& analytic,
                                 double tolerance, double step = 1e-5, double floor = 1e-6) {
  require_shape(params.size() == analytic.size(), "gradcheck: analytic gradient size mismatch");
  GradcheckReport report;
  report.tolerance = tolerance;
  Eigen::VectorXd probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double up = loss(probe);
    probe[i] = original - step;
    const double down = loss(probe);
    probe[i] = original;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double rel = std::abs(a - numeric) / denom;
    ++report.checked;
    if (report.worst_index < 0 || !(rel <= report.max_relative_error)) {
      report.max_relative_error = std::isnan(rel) ? INFINITY : rel;
      report.worst_index = i;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  report.passed = report.max_relative_error <= tolerance;
  return report;
}

}  // namespace mrfinn::nn
