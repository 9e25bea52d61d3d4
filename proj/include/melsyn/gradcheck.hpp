#pragma once

#include <functional>
#include <string>
#include <vector>

#include "melsyn/numerics.hpp"

namespace melsyn {

struct GradCheckReport {
  std::string name;
  Eigen::MatrixXd analytic;
  Eigen::MatrixXd numeric;
  double max_rel_error = 0.0;
  bool finite = true;

  bool passed(double tolerance = 1e-4) const { return finite && max_rel_error < tolerance; }
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b) noexcept;

/// Loss over a parameter set. When `grad` is non-null it receives the analytic
/// gradient with the same names and shapes as the parameters.
using DifferentiableLoss = std::function<double(const ParamSet<double>& params, ParamSet<double>* grad)>;

/// Central differences per scalar, compared with the analytic gradient. The
/// reported error is max |analytic - numeric| over the tensor divided by
/// max(|analytic|, |numeric|, 1e-8) over the same tensor, so entries many
/// orders below the tensor's scale do not report roundoff as error.
/// A non-finite loss marks the affected report as failed.
std::vector<GradCheckReport> finite_diff_check(const DifferentiableLoss& loss,
                                               const ParamSet<double>& params,
                                               double epsilon = 1e-6);

}  // namespace melsyn
