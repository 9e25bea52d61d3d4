#include "melsyn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace melsyn {

double relative_error(double a, double b) noexcept {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

std::vector<GradCheckReport> finite_diff_check(const DifferentiableLoss& loss,
                                               const ParamSet<double>& params, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw ConfigError("epsilon", "finite-difference epsilon must lie in (0, 1e-2]");
  ParamSet<double> analytic = params.zeros_like();
  const double base = loss(params, &analytic);
  ParamSet<double> probe = params;

  std::vector<GradCheckReport> reports;
  reports.reserve(params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    GradCheckReport report;
    report.name = params[p].name;
    report.analytic = analytic[p].value;
    report.numeric = Eigen::MatrixXd::Zero(params[p].value.rows(), params[p].value.cols());
    report.finite = std::isfinite(base);
    auto& slot = probe[p].value;
    for (Index i = 0; i < slot.size(); ++i) {
      const double saved = slot.data()[i];
      slot.data()[i] = saved + epsilon;
      const double up = loss(probe, nullptr);
      slot.data()[i] = saved - epsilon;
      const double down = loss(probe, nullptr);
      slot.data()[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) report.finite = false;
      const double fd = (up - down) / (2.0 * epsilon);
      report.numeric.data()[i] = fd;
    }
    const double scale = std::max({report.analytic.cwiseAbs().maxCoeff(), report.numeric.cwiseAbs().maxCoeff(), 1e-8});
    report.max_rel_error = report.analytic.size() ? (report.analytic - report.numeric).cwiseAbs().maxCoeff() / scale : 0.0;
    if (!std::isfinite(report.max_rel_error)) report.finite = false;
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace melsyn
