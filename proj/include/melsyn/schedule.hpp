#pragma once

#include <string>
#include <vector>

#include "melsyn/numerics.hpp"

namespace melsyn {

enum class ScheduleKind { linear, cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Variance schedule indexed by t in 1..T. Index 0 of every table holds the
/// t = 0 convention (beta 0, gamma_bar 1) so lookups read `gamma_bar(t)`.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  /// Builds the tables from explicit betas (length T). Betas in [0, 1) are
  /// accepted so the degenerate beta = 0 schedule can be used in diagnostics.
  static NoiseSchedule from_betas(const std::vector<double>& betas);

  int steps() const noexcept { return static_cast<int>(beta_.size()) - 1; }
  double beta(int t) const { return beta_.at(check(t)); }
  double gamma(int t) const { return 1.0 - beta(t); }
  /// Defined for 0 <= t <= T with gamma_bar(0) = 1.
  double gamma_bar(int t) const;

 private:
  std::size_t check(int t) const;

  std::vector<double> beta_;
  std::vector<double> gamma_bar_;
};

/// linear: betas interpolate [beta_start, beta_end] inclusively.
/// cosine: squared-cosine gamma_bar with offset 0.008, betas clipped at 0.999.
NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_start, double beta_end);

/// sqrt(gamma_bar_t) * z1 + sqrt(1 - gamma_bar_t) * eps
template <typename Scalar>
Tensor<Scalar> forward_sample(const NoiseSchedule& sched, const Tensor<Scalar>& z1, int t,
                              const Tensor<Scalar>& eps);

/// One stochastic step of the forward Markov chain from t - 1 to t.
template <typename Scalar>
Tensor<Scalar> markov_step(const NoiseSchedule& sched, const Tensor<Scalar>& z_prev, int t, Rng& rng);

}  // namespace melsyn
