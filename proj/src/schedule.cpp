#include "melsyn/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace melsyn {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::linear;
  if (name == "cosine") return ScheduleKind::cosine;
  throw ConfigError("schedule.kind", "unknown schedule kind '" + name + "'");
}

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "cosine"; }

NoiseSchedule NoiseSchedule::from_betas(const std::vector<double>& betas) {
  if (betas.empty()) throw ConfigError("schedule.T", "schedule needs at least one step");
  NoiseSchedule s;
  s.beta_.assign(1, 0.0);
  s.gamma_bar_.assign(1, 1.0);
  for (double b : betas) {
    if (!(b >= 0.0 && b < 1.0)) throw ConfigError("schedule.beta", "beta outside [0, 1)");
    s.beta_.push_back(b);
    s.gamma_bar_.push_back(s.gamma_bar_.back() * (1.0 - b));
  }
  return s;
}

std::size_t NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps()) throw Error("timestep " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  return static_cast<std::size_t>(t);
}

double NoiseSchedule::gamma_bar(int t) const {
  if (t == 0) return 1.0;
  return gamma_bar_.at(check(t));
}

NoiseSchedule make_schedule(ScheduleKind kind, int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule.T", "T must be at least 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule.beta_start", "require 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (kind == ScheduleKind::linear) {
    for (int i = 0; i < steps; ++i) {
      const double f = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
      betas[static_cast<std::size_t>(i)] = beta_start + f * (beta_end - beta_start);
    }
  } else {
    constexpr double offset = 0.008;
    auto f = [&](int t) {
      const double c = std::cos((static_cast<double>(t) / steps + offset) / (1.0 + offset) * std::numbers::pi / 2);
      return c * c;
    };
    for (int t = 1; t <= steps; ++t) {
      betas[static_cast<std::size_t>(t - 1)] = std::clamp(1.0 - f(t) / f(t - 1), 1e-12, 0.999);
    }
  }
  return NoiseSchedule::from_betas(betas);
}

template <typename Scalar>
Tensor<Scalar> forward_sample(const NoiseSchedule& sched, const Tensor<Scalar>& z1, int t,
                              const Tensor<Scalar>& eps) {
  if (!z1.same_shape(eps)) {
    throw ShapeError("forward_sample: z1 " + shape_string(z1.dims()) + " vs eps " + shape_string(eps.dims()));
  }
  if (t < 1) throw Error("forward_sample: t must be >= 1");
  const double gb = sched.gamma_bar(t);
  const Scalar a = static_cast<Scalar>(std::sqrt(gb));
  const Scalar b = static_cast<Scalar>(std::sqrt(1.0 - gb));
  return Tensor<Scalar>(z1.dims(), a * z1.data() + b * eps.data());
}

template <typename Scalar>
Tensor<Scalar> markov_step(const NoiseSchedule& sched, const Tensor<Scalar>& z_prev, int t, Rng& rng) {
  const double beta = sched.beta(t);
  const Tensor<Scalar> noise = gaussian_sample<Scalar>(rng, z_prev.dims());
  return Tensor<Scalar>(z_prev.dims(), static_cast<Scalar>(std::sqrt(1.0 - beta)) * z_prev.data() +
                                           static_cast<Scalar>(std::sqrt(beta)) * noise.data());
}

template Tensor<float> forward_sample(const NoiseSchedule&, const Tensor<float>&, int, const Tensor<float>&);
template Tensor<double> forward_sample(const NoiseSchedule&, const Tensor<double>&, int, const Tensor<double>&);
template Tensor<float> markov_step(const NoiseSchedule&, const Tensor<float>&, int, Rng&);
template Tensor<double> markov_step(const NoiseSchedule&, const Tensor<double>&, int, Rng&);

}  // namespace melsyn
