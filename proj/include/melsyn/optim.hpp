#pragma once

#include <functional>
#include <string>

#include "melsyn/numerics.hpp"

namespace melsyn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// One decoupled-weight-decay Adam step on a single tensor, in PyTorch order:
/// decay, moment updates, bias correction, then the normalized step.
/// `step` counts from 1.
template <typename Scalar>
void adamw_update(MatrixX<Scalar>& param, const MatrixX<Scalar>& grad, MatrixX<Scalar>& m, MatrixX<Scalar>& v,
                  long step, double lr, const AdamWConfig& config, bool decay);

/// AdamW over a ParamSet. Moments are keyed by parameter name; `lr_of`
/// selects the learning rate for each parameter (parameter groups).
template <typename Scalar>
class AdamW {
 public:
  using LrFn = std::function<double(const std::string&)>;

  AdamW() = default;
  AdamW(const ParamSet<Scalar>& params, AdamWConfig config);

  void step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads, const LrFn& lr_of);

  const AdamWConfig& config() const noexcept { return config_; }
  long steps() const noexcept { return step_; }
  void set_steps(long s) noexcept { step_ = s; }
  ParamSet<Scalar>& first_moments() noexcept { return m_; }
  ParamSet<Scalar>& second_moments() noexcept { return v_; }
  const ParamSet<Scalar>& first_moments() const noexcept { return m_; }
  const ParamSet<Scalar>& second_moments() const noexcept { return v_; }

 private:
  AdamWConfig config_;
  ParamSet<Scalar> m_;
  ParamSet<Scalar> v_;
  long step_ = 0;
};

}  // namespace melsyn
