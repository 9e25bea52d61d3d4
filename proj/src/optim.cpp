#include "melsyn/optim.hpp"

#include <cmath>

namespace melsyn {

template <typename Scalar>
void adamw_update(MatrixX<Scalar>& param, const MatrixX<Scalar>& grad, MatrixX<Scalar>& m, MatrixX<Scalar>& v,
                  long step, double lr, const AdamWConfig& config, bool decay) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() || m.rows() != param.rows() ||
      m.cols() != param.cols() || v.rows() != param.rows() || v.cols() != param.cols()) {
    throw ShapeError("adamw_update: shape mismatch");
  }
  if (step < 1) throw Error("adamw_update: step counts from 1");
  if (decay && config.weight_decay != 0.0) param *= static_cast<Scalar>(1.0 - lr * config.weight_decay);
  const auto b1 = static_cast<Scalar>(config.beta1);
  const auto b2 = static_cast<Scalar>(config.beta2);
  m = b1 * m + (Scalar(1) - b1) * grad;
  v = b2 * v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  const auto step_size = static_cast<Scalar>(lr / c1);
  const auto root_c2 = static_cast<Scalar>(std::sqrt(c2));
  const auto eps = static_cast<Scalar>(config.eps);
  param.array() -= step_size * m.array() / (v.array().sqrt() / root_c2 + eps);
}

template <typename Scalar>
AdamW<Scalar>::AdamW(const ParamSet<Scalar>& params, AdamWConfig config)
    : config_(config), m_(params.zeros_like()), v_(params.zeros_like()) {}

template <typename Scalar>
void AdamW<Scalar>::step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads, const LrFn& lr_of) {
  ++step_;
  for (auto& p : params) {
    if (!grads.contains(p.name)) continue;
    if (!m_.contains(p.name)) {
      m_.add(p.name, MatrixX<Scalar>::Zero(p.value.rows(), p.value.cols()), p.decay);
      v_.add(p.name, MatrixX<Scalar>::Zero(p.value.rows(), p.value.cols()), p.decay);
    }
    adamw_update(p.value, grads.at(p.name), m_.at(p.name), v_.at(p.name), step_, lr_of(p.name), config_, p.decay);
  }
}

template void adamw_update(MatrixX<float>&, const MatrixX<float>&, MatrixX<float>&, MatrixX<float>&, long, double,
                           const AdamWConfig&, bool);
template void adamw_update(MatrixX<double>&, const MatrixX<double>&, MatrixX<double>&, MatrixX<double>&, long,
                           double, const AdamWConfig&, bool);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace melsyn
