#include "melsyn/synapse.hpp"

#include <algorithm>
#include <cmath>

namespace melsyn {

GateMode parse_gate_mode(const std::string& name) {
  if (name == "learned") return GateMode::learned;
  if (name == "fixed") return GateMode::fixed;
  if (name == "bypass") return GateMode::bypass;
  throw ConfigError("synapse.mode", "unknown gate mode '" + name + "'");
}

std::string to_string(GateMode mode) {
  switch (mode) {
    case GateMode::learned: return "learned";
    case GateMode::fixed: return "fixed";
    case GateMode::bypass: return "bypass";
  }
  return "?";
}

double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

SynapseParams::SynapseParams(const SynapseConfig& config, int n_blocks) : config_(config), n_blocks_(n_blocks) {
  if (config.enabled && !config.placement.couple_encoder && !config.placement.couple_decoder) {
    throw ConfigError("synapse.couple_decoder", "an enabled synapse must couple the encoder, the decoder, or both");
  }
  if (config.fixed_alpha < 0.0 || config.fixed_alpha > 1.0) {
    throw ConfigError("synapse.fixed_alpha", "fixed alpha must lie in [0, 1]");
  }
  if (config.enabled) {
    if (config.placement.couple_encoder) {
      for (int i = 0; i < n_blocks; ++i) layers_.push_back(encoder_layer(i));
    }
    if (config.placement.couple_decoder) {
      for (int j = 0; j < n_blocks; ++j) layers_.push_back(decoder_layer(n_blocks, j));
    }
  }
  const Index gates = layers_.empty() ? 0 : (config.placement.per_block ? static_cast<Index>(layers_.size()) : 1);
  raw_ = Eigen::VectorXd::Constant(gates, config.init_raw);
}

bool SynapseParams::coupled(int layer) const {
  return std::binary_search(layers_.begin(), layers_.end(), layer);
}

std::size_t SynapseParams::slot(int layer) const {
  auto it = std::lower_bound(layers_.begin(), layers_.end(), layer);
  if (it == layers_.end() || *it != layer) throw Error("layer " + std::to_string(layer) + " has no synapse gate");
  return config_.placement.per_block ? static_cast<std::size_t>(it - layers_.begin()) : 0;
}

double SynapseParams::gate(int layer) const {
  const std::size_t s = slot(layer);
  switch (config_.mode) {
    case GateMode::fixed: return config_.fixed_alpha;
    case GateMode::bypass: return 0.0;
    case GateMode::learned: break;
  }
  return sigmoid(raw_[static_cast<Index>(s)]);
}

std::vector<double> SynapseParams::alphas() const {
  std::vector<double> out;
  for (int layer : layers_) out.push_back(gate(layer));
  return out;
}

void SynapseParams::set_mode(GateMode mode, double fixed_alpha) {
  config_.mode = mode;
  config_.fixed_alpha = fixed_alpha;
}

template <typename Scalar>
std::pair<MatrixX<Scalar>, MatrixX<Scalar>> fuse(const MatrixX<Scalar>& kM, const MatrixX<Scalar>& vM,
                                                 const MatrixX<Scalar>& kI, const MatrixX<Scalar>& vI, double alpha) {
  auto same = [](const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) { return a.rows() == b.rows() && a.cols() == b.cols(); };
  if (!same(kM, vM) || !same(kM, kI) || !same(kM, vI)) throw ShapeError("fuse: all four feature matrices must share a shape");
  const Scalar a = static_cast<Scalar>(alpha);
  return {a * kI + (Scalar(1) - a) * kM, a * vI + (Scalar(1) - a) * vM};
}

template <typename Scalar>
MatrixX<Scalar> resample_tokens(const MatrixX<Scalar>& features, Index target_tokens) {
  const Index m = features.rows();
  if (m < 1 || target_tokens < 1) throw ShapeError("resample_tokens: token counts must be positive");
  if (m == target_tokens) return features;
  MatrixX<Scalar> out(target_tokens, features.cols());
  for (Index j = 0; j < target_tokens; ++j) {
    const double x = target_tokens == 1 ? 0.5 * static_cast<double>(m - 1)
                                        : static_cast<double>(j) * static_cast<double>(m - 1) / static_cast<double>(target_tokens - 1);
    const Index lo = std::min<Index>(static_cast<Index>(std::floor(x)), m - 1);
    const Index hi = std::min<Index>(lo + 1, m - 1);
    const Scalar frac = static_cast<Scalar>(x - static_cast<double>(lo));
    out.row(j) = (Scalar(1) - frac) * features.row(lo) + frac * features.row(hi);
  }
  return out;
}

template std::pair<MatrixX<float>, MatrixX<float>> fuse(const MatrixX<float>&, const MatrixX<float>&,
                                                        const MatrixX<float>&, const MatrixX<float>&, double);
template std::pair<MatrixX<double>, MatrixX<double>> fuse(const MatrixX<double>&, const MatrixX<double>&,
                                                          const MatrixX<double>&, const MatrixX<double>&, double);
template MatrixX<float> resample_tokens(const MatrixX<float>&, Index);
template MatrixX<double> resample_tokens(const MatrixX<double>&, Index);

}  // namespace melsyn
