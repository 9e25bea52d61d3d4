#pragma once

#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "melsyn/attention.hpp"
#include "melsyn/synapse.hpp"

namespace melsyn {

/// Mirrored UNet: one encoder and one decoder block per entry of `widths`,
/// average pooling between encoder levels and nearest upsampling between
/// decoder levels, a bottleneck block at the coarsest level.
struct DenoiserConfig {
  Index channels = 16;
  Index height = 16;
  Index width = 16;
  std::vector<Index> widths{32, 32, 32};
  Index d_k = 16;
  Index d_c = 16;
  Index text_tokens = 8;
  Index time_width = 32;
  Index groups = 4;

  int n_blocks() const noexcept { return static_cast<int>(widths.size()); }
  Index level_height(int level) const { return height >> level; }
  Index level_width(int level) const { return width >> level; }
  Shape latent_shape() const { return {channels, height, width}; }
  void validate() const;
};

/// Sinusoidal features at geometrically spaced frequencies; t >= 1.
template <typename Scalar>
RowVectorX<Scalar> timestep_embedding(int t, Index width);

/// Fresh parameters: N(0, 1/fan_in) weights, unit norm gains, zero biases and
/// a zero output convolution.
template <typename Scalar>
ParamSet<Scalar> init_denoiser(const DenoiserConfig& config, Rng& rng);

/// Parameter matrices registered on a tape, addressed by name.
template <typename Scalar>
class BoundParams {
 public:
  BoundParams(ad::Tape<Scalar>& tape, const ParamSet<Scalar>& params, bool trainable);

  const ad::Var<Scalar>& operator()(const std::string& name) const { return vars_[params_->index_of(name)]; }
  const std::vector<ad::Var<Scalar>>& vars() const noexcept { return vars_; }
  ad::Tape<Scalar>& tape() const noexcept { return *tape_; }

 private:
  ad::Tape<Scalar>* tape_;
  const ParamSet<Scalar>* params_;
  std::vector<ad::Var<Scalar>> vars_;
};

template <typename Scalar>
struct TapVars {
  ad::Var<Scalar> k;
  ad::Var<Scalar> v;
};

template <typename Scalar>
struct DenoiserGraph {
  ad::Var<Scalar> eps;                       // (H*W) x C
  std::map<int, TapVars<Scalar>> taps;       // self-attention K/V per block id
};

/// Differentiable forward pass on token matrices. `context` null selects the
/// learned null conditioning. `injected` maps block ids to fused K/V inputs.
template <typename Scalar>
DenoiserGraph<Scalar> denoiser_forward(const DenoiserConfig& config, const BoundParams<Scalar>& params,
                                       const ad::Var<Scalar>& z_tokens, const std::type_identity_t<ad::Var<Scalar>>* context, int t,
                                       const std::type_identity_t<std::map<int, InjectedKV<Scalar>>>* injected = nullptr);

/// Resamples tapped features to the text token count and pairs each coupled
/// block with its gate. `raw_leaves` supplies trainable gate scalars (one 1x1
/// var per slot); otherwise gate values enter as constants.
template <typename Scalar>
std::map<int, InjectedKV<Scalar>> bind_injection(ad::Tape<Scalar>& tape, const std::map<int, KVFeatures<Scalar>>& features,
                                                 const SynapseParams& gates, Index text_tokens,
                                                 const std::vector<ad::Var<Scalar>>* raw_leaves = nullptr);

template <typename Scalar>
struct NoisePrediction {
  Tensor<Scalar> eps;
  std::map<int, KVFeatures<Scalar>> taps;
};

/// Value-level noise prediction for a C x H x W latent. `text` null selects
/// the null conditioning. Injection requires `gates`; a bypassed or disabled
/// synapse ignores `injected`.
template <typename Scalar>
NoisePrediction<Scalar> predict_noise(const DenoiserConfig& config, const ParamSet<Scalar>& params,
                                      const Tensor<Scalar>& z, const std::type_identity_t<MatrixX<Scalar>>* text, int t,
                                      const std::type_identity_t<std::map<int, KVFeatures<Scalar>>>* injected = nullptr,
                                      const SynapseParams* gates = nullptr);

}  // namespace melsyn
