#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "melsyn/codecs.hpp"
#include "melsyn/denoiser.hpp"
#include "melsyn/schedule.hpp"

namespace melsyn {

struct SamplerConfig {
  int steps = 100;
  double guidance = 7.0;
  double eta = 0.0;                 // deterministic DDIM only
  int inversion_refinements = 0;    // fixed-point passes per inversion step; 0 = first order
  int griffin_lim_iterations = 60;

  void validate(int schedule_steps) const;
};

/// Evenly spaced ascending timesteps round(i * T / n), i = 1..n.
std::vector<int> step_sequence(int schedule_steps, int n);

/// Noise predictor eps(z, t).
template <typename Scalar>
using NoiseFn = std::function<Tensor<Scalar>(const Tensor<Scalar>& z, int t)>;

/// Deterministic DDIM move of z_t to level t_to using eps_hat: the clean
/// estimate (z_t - sqrt(1 - gb_t) eps) / sqrt(gb_t) re-noised to t_to.
template <typename Scalar>
Tensor<Scalar> ddim_transfer(const NoiseSchedule& sched, const Tensor<Scalar>& eps_hat, const Tensor<Scalar>& z_t, int t,
                             int t_to);

/// Reverse step; requires t >= t_prev >= 0 (equal steps give the identity).
template <typename Scalar>
Tensor<Scalar> ddim_step(const NoiseSchedule& sched, const Tensor<Scalar>& eps_hat, const Tensor<Scalar>& z_t, int t,
                         int t_prev);

/// Inversion trajectory over `steps` (ascending). Entry 0 maps to z_clean;
/// each later entry evaluates eps at the current latent and the target step,
/// optionally refined by fixed-point passes that re-evaluate eps at the
/// target latent.
template <typename Scalar>
std::map<int, Tensor<Scalar>> ddim_invert_trajectory(const NoiseFn<Scalar>& eps, const NoiseSchedule& sched,
                                                     const Tensor<Scalar>& z_clean, const std::vector<int>& steps,
                                                     int refinements = 0);

template <typename Scalar>
Tensor<Scalar> ddim_invert(const NoiseFn<Scalar>& eps, const NoiseSchedule& sched, const Tensor<Scalar>& z_clean,
                           const std::vector<int>& steps, int refinements = 0);

/// Deterministic DDIM sampling from z at steps.back() down to the clean level.
template <typename Scalar>
Tensor<Scalar> ddim_sample(const NoiseFn<Scalar>& eps, const NoiseSchedule& sched, const Tensor<Scalar>& z_T,
                           const std::vector<int>& steps);

/// (1 - w) eps_uncond + w eps_cond; exact at w = 0 and w = 1.
template <typename Scalar>
Tensor<Scalar> guidance_combine(const Tensor<Scalar>& eps_uncond, const Tensor<Scalar>& eps_cond, double w);

/// Classifier-free guidance. The unconditional branch uses the null text and
/// no injection; a branch with zero weight is not evaluated.
template <typename Scalar>
Tensor<Scalar> cfg_predict(const DenoiserConfig& config, const ParamSet<Scalar>& params, const Tensor<Scalar>& z,
                           const MatrixX<Scalar>& text, int t, double w,
                           std::type_identity_t<const std::map<int, KVFeatures<Scalar>>*> injected,
                           const SynapseParams* gates);

// ---- Dual-branch pipeline

struct ImageModel {
  DenoiserConfig config;
  ParamSet<float> params;
};

struct MusicModel {
  DenoiserConfig config;
  ParamSet<float> params;
  SynapseParams gates;
};

/// Codecs and scalings shared by training and sampling.
struct CodecBundle {
  StftConfig stft;
  PatchCodec music_codec;
  PatchCodec image_codec;
  TextEmbedder text;
  double music_scale = 1.0;
  double image_scale = 1.0;

  Tensor<float> music_latent(const Spectrogram& s) const;
  Tensor<float> image_latent(const Tensor<float>& image) const;
  Spectrogram spectrogram(const Tensor<float>& music_latent) const;
};

/// Inversion of the image latent under the frozen image model with null text.
std::map<int, Tensor<float>> invert_image(const ImageModel& image_model, const NoiseSchedule& sched,
                                          const Tensor<float>& image_latent, const std::vector<int>& steps,
                                          int refinements = 0);

struct GenerateResult {
  Spectrogram spectrogram;
  Eigen::VectorXd waveform;
  Tensor<float> music_latent;        // clean latent in model scale
  Tensor<float> image_latent_final;  // image branch at the clean level
  std::vector<double> alphas;
};

GenerateResult generate(const MusicModel& music, const ImageModel& image_model, const NoiseSchedule& sched,
                        const CodecBundle& codecs, const Tensor<float>& image, const std::string& caption,
                        const SamplerConfig& sampler, Rng& rng);

/// Magnitudes clamped at zero, Griffin-Lim, peak normalized to 0.9.
Eigen::VectorXd vocode(const Spectrogram& s, int iterations);

}  // namespace melsyn
