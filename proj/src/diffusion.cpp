#include "melsyn/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace melsyn {

void SamplerConfig::validate(int schedule_steps) const {
  if (steps < 1 || steps > schedule_steps) throw ConfigError("sampler.steps", "sampling steps must lie in 1..T");
  if (!(guidance >= 0.0)) throw ConfigError("sampler.guidance", "guidance weight must be >= 0");
  if (eta != 0.0) throw ConfigError("sampler.eta", "only deterministic DDIM (eta = 0) is supported");
  if (inversion_refinements < 0) throw ConfigError("sampler.inversion_refinements", "must be >= 0");
  if (griffin_lim_iterations < 1) throw ConfigError("sampler.griffin_lim_iterations", "must be >= 1");
}

std::vector<int> step_sequence(int schedule_steps, int n) {
  if (n < 1 || n > schedule_steps) throw ConfigError("sampler.steps", "sampling steps must lie in 1..T");
  std::vector<int> out;
  for (int i = 1; i <= n; ++i) {
    out.push_back(static_cast<int>(std::lround(static_cast<double>(i) * schedule_steps / n)));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> ddim_transfer(const NoiseSchedule& sched, const Tensor<Scalar>& eps_hat, const Tensor<Scalar>& z_t, int t,
                             int t_to) {
  if (!eps_hat.same_shape(z_t)) throw ShapeError("ddim: eps and latent shapes differ");
  if (t == t_to) return z_t;
  const double gb = sched.gamma_bar(t), gb_to = sched.gamma_bar(t_to);
  // Coefficients folded so z_t and eps each enter once.
  const double a = std::sqrt(gb_to / gb);
  const double b = std::sqrt(1.0 - gb_to) - std::sqrt(gb_to) * std::sqrt(1.0 - gb) / std::sqrt(gb);
  return Tensor<Scalar>(z_t.dims(), static_cast<Scalar>(a) * z_t.data() + static_cast<Scalar>(b) * eps_hat.data());
}

template <typename Scalar>
Tensor<Scalar> ddim_step(const NoiseSchedule& sched, const Tensor<Scalar>& eps_hat, const Tensor<Scalar>& z_t, int t,
                         int t_prev) {
  if (t_prev < 0 || t_prev > t) {
    throw Error("ddim_step: need t >= t_prev >= 0, got t=" + std::to_string(t) + " t_prev=" + std::to_string(t_prev));
  }
  return ddim_transfer(sched, eps_hat, z_t, t, t_prev);
}

template <typename Scalar>
std::map<int, Tensor<Scalar>> ddim_invert_trajectory(const NoiseFn<Scalar>& eps, const NoiseSchedule& sched,
                                                     const Tensor<Scalar>& z_clean, const std::vector<int>& steps,
                                                     int refinements) {
  std::map<int, Tensor<Scalar>> out;
  out[0] = z_clean;
  Tensor<Scalar> z = z_clean;
  int t = 0;
  for (int target : steps) {
    if (target <= t) throw Error("ddim_invert: steps must be strictly increasing and positive");
    Tensor<Scalar> next = ddim_transfer(sched, eps(z, target), z, t, target);
    for (int r = 0; r < refinements; ++r) next = ddim_transfer(sched, eps(next, target), z, t, target);
    z = std::move(next);
    t = target;
    out[t] = z;
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> ddim_invert(const NoiseFn<Scalar>& eps, const NoiseSchedule& sched, const Tensor<Scalar>& z_clean,
                           const std::vector<int>& steps, int refinements) {
  return ddim_invert_trajectory(eps, sched, z_clean, steps, refinements).rbegin()->second;
}

template <typename Scalar>
Tensor<Scalar> ddim_sample(const NoiseFn<Scalar>& eps, const NoiseSchedule& sched, const Tensor<Scalar>& z_T,
                           const std::vector<int>& steps) {
  Tensor<Scalar> z = z_T;
  for (std::size_t i = steps.size(); i-- > 0;) {
    const int t = steps[i];
    const int t_prev = i == 0 ? 0 : steps[i - 1];
    z = ddim_step(sched, eps(z, t), z, t, t_prev);
  }
  return z;
}

template <typename Scalar>
Tensor<Scalar> guidance_combine(const Tensor<Scalar>& eps_uncond, const Tensor<Scalar>& eps_cond, double w) {
  if (!eps_uncond.same_shape(eps_cond)) throw ShapeError("guidance: branch shapes differ");
  const Scalar ws = static_cast<Scalar>(w);
  return Tensor<Scalar>(eps_cond.dims(), (Scalar(1) - ws) * eps_uncond.data() + ws * eps_cond.data());
}

template <typename Scalar>
Tensor<Scalar> cfg_predict(const DenoiserConfig& config, const ParamSet<Scalar>& params, const Tensor<Scalar>& z,
                           const MatrixX<Scalar>& text, int t, double w,
                           std::type_identity_t<const std::map<int, KVFeatures<Scalar>>*> injected,
                           const SynapseParams* gates) {
  if (!(w >= 0.0)) throw ConfigError("sampler.guidance", "guidance weight must be >= 0");
  if (w == 1.0) return predict_noise(config, params, z, &text, t, injected, gates).eps;
  auto uncond = predict_noise(config, params, z, nullptr, t).eps;
  if (w == 0.0) return uncond;
  auto cond = predict_noise(config, params, z, &text, t, injected, gates).eps;
  return guidance_combine(uncond, cond, w);
}

#define MELSYN_INSTANTIATE_DIFFUSION(S)                                                                               \
  template Tensor<S> ddim_transfer(const NoiseSchedule&, const Tensor<S>&, const Tensor<S>&, int, int);               \
  template Tensor<S> ddim_step(const NoiseSchedule&, const Tensor<S>&, const Tensor<S>&, int, int);                   \
  template std::map<int, Tensor<S>> ddim_invert_trajectory(const NoiseFn<S>&, const NoiseSchedule&, const Tensor<S>&, \
                                                           const std::vector<int>&, int);                             \
  template Tensor<S> ddim_invert(const NoiseFn<S>&, const NoiseSchedule&, const Tensor<S>&, const std::vector<int>&,  \
                                 int);                                                                                \
  template Tensor<S> ddim_sample(const NoiseFn<S>&, const NoiseSchedule&, const Tensor<S>&, const std::vector<int>&); \
  template Tensor<S> guidance_combine(const Tensor<S>&, const Tensor<S>&, double);                                    \
  template Tensor<S> cfg_predict(const DenoiserConfig&, const ParamSet<S>&, const Tensor<S>&, const MatrixX<S>&, int, \
                                 double, const std::map<int, KVFeatures<S>>*, const SynapseParams*);

MELSYN_INSTANTIATE_DIFFUSION(float)
MELSYN_INSTANTIATE_DIFFUSION(double)

// ---- Pipeline

Tensor<float> CodecBundle::music_latent(const Spectrogram& s) const {
  Tensor<float> z = encode_latent<float>(music_codec, s);
  z.data() *= static_cast<float>(music_scale);
  return z;
}

Tensor<float> CodecBundle::image_latent(const Tensor<float>& image) const {
  Tensor<float> z = encode_image(image_codec, image);
  z.data() *= static_cast<float>(image_scale);
  return z;
}

Spectrogram CodecBundle::spectrogram(const Tensor<float>& music_latent) const {
  Tensor<double> z = music_latent.cast<double>();
  z.data() /= music_scale;
  return decode_latent(music_codec, z, stft);
}

std::map<int, Tensor<float>> invert_image(const ImageModel& image_model, const NoiseSchedule& sched,
                                          const Tensor<float>& image_latent, const std::vector<int>& steps,
                                          int refinements) {
  NoiseFn<float> eps = [&](const Tensor<float>& z, int t) {
    return predict_noise(image_model.config, image_model.params, z, nullptr, t).eps;
  };
  return ddim_invert_trajectory(eps, sched, image_latent, steps, refinements);
}

Eigen::VectorXd vocode(const Spectrogram& s, int iterations) {
  Spectrogram clean{s.values.cwiseMax(0.0), s.geometry};
  Eigen::VectorXd x = griffin_lim(clean, iterations);
  const double peak = x.cwiseAbs().maxCoeff();
  if (peak > 0.0) x *= 0.9 / peak;
  return x;
}

GenerateResult generate(const MusicModel& music, const ImageModel& image_model, const NoiseSchedule& sched,
                        const CodecBundle& codecs, const Tensor<float>& image, const std::string& caption,
                        const SamplerConfig& sampler, Rng& rng) {
  sampler.validate(sched.steps());
  const auto steps = step_sequence(sched.steps(), sampler.steps);
  const Tensor<float> z_img0 = codecs.image_latent(image);
  Tensor<float> z_img = invert_image(image_model, sched, z_img0, steps, sampler.inversion_refinements).rbegin()->second;
  Tensor<float> z_mus = gaussian_sample<float>(rng, music.config.latent_shape());
  const MatrixX<float> text = codecs.text.embed<float>(caption);
  const bool inject = music.gates.injects();

  for (std::size_t i = steps.size(); i-- > 0;) {
    const int t = steps[i];
    const int t_prev = i == 0 ? 0 : steps[i - 1];
    auto img = predict_noise(image_model.config, image_model.params, z_img, nullptr, t);
    const Tensor<float> eps_m = cfg_predict(music.config, music.params, z_mus, text, t, sampler.guidance,
                                            inject ? &img.taps : nullptr, inject ? &music.gates : nullptr);
    z_mus = ddim_step(sched, eps_m, z_mus, t, t_prev);
    z_img = ddim_step(sched, img.eps, z_img, t, t_prev);
  }

  GenerateResult out{codecs.spectrogram(z_mus), {}, z_mus, z_img, music.gates.alphas()};
  out.spectrogram.values = out.spectrogram.values.cwiseMax(0.0);
  out.waveform = vocode(out.spectrogram, sampler.griffin_lim_iterations);
  return out;
}

}  // namespace melsyn
