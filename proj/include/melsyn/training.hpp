#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "melsyn/diffusion.hpp"
#include "melsyn/optim.hpp"

namespace melsyn {

/// Which conditioning reaches the music model during training and held-out
/// evaluation. text_only disables injection; image_only replaces the text by
/// the null embedding.
enum class Modality { both, text_only, image_only };
Modality parse_modality(const std::string& name);
std::string to_string(Modality m);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-4;
  double gate_lr = 1e-5;
  double cfg_drop = 0.1;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // steps; 0 = only at the end
  Modality modality = Modality::both;
  AdamWConfig adam;
  double max_grad_norm = 0.0;  // 0 disables clipping
  int heldout_draws = 4;
  // Image model (text-free DDPM) stage.
  int image_epochs = 30;
  double image_lr = 1e-3;

  void validate() const;
};

/// Mean squared error over all elements.
template <typename Scalar>
double diffusion_loss(const Tensor<Scalar>& eps_true, const Tensor<Scalar>& eps_pred);

/// Inputs of one denoising term. `text` null selects the null embedding and
/// `taps` null disables injection.
template <typename Scalar>
struct DenoiseSample {
  Tensor<Scalar> z_t;
  Tensor<Scalar> eps;
  int t = 1;
  const MatrixX<Scalar>* text = nullptr;
  const std::map<int, KVFeatures<Scalar>>* taps = nullptr;
};

/// Loss of one sample with optional gradients for the denoiser parameters
/// (same names as `params`) and the gate raw vector. Gate gradients are zero
/// unless the gates are learned and injection is active.
template <typename Scalar>
double denoise_loss(const DenoiserConfig& config, const ParamSet<Scalar>& params, const SynapseParams& gates,
                    const DenoiseSample<Scalar>& sample, std::type_identity_t<ParamSet<Scalar>>* param_grad,
                    std::type_identity_t<VectorX<Scalar>>* gate_grad);

/// Everything train_step needs for one corpus item.
struct TrainItem {
  std::string id;
  Tensor<float> music_latent;  // scaled z_1
  MatrixX<float> text;
  /// Image inversion trajectory over every step 0..T, shared and read-only.
  std::shared_ptr<const std::map<int, Tensor<float>>> image_trajectory;
};

struct TrainStepRecord {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
  std::vector<double> alphas;
  double grad_norm = 0.0;
  double gate_grad_norm = 0.0;
};

std::string to_json_line(const TrainStepRecord& r);

/// Music model, gates and optimizer state.
struct MusicTrainer {
  DenoiserConfig config;
  ParamSet<float> params;
  SynapseParams gates;
  AdamW<float> optimizer;
  NoiseSchedule schedule;
  TrainConfig train;
  const ImageModel* image_model = nullptr;
  long step = 0;
  int epoch = 0;

  MusicTrainer(DenoiserConfig config, ParamSet<float> params, SynapseParams gates, NoiseSchedule schedule,
               TrainConfig train, const ImageModel* image_model);

  /// Algorithm: draw t and eps per item, noise the music latent, tap the
  /// frozen image model at the cached inverted latent for t, inject through
  /// the gates, apply CFG dropout and the modality setting, then one AdamW
  /// step with learning rate `lr` for theta and `gate_lr` for the gate raws.
  TrainStepRecord train_step(const std::vector<const TrainItem*>& batch, Rng& rng);

  /// One pass over `items` in an epoch-seeded order; `on_step` sees every record.
  void train_epoch(const std::vector<TrainItem>& items, const std::function<void(const TrainStepRecord&)>& on_step);

  /// Mean denoising loss over fixed (t, eps) draws per item, no dropout.
  double heldout_loss(const std::vector<TrainItem>& items) const;
};

/// Conditioning fed to the music model for a given modality and dropout draw.
struct Conditioning {
  bool use_text = true;
  bool use_injection = true;
};
Conditioning conditioning_for(Modality m, bool dropped, bool synapse_injects);

/// Text-free DDPM training of the image model.
struct ImageTrainer {
  DenoiserConfig config;
  ParamSet<float> params;
  AdamW<float> optimizer;
  NoiseSchedule schedule;
  TrainConfig train;
  long step = 0;
  int epoch = 0;

  ImageTrainer(DenoiserConfig config, ParamSet<float> params, NoiseSchedule schedule, TrainConfig train);

  double train_step(const std::vector<const Tensor<float>*>& batch, Rng& rng);
  void train_epoch(const std::vector<Tensor<float>>& latents, const std::function<void(long, double)>& on_step);
  double heldout_loss(const std::vector<Tensor<float>>& latents) const;
};

/// Fixed per-item draw used by held-out losses: t in 1..T and eps.
template <typename Scalar>
std::pair<int, Tensor<Scalar>> heldout_draw(std::uint64_t seed, std::size_t item, int draw, int steps, const Shape& dims);

}  // namespace melsyn
