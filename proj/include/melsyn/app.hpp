#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "melsyn/checkpoint.hpp"
#include "melsyn/config.hpp"
#include "melsyn/gradcheck.hpp"
#include "melsyn/metrics.hpp"

namespace melsyn {

/// Schedule, codecs and model shapes derived from one RunConfig.
struct Pipeline {
  RunConfig config;
  NoiseSchedule schedule;
  CodecBundle codecs;
  DenoiserConfig music;
  DenoiserConfig image;

  explicit Pipeline(RunConfig c);

  CorpusConfig corpus() const;
  SynapseParams fresh_gates() const;
  ParamSet<float> fresh_music_params() const;
  ParamSet<float> fresh_image_params() const;
};

/// A corpus record with its assets decoded and encoded.
struct LoadedItem {
  TripletRecord record;
  Tensor<float> image;
  Spectrogram spectrogram;
  TrainItem train;  // music latent, text embedding, inversion trajectory
  Tensor<float> image_latent() const { return train.image_trajectory ? train.image_trajectory->at(0) : Tensor<float>(); }
};

std::vector<LoadedItem> load_items(const Pipeline& p, const std::vector<TripletRecord>& records);

/// Full-T inversion trajectories under the frozen image model. With a
/// non-empty `cache_dir` each trajectory is stored as one MELT tensor keyed
/// by item id and an image-model fingerprint.
void attach_inversions(const Pipeline& p, const ImageModel& image, std::vector<LoadedItem>& items,
                       const std::filesystem::path& cache_dir = {});

std::vector<TrainItem> train_items(const std::vector<LoadedItem>& items);

std::string image_model_fingerprint(const ImageModel& image);

// ---- Image stage

ImageModel image_model_from(const Pipeline& p, const Checkpoint& ckpt);
Checkpoint image_checkpoint(const Pipeline& p, const ImageTrainer& trainer);
/// Text-free DDPM training on the image latents of `train`.
ImageTrainer train_image_stage(const Pipeline& p, const std::vector<LoadedItem>& train,
                               const std::function<void(long, double)>& on_step = {});

// ---- Music stage

MusicTrainer make_music_trainer(const Pipeline& p, const ImageModel* image);
Checkpoint music_checkpoint(const Pipeline& p, const MusicTrainer& trainer, const ImageModel& image);
/// Restores theta, gates, optimizer moments and counters.
void restore_music_trainer(MusicTrainer& trainer, const Checkpoint& ckpt);

struct LoadedMusicCheckpoint {
  RunConfig config;
  ImageModel image;
  MusicModel music;
  long step = 0;
  int epoch = 0;
};
LoadedMusicCheckpoint read_music_checkpoint(const Checkpoint& ckpt);

/// Runs epochs until `trainer.epoch == train.epochs`; `on_step` sees every
/// record, `on_checkpoint` fires every `checkpoint_every` steps.
void train_music_stage(MusicTrainer& trainer, const std::vector<TrainItem>& items,
                       const std::function<void(const TrainStepRecord&)>& on_step = {},
                       const std::function<void()>& on_checkpoint = {});

// ---- Evaluation

struct EvalModels {
  ToyClassifier classifier;
  ToyEmbedders embedders;
};

Eigen::MatrixXd image_features(const std::vector<LoadedItem>& items);
Eigen::MatrixXd text_features(const std::vector<LoadedItem>& items);

/// Classifier and embedders fitted on `train` items.
EvalModels fit_eval_models(const Pipeline& p, const std::vector<LoadedItem>& train);

struct EvalReport {
  double fad = 0.0;
  double fd = 0.0;
  double kl = 0.0;
  double imsm_score = 0.0;
  int n_items = 0;
  std::string config_hash;
  Eigen::MatrixXd imsm_matrix;
};

EvalReport evaluate_generations(const Pipeline& p, const EvalModels& models, const std::vector<LoadedItem>& items,
                                const std::vector<Spectrogram>& generated);

/// Generates one spectrogram per item (seed split by item index).
std::vector<Spectrogram> generate_for(const Pipeline& p, const MusicModel& music, const ImageModel& image,
                                      const std::vector<LoadedItem>& items, const SamplerConfig& sampler,
                                      std::uint64_t seed);

nlohmann::json to_json(const EvalReport& r);

// ---- Diagnostics

struct RoundTrip {
  int steps = 0;
  double relative_error = 0.0;  // ||sample(invert(z0)) - z0|| / ||z0||
};

/// DDIM inversion of an image latent to the top step and deterministic
/// sampling back, both over `steps` evenly spaced steps.
RoundTrip inversion_round_trip(const Pipeline& p, const ImageModel& image, const Tensor<float>& image_latent, int steps,
                               int refinements = 0);

/// Finite-difference check in f64 of one training term: every music-denoiser
/// tensor and the gate raws (learned gates, injection from the image model,
/// text present), plus the contrastive loss w.r.t. both embedding matrices.
std::vector<GradCheckReport> training_gradient_check(const Pipeline& p, std::uint64_t seed);

// ---- Ablations

struct AblationRow {
  std::string axis;
  std::string setting;
  double heldout_loss = 0.0;
  std::vector<double> alphas;
  EvalReport eval;
};

std::vector<std::string> ablation_axes();
/// Settings of an axis, each a config override applied to the base config.
std::vector<std::pair<std::string, RunConfig>> ablation_settings(const std::string& axis, const RunConfig& base);

struct AblationContext {
  std::vector<LoadedItem> train;
  std::vector<LoadedItem> heldout;  // validation split: held-out loss
  std::vector<LoadedItem> eval;     // test split: sampling metrics
  ImageModel image;
  EvalModels eval_models;
};

/// Trains the image model, inverts every item and fits the evaluation models.
AblationContext prepare_ablation(const Pipeline& p, const std::vector<TripletRecord>& records,
                                 const std::filesystem::path& cache_dir = {});

std::vector<AblationRow> run_ablation(const std::string& axis, const RunConfig& base, const AblationContext& ctx,
                                      std::ostream* progress = nullptr);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace melsyn
