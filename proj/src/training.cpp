#include "melsyn/training.hpp"

#include <json.hpp>

#include <cmath>

#include "melsyn/parallel.hpp"

namespace melsyn {

Modality parse_modality(const std::string& name) {
  if (name == "both") return Modality::both;
  if (name == "text_only" || name == "text-only") return Modality::text_only;
  if (name == "image_only" || name == "image-only") return Modality::image_only;
  throw ConfigError("training.modality", "unknown modality '" + name + "'");
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::both: return "both";
    case Modality::text_only: return "text_only";
    case Modality::image_only: return "image_only";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("training.epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("training.batch_size", "must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("training.lr", "learning rate must be positive");
  if (!(gate_lr > 0.0)) throw ConfigError("training.gate_lr", "learning rate must be positive");
  if (!(cfg_drop >= 0.0 && cfg_drop <= 1.0)) throw ConfigError("training.cfg_drop", "probability must lie in [0, 1]");
  if (checkpoint_every < 0) throw ConfigError("training.checkpoint_every", "must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("training.beta1", "must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("training.beta2", "must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("training.eps", "must be positive");
  if (!(adam.weight_decay >= 0.0)) throw ConfigError("training.weight_decay", "must be >= 0");
  if (max_grad_norm < 0.0) throw ConfigError("training.max_grad_norm", "must be >= 0");
  if (heldout_draws < 1) throw ConfigError("training.heldout_draws", "must be >= 1");
  if (image_epochs < 0) throw ConfigError("training.image_epochs", "must be >= 0");
  if (!(image_lr > 0.0)) throw ConfigError("training.image_lr", "learning rate must be positive");
}

template <typename Scalar>
double diffusion_loss(const Tensor<Scalar>& eps_true, const Tensor<Scalar>& eps_pred) {
  if (!eps_true.same_shape(eps_pred)) {
    throw ShapeError("diffusion_loss: " + shape_string(eps_true.dims()) + " vs " + shape_string(eps_pred.dims()));
  }
  const auto diff = (eps_true.data() - eps_pred.data()).template cast<double>();
  return diff.squaredNorm() / static_cast<double>(diff.size());
}

template <typename Scalar>
double denoise_loss(const DenoiserConfig& cfg, const ParamSet<Scalar>& params, const SynapseParams& gates,
                    const DenoiseSample<Scalar>& sample, std::type_identity_t<ParamSet<Scalar>>* param_grad,
                    std::type_identity_t<VectorX<Scalar>>* gate_grad) {
  if (sample.z_t.dims() != cfg.latent_shape() || !sample.eps.same_shape(sample.z_t)) {
    throw ShapeError("denoise_loss: latent " + shape_string(sample.z_t.dims()) + " vs config " +
                     shape_string(cfg.latent_shape()));
  }
  const bool want_grad = param_grad != nullptr || gate_grad != nullptr;
  const Index tokens = cfg.height * cfg.width;
  ad::Tape<Scalar> tape;
  BoundParams<Scalar> bound(tape, params, param_grad != nullptr);

  std::vector<ad::Var<Scalar>> raws;
  const bool learn_gates = gate_grad != nullptr && gates.config().mode == GateMode::learned;
  if (learn_gates) {
    for (Index s = 0; s < gates.raw().size(); ++s) {
      raws.push_back(tape.leaf(MatrixX<Scalar>::Constant(1, 1, static_cast<Scalar>(gates.raw()[s]))));
    }
  }
  std::map<int, InjectedKV<Scalar>> inj;
  if (sample.taps && gates.injects()) inj = bind_injection(tape, *sample.taps, gates, cfg.text_tokens, learn_gates ? &raws : nullptr);

  ad::Var<Scalar> ctx;
  if (sample.text) ctx = tape.constant(*sample.text);
  const auto graph = denoiser_forward(cfg, bound, tape.constant(sample.z_t.matrix(tokens, cfg.channels)),
                                      sample.text ? &ctx : nullptr, sample.t, inj.empty() ? nullptr : &inj);
  const MatrixX<Scalar> target = sample.eps.matrix(tokens, cfg.channels);
  const auto loss = ad::mse(graph.eps, target);
  if (!std::isfinite(static_cast<double>(loss.scalar()))) {
    throw NumericError("denoising loss is not finite at t=" + std::to_string(sample.t));
  }
  if (want_grad) {
    tape.backward(loss);
    if (param_grad) {
      for (std::size_t i = 0; i < params.size(); ++i) (*param_grad)[i].value = bound.vars()[i].grad();
    }
    if (gate_grad) {
      *gate_grad = VectorX<Scalar>::Zero(gates.raw().size());
      for (std::size_t s = 0; s < raws.size(); ++s) (*gate_grad)[static_cast<Index>(s)] = raws[s].grad()(0, 0);
    }
  }
  return static_cast<double>(loss.scalar());
}

template double diffusion_loss(const Tensor<float>&, const Tensor<float>&);
template double diffusion_loss(const Tensor<double>&, const Tensor<double>&);
template double denoise_loss(const DenoiserConfig&, const ParamSet<float>&, const SynapseParams&,
                             const DenoiseSample<float>&, ParamSet<float>*, VectorX<float>*);
template double denoise_loss(const DenoiserConfig&, const ParamSet<double>&, const SynapseParams&,
                             const DenoiseSample<double>&, ParamSet<double>*, VectorX<double>*);

std::string to_json_line(const TrainStepRecord& r) {
  nlohmann::json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["alphas"] = r.alphas;
  j["grad_norm"] = r.grad_norm;
  j["gate_grad_norm"] = r.gate_grad_norm;
  return j.dump();
}

Conditioning conditioning_for(Modality m, bool dropped, bool synapse_injects) {
  Conditioning c;
  c.use_text = m != Modality::image_only && !dropped;
  c.use_injection = synapse_injects && m != Modality::text_only && !dropped;
  return c;
}

template <typename Scalar>
std::pair<int, Tensor<Scalar>> heldout_draw(std::uint64_t seed, std::size_t item, int draw, int steps, const Shape& dims) {
  Rng rng = Rng(seed).split(0x4845'4c44ULL).split(item).split(static_cast<std::uint64_t>(draw));
  const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(steps)));
  return {t, gaussian_sample<Scalar>(rng, dims)};
}

template std::pair<int, Tensor<float>> heldout_draw(std::uint64_t, std::size_t, int, int, const Shape&);
template std::pair<int, Tensor<double>> heldout_draw(std::uint64_t, std::size_t, int, int, const Shape&);

namespace {

/// Epoch order: a Fisher-Yates shuffle seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng(seed).split(0x4550'4f43ULL).split(static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

double clip_scale(double norm, double max_norm) { return max_norm > 0.0 && norm > max_norm ? max_norm / norm : 1.0; }

}  // namespace

// ---- Music model

MusicTrainer::MusicTrainer(DenoiserConfig config_, ParamSet<float> params_, SynapseParams gates_, NoiseSchedule schedule_,
                           TrainConfig train_, const ImageModel* image_model_)
    : config(std::move(config_)),
      params(std::move(params_)),
      gates(std::move(gates_)),
      schedule(std::move(schedule_)),
      train(train_),
      image_model(image_model_) {
  train.validate();
  config.validate();
  optimizer = AdamW<float>(ParamSet<float>{}, train.adam);
}

TrainStepRecord MusicTrainer::train_step(const std::vector<const TrainItem*>& batch, Rng& rng) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const bool injects = gates.injects();
  if (injects && train.modality != Modality::text_only && !image_model) {
    throw Error("train_step: the synapse needs a frozen image model");
  }
  const std::size_t n = batch.size();
  std::vector<Rng> item_rngs;
  for (std::size_t j = 0; j < n; ++j) item_rngs.emplace_back(rng.next_u64());

  std::vector<ParamSet<float>> grads(n, params.zeros_like());
  std::vector<VectorX<float>> gate_grads(n);
  std::vector<double> losses(n);
  parallel_for(n, [&](std::size_t j) {
    const TrainItem& item = *batch[j];
    Rng& r = item_rngs[j];
    DenoiseSample<float> s;
    s.t = 1 + static_cast<int>(r.below(static_cast<std::uint64_t>(schedule.steps())));
    s.eps = gaussian_sample<float>(r, item.music_latent.dims());
    const bool dropped = r.uniform() < train.cfg_drop;
    s.z_t = forward_sample(schedule, item.music_latent, s.t, s.eps);
    const Conditioning c = conditioning_for(train.modality, dropped, injects);
    std::map<int, KVFeatures<float>> taps;
    if (c.use_injection) {
      if (!item.image_trajectory) throw Error("train_step: item " + item.id + " has no image trajectory");
      taps = predict_noise(image_model->config, image_model->params, item.image_trajectory->at(s.t), nullptr, s.t).taps;
      s.taps = &taps;
    }
    if (c.use_text) s.text = &item.text;
    losses[j] = denoise_loss(config, params, gates, s, &grads[j], &gate_grads[j]);
  });

  ParamSet<float> mean_grad = params.zeros_like();
  VectorX<float> gate_grad = VectorX<float>::Zero(gates.raw().size());
  double loss = 0.0;
  const float inv = 1.0f / static_cast<float>(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < params.size(); ++i) mean_grad[i].value += inv * grads[j][i].value;
    gate_grad += inv * gate_grads[j];
    loss += losses[j] / static_cast<double>(n);
  }

  double sq = 0.0;
  for (const auto& g : mean_grad) sq += static_cast<double>(g.value.squaredNorm());
  const double gate_norm = static_cast<double>(gate_grad.norm());
  const double norm = std::sqrt(sq + gate_norm * gate_norm);
  const auto scale = static_cast<float>(clip_scale(norm, train.max_grad_norm));

  // One optimizer over theta and the gate raws with per-group learning rates.
  ParamSet<float> all = params;
  ParamSet<float> all_grad = mean_grad;
  for (auto& g : all_grad) g.value *= scale;
  const bool learn_gates = gates.config().mode == GateMode::learned && gates.raw().size() > 0;
  if (learn_gates) {
    all.add("gate/raw", gates.raw().cast<float>(), false);
    all_grad.add("gate/raw", MatrixX<float>(gate_grad * scale), false);
  }
  const double lr = train.lr, gate_lr = train.gate_lr;
  optimizer.step(all, all_grad, [&](const std::string& name) { return name == "gate/raw" ? gate_lr : lr; });
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = all[i].value;
  if (learn_gates) gates.raw() = all.at("gate/raw").cast<double>();

  ++step;
  return TrainStepRecord{epoch, step, loss, gates.alphas(), norm, gate_norm};
}

void MusicTrainer::train_epoch(const std::vector<TrainItem>& items,
                               const std::function<void(const TrainStepRecord&)>& on_step) {
  if (items.empty()) throw Error("train_epoch: no training items");
  const auto order = epoch_order(items.size(), train.seed, epoch);
  Rng rng = Rng(train.seed).split(0x5354'4550ULL).split(static_cast<std::uint64_t>(epoch));
  const auto bs = static_cast<std::size_t>(train.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::vector<const TrainItem*> batch;
    for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(&items[order[k]]);
    const auto record = train_step(batch, rng);
    if (on_step) on_step(record);
  }
  ++epoch;
}

double MusicTrainer::heldout_loss(const std::vector<TrainItem>& items) const {
  if (items.empty()) throw Error("heldout_loss: no items");
  const bool injects = gates.injects();
  const auto draws = static_cast<std::size_t>(train.heldout_draws);
  std::vector<double> losses(items.size() * draws);
  parallel_for(losses.size(), [&](std::size_t k) {
    const std::size_t i = k / draws;
    const int d = static_cast<int>(k % draws);
    const TrainItem& item = items[i];
    auto [t, eps] = heldout_draw<float>(train.seed, i, d, schedule.steps(), item.music_latent.dims());
    DenoiseSample<float> s;
    s.t = t;
    s.eps = std::move(eps);
    s.z_t = forward_sample(schedule, item.music_latent, t, s.eps);
    const Conditioning c = conditioning_for(train.modality, false, injects);
    std::map<int, KVFeatures<float>> taps;
    if (c.use_injection) {
      if (!item.image_trajectory || !image_model) throw Error("heldout_loss: item " + item.id + " has no image trajectory");
      taps = predict_noise(image_model->config, image_model->params, item.image_trajectory->at(t), nullptr, t).taps;
      s.taps = &taps;
    }
    if (c.use_text) s.text = &item.text;
    losses[k] = denoise_loss<float>(config, params, gates, s, nullptr, nullptr);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(losses.size());
}

// ---- Image model

ImageTrainer::ImageTrainer(DenoiserConfig config_, ParamSet<float> params_, NoiseSchedule schedule_, TrainConfig train_)
    : config(std::move(config_)), params(std::move(params_)), schedule(std::move(schedule_)), train(train_) {
  train.validate();
  config.validate();
  optimizer = AdamW<float>(ParamSet<float>{}, train.adam);
}

double ImageTrainer::train_step(const std::vector<const Tensor<float>*>& batch, Rng& rng) {
  if (batch.empty()) throw Error("image train_step: empty batch");
  const std::size_t n = batch.size();
  std::vector<Rng> item_rngs;
  for (std::size_t j = 0; j < n; ++j) item_rngs.emplace_back(rng.next_u64());
  std::vector<ParamSet<float>> grads(n, params.zeros_like());
  std::vector<double> losses(n);
  const SynapseParams no_gates;
  parallel_for(n, [&](std::size_t j) {
    Rng& r = item_rngs[j];
    DenoiseSample<float> s;
    s.t = 1 + static_cast<int>(r.below(static_cast<std::uint64_t>(schedule.steps())));
    s.eps = gaussian_sample<float>(r, batch[j]->dims());
    s.z_t = forward_sample(schedule, *batch[j], s.t, s.eps);
    losses[j] = denoise_loss(config, params, no_gates, s, &grads[j], nullptr);
  });
  ParamSet<float> mean_grad = params.zeros_like();
  double loss = 0.0;
  const float inv = 1.0f / static_cast<float>(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < params.size(); ++i) mean_grad[i].value += inv * grads[j][i].value;
    loss += losses[j] / static_cast<double>(n);
  }
  double sq = 0.0;
  for (const auto& g : mean_grad) sq += static_cast<double>(g.value.squaredNorm());
  const auto scale = static_cast<float>(clip_scale(std::sqrt(sq), train.max_grad_norm));
  if (scale != 1.0f) {
    for (auto& g : mean_grad) g.value *= scale;
  }
  const double lr = train.image_lr;
  optimizer.step(params, mean_grad, [lr](const std::string&) { return lr; });
  ++step;
  return loss;
}

void ImageTrainer::train_epoch(const std::vector<Tensor<float>>& latents, const std::function<void(long, double)>& on_step) {
  if (latents.empty()) throw Error("image train_epoch: no latents");
  const auto order = epoch_order(latents.size(), train.seed ^ 0x494d47ULL, epoch);
  Rng rng = Rng(train.seed).split(0x494d'4147ULL).split(static_cast<std::uint64_t>(epoch));
  const auto bs = static_cast<std::size_t>(train.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    std::vector<const Tensor<float>*> batch;
    for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(&latents[order[k]]);
    const double loss = train_step(batch, rng);
    if (on_step) on_step(step, loss);
  }
  ++epoch;
}

double ImageTrainer::heldout_loss(const std::vector<Tensor<float>>& latents) const {
  if (latents.empty()) throw Error("image heldout_loss: no latents");
  const auto draws = static_cast<std::size_t>(train.heldout_draws);
  std::vector<double> losses(latents.size() * draws);
  const SynapseParams no_gates;
  parallel_for(losses.size(), [&](std::size_t k) {
    const std::size_t i = k / draws;
    auto [t, eps] = heldout_draw<float>(train.seed, i, static_cast<int>(k % draws), schedule.steps(), latents[i].dims());
    DenoiseSample<float> s;
    s.t = t;
    s.eps = std::move(eps);
    s.z_t = forward_sample(schedule, latents[i], t, s.eps);
    losses[k] = denoise_loss<float>(config, params, no_gates, s, nullptr, nullptr);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(losses.size());
}

}  // namespace melsyn
