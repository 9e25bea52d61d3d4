#include "melsyn/app.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "melsyn/parallel.hpp"

namespace melsyn {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- Pipeline

Pipeline::Pipeline(RunConfig c)
    : config(std::move(c)),
      schedule(make_schedule(config.schedule.kind, config.schedule.T, config.schedule.beta_start,
                             config.schedule.beta_end)),
      codecs{config.codecs.stft,
             PatchCodec(config.codecs.patch, 1, config.codecs.seed),
             PatchCodec(config.codecs.image_patch, 3, config.codecs.seed + 1),
             TextEmbedder(config.codecs.text_tokens, config.codecs.text_width, config.codecs.vocab, config.codecs.seed + 2),
             config.codecs.music_scale,
             config.codecs.image_scale} {
  config.corpus.stft = config.codecs.stft;
  config.validate();
  const auto& d = config.denoiser;
  const auto& cc = config.codecs;
  music.channels = cc.patch * cc.patch;
  music.height = cc.stft.frames / cc.patch;
  music.width = cc.stft.bins() / cc.patch;
  music.widths = d.widths;
  music.d_k = d.d_k;
  music.d_c = cc.text_width;
  music.text_tokens = cc.text_tokens;
  music.time_width = d.time_width;
  music.groups = d.groups;
  music.validate();
  image = music;
  image.channels = cc.image_patch * cc.image_patch * 3;
  image.height = config.corpus.image_height / cc.image_patch;
  image.width = config.corpus.image_width / cc.image_patch;
  image.widths = d.image_widths;
  image.validate();
}

CorpusConfig Pipeline::corpus() const {
  CorpusConfig c = config.corpus;
  c.stft = config.codecs.stft;
  return c;
}

SynapseParams Pipeline::fresh_gates() const { return SynapseParams(config.synapse, music.n_blocks()); }

ParamSet<float> Pipeline::fresh_music_params() const {
  Rng rng = Rng(config.denoiser.seed).split(1);
  return init_denoiser<float>(music, rng);
}

ParamSet<float> Pipeline::fresh_image_params() const {
  Rng rng = Rng(config.denoiser.seed).split(2);
  return init_denoiser<float>(image, rng);
}

// ---- Data

std::vector<LoadedItem> load_items(const Pipeline& p, const std::vector<TripletRecord>& records) {
  std::vector<LoadedItem> items(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    LoadedItem& it = items[i];
    it.record = records[i];
    it.image = load_image(records[i]);
    if (it.image.dim(0) != p.config.corpus.image_height || it.image.dim(1) != p.config.corpus.image_width) {
      throw IoError(records[i].image_path.string() + ": image " + shape_string(it.image.dims()) +
                    " does not match corpus.image_height/image_width");
    }
    it.spectrogram = load_spectrogram(records[i], p.codecs.stft);
    it.train.id = records[i].id;
    it.train.music_latent = p.codecs.music_latent(it.spectrogram);
    it.train.text = p.codecs.text.embed<float>(records[i].caption);
    auto traj = std::make_shared<std::map<int, Tensor<float>>>();
    (*traj)[0] = p.codecs.image_latent(it.image);
    it.train.image_trajectory = std::move(traj);
  });
  return items;
}

std::string image_model_fingerprint(const ImageModel& image) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& prm : image.params) {
    h = fnv1a64(prm.name.data(), prm.name.size(), h);
    h = fnv1a64(prm.value.data(), static_cast<std::size_t>(prm.value.size()) * sizeof(float), h);
  }
  return hex64(h);
}

void attach_inversions(const Pipeline& p, const ImageModel& image, std::vector<LoadedItem>& items,
                       const fs::path& cache_dir) {
  const int T = p.schedule.steps();
  const auto steps = step_sequence(T, T);
  const int refinements = p.config.sampler.inversion_refinements;
  fs::path dir;
  if (!cache_dir.empty()) {
    const json full = config_to_json(p.config);
    const json key{{"schedule", full.at("schedule")},
                   {"refinements", refinements},
                   {"image_patch", p.config.codecs.image_patch},
                   {"image_scale", p.config.codecs.image_scale},
                   {"codec_seed", p.config.codecs.seed},
                   {"image", {p.config.corpus.image_height, p.config.corpus.image_width}}};
    dir = cache_dir / (image_model_fingerprint(image) + "_" + hex64(fnv1a64(key.dump())));
    fs::create_directories(dir);
  }
  const Shape dims = p.image.latent_shape();
  parallel_for(items.size(), [&](std::size_t i) {
    LoadedItem& it = items[i];
    const Tensor<float> z0 = it.train.image_trajectory->at(0);
    const fs::path file = dir.empty() ? fs::path() : dir / (it.record.id + ".melt");
    auto traj = std::make_shared<std::map<int, Tensor<float>>>();
    if (!file.empty() && fs::exists(file)) {
      const Tensor<float> all = load_melt<float>(file);
      const Index n = shape_size(dims);
      if (all.size() != n * (T + 1)) throw IoError(file.string() + ": cached trajectory has the wrong size");
      for (int t = 0; t <= T; ++t) (*traj)[t] = Tensor<float>(dims, all.data().segment(t * n, n));
    } else {
      *traj = invert_image(image, p.schedule, z0, steps, refinements);
      if (!file.empty()) {
        const Index n = shape_size(dims);
        Eigen::VectorXf all(n * (T + 1));
        for (int t = 0; t <= T; ++t) all.segment(t * n, n) = traj->at(t).data();
        Shape cached{T + 1};
        cached.insert(cached.end(), dims.begin(), dims.end());
        save_melt(file, Tensor<float>(cached, all));
      }
    }
    it.train.image_trajectory = std::move(traj);
  });
}

std::vector<TrainItem> train_items(const std::vector<LoadedItem>& items) {
  std::vector<TrainItem> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.train);
  return out;
}

// ---- Image stage

ImageModel image_model_from(const Pipeline& p, const Checkpoint& ckpt) {
  return ImageModel{p.image, ckpt.read_params("psi/", p.fresh_image_params())};
}

Checkpoint image_checkpoint(const Pipeline& p, const ImageTrainer& trainer) {
  Checkpoint c;
  c.header = {{"kind", "image"},
              {"config", config_to_json(p.config)},
              {"config_hash", p.config.hash()},
              {"step", trainer.step},
              {"epoch", trainer.epoch}};
  c.add_params("psi/", trainer.params);
  return c;
}

ImageTrainer train_image_stage(const Pipeline& p, const std::vector<LoadedItem>& train,
                               const std::function<void(long, double)>& on_step) {
  std::vector<Tensor<float>> latents;
  for (const auto& it : train) latents.push_back(it.train.image_trajectory->at(0));
  ImageTrainer trainer(p.image, p.fresh_image_params(), p.schedule, p.config.training);
  while (trainer.epoch < p.config.training.image_epochs) trainer.train_epoch(latents, on_step);
  return trainer;
}

// ---- Music stage

MusicTrainer make_music_trainer(const Pipeline& p, const ImageModel* image) {
  return MusicTrainer(p.music, p.fresh_music_params(), p.fresh_gates(), p.schedule, p.config.training, image);
}

Checkpoint music_checkpoint(const Pipeline& p, const MusicTrainer& trainer, const ImageModel& image) {
  Checkpoint c;
  c.header = {{"kind", "music"},
              {"config", config_to_json(p.config)},
              {"config_hash", p.config.hash()},
              {"step", trainer.step},
              {"epoch", trainer.epoch},
              {"optimizer_steps", trainer.optimizer.steps()},
              {"image_fingerprint", image_model_fingerprint(image)}};
  c.add_params("theta/", trainer.params);
  const auto& raw = trainer.gates.raw();
  c.add("gate/raw", Tensor<float>({std::max<Index>(raw.size(), 1)},
                                  raw.size() ? Eigen::VectorXf(raw.cast<float>()) : Eigen::VectorXf::Zero(1)));
  c.add_params("psi/", image.params);
  c.add_params("opt/m/", trainer.optimizer.first_moments());
  c.add_params("opt/v/", trainer.optimizer.second_moments());
  return c;
}

namespace {

void read_gates(const Checkpoint& ckpt, SynapseParams& gates) {
  const Tensor<float>& raw = ckpt.at("gate/raw");
  if (gates.raw().size() == 0) return;
  if (raw.size() != gates.raw().size()) throw IoError("checkpoint gate/raw has the wrong length");
  gates.raw() = raw.data().cast<double>();
}

ParamSet<float> read_prefixed(const Checkpoint& ckpt, const std::string& prefix) {
  ParamSet<float> out;
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind(prefix, 0) != 0) continue;
    out.add(name.substr(prefix.size()), t.row_major(t.dim(0), t.rank() > 1 ? t.dim(1) : 1), name != prefix + "gate/raw");
  }
  return out;
}

}  // namespace

void restore_music_trainer(MusicTrainer& trainer, const Checkpoint& ckpt) {
  if (ckpt.header.value("kind", "") != "music") throw IoError("not a music checkpoint");
  trainer.params = ckpt.read_params("theta/", trainer.params);
  read_gates(ckpt, trainer.gates);
  trainer.step = ckpt.header.at("step").get<long>();
  trainer.epoch = ckpt.header.at("epoch").get<int>();
  trainer.optimizer = AdamW<float>(ParamSet<float>{}, trainer.train.adam);
  trainer.optimizer.first_moments() = read_prefixed(ckpt, "opt/m/");
  trainer.optimizer.second_moments() = read_prefixed(ckpt, "opt/v/");
  trainer.optimizer.set_steps(ckpt.header.at("optimizer_steps").get<long>());
}

LoadedMusicCheckpoint read_music_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.header.value("kind", "") != "music") throw IoError("not a music checkpoint");
  LoadedMusicCheckpoint out;
  out.config = config_from_json(ckpt.header.at("config"));
  Pipeline p(out.config);
  out.image = image_model_from(p, ckpt);
  out.music = MusicModel{p.music, ckpt.read_params("theta/", p.fresh_music_params()), p.fresh_gates()};
  read_gates(ckpt, out.music.gates);
  out.step = ckpt.header.at("step").get<long>();
  out.epoch = ckpt.header.at("epoch").get<int>();
  return out;
}

void train_music_stage(MusicTrainer& trainer, const std::vector<TrainItem>& items,
                       const std::function<void(const TrainStepRecord&)>& on_step,
                       const std::function<void()>& on_checkpoint) {
  const int every = trainer.train.checkpoint_every;
  while (trainer.epoch < trainer.train.epochs) {
    trainer.train_epoch(items, [&](const TrainStepRecord& r) {
      if (on_step) on_step(r);
      if (on_checkpoint && every > 0 && r.step % every == 0) on_checkpoint();
    });
  }
}

// ---- Evaluation

Eigen::MatrixXd image_features(const std::vector<LoadedItem>& items) {
  if (items.empty()) return {};
  Eigen::MatrixXd out(static_cast<Index>(items.size()), items[0].image.size());
  for (std::size_t i = 0; i < items.size(); ++i) out.row(static_cast<Index>(i)) = items[i].image.data().cast<double>().transpose();
  return out;
}

Eigen::MatrixXd text_features(const std::vector<LoadedItem>& items) {
  if (items.empty()) return {};
  const auto& t0 = items[0].train.text;
  Eigen::MatrixXd out(static_cast<Index>(items.size()), t0.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Eigen::MatrixXd t = items[i].train.text.cast<double>();
    out.row(static_cast<Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(t.data(), t.size());
  }
  return out;
}

namespace {

Eigen::MatrixXd music_features(const std::vector<Spectrogram>& specs) { return toy_extract_all(specs); }

std::vector<Spectrogram> spectrograms_of(const std::vector<LoadedItem>& items) {
  std::vector<Spectrogram> out;
  for (const auto& it : items) out.push_back(it.spectrogram);
  return out;
}

}  // namespace

EvalModels fit_eval_models(const Pipeline& p, const std::vector<LoadedItem>& train) {
  if (train.size() < 2) throw Error("fit_eval_models: need at least two training items");
  const Eigen::MatrixXd music = music_features(spectrograms_of(train));
  std::vector<int> labels;
  for (const auto& it : train) labels.push_back(it.record.genre - 1);
  EvalModels m;
  m.classifier = train_toy_classifier(music, labels, p.config.corpus.genres, p.config.metrics.classifier_iterations, 0.05,
                                      p.config.training.seed);
  EmbedderTraining opts;
  opts.dim = p.config.metrics.embed_dim;
  opts.tau = p.config.metrics.tau;
  opts.iterations = p.config.metrics.embed_iterations;
  opts.seed = p.config.training.seed;
  m.embedders = train_toy_embedders(image_features(train), text_features(train), music, opts);
  return m;
}

EvalReport evaluate_generations(const Pipeline& p, const EvalModels& models, const std::vector<LoadedItem>& items,
                                const std::vector<Spectrogram>& generated) {
  if (items.size() != generated.size()) throw ShapeError("evaluate: one generation per item is required");
  if (items.size() < 2) throw Error("evaluate: need at least two items");
  const Eigen::MatrixXd real = music_features(spectrograms_of(items));
  const Eigen::MatrixXd gen = music_features(generated);
  EvalReport r;
  r.fad = frechet_distance(real, gen);
  r.fd = frechet_distance(models.classifier.logits(real), models.classifier.logits(gen));
  r.kl = label_kl(models.classifier.probabilities(real), models.classifier.probabilities(gen));
  const Eigen::MatrixXd zt = models.embedders.embed_text(text_features(items));
  const Eigen::MatrixXd a_clip = models.embedders.embed_image(image_features(items)) * zt.transpose();
  const Eigen::MatrixXd a_clap = models.embedders.embed_music(gen) * zt.transpose();
  const ImsmResult im = imsm(a_clip, a_clap, p.config.metrics.imsm_sharpness);
  r.imsm_score = im.score;
  r.imsm_matrix = im.matrix;
  r.n_items = static_cast<int>(items.size());
  r.config_hash = p.config.hash();
  return r;
}

std::vector<Spectrogram> generate_for(const Pipeline& p, const MusicModel& music, const ImageModel& image,
                                      const std::vector<LoadedItem>& items, const SamplerConfig& sampler,
                                      std::uint64_t seed) {
  std::vector<Spectrogram> out(items.size());
  SamplerConfig s = sampler;
  s.griffin_lim_iterations = 1;  // metrics read the spectrogram, not the waveform
  parallel_for(items.size(), [&](std::size_t i) {
    Rng rng = Rng(seed).split(i);
    out[i] = generate(music, image, p.schedule, p.codecs, items[i].image, items[i].record.caption, s, rng).spectrogram;
  });
  return out;
}

json to_json(const EvalReport& r) {
  return {{"fad", r.fad}, {"fd", r.fd},           {"kl", r.kl},
          {"imsm_score", r.imsm_score}, {"n_items", r.n_items}, {"config_hash", r.config_hash}};
}

// ---- Ablations

std::vector<std::string> ablation_axes() {
  return {"alpha-placement", "alpha-shared", "alpha-lr", "fixed-alpha", "steps", "guidance", "modality"};
}

std::vector<std::pair<std::string, RunConfig>> ablation_settings(const std::string& axis, const RunConfig& base) {
  std::vector<std::pair<std::string, RunConfig>> out;
  auto with = [&](const std::string& name, const std::function<void(RunConfig&)>& edit) {
    RunConfig c = base;
    edit(c);
    out.emplace_back(name, c);
  };
  if (axis == "alpha-placement") {
    for (const char* where : {"encoder", "decoder", "both"}) {
      for (bool per_block : {false, true}) {
        const std::string w = where;
        with(w + (per_block ? "/per-block" : "/shared"), [&](RunConfig& c) {
          c.synapse.enabled = true;
          c.synapse.placement.couple_encoder = w != "decoder";
          c.synapse.placement.couple_decoder = w != "encoder";
          c.synapse.placement.per_block = per_block;
        });
      }
    }
  } else if (axis == "alpha-shared") {
    for (bool per_block : {false, true}) {
      with(per_block ? "per-block" : "shared", [&](RunConfig& c) { c.synapse.placement.per_block = per_block; });
    }
  } else if (axis == "alpha-lr") {
    for (double lr : {0.5e-6, 1e-6, 1e-5, 0.5e-4}) {
      std::ostringstream name;
      name << lr;
      with(name.str(), [&](RunConfig& c) { c.training.gate_lr = lr; });
    }
  } else if (axis == "fixed-alpha") {
    for (double a : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      std::ostringstream name;
      name << "fixed " << a;
      with(name.str(), [&](RunConfig& c) {
        c.synapse.mode = GateMode::fixed;
        c.synapse.fixed_alpha = a;
      });
    }
    with("learned", [&](RunConfig& c) { c.synapse.mode = GateMode::learned; });
  } else if (axis == "steps") {
    for (int n : {10, 25, 50, 100}) {
      if (n > base.schedule.T) continue;
      with(std::to_string(n), [&](RunConfig& c) { c.sampler.steps = n; });
    }
  } else if (axis == "guidance") {
    for (double w : {0.0, 1.0, 2.0, 7.0, 20.0}) {
      std::ostringstream name;
      name << w;
      with(name.str(), [&](RunConfig& c) { c.sampler.guidance = w; });
    }
  } else if (axis == "modality") {
    for (Modality m : {Modality::text_only, Modality::image_only, Modality::both}) {
      with(to_string(m), [&](RunConfig& c) {
        c.training.modality = m;
        if (m == Modality::text_only) c.synapse.enabled = false;
      });
    }
  } else {
    throw ConfigError("axis", "unknown ablation axis '" + axis + "'");
  }
  return out;
}

AblationContext prepare_ablation(const Pipeline& p, const std::vector<TripletRecord>& records, const fs::path& cache_dir) {
  AblationContext ctx;
  ctx.train = load_items(p, filter_split(records, Split::train));
  ctx.heldout = load_items(p, filter_split(records, Split::val));
  auto test = filter_split(records, Split::test);
  const int limit = p.config.metrics.eval_items;
  if (limit > 0 && static_cast<std::size_t>(limit) < test.size()) test.resize(static_cast<std::size_t>(limit));
  ctx.eval = load_items(p, test);
  if (ctx.train.empty() || ctx.heldout.empty() || ctx.eval.size() < 2) {
    throw Error("ablation needs train, val and at least two test items");
  }
  const ImageTrainer image = train_image_stage(p, ctx.train);
  ctx.image = ImageModel{p.image, image.params};
  attach_inversions(p, ctx.image, ctx.train, cache_dir);
  attach_inversions(p, ctx.image, ctx.heldout, cache_dir);
  attach_inversions(p, ctx.image, ctx.eval, cache_dir);
  ctx.eval_models = fit_eval_models(p, ctx.train);
  return ctx;
}

namespace {

bool sampling_axis(const std::string& axis) { return axis == "steps" || axis == "guidance"; }

}  // namespace

std::vector<AblationRow> run_ablation(const std::string& axis, const RunConfig& base, const AblationContext& ctx,
                                      std::ostream* progress) {
  const auto settings = ablation_settings(axis, base);
  const auto train = train_items(ctx.train);
  const auto heldout = train_items(ctx.heldout);
  std::vector<AblationRow> rows;

  auto train_one = [&](const Pipeline& p) {
    MusicTrainer trainer = make_music_trainer(p, &ctx.image);
    train_music_stage(trainer, train);
    return trainer;
  };
  auto row_for = [&](const std::string& setting, const Pipeline& p, const MusicTrainer& trainer) {
    AblationRow r;
    r.axis = axis;
    r.setting = setting;
    r.heldout_loss = trainer.heldout_loss(heldout);
    r.alphas = trainer.gates.injects() ? trainer.gates.alphas() : std::vector<double>{};
    const MusicModel music{p.music, trainer.params, trainer.gates};
    r.eval = evaluate_generations(p, ctx.eval_models, ctx.eval,
                                  generate_for(p, music, ctx.image, ctx.eval, p.config.sampler, p.config.training.seed));
    if (progress) *progress << axis << " " << setting << " heldout_loss=" << r.heldout_loss << std::endl;
    return r;
  };

  if (sampling_axis(axis)) {
    const Pipeline base_pipeline(base);
    const MusicTrainer trainer = train_one(base_pipeline);
    for (const auto& [setting, cfg] : settings) rows.push_back(row_for(setting, Pipeline(cfg), trainer));
  } else {
    for (const auto& [setting, cfg] : settings) {
      const Pipeline p(cfg);
      rows.push_back(row_for(setting, p, train_one(p)));
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "axis,setting,heldout_loss,alphas,fad,fd,kl,imsm,n_items,config_hash\n";
  for (const auto& r : rows) {
    std::ostringstream alphas;
    alphas << std::setprecision(6);
    for (std::size_t i = 0; i < r.alphas.size(); ++i) alphas << (i ? ";" : "") << r.alphas[i];
    os << r.axis << ',' << r.setting << ',' << r.heldout_loss << ',' << alphas.str() << ',' << r.eval.fad << ','
       << r.eval.fd << ',' << r.eval.kl << ',' << r.eval.imsm_score << ',' << r.eval.n_items << ','
       << r.eval.config_hash << '\n';
  }
  return os.str();
}

}  // namespace melsyn

namespace melsyn {

// ---- Diagnostics

RoundTrip inversion_round_trip(const Pipeline& p, const ImageModel& image, const Tensor<float>& image_latent, int steps,
                               int refinements) {
  const auto seq = step_sequence(p.schedule.steps(), steps);
  const NoiseFn<float> eps = [&](const Tensor<float>& z, int t) {
    return predict_noise(image.config, image.params, z, nullptr, t).eps;
  };
  const Tensor<float> z_T = ddim_invert(eps, p.schedule, image_latent, seq, refinements);
  const Tensor<float> back = ddim_sample(eps, p.schedule, z_T, seq);
  const Eigen::VectorXd diff = (back.data() - image_latent.data()).cast<double>();
  return RoundTrip{steps, diff.norm() / std::max(image_latent.data().cast<double>().norm(), 1e-300)};
}

namespace {

void randomize(ParamSet<double>& params, const std::string& name, Rng& rng, double scale) {
  auto& w = params.at(name);
  w = gaussian_matrix<double>(rng, w.rows(), w.cols()) * scale;
}

}  // namespace

std::vector<GradCheckReport> training_gradient_check(const Pipeline& p, std::uint64_t seed) {
  Rng rng = Rng(seed).split(0x4752'4144ULL);
  // Zero-initialized output layers would leave upstream gradients at zero.
  ParamSet<double> theta = p.fresh_music_params().cast<double>();
  randomize(theta, "out.conv.w", rng, 0.3);
  randomize(theta, "out.conv.b", rng, 0.1);
  ParamSet<double> psi = p.fresh_image_params().cast<double>();
  randomize(psi, "out.conv.w", rng, 0.3);

  SynapseConfig sc = p.config.synapse;
  sc.enabled = true;
  sc.mode = GateMode::learned;
  SynapseParams gates(sc, p.music.n_blocks());
  for (Index i = 0; i < gates.raw().size(); ++i) gates.raw()[i] = rng.normal() * 0.5;

  const int t = std::max(1, p.schedule.steps() / 2);
  const Tensor<double> image_z = gaussian_sample<double>(rng, p.image.latent_shape());
  const auto taps = predict_noise(p.image, psi, image_z, nullptr, t).taps;
  DenoiseSample<double> sample;
  sample.z_t = gaussian_sample<double>(rng, p.music.latent_shape());
  sample.eps = gaussian_sample<double>(rng, p.music.latent_shape());
  sample.t = t;
  const MatrixX<double> text = p.codecs.text.embed<double>("a bright fast techno track");
  sample.text = &text;
  sample.taps = &taps;

  ParamSet<double> all = theta;
  if (gates.raw().size() > 0) all.add("gate/raw", gates.raw(), false);
  const DifferentiableLoss loss = [&](const ParamSet<double>& ps, ParamSet<double>* grad) {
    ParamSet<double> th;
    for (const auto& prm : ps) {
      if (prm.name != "gate/raw") th.add(prm.name, prm.value, prm.decay);
    }
    SynapseParams g = gates;
    if (ps.contains("gate/raw")) g.raw() = ps.at("gate/raw").col(0);
    ParamSet<double> th_grad = th.zeros_like();
    VectorX<double> g_grad;
    const double value = denoise_loss(p.music, th, g, sample, grad ? &th_grad : nullptr, grad ? &g_grad : nullptr);
    if (grad) {
      *grad = ParamSet<double>{};
      for (const auto& prm : th_grad) grad->add(prm.name, prm.value, prm.decay);
      if (ps.contains("gate/raw")) grad->add("gate/raw", MatrixX<double>(g_grad), false);
    }
    return value;
  };
  std::vector<GradCheckReport> reports = finite_diff_check(loss, all, 1e-5);

  ParamSet<double> emb;
  emb.add("itc/image", gaussian_matrix<double>(rng, 4, 3));
  emb.add("itc/text", gaussian_matrix<double>(rng, 4, 3));
  const double tau = p.config.metrics.tau;
  const DifferentiableLoss itc = [&](const ParamSet<double>& ps, ParamSet<double>* grad) {
    ad::Tape<double> tape;
    const auto zi = tape.leaf(ps.at("itc/image"));
    const auto zt = tape.leaf(ps.at("itc/text"));
    const auto l = itc_loss(zi, zt, tau);
    if (grad) {
      tape.backward(l);
      *grad = ParamSet<double>{};
      grad->add("itc/image", zi.grad());
      grad->add("itc/text", zt.grad());
    }
    return l.scalar();
  };
  for (auto& r : finite_diff_check(itc, emb)) reports.push_back(std::move(r));
  return reports;
}

}  // namespace melsyn
