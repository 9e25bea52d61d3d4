#include "melsyn/config.hpp"

#include <fstream>
#include <set>

namespace melsyn {

using nlohmann::json;

namespace {

/// Reads the keys of one JSON object; unread keys are reported by finish().
class Section {
 public:
  Section(const json& root, std::string name) : name_(std::move(name)) {
    if (root.contains(name_)) {
      node_ = &root.at(name_);
      if (!node_->is_object()) throw ConfigError(name_, "section must be a JSON object");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    known_.insert(key);
    if (!node_ || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key, "value has the wrong type");
    }
  }

  void finish() const {
    if (!node_) return;
    for (const auto& item : node_->items()) {
      if (!known_.count(item.key())) throw ConfigError(name_ + "." + item.key(), "unknown key");
    }
  }

 private:
  std::string name_;
  const json* node_ = nullptr;
  std::set<std::string> known_;
};

}  // namespace

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config", "top level must be a JSON object");
  static const std::set<std::string> sections{"schedule", "denoiser", "synapse", "codecs",
                                              "training", "sampler",  "corpus",  "metrics"};
  for (const auto& item : j.items()) {
    if (!sections.count(item.key())) throw ConfigError(item.key(), "unknown key");
  }
  RunConfig c;
  {
    Section s(j, "schedule");
    std::string kind = to_string(c.schedule.kind);
    s.get("kind", kind);
    c.schedule.kind = parse_schedule_kind(kind);
    s.get("T", c.schedule.T);
    s.get("beta_start", c.schedule.beta_start);
    s.get("beta_end", c.schedule.beta_end);
    s.finish();
  }
  {
    Section s(j, "denoiser");
    s.get("widths", c.denoiser.widths);
    s.get("image_widths", c.denoiser.image_widths);
    s.get("d_k", c.denoiser.d_k);
    s.get("time_width", c.denoiser.time_width);
    s.get("groups", c.denoiser.groups);
    s.get("seed", c.denoiser.seed);
    s.finish();
  }
  {
    Section s(j, "synapse");
    std::string mode = to_string(c.synapse.mode);
    s.get("enabled", c.synapse.enabled);
    s.get("couple_encoder", c.synapse.placement.couple_encoder);
    s.get("couple_decoder", c.synapse.placement.couple_decoder);
    s.get("per_block", c.synapse.placement.per_block);
    s.get("mode", mode);
    c.synapse.mode = parse_gate_mode(mode);
    s.get("fixed_alpha", c.synapse.fixed_alpha);
    s.get("init_raw", c.synapse.init_raw);
    s.finish();
  }
  {
    Section s(j, "codecs");
    s.get("sample_rate", c.codecs.stft.sample_rate);
    s.get("window", c.codecs.stft.window);
    s.get("hop", c.codecs.stft.hop);
    s.get("frames", c.codecs.stft.frames);
    s.get("patch", c.codecs.patch);
    s.get("image_patch", c.codecs.image_patch);
    s.get("text_tokens", c.codecs.text_tokens);
    s.get("text_width", c.codecs.text_width);
    s.get("vocab", c.codecs.vocab);
    s.get("seed", c.codecs.seed);
    s.get("music_scale", c.codecs.music_scale);
    s.get("image_scale", c.codecs.image_scale);
    s.finish();
  }
  {
    Section s(j, "training");
    auto& t = c.training;
    std::string modality = to_string(t.modality);
    s.get("epochs", t.epochs);
    s.get("batch_size", t.batch_size);
    s.get("lr", t.lr);
    s.get("gate_lr", t.gate_lr);
    s.get("cfg_drop", t.cfg_drop);
    s.get("seed", t.seed);
    s.get("checkpoint_every", t.checkpoint_every);
    s.get("modality", modality);
    t.modality = parse_modality(modality);
    s.get("beta1", t.adam.beta1);
    s.get("beta2", t.adam.beta2);
    s.get("eps", t.adam.eps);
    s.get("weight_decay", t.adam.weight_decay);
    s.get("max_grad_norm", t.max_grad_norm);
    s.get("heldout_draws", t.heldout_draws);
    s.get("image_epochs", t.image_epochs);
    s.get("image_lr", t.image_lr);
    s.finish();
  }
  {
    Section s(j, "sampler");
    s.get("steps", c.sampler.steps);
    s.get("guidance", c.sampler.guidance);
    s.get("eta", c.sampler.eta);
    s.get("inversion_refinements", c.sampler.inversion_refinements);
    s.get("griffin_lim_iterations", c.sampler.griffin_lim_iterations);
    s.finish();
  }
  {
    Section s(j, "corpus");
    std::vector<double> fracs(c.corpus.split_fracs.begin(), c.corpus.split_fracs.end());
    s.get("n_items", c.corpus.n_items);
    s.get("genres", c.corpus.genres);
    s.get("split_fracs", fracs);
    if (fracs.size() != 3) throw ConfigError("corpus.split_fracs", "expected three fractions (train, val, test)");
    std::copy(fracs.begin(), fracs.end(), c.corpus.split_fracs.begin());
    s.get("seed", c.corpus.seed);
    s.get("image_height", c.corpus.image_height);
    s.get("image_width", c.corpus.image_width);
    s.get("noise", c.corpus.noise);
    s.finish();
  }
  {
    Section s(j, "metrics");
    s.get("imsm_sharpness", c.metrics.imsm_sharpness);
    s.get("embed_dim", c.metrics.embed_dim);
    s.get("tau", c.metrics.tau);
    s.get("embed_iterations", c.metrics.embed_iterations);
    s.get("classifier_iterations", c.metrics.classifier_iterations);
    s.get("eval_items", c.metrics.eval_items);
    s.finish();
  }
  c.corpus.stft = c.codecs.stft;
  c.validate();
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  j["schedule"] = {{"kind", to_string(c.schedule.kind)},
                   {"T", c.schedule.T},
                   {"beta_start", c.schedule.beta_start},
                   {"beta_end", c.schedule.beta_end}};
  j["denoiser"] = {{"widths", c.denoiser.widths},  {"image_widths", c.denoiser.image_widths},
                   {"d_k", c.denoiser.d_k},        {"time_width", c.denoiser.time_width},
                   {"groups", c.denoiser.groups},  {"seed", c.denoiser.seed}};
  j["synapse"] = {{"enabled", c.synapse.enabled},
                  {"couple_encoder", c.synapse.placement.couple_encoder},
                  {"couple_decoder", c.synapse.placement.couple_decoder},
                  {"per_block", c.synapse.placement.per_block},
                  {"mode", to_string(c.synapse.mode)},
                  {"fixed_alpha", c.synapse.fixed_alpha},
                  {"init_raw", c.synapse.init_raw}};
  j["codecs"] = {{"sample_rate", c.codecs.stft.sample_rate},
                 {"window", c.codecs.stft.window},
                 {"hop", c.codecs.stft.hop},
                 {"frames", c.codecs.stft.frames},
                 {"patch", c.codecs.patch},
                 {"image_patch", c.codecs.image_patch},
                 {"text_tokens", c.codecs.text_tokens},
                 {"text_width", c.codecs.text_width},
                 {"vocab", c.codecs.vocab},
                 {"seed", c.codecs.seed},
                 {"music_scale", c.codecs.music_scale},
                 {"image_scale", c.codecs.image_scale}};
  const auto& t = c.training;
  j["training"] = {{"epochs", t.epochs},
                   {"batch_size", t.batch_size},
                   {"lr", t.lr},
                   {"gate_lr", t.gate_lr},
                   {"cfg_drop", t.cfg_drop},
                   {"seed", t.seed},
                   {"checkpoint_every", t.checkpoint_every},
                   {"modality", to_string(t.modality)},
                   {"beta1", t.adam.beta1},
                   {"beta2", t.adam.beta2},
                   {"eps", t.adam.eps},
                   {"weight_decay", t.adam.weight_decay},
                   {"max_grad_norm", t.max_grad_norm},
                   {"heldout_draws", t.heldout_draws},
                   {"image_epochs", t.image_epochs},
                   {"image_lr", t.image_lr}};
  j["sampler"] = {{"steps", c.sampler.steps},
                  {"guidance", c.sampler.guidance},
                  {"eta", c.sampler.eta},
                  {"inversion_refinements", c.sampler.inversion_refinements},
                  {"griffin_lim_iterations", c.sampler.griffin_lim_iterations}};
  j["corpus"] = {{"n_items", c.corpus.n_items},
                 {"genres", c.corpus.genres},
                 {"split_fracs", c.corpus.split_fracs},
                 {"seed", c.corpus.seed},
                 {"image_height", c.corpus.image_height},
                 {"image_width", c.corpus.image_width},
                 {"noise", c.corpus.noise}};
  j["metrics"] = {{"imsm_sharpness", c.metrics.imsm_sharpness},
                  {"embed_dim", c.metrics.embed_dim},
                  {"tau", c.metrics.tau},
                  {"embed_iterations", c.metrics.embed_iterations},
                  {"classifier_iterations", c.metrics.classifier_iterations},
                  {"eval_items", c.metrics.eval_items}};
  return j;
}

void RunConfig::validate() const {
  make_schedule(schedule.kind, schedule.T, schedule.beta_start, schedule.beta_end);
  codecs.stft.validate();
  if (codecs.patch < 1 || codecs.stft.frames % codecs.patch != 0 || codecs.stft.bins() % codecs.patch != 0) {
    throw ConfigError("codecs.patch", "frames and bins must be divisible by the patch size");
  }
  if (codecs.image_patch < 1 || corpus.image_height % codecs.image_patch != 0 ||
      corpus.image_width % codecs.image_patch != 0) {
    throw ConfigError("codecs.image_patch", "image size must be divisible by the image patch size");
  }
  if (codecs.text_tokens < 1) throw ConfigError("codecs.text_tokens", "must be positive");
  if (codecs.text_width < 1) throw ConfigError("codecs.text_width", "must be positive");
  if (!(codecs.music_scale > 0.0)) throw ConfigError("codecs.music_scale", "must be positive");
  if (!(codecs.image_scale > 0.0)) throw ConfigError("codecs.image_scale", "must be positive");
  if (denoiser.widths.size() != denoiser.image_widths.size()) {
    throw ConfigError("denoiser.image_widths", "both models need the same number of blocks");
  }
  if (synapse.enabled && !synapse.placement.couple_encoder && !synapse.placement.couple_decoder) {
    throw ConfigError("synapse.couple_decoder", "an enabled synapse must couple the encoder, the decoder, or both");
  }
  if (!(synapse.fixed_alpha >= 0.0 && synapse.fixed_alpha <= 1.0)) {
    throw ConfigError("synapse.fixed_alpha", "must lie in [0, 1]");
  }
  training.validate();
  sampler.validate(schedule.T);
  CorpusConfig cc = corpus;
  cc.stft = codecs.stft;
  cc.validate();
  if (!(metrics.imsm_sharpness > 0.0)) throw ConfigError("metrics.imsm_sharpness", "must be positive");
  if (metrics.embed_dim < 1) throw ConfigError("metrics.embed_dim", "must be positive");
  if (!(metrics.tau > 0.0)) throw ConfigError("metrics.tau", "must be positive");
  if (metrics.embed_iterations < 1) throw ConfigError("metrics.embed_iterations", "must be positive");
  if (metrics.classifier_iterations < 1) throw ConfigError("metrics.classifier_iterations", "must be positive");
  if (metrics.eval_items < 0) throw ConfigError("metrics.eval_items", "must be >= 0");
}

std::string RunConfig::hash() const { return hex64(fnv1a64(config_to_json(*this).dump())); }

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config", path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace melsyn
