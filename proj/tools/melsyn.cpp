#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "melsyn/app.hpp"

using namespace melsyn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2, kVerification = 3 };

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::vector<TripletRecord> read_manifest(const fs::path& path, const RunConfig& cfg) {
  return load_manifest(path, cfg.corpus.genres);
}

RunConfig config_of(const Checkpoint& ckpt) { return config_from_json(ckpt.header.at("config")); }

// ---- commands

int gen_corpus(const fs::path& config_path, const fs::path& out) {
  const Pipeline p(load_config(config_path));
  const auto records = build_corpus(p.corpus(), out);
  std::cout << "wrote " << records.size() << " items to " << (out / "manifest.jsonl").string() << "\n";
  return kOk;
}

int train_image(const fs::path& config_path, const fs::path& manifest, const fs::path& out) {
  const Pipeline p(load_config(config_path));
  const auto items = load_items(p, filter_split(read_manifest(manifest, p.config), Split::train));
  std::vector<Tensor<float>> val;
  for (const auto& it : load_items(p, filter_split(read_manifest(manifest, p.config), Split::val))) {
    val.push_back(it.image_latent());
  }
  long last_reported = -1;
  const ImageTrainer trainer = train_image_stage(p, items, [&](long step, double loss) {
    if (step % 50 == 0 && step != last_reported) {
      last_reported = step;
      std::cerr << "image step " << step << " loss " << loss << "\n";
    }
  });
  save_checkpoint(out, image_checkpoint(p, trainer));
  json report{{"checkpoint", out.string()}, {"steps", trainer.step}, {"config_hash", p.config.hash()}};
  if (!val.empty()) report["heldout_loss"] = trainer.heldout_loss(val);
  std::cout << report.dump() << "\n";
  return kOk;
}

int train(const fs::path& config_path, const fs::path& manifest, const fs::path& image_ckpt, const fs::path& out,
          const fs::path& resume, const fs::path& log_path, const fs::path& cache) {
  const Pipeline p(load_config(config_path));
  const ImageModel image = image_model_from(p, load_checkpoint(image_ckpt));
  const auto records = read_manifest(manifest, p.config);
  auto train_set = load_items(p, filter_split(records, Split::train));
  auto val_set = load_items(p, filter_split(records, Split::val));
  attach_inversions(p, image, train_set, cache);
  attach_inversions(p, image, val_set, cache);
  const auto items = train_items(train_set);

  MusicTrainer trainer = make_music_trainer(p, &image);
  if (!resume.empty()) {
    const Checkpoint ck = load_checkpoint(resume);
    if (ck.header.value("config_hash", "") != p.config.hash()) {
      throw ConfigError("config", "resume checkpoint was written with a different config");
    }
    restore_music_trainer(trainer, ck);
  }
  const fs::path log_file = log_path.empty() ? fs::path(out.string() + ".log.jsonl") : log_path;
  if (log_file.has_parent_path()) fs::create_directories(log_file.parent_path());
  std::ofstream log(log_file, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + log_file.string());
  train_music_stage(
      trainer, items, [&](const TrainStepRecord& r) { log << to_json_line(r) << "\n" << std::flush; },
      [&] { save_checkpoint(out, music_checkpoint(p, trainer, image)); });
  save_checkpoint(out, music_checkpoint(p, trainer, image));

  json report{{"checkpoint", out.string()}, {"steps", trainer.step}, {"epochs", trainer.epoch},
              {"alphas", trainer.gates.alphas()}, {"config_hash", p.config.hash()}};
  if (!val_set.empty()) report["heldout_loss"] = trainer.heldout_loss(train_items(val_set));
  std::cout << report.dump() << "\n";
  return kOk;
}

int sample(const fs::path& ckpt_path, const fs::path& image_path, const std::string& caption, std::uint64_t seed,
           const fs::path& out, std::optional<int> steps, std::optional<double> guidance) {
  const LoadedMusicCheckpoint ck = read_music_checkpoint(load_checkpoint(ckpt_path));
  const Pipeline p(ck.config);
  SamplerConfig sampler = p.config.sampler;
  if (steps) sampler.steps = *steps;
  if (guidance) sampler.guidance = *guidance;
  sampler.validate(p.schedule.steps());
  const Tensor<float> image = load_melt<float>(image_path);
  Rng rng(seed);
  const GenerateResult g = generate(ck.music, ck.image, p.schedule, p.codecs, image, caption, sampler, rng);

  fs::create_directories(out);
  write_wav(out / "sample.wav", g.waveform, p.codecs.stft.sample_rate);
  const RowMajorMatrixX<float> spec = g.spectrogram.values.cast<float>();
  save_melt(out / "spectrogram.melt",
            Tensor<float>({spec.rows(), spec.cols()}, Eigen::Map<const Eigen::VectorXf>(spec.data(), spec.size())));
  const json sidecar{{"config_hash", p.config.hash()},
                     {"seed", seed},
                     {"caption", caption},
                     {"image", image_path.filename().string()},
                     {"steps", sampler.steps},
                     {"guidance", sampler.guidance},
                     {"alphas", g.alphas},
                     {"checkpoint_step", ck.step}};
  write_text(out / "sample.json", sidecar.dump(2) + "\n");
  std::cout << (out / "sample.wav").string() << "\n";
  return kOk;
}

int invert(const fs::path& ckpt_path, const fs::path& image_path, int steps, int refinements) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Pipeline p(config_of(ckpt));
  const ImageModel image = image_model_from(p, ckpt);
  const Tensor<float> latent = p.codecs.image_latent(load_melt<float>(image_path));
  const RoundTrip r = inversion_round_trip(p, image, latent, steps, refinements);
  std::cout << json{{"steps", r.steps}, {"refinements", refinements}, {"relative_error", r.relative_error},
                    {"config_hash", p.config.hash()}}
                   .dump()
            << "\n";
  return kOk;
}

int eval(const fs::path& ckpt_path, const fs::path& manifest, const fs::path& out, std::uint64_t seed) {
  const LoadedMusicCheckpoint ck = read_music_checkpoint(load_checkpoint(ckpt_path));
  const Pipeline p(ck.config);
  const auto records = read_manifest(manifest, p.config);
  const auto train_set = load_items(p, filter_split(records, Split::train));
  auto test = filter_split(records, Split::test);
  const int limit = p.config.metrics.eval_items;
  if (limit > 0 && static_cast<std::size_t>(limit) < test.size()) test.resize(static_cast<std::size_t>(limit));
  const auto test_set = load_items(p, test);
  const EvalModels models = fit_eval_models(p, train_set);
  const auto generated = generate_for(p, ck.music, ck.image, test_set, p.config.sampler, seed);
  const EvalReport r = evaluate_generations(p, models, test_set, generated);
  json report = to_json(r);
  report["seed"] = seed;
  report["alphas"] = ck.music.gates.alphas();
  write_text(out, report.dump(2) + "\n");
  fs::path imsm_path = out;
  imsm_path.replace_extension(".imsm.melt");
  const RowMajorMatrixX<double> rows = r.imsm_matrix;
  save_melt(imsm_path, Tensor<double>({rows.rows(), rows.cols()}, Eigen::Map<const Eigen::VectorXd>(rows.data(), rows.size())));
  std::cout << report.dump() << "\n";
  return kOk;
}

int ablate(const std::string& axis, const fs::path& config_path, const fs::path& manifest, const fs::path& out,
           const fs::path& cache) {
  const RunConfig base = load_config(config_path);
  ablation_settings(axis, base);  // rejects unknown axes before any training
  const Pipeline p(base);
  const AblationContext ctx = prepare_ablation(p, read_manifest(manifest, base), cache);
  const std::string csv = ablation_csv(run_ablation(axis, base, ctx, &std::cerr));
  if (out.empty()) {
    std::cout << csv;
  } else {
    write_text(out, csv);
  }
  return kOk;
}

int grad_check(const fs::path& config_path, double tolerance) {
  const Pipeline p(load_config(config_path));
  const auto reports = training_gradient_check(p, p.config.training.seed);
  bool ok = true;
  std::cout << std::left << std::setw(32) << "parameter" << std::right << std::setw(10) << "scalars" << std::setw(16)
            << "max_rel_error" << "  status\n";
  for (const auto& r : reports) {
    const bool pass = r.passed(tolerance);
    ok = ok && pass;
    std::cout << std::left << std::setw(32) << r.name << std::right << std::setw(10) << r.analytic.size()
              << std::setw(16) << std::scientific << std::setprecision(3) << r.max_rel_error << std::defaultfloat
              << "  " << (pass ? "ok" : "FAIL") << "\n";
  }
  std::cout << reports.size() << " tensors, " << (ok ? "all passed" : "FAILED") << "\n";
  return ok ? kOk : kVerification;
}

int inspect(const fs::path& ckpt_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::string kind = ckpt.header.value("kind", "");
  json report{{"kind", kind},
              {"config_hash", ckpt.header.value("config_hash", "")},
              {"step", ckpt.header.value("step", 0L)},
              {"epoch", ckpt.header.value("epoch", 0)}};
  std::map<std::string, Index> counts;
  for (const auto& [name, t] : ckpt.tensors) {
    const auto slash = name.find('/');
    std::string group = name.substr(0, slash);
    if (group == "opt") group = name.substr(0, name.find('/', slash + 1));
    counts[group] += t.size();
  }
  report["parameter_counts"] = counts;
  if (kind == "music") {
    const LoadedMusicCheckpoint ck = read_music_checkpoint(ckpt);
    json blocks = json::array();
    for (int layer : ck.music.gates.layers()) {
      blocks.push_back({{"layer", layer}, {"slot", ck.music.gates.slot(layer)}, {"alpha", ck.music.gates.gate(layer)}});
    }
    report["alphas"] = ck.music.gates.alphas();
    report["coupled_layers"] = blocks;
  }
  std::cout << report.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"melsyn: image and text conditioned music diffusion at desk scale"};
  app.require_subcommand(1);

  fs::path config, out, manifest, image_ckpt, resume, log, cache, ckpt, image;
  std::string caption, axis;
  std::uint64_t seed = 0;
  int steps = 0, refinements = 0;
  std::optional<int> sample_steps;
  std::optional<double> sample_guidance;
  double tolerance = 1e-4;

  auto* c_corpus = app.add_subcommand("gen-corpus", "write a synthetic corpus and its manifest");
  c_corpus->add_option("--config", config)->required()->check(CLI::ExistingFile);
  c_corpus->add_option("--out", out)->required();

  auto* c_image = app.add_subcommand("train-image", "train the frozen image denoiser");
  c_image->add_option("--config", config)->required()->check(CLI::ExistingFile);
  c_image->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  c_image->add_option("--out", out, "checkpoint path")->default_val("image.ckpt");

  auto* c_train = app.add_subcommand("train", "train the music denoiser and synapse gates");
  c_train->add_option("--config", config)->required()->check(CLI::ExistingFile);
  c_train->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  c_train->add_option("--image-ckpt", image_ckpt)->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", out, "checkpoint path")->default_val("music.ckpt");
  c_train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  c_train->add_option("--log", log, "JSONL step log (default: <out>.log.jsonl)");
  c_train->add_option("--cache", cache, "directory for cached inversion trajectories");

  auto* c_sample = app.add_subcommand("sample", "generate music for an image and caption");
  c_sample->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  c_sample->add_option("--image", image, "H x W x 3 MELT image")->required()->check(CLI::ExistingFile);
  c_sample->add_option("--caption", caption)->required();
  c_sample->add_option("--seed", seed)->default_val(0);
  c_sample->add_option("--out", out)->required();
  c_sample->add_option("--steps", sample_steps, "override sampler.steps");
  c_sample->add_option("--guidance", sample_guidance, "override sampler.guidance");

  auto* c_invert = app.add_subcommand("invert", "DDIM inversion round-trip error of an image");
  c_invert->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  c_invert->add_option("--image", image)->required()->check(CLI::ExistingFile);
  c_invert->add_option("--steps", steps)->required()->check(CLI::PositiveNumber);
  c_invert->add_option("--refinements", refinements)->default_val(0)->check(CLI::NonNegativeNumber);

  auto* c_eval = app.add_subcommand("eval", "FAD, FD, KL and IMSM on the test split");
  c_eval->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", out)->required();
  c_eval->add_option("--seed", seed)->default_val(0);

  auto* c_ablate = app.add_subcommand("ablate", "train and evaluate every setting of one axis");
  c_ablate->add_option("--axis", axis)->required()->check(CLI::IsMember(ablation_axes()));
  c_ablate->add_option("--config", config)->required()->check(CLI::ExistingFile);
  c_ablate->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  c_ablate->add_option("--out", out, "CSV path (default: stdout)");
  c_ablate->add_option("--cache", cache, "directory for cached inversion trajectories");

  auto* c_grad = app.add_subcommand("grad-check", "finite-difference check of the training gradients");
  c_grad->add_option("--config", config)->required()->check(CLI::ExistingFile);
  c_grad->add_option("--tolerance", tolerance)->default_val(1e-4);

  auto* c_inspect = app.add_subcommand("inspect", "gate values and parameter counts of a checkpoint");
  c_inspect->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*c_corpus) return gen_corpus(config, out);
    if (*c_image) return train_image(config, manifest, out);
    if (*c_train) return train(config, manifest, image_ckpt, out, resume, log, cache);
    if (*c_sample) return sample(ckpt, image, caption, seed, out, sample_steps, sample_guidance);
    if (*c_invert) return invert(ckpt, image, steps, refinements);
    if (*c_eval) return eval(ckpt, manifest, out, seed);
    if (*c_ablate) return ablate(axis, config, manifest, out, cache);
    if (*c_grad) return grad_check(config, tolerance);
    if (*c_inspect) return inspect(ckpt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const VerificationError& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kVerification;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
