// One PASS/FAIL line per acceptance criterion. Usage:
//   acceptance [--cli PATH] [--work DIR] [--only N[,N...]] [--known-fail N[,N...]]
// A known failure still prints FAIL but does not affect the exit status.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/QR>

#include "melsyn/app.hpp"
#include "melsyn/parallel.hpp"

using namespace melsyn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path source_dir() { return fs::path(MELSYN_SOURCE_DIR); }

struct Context {
  fs::path work;
  fs::path cli;

  // Modality experiment state, built on first use.
  std::optional<Pipeline> small;
  std::vector<TripletRecord> records;
  std::optional<ImageModel> image;
  fs::path both_checkpoint;

  Pipeline& small_pipeline() {
    if (!small) small.emplace(load_config(source_dir() / "configs/small.json"));
    return *small;
  }

  const std::vector<TripletRecord>& corpus() {
    if (records.empty()) records = build_corpus(small_pipeline().corpus(), work / "corpus");
    return records;
  }

  const ImageModel& image_model() {
    if (!image) {
      Pipeline& p = small_pipeline();
      const auto train = load_items(p, filter_split(corpus(), Split::train));
      const ImageTrainer t = train_image_stage(p, train);
      image = ImageModel{p.image, t.params};
      save_checkpoint(work / "image.ckpt", image_checkpoint(p, t));
    }
    return *image;
  }
};

// ---- 1. gradient suite

Outcome gradients(Context&) {
  const auto start = std::chrono::steady_clock::now();
  const Pipeline p(load_config(source_dir() / "configs/tiny.json"));
  const auto& m = p.music;
  const bool geometry = m.latent_shape() == Shape{4, 4, 4} && m.d_k == 4 && m.text_tokens == 2 && p.schedule.steps() == 10;
  const auto reports = training_gradient_check(p, p.config.training.seed);
  double worst = 0.0;
  std::string worst_name;
  bool ok = geometry;
  int gates = 0, attention = 0, itc = 0;
  for (const auto& r : reports) {
    ok = ok && r.passed(1e-4);
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = r.name;
    gates += r.name == "gate/raw";
    attention += r.name.find(".sa.w") != std::string::npos || r.name.find(".ca.w") != std::string::npos;
    itc += r.name.rfind("itc/", 0) == 0;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ok = ok && gates == 1 && attention > 0 && itc == 2 && seconds < 120.0;
  return {ok, std::to_string(reports.size()) + " tensors (" + std::to_string(attention) +
                  " attention, gate raws, 2 ITC embeddings), worst " + worst_name + " " + fmt(worst, 3) + " < 1e-4, " +
                  fmt(seconds, 3) + " s"};
}

// ---- 2. diffusion math

Outcome diffusion_math(Context&) {
  const auto s = make_schedule(ScheduleKind::linear, 100, 1e-4, 0.02);
  double worst = 0.0;
  for (int t = 1; t <= 100; ++t) {
    double prod = 1.0;
    for (int r = 1; r <= t; ++r) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (r - 1) / 99.0);
    worst = std::max(worst, std::abs(prod - s.gamma_bar(t)));
  }
  bool ok = worst < 1e-12;

  const int n = 10000;
  Rng rng(42);
  const Tensor<double> z1({1}, Eigen::VectorXd::Constant(1, 0.7));
  auto within = [&](const Eigen::VectorXd& d, double mu, double var) {
    const double m = d.mean();
    const double v = (d.array() - m).square().sum() / (n - 1);
    return std::abs(m - mu) < 3.0 * std::sqrt(var / n) && std::abs(v - var) < 3.0 * var * std::sqrt(2.0 / (n - 1));
  };
  const int t = 40;
  Eigen::VectorXd fwd(n), chain(n);
  const auto short_s = make_schedule(ScheduleKind::linear, 10, 0.01, 0.2);
  for (int i = 0; i < n; ++i) {
    fwd[i] = forward_sample(s, z1, t, gaussian_sample<double>(rng, {1}))[0];
    Tensor<double> c = z1;
    for (int k = 1; k <= 10; ++k) c = markov_step(short_s, c, k, rng);
    chain[i] = c[0];
  }
  const bool sampling = within(fwd, std::sqrt(s.gamma_bar(t)) * 0.7, 1.0 - s.gamma_bar(t));
  const bool chained = within(chain, std::sqrt(short_s.gamma_bar(10)) * 0.7, 1.0 - short_s.gamma_bar(10));
  ok = ok && sampling && chained;
  return {ok, "gamma_bar max |diff| " + fmt(worst, 3) + "; forward moments " + (sampling ? "within" : "outside") +
                  " 3 sigma; chained steps " + (chained ? "within" : "outside") + " 3 sigma (1e4 draws)"};
}

// ---- 3. DDIM exactness

Outcome ddim_exactness(Context& ctx) {
  // Linear noise model eps(z, t) = A z with a fixed contraction A.
  Rng rng(5);
  const Index d = 16;
  const Eigen::MatrixXd a = gaussian_matrix<double>(rng, d, d) * (0.1 / std::sqrt(static_cast<double>(d)));
  const NoiseFn<double> linear = [&](const Tensor<double>& z, int) {
    return Tensor<double>(z.dims(), a * z.data());
  };
  const auto s = make_schedule(ScheduleKind::linear, 100, 1e-4, 0.02);
  const Tensor<double> z0 = gaussian_sample<double>(rng, {d});
  const auto steps = step_sequence(100, 100);
  const Tensor<double> back = ddim_sample(linear, s, ddim_invert(linear, s, z0, steps, 8), steps);
  const double linear_err = (back.data() - z0.data()).norm() / z0.data().norm();
  bool ok = linear_err < 1e-5;

  Pipeline& p = ctx.small_pipeline();
  const ImageModel& image = ctx.image_model();
  auto items = load_items(p, filter_split(ctx.corpus(), Split::test));
  items.resize(std::min<std::size_t>(items.size(), 24));
  std::vector<double> errs;
  for (int n : {10, 25, 50, 100}) {
    std::vector<double> e(items.size());
    parallel_for(items.size(), [&](std::size_t i) {
      e[i] = inversion_round_trip(p, image, items[i].image_latent(), n, p.config.sampler.inversion_refinements).relative_error;
    });
    errs.push_back(std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size()));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < errs.size(); ++i) monotone = monotone && errs[i] < errs[i - 1];
  ok = ok && monotone && errs.back() < 0.1;
  return {ok, "linear model round trip " + fmt(linear_err, 3) + " < 1e-5; trained image model errors at 10/25/50/100 steps " +
                  fmt(errs[0], 3) + " " + fmt(errs[1], 3) + " " + fmt(errs[2], 3) + " " + fmt(errs[3], 3) +
                  (monotone ? " (decreasing)" : " (not decreasing)") + ", last < 0.1"};
}

// ---- 4. synapse equivalence

ParamSet<float> awake(ParamSet<float> params, Rng& rng) {
  auto& w = params.at("out.conv.w");
  w = gaussian_matrix<float>(rng, w.rows(), w.cols()) * 0.3f;
  return params;
}

Outcome synapse_equivalence(Context&) {
  const Pipeline p(load_config(source_dir() / "configs/tiny.json"));
  Rng rng(8);
  const ParamSet<float> theta = awake(p.fresh_music_params(), rng);
  const ImageModel image{p.image, awake(p.fresh_image_params(), rng)};
  const Tensor<float> picture = gaussian_sample<float>(rng, {p.config.corpus.image_height, p.config.corpus.image_width, 3});
  const std::string caption = "a bright fast techno track";

  SynapseConfig zero = p.config.synapse;
  zero.mode = GateMode::fixed;
  zero.fixed_alpha = 0.0;
  SynapseConfig off = p.config.synapse;
  off.enabled = false;
  const MusicModel gated{p.music, theta, SynapseParams(zero, p.music.n_blocks())};
  const MusicModel plain{p.music, theta, SynapseParams(off, p.music.n_blocks())};
  SamplerConfig sc = p.config.sampler;
  Rng r1(99), r2(99);
  const auto g1 = generate(gated, image, p.schedule, p.codecs, picture, caption, sc, r1);
  const auto g2 = generate(plain, image, p.schedule, p.codecs, picture, caption, sc, r2);
  const double diff = (g1.spectrogram.values - g2.spectrogram.values).cwiseAbs().maxCoeff();
  const double wave_diff = (g1.waveform - g2.waveform).cwiseAbs().maxCoeff();
  bool ok = diff <= 1e-6 && wave_diff <= 1e-6;

  // alpha = 1: coupled cross-attention ignores the caption.
  const SynapseParams one_gates = [&] {
    SynapseConfig c = p.config.synapse;
    c.mode = GateMode::fixed;
    c.fixed_alpha = 1.0;
    return SynapseParams(c, p.music.n_blocks());
  }();
  const MatrixX<double> c1 = p.codecs.text.embed<double>(caption);
  const MatrixX<double> c2 = p.codecs.text.embed<double>("a dark slow ambient piece");
  const auto taps = predict_noise(p.image, image.params.cast<double>(), gaussian_sample<double>(rng, p.image.latent_shape()),
                                  nullptr, 5)
                        .taps;
  double worst = 0.0;
  double text_effect = 0.0;
  const ParamSet<double> th = theta.cast<double>();
  for (int layer : one_gates.layers()) {
    const int n = p.music.n_blocks();
    const std::string blk = layer < n ? "enc" + std::to_string(layer) : "dec" + std::to_string(layer - n);
    const AttentionWeights<double> w{th.at(blk + ".ca.wq"), th.at(blk + ".ca.wk"), th.at(blk + ".ca.wv"),
                                     th.at(blk + ".ca.wo")};
    const Index width = w.wq.rows();
    const MatrixX<double> f = gaussian_matrix<double>(rng, 8, width);
    KVFeatures<double> kv = taps.at(layer);
    kv.k = resample_tokens(kv.k, p.music.text_tokens);
    kv.v = resample_tokens(kv.v, p.music.text_tokens);
    const auto o1 = cross_attention<double>(f, c1, w, &kv, 1.0);
    const auto o2 = cross_attention<double>(f, c2, w, &kv, 1.0);
    worst = std::max(worst, (o1 - o2).cwiseAbs().maxCoeff());
    text_effect = std::max(text_effect, (cross_attention<double>(f, c1, w, &kv, 0.5) - cross_attention<double>(f, c2, w, &kv, 0.5))
                                            .cwiseAbs()
                                            .maxCoeff());
  }
  ok = ok && worst == 0.0 && text_effect > 1e-6 && !one_gates.layers().empty();
  return {ok, "alpha=0 vs synapse-free generate: spectrogram max |diff| " + fmt(diff, 3) + ", waveform " +
                  fmt(wave_diff, 3) + "; alpha=1 caption change at " + std::to_string(one_gates.layers().size()) +
                  " coupled blocks: max |diff| " + fmt(worst, 3) + " (alpha=0.5: " + fmt(text_effect, 3) + ")"};
}

// ---- 5. modality ablation

Outcome modality(Context& ctx) {
  Pipeline& base = ctx.small_pipeline();
  const ImageModel& image = ctx.image_model();
  auto train_set = load_items(base, filter_split(ctx.corpus(), Split::train));
  auto val_set = load_items(base, filter_split(ctx.corpus(), Split::val));
  attach_inversions(base, image, train_set, ctx.work / "inversions");
  attach_inversions(base, image, val_set, ctx.work / "inversions");
  const auto train = train_items(train_set), val = train_items(val_set);

  std::map<std::string, double> loss;
  std::vector<double> alphas;
  for (const auto& [setting, cfg] : ablation_settings("modality", base.config)) {
    const Pipeline p(cfg);
    MusicTrainer trainer = make_music_trainer(p, &image);
    train_music_stage(trainer, train);
    loss[setting] = trainer.heldout_loss(val);
    std::cerr << "  modality " << setting << ": held-out loss " << loss[setting] << "\n";
    if (setting == "both") {
      alphas = trainer.gates.alphas();
      ctx.both_checkpoint = ctx.work / "both.ckpt";
      save_checkpoint(ctx.both_checkpoint, music_checkpoint(p, trainer, image));
    }
  }
  const double both = loss["both"], text = loss["text_only"], img = loss["image_only"];
  double moved = 0.0;
  for (double a : alphas) moved = std::max(moved, std::abs(a - 0.5));
  const double gain = 1.0 - both / text;
  const bool ok = both < text && both < img && gain >= 0.10 && moved >= 0.05;
  return {ok, "held-out loss both " + fmt(both) + ", text-only " + fmt(text) + ", image-only " + fmt(img) + "; both is " +
                  fmt(100.0 * gain, 3) + "% below text-only (need >= 10%); max |alpha - 0.5| " + fmt(moved, 3) +
                  " over " + std::to_string(base.corpus().n_items) + " items, " + std::to_string(base.config.corpus.genres) +
                  " genres"};
}

// ---- 6. ablation machinery

Outcome ablation_machinery(Context& ctx) {
  RunConfig micro = load_config(source_dir() / "configs/tiny.json");
  micro.schedule.T = 100;
  micro.schedule.beta_end = 0.2;
  micro.sampler.steps = 100;
  micro.training.epochs = 1;
  micro.training.image_epochs = 1;
  micro.corpus.n_items = 32;
  micro.metrics.eval_items = 4;
  const Pipeline p(micro);
  const auto records = build_corpus(p.corpus(), ctx.work / "micro");
  const std::map<std::string, std::size_t> expected{{"alpha-placement", 6}, {"alpha-shared", 2}, {"alpha-lr", 4},
                                                    {"fixed-alpha", 6},     {"steps", 4},        {"guidance", 5},
                                                    {"modality", 3}};
  auto run_all = [&] {
    const AblationContext ac = prepare_ablation(p, records);
    std::map<std::string, std::string> csv;
    for (const auto& axis : ablation_axes()) csv[axis] = ablation_csv(run_ablation(axis, micro, ac));
    return csv;
  };
  const auto first = run_all();
  const auto second = run_all();
  bool complete = true;
  const bool deterministic = first == second;
  std::string counts;
  for (const auto& [axis, n] : expected) {
    std::istringstream lines(first.at(axis));
    std::string line;
    std::getline(lines, line);
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
      ++rows;
      complete = complete && std::count(line.begin(), line.end(), ',') == 9 && line.find("nan") == std::string::npos;
    }
    complete = complete && rows == n;
    counts += (counts.empty() ? "" : ", ") + axis + " " + std::to_string(rows) + "/" + std::to_string(n);
  }

  // CFG identities on the micro model.
  Rng rng(12);
  const ParamSet<float> theta = awake(p.fresh_music_params(), rng);
  const ImageModel image{p.image, awake(p.fresh_image_params(), rng)};
  const SynapseParams gates = p.fresh_gates();
  const Tensor<float> z = gaussian_sample<float>(rng, p.music.latent_shape());
  const MatrixX<float> text = p.codecs.text.embed<float>("a bright fast techno track");
  const auto taps = predict_noise(p.image, image.params, gaussian_sample<float>(rng, p.image.latent_shape()), nullptr, 50).taps;
  const auto uncond = predict_noise(p.music, theta, z, nullptr, 50).eps;
  const auto cond = predict_noise(p.music, theta, z, &text, 50, &taps, &gates).eps;
  const double w0 = (cfg_predict(p.music, theta, z, text, 50, 0.0, &taps, &gates).data() - uncond.data()).cwiseAbs().maxCoeff();
  const double w1 = (cfg_predict(p.music, theta, z, text, 50, 1.0, &taps, &gates).data() - cond.data()).cwiseAbs().maxCoeff();
  const bool identities = w0 <= 1e-6 && w1 <= 1e-6 && (cond.data() - uncond.data()).norm() > 1e-6;

  const RunConfig d;
  const bool defaults = d.synapse.placement.couple_decoder && !d.synapse.placement.couple_encoder &&
                        d.synapse.placement.per_block && d.training.gate_lr == 1e-5 && d.sampler.guidance == 7.0;
  return {complete && deterministic && identities && defaults,
          "rows " + counts + "; repeat run " + (deterministic ? "byte-identical" : "differs") + "; CFG w=0 |diff| " +
              fmt(w0, 3) + ", w=1 |diff| " + fmt(w1, 3) + "; defaults decoder/per-block, gate lr 1e-5, guidance 7 " +
              (defaults ? "ok" : "wrong")};
}

// ---- 7. metrics

Outcome metrics_suite(Context&) {
  Rng rng(2);
  const int n = 10000;
  Eigen::MatrixXd x = gaussian_matrix<double>(rng, n, 3), y = gaussian_matrix<double>(rng, n, 3);
  const Eigen::Vector3d mu1(0.0, 1.0, -1.0), mu2(0.5, 0.0, -1.0), sd1(1.0, 2.0, 0.5), sd2(1.5, 1.0, 0.5);
  for (int j = 0; j < 3; ++j) {
    x.col(j) = (x.col(j) * sd1[j]).array() + mu1[j];
    y.col(j) = (y.col(j) * sd2[j]).array() + mu2[j];
  }
  const double closed = (mu1 - mu2).squaredNorm() + (sd1 - sd2).squaredNorm();
  const double fd = frechet_distance(x, y);
  const double self = frechet_distance(x, x);

  Eigen::MatrixXd one_hot = Eigen::MatrixXd::Zero(3, 4);
  one_hot(0, 0) = one_hot(1, 2) = one_hot(2, 3) = 1.0;
  const double kl = label_kl(one_hot, Eigen::MatrixXd::Constant(3, 4, 0.25));

  const Index m = 6;
  const Eigen::MatrixXd a = gaussian_matrix<double>(rng, m, m).array().tanh();
  const Eigen::MatrixXd b = gaussian_matrix<double>(rng, m, m).array().tanh();
  const ImsmResult r = imsm(a, b);
  const double row_err = (r.matrix.rowwise().sum().array() - 1.0).abs().maxCoeff();
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(m);
  perm.indices() << 4, 2, 0, 5, 1, 3;
  const Eigen::MatrixXd pa = perm * a * perm.transpose(), pb = perm * b * perm.transpose();
  const bool perm_exact = imsm(pa, pb).score == r.score;
  const double single = imsm(Eigen::MatrixXd::Constant(1, 1, 0.2), Eigen::MatrixXd::Constant(1, 1, -0.4)).score;
  const double itc = itc_loss(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2), 1.0);

  const bool ok = self < 1e-8 && std::abs(fd - closed) / closed < 0.05 && std::abs(kl - 1.3863) < 1e-4 && row_err < 1e-6 &&
                  r.score >= 0.0 && r.score <= 1.0 && single == 1.0 && perm_exact && std::abs(itc - 0.3133) < 1e-4;
  return {ok, "FD self " + fmt(self, 3) + ", MC " + fmt(fd) + " vs closed form " + fmt(closed) + "; KL " + fmt(kl, 6) +
                  "; IMSM rows " + fmt(row_err, 3) + ", score " + fmt(r.score) + ", N=1 " + fmt(single) +
                  ", permutation " + (perm_exact ? "exact" : "differs") + "; ITC " + fmt(itc, 6)};
}

// ---- 8. codecs

Outcome codec_suite(Context&) {
  Rng rng(3);
  const StftConfig g;
  PatchCodec codec(4, 1, 7);
  const Spectrogram s{gaussian_matrix<double>(rng, g.frames, g.bins()).cwiseAbs(), g};
  const auto z = encode_latent<double>(codec, s);
  const double rt = (decode_latent(codec, z, g).values - s.values).cwiseAbs().maxCoeff();
  const double norm = std::abs(z.data().norm() - s.values.norm());

  StftConfig tg;
  tg.frames = 120;
  Eigen::VectorXd tone(tg.samples());
  for (Index i = 0; i < tone.size(); ++i) tone[i] = std::sin(2.0 * M_PI * 440.0 * static_cast<double>(i) / tg.sample_rate);
  const Eigen::VectorXd y = griffin_lim(stft_spectrogram(tone, tg), 60);
  const Index lo = tg.window, len = y.size() - 2 * tg.window;
  const Eigen::VectorXd mid = y.segment(lo, len);
  Eigen::MatrixXd basis(len, 2);
  for (Index i = 0; i < len; ++i) {
    const double ph = 2.0 * M_PI * 440.0 * static_cast<double>(lo + i) / tg.sample_rate;
    basis(i, 0) = std::cos(ph);
    basis(i, 1) = std::sin(ph);
  }
  const Eigen::VectorXd ref = basis * basis.colPivHouseholderQr().solve(mid);
  const double snr = 10.0 * std::log10(ref.squaredNorm() / (mid - ref).squaredNorm());

  const Eigen::VectorXd noise = gaussian_matrix<double>(rng, g.samples(), 1);
  const Eigen::VectorXd w = hann_window(g.window);
  double windowed = 0.0;
  for (Index f = 0; f < g.frames; ++f) windowed += noise.segment(f * g.hop, g.window).cwiseProduct(w).squaredNorm();
  const double parseval = std::abs(spectrogram_energy(stft_spectrogram(noise, g).values, g.window) / windowed - 1.0);

  const bool ok = rt < 1e-5 && norm < 1e-5 && snr > 20.0 && parseval < 0.05;
  return {ok, "patch round trip " + fmt(rt, 3) + ", norm change " + fmt(norm, 3) + "; Griffin-Lim 440 Hz SNR " +
                  fmt(snr, 4) + " dB at 60 iterations; Parseval deviation " + fmt(100.0 * parseval, 3) + "%"};
}

// ---- 9. corpus

Outcome corpus_suite(Context& ctx) {
  const Pipeline& p = ctx.small_pipeline();
  std::map<int, int> per_genre;
  for (const auto& r : ctx.corpus()) ++per_genre[r.genre];
  int lo = 1 << 30, hi = 0;
  for (const auto& [g, n] : per_genre) lo = std::min(lo, n), hi = std::max(hi, n);
  const bool balanced = static_cast<int>(per_genre.size()) == p.config.corpus.genres && hi - lo <= 1;

  CorpusConfig cc = p.corpus();
  cc.n_items = 45;
  build_corpus(cc, ctx.work / "regen_a");
  build_corpus(cc, ctx.work / "regen_b");
  bool same = slurp(ctx.work / "regen_a/manifest.jsonl") == slurp(ctx.work / "regen_b/manifest.jsonl");
  for (const auto& entry : fs::recursive_directory_iterator(ctx.work / "regen_a")) {
    if (!entry.is_regular_file()) continue;
    same = same && slurp(entry.path()) == slurp(ctx.work / "regen_b" / fs::relative(entry.path(), ctx.work / "regen_a"));
  }

  // Spectral tilt: energy in the upper half of the bins over the lower half.
  auto tilt = [](const Spectrogram& s) {
    const Index half = s.values.cols() / 2;
    return s.values.rightCols(s.values.cols() - half).squaredNorm() / s.values.leftCols(half).squaredNorm();
  };
  double ratio = 1e300;
  bool captions = true;
  for (int genre : {1, 2, 3}) {
    Rng a(5), b(5);
    const auto dark = generate_triplet({genre, 7.0, 0.0}, cc, a);
    const auto bright = generate_triplet({genre, 7.0, 1.0}, cc, b);
    captions = captions && dark.caption == bright.caption;
    ratio = std::min(ratio, tilt(bright.spectrogram) / tilt(dark.spectrogram));
  }
  const bool ok = balanced && same && captions && ratio >= 2.0;
  return {ok, std::to_string(per_genre.size()) + " genres with " + std::to_string(lo) + ".." + std::to_string(hi) +
                  " items each; regeneration " + (same ? "byte-identical" : "differs") +
                  "; brightness tilt ratio >= " + fmt(ratio, 3) + " with identical captions"};
}

// ---- 10. end-to-end determinism

Outcome determinism(Context& ctx) {
  if (ctx.both_checkpoint.empty()) {
    // Stand-alone run: a tiny checkpoint with randomized weights.
    const Pipeline p(load_config(source_dir() / "configs/tiny.json"));
    Rng rng(4);
    ImageModel image{p.image, awake(p.fresh_image_params(), rng)};
    MusicTrainer t(p.music, awake(p.fresh_music_params(), rng), p.fresh_gates(), p.schedule, p.config.training, &image);
    ctx.both_checkpoint = ctx.work / "tiny.ckpt";
    save_checkpoint(ctx.both_checkpoint, music_checkpoint(p, t, image));
  }
  const LoadedMusicCheckpoint ck = read_music_checkpoint(load_checkpoint(ctx.both_checkpoint));
  const Pipeline p(ck.config);
  Rng pic_rng(6);
  const Tensor<float> picture =
      gaussian_sample<float>(pic_rng, {p.config.corpus.image_height, p.config.corpus.image_width, 3});
  save_melt(ctx.work / "picture.melt", picture);
  const std::string caption = "a bright fast techno track";

  std::vector<std::string> wavs;
  if (!ctx.cli.empty()) {
    for (int run = 0; run < 2; ++run) {
      const fs::path out = ctx.work / ("sample" + std::to_string(run));
      const std::string cmd = "\"" + ctx.cli.string() + "\" sample --ckpt \"" + ctx.both_checkpoint.string() +
                              "\" --image \"" + (ctx.work / "picture.melt").string() + "\" --caption \"" + caption +
                              "\" --seed 7 --out \"" + out.string() + "\" > /dev/null";
      if (std::system(cmd.c_str()) != 0) return {false, "sample command failed: " + cmd};
      wavs.push_back(slurp(out / "sample.wav"));
    }
  } else {
    for (int run = 0; run < 2; ++run) {
      Rng rng(7);
      const auto g = generate(ck.music, ck.image, p.schedule, p.codecs, picture, caption, p.config.sampler, rng);
      const auto bytes = encode_wav(g.waveform, p.codecs.stft.sample_rate);
      wavs.emplace_back(bytes.begin(), bytes.end());
    }
  }
  const bool ok = wavs.size() == 2 && !wavs[0].empty() && wavs[0] == wavs[1];
  return {ok, std::string(ctx.cli.empty() ? "library" : "CLI") + " sample twice: " + std::to_string(wavs[0].size()) +
                  " WAV bytes, " + (ok ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  std::set<int> only, known;
  auto ids = [](const char* list, std::set<int>& into) {
    std::stringstream ss(list);
    for (std::string tok; std::getline(ss, tok, ',');) into.insert(std::stoi(tok));
  };
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--cli" && i + 1 < argc) {
      ctx.cli = argv[++i];
    } else if (arg == "--work" && i + 1 < argc) {
      ctx.work = argv[++i];
    } else if (arg == "--only" && i + 1 < argc) {
      ids(argv[++i], only);
    } else if (arg == "--known-fail" && i + 1 < argc) {
      ids(argv[++i], known);
    } else {
      std::cerr << "usage: acceptance [--cli PATH] [--work DIR] [--only N[,N...]] [--known-fail N[,N...]]\n";
      return 1;
    }
  }
  if (ctx.work.empty()) ctx.work = fs::temp_directory_path() / "melsyn_acceptance";
  fs::remove_all(ctx.work);
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"gradient suite", gradients},
      {"diffusion math", diffusion_math},
      {"DDIM exactness", ddim_exactness},
      {"synapse equivalence", synapse_equivalence},
      {"modality ablation", modality},
      {"ablation machinery", ablation_machinery},
      {"metrics suite", metrics_suite},
      {"codec and vocoder suite", codec_suite},
      {"corpus suite", corpus_suite},
      {"end-to-end determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass && !known.count(id);
    std::cout << "criterion " << std::setw(2) << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first
              << ": " << o.detail << " [" << fmt(s, 3) << " s]" << (!o.pass && known.count(id) ? " (known failure)" : "")
              << std::endl;
  }
  return failed == 0 ? 0 : 3;
}
