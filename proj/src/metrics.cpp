#include "melsyn/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "melsyn/optim.hpp"

namespace melsyn {

namespace {

/// Sum of the terms in ascending order, so the result depends only on the
/// multiset of values.
double sorted_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += v;
  return s;
}

Eigen::MatrixXd softmax_rows_sorted(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd out(a.rows(), a.cols());
  std::vector<double> terms(static_cast<std::size_t>(a.cols()));
  for (Index i = 0; i < a.rows(); ++i) {
    const double mx = a.row(i).maxCoeff();
    for (Index j = 0; j < a.cols(); ++j) terms[j] = std::exp(a(i, j) - mx);
    const double z = sorted_sum(terms);
    for (Index j = 0; j < a.cols(); ++j) out(i, j) = terms[j] / z;
  }
  return out;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd e = (a.colwise() - a.rowwise().maxCoeff()).array().exp().matrix();
  return (e.array().colwise() / e.rowwise().sum().array()).matrix();
}

Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& a) {
  const Eigen::MatrixXd shifted = a.colwise() - a.rowwise().maxCoeff();
  const Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  return shifted.colwise() - lse;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

constexpr Index kMelBands = 16;

/// kMelBands x F triangular filterbank; a filter that misses every bin falls
/// back to the bin nearest its centre.
Eigen::MatrixXd mel_filterbank(const StftConfig& g, Index bins) {
  const double nyquist = g.sample_rate / 2.0;
  const double top = hz_to_mel(nyquist);
  std::vector<double> edges(kMelBands + 2);
  for (Index i = 0; i < kMelBands + 2; ++i) edges[i] = mel_to_hz(top * static_cast<double>(i) / (kMelBands + 1));
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(kMelBands, bins);
  const double bin_hz = static_cast<double>(g.sample_rate) / static_cast<double>(g.window);
  for (Index b = 0; b < kMelBands; ++b) {
    const double lo = edges[b], c = edges[b + 1], hi = edges[b + 2];
    for (Index k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      w(b, k) = std::max(0.0, std::min((f - lo) / (c - lo), (hi - f) / (hi - c)));
    }
    if (w.row(b).sum() <= 0.0) {
      const auto k = std::min<Index>(bins - 1, static_cast<Index>(std::lround(c / bin_hz)));
      w(b, k) = 1.0;
    }
  }
  return w;
}

}  // namespace

double frechet_distance(const Eigen::MatrixXd& real_feats, const Eigen::MatrixXd& gen_feats) {
  if (real_feats.rows() < 2 || gen_feats.rows() < 2) throw Error("frechet_distance: need at least 2 rows per set");
  if (real_feats.cols() != gen_feats.cols()) throw ShapeError("frechet_distance: feature width mismatch");
  const GaussianFit a = fit_gaussian(real_feats);
  const GaussianFit b = fit_gaussian(gen_feats);
  const Eigen::MatrixXd root_a = sqrtm_psd(a.cov);
  Eigen::MatrixXd inner = root_a * b.cov * root_a;
  inner = 0.5 * (inner + inner.transpose());
  const Eigen::MatrixXd cross = sqrtm_psd(inner);
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
  return std::max(0.0, d);
}

double label_kl(const Eigen::MatrixXd& real_dists, const Eigen::MatrixXd& gen_dists) {
  if (real_dists.rows() != gen_dists.rows() || real_dists.cols() != gen_dists.cols()) {
    throw ShapeError("label_kl: paired distributions must share shape");
  }
  if (real_dists.rows() == 0) throw Error("label_kl: no rows");
  auto check = [](const Eigen::MatrixXd& m, const char* which) {
    for (Index i = 0; i < m.rows(); ++i) {
      if ((m.row(i).array() < 0.0).any() || std::abs(m.row(i).sum() - 1.0) > 1e-6) {
        throw NumericError(std::string("label_kl: ") + which + " row " + std::to_string(i) +
                           " is not a distribution");
      }
    }
  };
  check(real_dists, "real");
  check(gen_dists, "generated");
  constexpr double floor = 1e-10;
  double total = 0.0;
  for (Index i = 0; i < real_dists.rows(); ++i) {
    for (Index k = 0; k < real_dists.cols(); ++k) {
      const double p = real_dists(i, k);
      if (p > 0.0) total += p * (std::log(p + floor) - std::log(gen_dists(i, k) + floor));
    }
  }
  return std::max(0.0, total / static_cast<double>(real_dists.rows()));
}

ImsmResult imsm(const Eigen::MatrixXd& a_clip, const Eigen::MatrixXd& a_clap, double sharpness) {
  if (a_clip.rows() != a_clip.cols() || a_clap.rows() != a_clap.cols() || a_clip.rows() != a_clap.rows()) {
    throw ShapeError("imsm: similarity matrices must be N x N with matching N");
  }
  const Index n = a_clip.rows();
  const Eigen::MatrixXd p = softmax_rows_sorted(sharpness * a_clip);
  const Eigen::MatrixXd q = softmax_rows_sorted(sharpness * a_clap.transpose());
  ImsmResult r;
  r.matrix.resize(n, n);
  std::vector<double> terms(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      for (Index k = 0; k < n; ++k) terms[k] = p(i, k) * q(k, j);
      r.matrix(i, j) = sorted_sum(terms);
    }
  }
  std::vector<double> diag(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) diag[i] = r.matrix(i, i);
  r.score = sorted_sum(diag) / static_cast<double>(n);
  return r;
}

double itc_loss(const Eigen::MatrixXd& z_img, const Eigen::MatrixXd& z_txt, double tau) {
  if (!(tau > 0.0)) throw Error("itc_loss: tau must be positive");
  if (z_img.rows() != z_txt.rows() || z_img.cols() != z_txt.cols()) throw ShapeError("itc_loss: shape mismatch");
  const Eigen::MatrixXd s = z_img * z_txt.transpose() / tau;
  const double i2t = log_softmax_rows(s).diagonal().mean();
  const double t2i = log_softmax_rows(s.transpose()).diagonal().mean();
  return std::max(0.0, -0.5 * (i2t + t2i));
}

template <typename Scalar>
ad::Var<Scalar> itc_loss(const ad::Var<Scalar>& z_img, const ad::Var<Scalar>& z_txt, Scalar tau) {
  if (!(tau > Scalar(0))) throw Error("itc_loss: tau must be positive");
  const auto s = ad::scale(ad::matmul_nt(z_img, z_txt), Scalar(1) / tau);
  const auto both = ad::add(ad::diag_mean(ad::log_softmax_rows(s)), ad::diag_mean(ad::log_softmax_rows(ad::transpose(s))));
  return ad::scale(both, Scalar(-0.5));
}

template ad::Var<float> itc_loss(const ad::Var<float>&, const ad::Var<float>&, float);
template ad::Var<double> itc_loss(const ad::Var<double>&, const ad::Var<double>&, double);

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd norms = m.rowwise().norm();
  norms = norms.cwiseMax(1e-12);
  return (m.array().colwise() / norms.array()).matrix();
}

Eigen::MatrixXd cosine_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return normalize_rows(a) * normalize_rows(b).transpose();
}

// ---- Toy models

Eigen::VectorXd toy_extract(const Spectrogram& s) {
  const Index frames = s.values.rows();
  if (frames < 1 || s.values.cols() < 2) throw ShapeError("toy_extract: empty spectrogram");
  const Eigen::MatrixXd w = mel_filterbank(s.geometry, s.values.cols());
  const Eigen::MatrixXd energy = s.values.cwiseAbs2() * w.transpose();  // frames x bands
  const Eigen::MatrixXd logs = energy.array().log1p().matrix();
  Eigen::VectorXd out(2 * kMelBands);
  for (Index b = 0; b < kMelBands; ++b) {
    const double mu = logs.col(b).mean();
    const double var = (logs.col(b).array() - mu).square().mean();
    out[2 * b] = mu;
    out[2 * b + 1] = std::sqrt(var);
  }
  return out;
}

Eigen::MatrixXd toy_extract_all(const std::vector<Spectrogram>& specs) {
  Eigen::MatrixXd out(static_cast<Index>(specs.size()), 2 * kMelBands);
  for (std::size_t i = 0; i < specs.size(); ++i) out.row(static_cast<Index>(i)) = toy_extract(specs[i]).transpose();
  return out;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& x) {
  if (x.rows() < 1) throw Error("Standardizer: no rows");
  Standardizer s;
  s.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - s.mean;
  s.scale = (centered.array().square().colwise().mean().sqrt() + 1e-8).matrix();
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
  if (x.cols() != mean.cols()) throw ShapeError("Standardizer: feature width mismatch");
  return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

Eigen::MatrixXd ToyClassifier::logits(const Eigen::MatrixXd& features) const {
  return (standardizer.apply(features) * weight).rowwise() + bias;
}

Eigen::MatrixXd ToyClassifier::probabilities(const Eigen::MatrixXd& features) const {
  return softmax_rows(logits(features));
}

double ToyClassifier::accuracy(const Eigen::MatrixXd& features, const std::vector<int>& labels) const {
  const Eigen::MatrixXd l = logits(features);
  if (static_cast<std::size_t>(l.rows()) != labels.size()) throw ShapeError("accuracy: label count mismatch");
  Index hits = 0;
  for (Index i = 0; i < l.rows(); ++i) {
    Index best = 0;
    l.row(i).maxCoeff(&best);
    hits += best == labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hits) / static_cast<double>(l.rows());
}

ToyClassifier train_toy_classifier(const Eigen::MatrixXd& features, const std::vector<int>& labels, int classes,
                                   int iterations, double lr, std::uint64_t seed) {
  const Index n = features.rows();
  if (n < 1 || static_cast<std::size_t>(n) != labels.size()) throw ShapeError("train_toy_classifier: label count");
  if (classes < 2) throw Error("train_toy_classifier: need at least 2 classes");
  ToyClassifier c;
  c.standardizer = Standardizer::fit(features);
  const Eigen::MatrixXd x = c.standardizer.apply(features);
  Rng rng(seed);
  c.weight = gaussian_matrix<double>(rng, x.cols(), classes) * (0.01 / std::sqrt(static_cast<double>(x.cols())));
  c.bias = Eigen::RowVectorXd::Zero(classes);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, classes);
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) throw Error("train_toy_classifier: label out of range");
    onehot(i, y) = 1.0;
  }
  Eigen::MatrixXd mw = Eigen::MatrixXd::Zero(c.weight.rows(), c.weight.cols()), vw = mw;
  Eigen::MatrixXd b = c.bias, mb = Eigen::MatrixXd::Zero(1, classes), vb = mb;
  AdamWConfig adam;
  adam.weight_decay = 0.0;
  for (int it = 1; it <= iterations; ++it) {
    const Eigen::MatrixXd p = softmax_rows((x * c.weight).rowwise() + c.bias);
    const Eigen::MatrixXd d = (p - onehot) / static_cast<double>(n);
    const Eigen::MatrixXd gw = x.transpose() * d;
    const Eigen::MatrixXd gb = d.colwise().sum();
    adamw_update(c.weight, gw, mw, vw, it, lr, adam, false);
    b = c.bias;
    adamw_update(b, gb, mb, vb, it, lr, adam, false);
    c.bias = b;
  }
  return c;
}

Eigen::MatrixXd ToyEmbedders::embed_image(const Eigen::MatrixXd& x) const {
  return normalize_rows(image_std.apply(x) * image_w);
}
Eigen::MatrixXd ToyEmbedders::embed_text(const Eigen::MatrixXd& x) const {
  return normalize_rows(text_std.apply(x) * text_w);
}
Eigen::MatrixXd ToyEmbedders::embed_music(const Eigen::MatrixXd& x) const {
  return normalize_rows(music_std.apply(x) * music_w);
}

ToyEmbedders train_toy_embedders(const Eigen::MatrixXd& images, const Eigen::MatrixXd& texts,
                                 const Eigen::MatrixXd& music, const EmbedderTraining& options) {
  const Index n = images.rows();
  if (n < 2 || texts.rows() != n || music.rows() != n) throw ShapeError("train_toy_embedders: row counts differ");
  if (!(options.tau > 0.0) || options.dim < 1) throw Error("train_toy_embedders: bad options");
  ToyEmbedders e;
  e.image_std = Standardizer::fit(images);
  e.text_std = Standardizer::fit(texts);
  e.music_std = Standardizer::fit(music);
  const Eigen::MatrixXd xi = e.image_std.apply(images);
  const Eigen::MatrixXd xt = e.text_std.apply(texts);
  const Eigen::MatrixXd xm = e.music_std.apply(music);
  Rng rng(options.seed);
  auto init = [&](Index rows) {
    return Eigen::MatrixXd(gaussian_matrix<double>(rng, rows, options.dim) / std::sqrt(static_cast<double>(rows)));
  };
  e.image_w = init(xi.cols());
  e.text_w = init(xt.cols());
  e.music_w = init(xm.cols());

  AdamWConfig adam;
  adam.weight_decay = 0.0;
  Eigen::MatrixXd mi = Eigen::MatrixXd::Zero(e.image_w.rows(), options.dim), vi = mi;
  Eigen::MatrixXd mt = Eigen::MatrixXd::Zero(e.text_w.rows(), options.dim), vt = mt;
  for (int it = 1; it <= options.iterations; ++it) {
    ad::Tape<double> tape;
    const auto wi = tape.leaf(e.image_w);
    const auto wt = tape.leaf(e.text_w);
    const auto zi = ad::l2_normalize_rows(ad::matmul(tape.constant(xi), wi));
    const auto zt = ad::l2_normalize_rows(ad::matmul(tape.constant(xt), wt));
    tape.backward(itc_loss(zi, zt, options.tau));
    adamw_update(e.image_w, Eigen::MatrixXd(wi.grad()), mi, vi, it, options.lr, adam, false);
    adamw_update(e.text_w, Eigen::MatrixXd(wt.grad()), mt, vt, it, options.lr, adam, false);
  }

  const Eigen::MatrixXd zt_frozen = normalize_rows(xt * e.text_w);
  Eigen::MatrixXd mm = Eigen::MatrixXd::Zero(e.music_w.rows(), options.dim), vm = mm;
  for (int it = 1; it <= options.iterations; ++it) {
    ad::Tape<double> tape;
    const auto wm = tape.leaf(e.music_w);
    const auto zm = ad::l2_normalize_rows(ad::matmul(tape.constant(xm), wm));
    tape.backward(itc_loss(zm, tape.constant(zt_frozen), options.tau));
    adamw_update(e.music_w, Eigen::MatrixXd(wm.grad()), mm, vm, it, options.lr, adam, false);
  }
  return e;
}

}  // namespace melsyn
