#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include <Eigen/QR>

#include "melsyn/codecs.hpp"

using namespace melsyn;

namespace {

Eigen::VectorXd tone(double freq, int sample_rate, Index n) {
  Eigen::VectorXd x(n);
  for (Index i = 0; i < n; ++i) x[i] = std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / sample_rate);
  return x;
}

/// Least-squares fit of a*cos + b*sin at `freq`: the phase-aligned reference.
Eigen::VectorXd aligned_reference(const Eigen::VectorXd& y, double freq, int sample_rate) {
  Eigen::MatrixXd basis(y.size(), 2);
  for (Index i = 0; i < y.size(); ++i) {
    const double ph = 2.0 * std::numbers::pi * freq * static_cast<double>(i) / sample_rate;
    basis(i, 0) = std::cos(ph);
    basis(i, 1) = std::sin(ph);
  }
  const Eigen::Vector2d coef = basis.colPivHouseholderQr().solve(y);
  return basis * coef;
}

}  // namespace

TEST_CASE("zero waveform gives a zero spectrogram") {
  StftConfig g;
  auto s = stft_spectrogram(Eigen::VectorXd::Zero(g.samples()), g);
  CHECK(s.values.rows() == 64);
  CHECK(s.values.cols() == 64);
  CHECK(s.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bin-centred sinusoid concentrates its energy") {
  StftConfig g;
  const Index bin = 10;
  const double freq = static_cast<double>(bin) * g.sample_rate / static_cast<double>(g.window);
  auto s = stft_spectrogram(tone(freq, g.sample_rate, g.samples()), g);
  const Eigen::MatrixXd e = s.values.cwiseAbs2();
  const double near = e.middleCols(bin - 1, 3).sum();
  CHECK(near / e.sum() >= 0.9);
}

TEST_CASE("Parseval on white noise") {
  StftConfig g;
  Rng rng(11);
  Eigen::VectorXd x = gaussian_matrix<double>(rng, g.samples(), 1);
  auto s = stft_spectrogram(x, g);
  const Eigen::VectorXd w = hann_window(g.window);
  double windowed = 0.0;
  for (Index m = 0; m < g.frames; ++m) windowed += (x.segment(m * g.hop, g.window).cwiseProduct(w)).squaredNorm();
  CHECK(std::abs(spectrogram_energy(s.values, g.window) / windowed - 1.0) < 0.05);
}

TEST_CASE("short waveform is rejected") {
  StftConfig g;
  CHECK_THROWS_AS(stft_spectrogram(Eigen::VectorXd::Zero(10), g), ShapeError);
}

TEST_CASE("spectrogram patch codec round trip, shape and isometry") {
  PatchCodec codec(4, 1, 3);
  CHECK((codec.basis().transpose() * codec.basis() - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-10);
  Rng rng(12);
  StftConfig g;
  Spectrogram s{gaussian_matrix<double>(rng, 64, 64).cwiseAbs(), g};
  auto z = encode_latent<double>(codec, s);
  CHECK(z.dims() == Shape{16, 16, 16});
  CHECK(std::abs(z.data().norm() - s.values.norm()) < 1e-5);
  auto back = decode_latent(codec, z, g);
  CHECK((back.values - s.values).cwiseAbs().maxCoeff() < 1e-5);
  Spectrogram odd{Eigen::MatrixXd::Zero(62, 64), g};
  CHECK_THROWS_AS(encode_latent<double>(codec, odd), ShapeError);
}

TEST_CASE("image patch codec round trip, shape and isometry") {
  PatchCodec codec(4, 3, 5);
  Rng rng(13);
  Tensor<double> img({32, 32, 3}, gaussian_sample<double>(rng, {32 * 32 * 3}).data());
  auto z = encode_image(codec, img);
  CHECK(z.dims() == Shape{48, 8, 8});
  CHECK(std::abs(z.data().norm() - img.data().norm()) < 1e-5);
  CHECK((codec.decode(z).data() - img.data()).cwiseAbs().maxCoeff() < 1e-5);
  CHECK_THROWS_AS(encode_image(codec, Tensor<double>({30, 32, 3})), ShapeError);
}

TEST_CASE("text embedding") {
  TextEmbedder emb(8, 16, 4096, 9);
  const auto a = emb.embed("a jazz piece at slow tempo");
  CHECK(a == emb.embed("a jazz piece at slow tempo"));
  CHECK(a.rows() == 8);
  CHECK((a - emb.embed("a rock piece at slow tempo")).norm() > 0.0);
  CHECK(emb.embed("A JAZZ piece, at slow tempo!") == a);
  TextEmbedder small(2, 16, 4096, 9);
  CHECK(small.embed("one two three four").rows() == 2);
  CHECK(small.embed("one two three four") == small.embed("one two five"));
  CHECK_THROWS(emb.embed(" ,.; "));
}

TEST_CASE("Griffin-Lim on silence returns silence") {
  StftConfig g;
  g.frames = 16;
  Spectrogram s{Eigen::MatrixXd::Zero(16, g.bins()), g};
  auto x = griffin_lim(s, 5);
  CHECK(x.size() == g.samples());
  CHECK(x.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Griffin-Lim recovers a 440 Hz tone above 20 dB") {
  StftConfig g;
  g.frames = 120;
  const Eigen::VectorXd x = tone(440.0, g.sample_rate, g.samples());
  auto s = stft_spectrogram(x, g);
  std::vector<double> errors;
  auto y = griffin_lim(s, 60, &errors);
  // Edges are covered by a single tapered frame; compare the interior.
  const Index lo = g.window, n = y.size() - 2 * g.window;
  const Eigen::VectorXd mid = y.segment(lo, n);
  const Eigen::VectorXd ref = aligned_reference(mid, 440.0, g.sample_rate);
  const double snr = 10.0 * std::log10(ref.squaredNorm() / (mid - ref).squaredNorm());
  MESSAGE("440 Hz SNR " << snr << " dB");
  CHECK(snr > 20.0);
  for (std::size_t i = 1; i < errors.size(); ++i) CHECK(errors[i] <= errors[i - 1] + 1e-6);
}

TEST_CASE("Griffin-Lim inconsistency does not increase on noise magnitudes") {
  StftConfig g;
  g.frames = 32;
  Rng rng(14);
  Spectrogram s{gaussian_matrix<double>(rng, 32, g.bins()).cwiseAbs(), g};
  std::vector<double> errors;
  griffin_lim(s, 40, &errors);
  for (std::size_t i = 1; i < errors.size(); ++i) CHECK(errors[i] <= errors[i - 1] + 1e-6);
  CHECK(errors.back() < errors.front());
}

TEST_CASE("WAV round trip") {
  const auto path = std::filesystem::temp_directory_path() / "melsyn_wav_roundtrip.wav";
  Eigen::VectorXd x = tone(440.0, 16000, 800) * 0.5;
  write_wav(path, x, 16000);
  int rate = 0;
  auto y = read_wav(path, &rate);
  CHECK(rate == 16000);
  CHECK((x - y).cwiseAbs().maxCoeff() < 1.0 / 32767.0);
  std::filesystem::remove(path);
}
