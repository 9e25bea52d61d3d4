#include "melsyn/codecs.hpp"

#include <unsupported/Eigen/FFT>

#include <Eigen/QR>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>

namespace melsyn {

namespace {

Eigen::FFT<double> make_fft() {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  return fft;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

}  // namespace

void StftConfig::validate() const {
  if (window < 2 || window % 2 != 0) throw ConfigError("codecs.window", "window must be even and at least 2");
  if (hop < 1 || hop > window) throw ConfigError("codecs.hop", "hop must lie in [1, window]");
  if (frames < 1) throw ConfigError("codecs.frames", "frames must be positive");
  if (sample_rate < 1) throw ConfigError("codecs.sample_rate", "sample rate must be positive");
}

Eigen::VectorXd hann_window(Index length) {
  Eigen::VectorXd w(length);
  for (Index n = 0; n < length; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(length));
  }
  return w;
}

Eigen::MatrixXcd stft(const Eigen::VectorXd& waveform, Index window, Index hop) {
  if (waveform.size() < window) {
    throw ShapeError("stft: waveform of " + std::to_string(waveform.size()) + " samples is shorter than the window");
  }
  const Index frames = (waveform.size() - window) / hop + 1;
  const Index bins = window / 2 + 1;
  const Eigen::VectorXd w = hann_window(window);
  auto fft = make_fft();
  Eigen::MatrixXcd out(frames, bins);
  std::vector<double> frame(static_cast<std::size_t>(window));
  std::vector<std::complex<double>> spec;
  for (Index m = 0; m < frames; ++m) {
    for (Index n = 0; n < window; ++n) frame[static_cast<std::size_t>(n)] = waveform[m * hop + n] * w[n];
    fft.fwd(spec, frame);
    for (Index k = 0; k < bins; ++k) out(m, k) = spec[static_cast<std::size_t>(k)];
  }
  return out;
}

Eigen::VectorXd istft(const Eigen::MatrixXcd& frames, Index window, Index hop, Index length, double edge_floor) {
  if (frames.cols() != window / 2 + 1) throw ShapeError("istft: bin count does not match the window");
  const Eigen::VectorXd w = hann_window(window);
  auto fft = make_fft();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(length);
  Eigen::VectorXd norm = Eigen::VectorXd::Zero(length);
  std::vector<std::complex<double>> spec(static_cast<std::size_t>(frames.cols()));
  std::vector<double> frame;
  for (Index m = 0; m < frames.rows(); ++m) {
    for (Index k = 0; k < frames.cols(); ++k) spec[static_cast<std::size_t>(k)] = frames(m, k);
    fft.inv(frame, spec, window);
    for (Index n = 0; n < window; ++n) {
      const Index i = m * hop + n;
      if (i >= length) break;
      acc[i] += w[n] * frame[static_cast<std::size_t>(n)];
      norm[i] += w[n] * w[n];
    }
  }
  const double floor = edge_floor * norm.maxCoeff();
  for (Index i = 0; i < length; ++i) acc[i] = norm[i] > 1e-10 ? acc[i] / std::max(norm[i], floor) : 0.0;
  return acc;
}

Spectrogram stft_spectrogram(const Eigen::VectorXd& waveform, const StftConfig& geometry) {
  geometry.validate();
  const Eigen::MatrixXd mags = stft(waveform, geometry.window, geometry.hop).cwiseAbs();
  Spectrogram s{Eigen::MatrixXd::Zero(geometry.frames, geometry.bins()), geometry};
  const Index keep = std::min(geometry.frames, mags.rows());
  s.values.topRows(keep) = mags.topRows(keep);
  return s;
}

double spectrogram_energy(const Eigen::MatrixXd& magnitudes, Index window) {
  const Index bins = magnitudes.cols();
  double total = 0.0;
  for (Index k = 0; k < bins; ++k) {
    const double weight = (k == 0 || (window % 2 == 0 && k == bins - 1)) ? 1.0 : 2.0;
    total += weight * magnitudes.col(k).squaredNorm();
  }
  return total / static_cast<double>(window);
}

Eigen::MatrixXd peak_locked_phase(const Eigen::MatrixXd& mags, Index hop, Index window) {
  const Index frames = mags.rows(), bins = mags.cols();
  Eigen::MatrixXd phase = Eigen::MatrixXd::Zero(frames, bins);
  Eigen::VectorXd psi_prev = Eigen::VectorXd::Zero(bins);
  std::vector<Index> peaks;
  for (Index m = 0; m < frames; ++m) {
    const auto s = mags.row(m);
    peaks.clear();
    for (Index k = 0; k < bins; ++k) {
      const bool rise = k == 0 || s[k] >= s[k - 1];
      const bool fall = k == bins - 1 || s[k] > s[k + 1];
      if (s[k] > 0.0 && rise && fall) peaks.push_back(k);
    }
    Eigen::VectorXd psi = Eigen::VectorXd::Zero(bins);
    if (peaks.empty()) {
      psi_prev = psi;
      continue;
    }
    std::size_t nearest = 0;
    for (Index k = 0; k < bins; ++k) {
      while (nearest + 1 < peaks.size() && std::abs(peaks[nearest + 1] - k) < std::abs(peaks[nearest] - k)) ++nearest;
      const Index p = peaks[nearest];
      double offset = 0.0;
      if (p > 0 && p < bins - 1) {
        // Two-bin Hann estimator of the fractional peak position.
        const bool right = s[p + 1] >= s[p - 1];
        const double ratio = (right ? s[p + 1] : s[p - 1]) / s[p];
        offset = (right ? 1.0 : -1.0) * (2.0 * ratio - 1.0) / (ratio + 1.0);
      }
      const double k0 = static_cast<double>(p) + offset;
      psi[k] = psi_prev[p] + 2.0 * std::numbers::pi * k0 * static_cast<double>(hop) / static_cast<double>(window);
      phase(m, k) = psi[k] + std::numbers::pi * (k0 - static_cast<double>(k));
    }
    psi_prev = psi;
  }
  return phase;
}

Eigen::VectorXd griffin_lim(const Spectrogram& s, int iterations, std::vector<double>* errors) {
  if (iterations < 1) throw ConfigError("iterations", "Griffin-Lim needs at least one iteration");
  const auto& g = s.geometry;
  const Index length = g.window + (s.values.rows() - 1) * g.hop;
  const Eigen::MatrixXd& target = s.values;
  const Eigen::MatrixXd phase = peak_locked_phase(target, g.hop, g.window);
  Eigen::MatrixXcd estimate(target.rows(), target.cols());
  for (Index m = 0; m < target.rows(); ++m) {
    for (Index k = 0; k < target.cols(); ++k) estimate(m, k) = std::polar(target(m, k), phase(m, k));
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(length);
  for (int it = 0; it < iterations; ++it) {
    x = istft(estimate, g.window, g.hop, length);
    const Eigen::MatrixXcd rebuilt = stft(x, g.window, g.hop);
    for (Index m = 0; m < rebuilt.rows(); ++m) {
      for (Index k = 0; k < rebuilt.cols(); ++k) {
        const double mag = std::abs(rebuilt(m, k));
        const std::complex<double> phase = mag > 1e-12 ? rebuilt(m, k) / mag : std::complex<double>(1.0, 0.0);
        estimate(m, k) = target(m, k) * phase;
      }
    }
    if (errors) errors->push_back(spectrogram_energy((rebuilt.cwiseAbs() - target).eval(), g.window));
  }
  return istft(estimate, g.window, g.hop, length, 0.1);
}

// ---- PatchCodec

PatchCodec::PatchCodec(Index patch, Index in_channels, std::uint64_t seed) : patch_(patch), in_channels_(in_channels) {
  if (patch < 1 || in_channels < 1) throw ConfigError("codecs.patch", "patch size and channel count must be positive");
  Rng rng(seed);
  const Index n = latent_channels();
  const Eigen::MatrixXd g = gaussian_matrix<double>(rng, n, n);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  basis_ = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
}

template <typename Scalar>
Tensor<Scalar> PatchCodec::encode(const Tensor<Scalar>& planes) const {
  if (planes.rank() != 3 || planes.dim(2) != in_channels_) {
    throw ShapeError("patch encode: expected H x W x " + std::to_string(in_channels_) + ", got " + shape_string(planes.dims()));
  }
  const Index h = planes.dim(0), w = planes.dim(1), ch = in_channels_, r = patch_;
  if (h % r != 0 || w % r != 0) {
    throw ShapeError("patch encode: " + shape_string(planes.dims()) + " not divisible by patch " + std::to_string(r));
  }
  const Index gh = h / r, gw = w / r, c = latent_channels();
  Tensor<Scalar> out({c, gh, gw});
  Eigen::VectorXd p(c);
  for (Index i = 0; i < gh; ++i) {
    for (Index j = 0; j < gw; ++j) {
      for (Index dy = 0; dy < r; ++dy)
        for (Index dx = 0; dx < r; ++dx)
          for (Index k = 0; k < ch; ++k) p[(dy * r + dx) * ch + k] = static_cast<double>(planes[((i * r + dy) * w + j * r + dx) * ch + k]);
      const Eigen::VectorXd coef = basis_.transpose() * p;
      for (Index q = 0; q < c; ++q) out[(q * gh + i) * gw + j] = static_cast<Scalar>(coef[q]);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> PatchCodec::decode(const Tensor<Scalar>& latent) const {
  const Index c = latent_channels();
  if (latent.rank() != 3 || latent.dim(0) != c) {
    throw ShapeError("patch decode: expected " + std::to_string(c) + " channels, got " + shape_string(latent.dims()));
  }
  const Index gh = latent.dim(1), gw = latent.dim(2), r = patch_, ch = in_channels_;
  const Index w = gw * r;
  Tensor<Scalar> out({gh * r, w, ch});
  Eigen::VectorXd coef(c);
  for (Index i = 0; i < gh; ++i) {
    for (Index j = 0; j < gw; ++j) {
      for (Index q = 0; q < c; ++q) coef[q] = static_cast<double>(latent[(q * gh + i) * gw + j]);
      const Eigen::VectorXd p = basis_ * coef;
      for (Index dy = 0; dy < r; ++dy)
        for (Index dx = 0; dx < r; ++dx)
          for (Index k = 0; k < ch; ++k) out[((i * r + dy) * w + j * r + dx) * ch + k] = static_cast<Scalar>(p[(dy * r + dx) * ch + k]);
    }
  }
  return out;
}

template Tensor<float> PatchCodec::encode(const Tensor<float>&) const;
template Tensor<double> PatchCodec::encode(const Tensor<double>&) const;
template Tensor<float> PatchCodec::decode(const Tensor<float>&) const;
template Tensor<double> PatchCodec::decode(const Tensor<double>&) const;

template <typename Scalar>
Tensor<Scalar> encode_latent(const PatchCodec& codec, const Spectrogram& s) {
  if (codec.in_channels() != 1) throw ConfigError("codecs.patch", "spectrogram codec must have one input channel");
  const Index e = s.values.rows(), f = s.values.cols();
  Tensor<Scalar> planes({e, f, 1});
  for (Index i = 0; i < e; ++i)
    for (Index k = 0; k < f; ++k) planes[i * f + k] = static_cast<Scalar>(s.values(i, k));
  return codec.encode(planes);
}

Spectrogram decode_latent(const PatchCodec& codec, const Tensor<double>& latent, const StftConfig& geometry) {
  const Tensor<double> planes = codec.decode(latent);
  const Index e = planes.dim(0), f = planes.dim(1);
  Spectrogram s{Eigen::MatrixXd(e, f), geometry};
  for (Index i = 0; i < e; ++i)
    for (Index k = 0; k < f; ++k) s.values(i, k) = planes[i * f + k];
  return s;
}

template Tensor<float> encode_latent(const PatchCodec&, const Spectrogram&);
template Tensor<double> encode_latent(const PatchCodec&, const Spectrogram&);

template <typename Scalar>
Tensor<Scalar> encode_image(const PatchCodec& codec, const Tensor<Scalar>& image) {
  return codec.encode(image);
}

template Tensor<float> encode_image(const PatchCodec&, const Tensor<float>&);
template Tensor<double> encode_image(const PatchCodec&, const Tensor<double>&);

// ---- TextEmbedder

TextEmbedder::TextEmbedder(Index tokens, Index width, std::uint64_t vocab, std::uint64_t seed)
    : tokens_(tokens), width_(width), vocab_(vocab), seed_(seed) {
  if (tokens < 1 || width < 1 || vocab < 1) throw ConfigError("codecs.text", "text embedder dimensions must be positive");
}

std::vector<std::string> TextEmbedder::tokenize(const std::string& caption) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : caption) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Eigen::RowVectorXd TextEmbedder::row(std::uint64_t stream) const {
  Rng rng = Rng(seed_).split(stream);
  return gaussian_matrix<double>(rng, 1, width_) / std::sqrt(static_cast<double>(width_));
}

template <typename Scalar>
MatrixX<Scalar> TextEmbedder::embed(const std::string& caption) const {
  const auto words = tokenize(caption);
  if (words.empty()) throw Error("embed_text: caption has no tokens");
  Eigen::MatrixXd out(tokens_, width_);
  for (Index i = 0; i < tokens_; ++i) {
    const std::string& word = i < static_cast<Index>(words.size()) ? words[static_cast<std::size_t>(i)] : std::string("<pad>");
    const std::uint64_t id = fnv1a64(word) % vocab_;
    out.row(i) = row(id) + 0.5 * row(vocab_ + static_cast<std::uint64_t>(i));
  }
  return out.cast<Scalar>();
}

template MatrixX<float> TextEmbedder::embed<float>(const std::string&) const;
template MatrixX<double> TextEmbedder::embed<double>(const std::string&) const;

// ---- WAV

std::vector<std::uint8_t> encode_wav(const Eigen::VectorXd& samples, int sample_rate) {
  const auto n = static_cast<std::uint32_t>(samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  for (char c : std::string("RIFF")) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, 36 + 2 * n);
  for (char c : std::string("WAVEfmt ")) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  for (char c : std::string("data")) out.push_back(static_cast<std::uint8_t>(c));
  put_u32(out, 2 * n);
  for (Index i = 0; i < samples.size(); ++i) {
    const double v = std::clamp(samples[i], -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(v * 32767.0));
    put_u16(out, static_cast<std::uint16_t>(q));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const Eigen::VectorXd& samples, int sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

Eigen::VectorXd read_wav(const std::filesystem::path& path, int* sample_rate) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (b.size() < 12 || std::string(b.begin(), b.begin() + 4) != "RIFF" || std::string(b.begin() + 8, b.begin() + 12) != "WAVE") {
    throw IoError(path.string() + " is not a RIFF/WAVE file");
  }
  std::size_t at = 12;
  int rate = 0, bits = 0, channels = 0;
  while (at + 8 <= b.size()) {
    const std::string id(b.begin() + static_cast<std::ptrdiff_t>(at), b.begin() + static_cast<std::ptrdiff_t>(at + 4));
    const std::uint32_t len = get_u32(b, at + 4);
    at += 8;
    if (at + len > b.size()) throw IoError(path.string() + ": truncated chunk " + id);
    if (id == "fmt ") {
      channels = b[at + 2] | b[at + 3] << 8;
      rate = static_cast<int>(get_u32(b, at + 4));
      bits = b[at + 14] | b[at + 15] << 8;
    } else if (id == "data") {
      if (bits != 16 || channels != 1) throw IoError(path.string() + ": only 16-bit mono PCM is supported");
      Eigen::VectorXd out(len / 2);
      for (Index i = 0; i < out.size(); ++i) {
        const auto u = static_cast<std::uint16_t>(b[at + 2 * i] | b[at + 2 * i + 1] << 8);
        out[i] = static_cast<std::int16_t>(u) / 32767.0;
      }
      if (sample_rate) *sample_rate = rate;
      return out;
    }
    at += len + (len & 1);
  }
  throw IoError(path.string() + ": no data chunk");
}

}  // namespace melsyn
