#pragma once

#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include "melsyn/numerics.hpp"

namespace melsyn {

/// Frame geometry shared by analysis and resynthesis. `frames` is the
/// configured E; `window / 2 + 1` is F.
struct StftConfig {
  int sample_rate = 16000;
  Index window = 126;
  Index hop = 63;
  Index frames = 64;

  Index bins() const noexcept { return window / 2 + 1; }
  /// Waveform length that yields exactly `frames` frames.
  Index samples() const noexcept { return window + (frames - 1) * hop; }
  void validate() const;
};

/// Magnitudes, E x F (time slots by frequency slots).
struct Spectrogram {
  Eigen::MatrixXd values;
  StftConfig geometry;
};

/// Periodic Hann window.
Eigen::VectorXd hann_window(Index length);

/// Complex one-sided STFT, frames x (window / 2 + 1), no padding.
Eigen::MatrixXcd stft(const Eigen::VectorXd& waveform, Index window, Index hop);

/// Least-squares inverse: overlap-add of windowed frames divided by the summed
/// squared window. Samples no frame covers come out as zero. A nonzero
/// `edge_floor` clamps the divisor at that fraction of its maximum, which
/// tapers the thinly covered ends instead of amplifying them.
Eigen::VectorXd istft(const Eigen::MatrixXcd& frames, Index window, Index hop, Index length, double edge_floor = 0.0);

/// Initial phases for Griffin-Lim: every bin takes the phase of its nearest
/// magnitude peak, advanced frame to frame at the peak's estimated frequency.
Eigen::MatrixXd peak_locked_phase(const Eigen::MatrixXd& magnitudes, Index hop, Index window);

/// |STFT| cropped or zero-padded to the configured frame count.
Spectrogram stft_spectrogram(const Eigen::VectorXd& waveform, const StftConfig& geometry);

/// Sum over frames of the two-sided spectral energy divided by the window
/// length, which equals the windowed signal energy for an unclipped frame set.
double spectrogram_energy(const Eigen::MatrixXd& magnitudes, Index window);

/// Classic Griffin-Lim (no momentum) from peak-locked initial phases.
/// `errors`, when given, receives the spectral inconsistency (two-sided
/// weighting) after each iteration. The returned waveform tapers the ends.
Eigen::VectorXd griffin_lim(const Spectrogram& s, int iterations, std::vector<double>* errors = nullptr);

/// Orthonormal patch transform: each r x r x ch patch is projected on a
/// seeded orthonormal basis, giving ch * r^2 latent channels.
class PatchCodec {
 public:
  PatchCodec(Index patch, Index in_channels, std::uint64_t seed);

  Index patch() const noexcept { return patch_; }
  Index in_channels() const noexcept { return in_channels_; }
  Index latent_channels() const noexcept { return patch_ * patch_ * in_channels_; }
  const Eigen::MatrixXd& basis() const noexcept { return basis_; }

  /// H x W x ch row-major planes to (C, H / r, W / r).
  template <typename Scalar>
  Tensor<Scalar> encode(const Tensor<Scalar>& planes) const;
  /// Inverse of encode; returns H x W x ch.
  template <typename Scalar>
  Tensor<Scalar> decode(const Tensor<Scalar>& latent) const;

 private:
  Index patch_;
  Index in_channels_;
  Eigen::MatrixXd basis_;
};

/// Spectrogram (E x F, single channel) to latent and back.
template <typename Scalar>
Tensor<Scalar> encode_latent(const PatchCodec& codec, const Spectrogram& s);
Spectrogram decode_latent(const PatchCodec& codec, const Tensor<double>& latent, const StftConfig& geometry);

/// Image stored as H x W x ch.
template <typename Scalar>
Tensor<Scalar> encode_image(const PatchCodec& codec, const Tensor<Scalar>& image);

/// Hashed token embeddings plus positional offsets, padded or truncated to a
/// fixed number of tokens. Rows are generated from the seed on demand.
class TextEmbedder {
 public:
  TextEmbedder(Index tokens, Index width, std::uint64_t vocab, std::uint64_t seed);

  Index tokens() const noexcept { return tokens_; }
  Index width() const noexcept { return width_; }

  static std::vector<std::string> tokenize(const std::string& caption);
  template <typename Scalar = double>
  MatrixX<Scalar> embed(const std::string& caption) const;

 private:
  Eigen::RowVectorXd row(std::uint64_t stream) const;

  Index tokens_;
  Index width_;
  std::uint64_t vocab_;
  std::uint64_t seed_;
};

template <typename Scalar = double>
MatrixX<Scalar> embed_text(const TextEmbedder& embedder, const std::string& caption) {
  return embedder.embed<Scalar>(caption);
}

// ---- WAV (PCM 16-bit little-endian mono)

void write_wav(const std::filesystem::path& path, const Eigen::VectorXd& samples, int sample_rate);
std::vector<std::uint8_t> encode_wav(const Eigen::VectorXd& samples, int sample_rate);
Eigen::VectorXd read_wav(const std::filesystem::path& path, int* sample_rate = nullptr);

}  // namespace melsyn
