#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "melsyn/codecs.hpp"

namespace melsyn {

// Factor-to-signal constants. With G genres and F frequency bins:
//   fundamental bin    k0(g) = g * max(1, (F - 1) / (2G))
//   harmonic amplitude a_h  = h^(-2 + 2.5 b), normalized to unit energy,
//                             harmonics kept below the Nyquist bin
//   envelope           e(t) = 0.15 + 0.85 (0.5 + 0.5 cos(2 pi tempo t))
//   noise              N(0, 0.01^2) per sample
//   image              0.5 gray; rows [H/4, H/2) colored hue((g - 1) / G);
//                      rows [H/2, H) gray level b; texture U(-0.03, 0.03); clamped to [0, 1]
//   caption            "a {genre word} piece at {slow|moderate|fast} tempo"
//                      slow: tempo < 8, moderate: tempo < 12, fast otherwise

struct LatentFactors {
  int genre = 1;            // 1..G
  double tempo = 8.0;       // beats per second in [4, 16]
  double brightness = 0.5;  // [0, 1]
};

enum class Split { train, val, test };
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct TripletRecord {
  std::string id;
  int genre = 1;
  std::string caption;
  std::filesystem::path image_path;
  std::filesystem::path spectrogram_path;
  std::filesystem::path waveform_path;  // empty when absent
  Split split = Split::train;
  std::optional<LatentFactors> factors;
};

struct CorpusConfig {
  int n_items = 1500;
  int genres = 15;
  std::array<double, 3> split_fracs{0.6, 0.2, 0.2};
  std::uint64_t seed = 1;
  Index image_height = 32;
  Index image_width = 32;
  double noise = 0.01;
  StftConfig stft;

  void validate() const;
};

std::string genre_word(int genre);
std::string tempo_word(double tempo);
std::string make_caption(const LatentFactors& f);

struct TripletAssets {
  Tensor<float> image;  // H x W x 3 in [0, 1]
  std::string caption;
  Eigen::VectorXd waveform;
  Spectrogram spectrogram;
};

void check_factors(const LatentFactors& f, int genres);

/// Renders image, caption and music for one set of factors.
TripletAssets generate_triplet(const LatentFactors& f, const CorpusConfig& config, Rng& rng);

/// Draws balanced factors and exact split counts, renders every item under
/// `out_dir` (images/, spectrograms/, audio/) and writes manifest.jsonl.
std::vector<TripletRecord> build_corpus(const CorpusConfig& config, const std::filesystem::path& out_dir);

/// Loads and validates a JSONL manifest; asset paths resolve against the
/// manifest's directory. Unknown keys are ignored.
std::vector<TripletRecord> load_manifest(const std::filesystem::path& path, int genres = 15);

void write_manifest(const std::filesystem::path& path, const std::vector<TripletRecord>& records);

Tensor<float> load_image(const TripletRecord& record);
Spectrogram load_spectrogram(const TripletRecord& record, const StftConfig& geometry);

std::vector<TripletRecord> filter_split(const std::vector<TripletRecord>& records, Split split);

}  // namespace melsyn
