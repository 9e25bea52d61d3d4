#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "melsyn/corpus.hpp"
#include "melsyn/diffusion.hpp"
#include "melsyn/training.hpp"

namespace melsyn {

struct ScheduleSection {
  ScheduleKind kind = ScheduleKind::linear;
  int T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct DenoiserSection {
  std::vector<Index> widths{32, 32, 32};        // music model
  std::vector<Index> image_widths{32, 32, 32};  // image model
  Index d_k = 16;
  Index time_width = 32;
  Index groups = 4;
  std::uint64_t seed = 1;
};

struct CodecSection {
  StftConfig stft;
  Index patch = 4;        // spectrogram patch r
  Index image_patch = 4;  // image patch
  Index text_tokens = 8;
  Index text_width = 16;
  std::uint64_t vocab = 4096;
  std::uint64_t seed = 7;
  double music_scale = 1.0;
  double image_scale = 1.0;
};

struct MetricsSection {
  double imsm_sharpness = 10.0;
  Index embed_dim = 16;
  double tau = 0.1;
  int embed_iterations = 300;
  int classifier_iterations = 500;
  int eval_items = 0;  // test items used by eval and sampling ablations; 0 = all
};

/// One JSON document with every tunable. Unknown keys are rejected.
struct RunConfig {
  ScheduleSection schedule;
  DenoiserSection denoiser;
  SynapseConfig synapse;
  CodecSection codecs;
  TrainConfig training;
  SamplerConfig sampler;
  CorpusConfig corpus;  // its stft geometry is taken from `codecs`
  MetricsSection metrics;

  void validate() const;
  std::string hash() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace melsyn
