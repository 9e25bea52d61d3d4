#pragma once

#include <string>
#include <utility>
#include <vector>

#include "melsyn/numerics.hpp"

namespace melsyn {

/// Block ids shared by taps and gates: encoder block i is layer i, decoder
/// block j is layer n_blocks + j.
inline int encoder_layer(int i) { return i; }
inline int decoder_layer(int n_blocks, int j) { return n_blocks + j; }

struct SynapsePlacement {
  bool couple_encoder = false;
  bool couple_decoder = true;
  bool per_block = true;
};

/// learned: alpha = sigmoid(raw). fixed: constant alpha (0 and 1 included).
/// bypass: injection skipped entirely, the alpha -> 0 limit taken as a switch.
enum class GateMode { learned, fixed, bypass };

GateMode parse_gate_mode(const std::string& name);
std::string to_string(GateMode mode);

struct SynapseConfig {
  bool enabled = true;
  SynapsePlacement placement;
  GateMode mode = GateMode::learned;
  double fixed_alpha = 0.5;
  double init_raw = 0.0;
};

class SynapseParams {
 public:
  SynapseParams() = default;
  SynapseParams(const SynapseConfig& config, int n_blocks);

  const SynapseConfig& config() const noexcept { return config_; }
  /// Layers receiving injected features, ascending.
  const std::vector<int>& layers() const noexcept { return layers_; }
  bool injects() const noexcept { return config_.enabled && config_.mode != GateMode::bypass && !layers_.empty(); }
  bool coupled(int layer) const;

  /// Position of the gate scalar used by `layer` (0 for a shared gate).
  std::size_t slot(int layer) const;
  double gate(int layer) const;
  std::vector<double> alphas() const;

  Eigen::VectorXd& raw() noexcept { return raw_; }
  const Eigen::VectorXd& raw() const noexcept { return raw_; }
  void set_mode(GateMode mode, double fixed_alpha = 0.5);

 private:
  SynapseConfig config_;
  int n_blocks_ = 0;
  std::vector<int> layers_;
  Eigen::VectorXd raw_;
};

double sigmoid(double x) noexcept;

/// (alpha * kI + (1 - alpha) * kM, alpha * vI + (1 - alpha) * vM)
template <typename Scalar>
std::pair<MatrixX<Scalar>, MatrixX<Scalar>> fuse(const MatrixX<Scalar>& kM, const MatrixX<Scalar>& vM,
                                                 const MatrixX<Scalar>& kI, const MatrixX<Scalar>& vI, double alpha);

/// Linear interpolation along the token axis with endpoints aligned: output
/// row j samples input coordinate j (m - 1) / (s - 1). For s = 1 the midpoint.
template <typename Scalar>
MatrixX<Scalar> resample_tokens(const MatrixX<Scalar>& features, Index target_tokens);

}  // namespace melsyn
