#pragma once

#include "melsyn/denoiser.hpp"

namespace melsyn::testing {

inline DenoiserConfig tiny_denoiser() {
  DenoiserConfig c;
  c.channels = 4;
  c.height = 4;
  c.width = 4;
  c.widths = {8, 8, 8};
  c.d_k = 4;
  c.d_c = 4;
  c.text_tokens = 2;
  c.time_width = 4;
  c.groups = 2;
  return c;
}

/// Randomizes the zero-initialized output convolution so every upstream
/// parameter receives a nonzero gradient.
template <typename Scalar>
void wake_output(ParamSet<Scalar>& params, Rng& rng) {
  auto& w = params.at("out.conv.w");
  w = gaussian_matrix<Scalar>(rng, w.rows(), w.cols()) * Scalar(0.3);
  auto& b = params.at("out.conv.b");
  b = gaussian_matrix<Scalar>(rng, b.rows(), b.cols()) * Scalar(0.1);
}

}  // namespace melsyn::testing
