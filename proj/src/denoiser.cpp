#include "melsyn/denoiser.hpp"

#include <cmath>

namespace melsyn {

namespace {

std::string block_name(int n_blocks, int layer) {
  return layer < n_blocks ? "enc" + std::to_string(layer) : "dec" + std::to_string(layer - n_blocks);
}

template <typename Scalar>
void add_weight(ParamSet<Scalar>& ps, Rng& rng, const std::string& name, Index rows, Index cols) {
  const Scalar s = Scalar(1) / std::sqrt(static_cast<Scalar>(rows));
  ps.add(name, gaussian_matrix<Scalar>(rng, rows, cols) * s);
}

template <typename Scalar>
void add_norm(ParamSet<Scalar>& ps, const std::string& prefix, Index c) {
  ps.add(prefix + ".g", MatrixX<Scalar>::Ones(1, c), false);
  ps.add(prefix + ".b", MatrixX<Scalar>::Zero(1, c));
}

template <typename Scalar>
void add_resblock(ParamSet<Scalar>& ps, Rng& rng, const std::string& p, Index cin, Index cout, Index tw) {
  add_norm(ps, p + ".gn1", cin);
  add_weight(ps, rng, p + ".conv1.w", 9 * cin, cout);
  ps.add(p + ".conv1.b", MatrixX<Scalar>::Zero(1, cout));
  add_weight(ps, rng, p + ".temb.w", tw, cout);
  ps.add(p + ".temb.b", MatrixX<Scalar>::Zero(1, cout));
  add_norm(ps, p + ".gn2", cout);
  add_weight(ps, rng, p + ".conv2.w", 9 * cout, cout);
  ps.add(p + ".conv2.b", MatrixX<Scalar>::Zero(1, cout));
  if (cin != cout) {
    add_weight(ps, rng, p + ".skip.w", cin, cout);
    ps.add(p + ".skip.b", MatrixX<Scalar>::Zero(1, cout));
  }
}

template <typename Scalar>
void add_attention(ParamSet<Scalar>& ps, Rng& rng, const std::string& p, Index c, Index d_in_kv, Index dk) {
  add_norm(ps, p + ".gn", c);
  add_weight(ps, rng, p + ".wq", c, dk);
  add_weight(ps, rng, p + ".wk", d_in_kv, dk);
  add_weight(ps, rng, p + ".wv", d_in_kv, dk);
  add_weight(ps, rng, p + ".wo", dk, c);
}

template <typename Scalar>
struct Net {
  const DenoiserConfig& cfg;
  const BoundParams<Scalar>& p;
  ad::Var<Scalar> temb;

  ad::Var<Scalar> gn(const ad::Var<Scalar>& x, const std::string& prefix) const {
    return ad::group_norm(x, p(prefix + ".g"), p(prefix + ".b"), cfg.groups);
  }

  ad::Var<Scalar> resblock(const ad::Var<Scalar>& x, const std::string& q, int level) const {
    const Index h = cfg.level_height(level), w = cfg.level_width(level);
    auto y = ad::conv3x3(ad::silu(gn(x, q + ".gn1")), p(q + ".conv1.w"), p(q + ".conv1.b"), h, w);
    y = ad::add_row(y, ad::add(ad::matmul(temb, p(q + ".temb.w")), p(q + ".temb.b")));
    y = ad::conv3x3(ad::silu(gn(y, q + ".gn2")), p(q + ".conv2.w"), p(q + ".conv2.b"), h, w);
    if (x.cols() != y.cols()) return ad::add(y, ad::add_row(ad::matmul(x, p(q + ".skip.w")), p(q + ".skip.b")));
    return ad::add(y, x);
  }

  AttentionVars<Scalar> attn(const std::string& q) const {
    return {p(q + ".wq"), p(q + ".wk"), p(q + ".wv"), p(q + ".wo")};
  }

  ad::Var<Scalar> self_attn(const ad::Var<Scalar>& x, const std::string& q, TapVars<Scalar>* tap) const {
    auto r = self_attention(gn(x, q + ".gn"), attn(q));
    if (tap) *tap = {r.k, r.v};
    return ad::add(x, r.out);
  }

  ad::Var<Scalar> cross_attn(const ad::Var<Scalar>& x, const ad::Var<Scalar>& ctx, const std::string& q,
                             const InjectedKV<Scalar>* inj) const {
    return ad::add(x, cross_attention(gn(x, q + ".gn"), ctx, attn(q), inj));
  }
};

}  // namespace

void DenoiserConfig::validate() const {
  const int n = n_blocks();
  if (n < 1) throw ConfigError("denoiser.widths", "at least one block is required");
  if (channels < 1 || d_k < 1 || d_c < 1 || text_tokens < 1 || time_width < 2 || groups < 1) {
    throw ConfigError("denoiser", "dimensions must be positive");
  }
  const Index factor = Index(1) << (n - 1);
  if (height % factor != 0 || width % factor != 0) {
    throw ConfigError("denoiser.height", "latent grid must be divisible by 2^(blocks - 1)");
  }
  for (Index w : widths) {
    if (w < 1 || w % groups != 0) throw ConfigError("denoiser.widths", "every width must be a positive multiple of groups");
  }
}

template <typename Scalar>
RowVectorX<Scalar> timestep_embedding(int t, Index width) {
  if (t < 1) throw Error("timestep_embedding: t must be >= 1, got " + std::to_string(t));
  if (width < 2) throw Error("timestep_embedding: width must be >= 2");
  const Index half = width / 2;
  RowVectorX<Scalar> out = RowVectorX<Scalar>::Zero(width);
  for (Index k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out[k] = static_cast<Scalar>(std::sin(t * freq));
    out[half + k] = static_cast<Scalar>(std::cos(t * freq));
  }
  return out;
}

template <typename Scalar>
ParamSet<Scalar> init_denoiser(const DenoiserConfig& cfg, Rng& rng) {
  cfg.validate();
  const int n = cfg.n_blocks();
  const Index tw = cfg.time_width;
  const auto& w = cfg.widths;
  ParamSet<Scalar> ps;
  add_weight(ps, rng, "temb.w1", tw, tw);
  ps.add("temb.b1", MatrixX<Scalar>::Zero(1, tw));
  add_weight(ps, rng, "temb.w2", tw, tw);
  ps.add("temb.b2", MatrixX<Scalar>::Zero(1, tw));
  ps.add("null_text", gaussian_matrix<Scalar>(rng, cfg.text_tokens, cfg.d_c) / std::sqrt(static_cast<Scalar>(cfg.d_c)));
  add_weight(ps, rng, "conv_in.w", 9 * cfg.channels, w[0]);
  ps.add("conv_in.b", MatrixX<Scalar>::Zero(1, w[0]));
  for (int i = 0; i < n; ++i) {
    const std::string b = block_name(n, encoder_layer(i));
    add_resblock(ps, rng, b + ".res", i == 0 ? w[0] : w[i - 1], w[i], tw);
    add_attention(ps, rng, b + ".sa", w[i], w[i], cfg.d_k);
    add_attention(ps, rng, b + ".ca", w[i], cfg.d_c, cfg.d_k);
  }
  add_resblock(ps, rng, "mid.res", w[n - 1], w[n - 1], tw);
  add_attention(ps, rng, "mid.sa", w[n - 1], w[n - 1], cfg.d_k);
  add_attention(ps, rng, "mid.ca", w[n - 1], cfg.d_c, cfg.d_k);
  for (int j = 0; j < n; ++j) {
    const int level = n - 1 - j;
    const Index below = j == 0 ? w[n - 1] : w[level + 1];
    const std::string b = block_name(n, decoder_layer(n, j));
    add_resblock(ps, rng, b + ".res", below + w[level], w[level], tw);
    add_attention(ps, rng, b + ".sa", w[level], w[level], cfg.d_k);
    add_attention(ps, rng, b + ".ca", w[level], cfg.d_c, cfg.d_k);
  }
  add_norm(ps, "out.gn", w[0]);
  ps.add("out.conv.w", MatrixX<Scalar>::Zero(9 * w[0], cfg.channels));
  ps.add("out.conv.b", MatrixX<Scalar>::Zero(1, cfg.channels));
  return ps;
}

template <typename Scalar>
BoundParams<Scalar>::BoundParams(ad::Tape<Scalar>& tape, const ParamSet<Scalar>& params, bool trainable)
    : tape_(&tape), params_(&params) {
  vars_.reserve(params.size());
  for (const auto& p : params) vars_.push_back(trainable ? tape.leaf(p.value) : tape.constant(p.value));
}

template <typename Scalar>
DenoiserGraph<Scalar> denoiser_forward(const DenoiserConfig& cfg, const BoundParams<Scalar>& p,
                                       const ad::Var<Scalar>& z_tokens, const std::type_identity_t<ad::Var<Scalar>>* context, int t,
                                       const std::type_identity_t<std::map<int, InjectedKV<Scalar>>>* injected) {
  const int n = cfg.n_blocks();
  if (z_tokens.rows() != cfg.height * cfg.width || z_tokens.cols() != cfg.channels) {
    throw ShapeError("denoiser: latent tokens " + std::to_string(z_tokens.rows()) + "x" + std::to_string(z_tokens.cols()) +
                     " do not match config " + shape_string(cfg.latent_shape()));
  }
  if (context && (context->rows() != cfg.text_tokens || context->cols() != cfg.d_c)) {
    throw ShapeError("denoiser: text conditioning must be " + std::to_string(cfg.text_tokens) + "x" + std::to_string(cfg.d_c));
  }
  if (injected) {
    for (const auto& [layer, kv] : *injected) {
      if (layer < 0 || layer >= 2 * n) throw Error("denoiser: injected layer " + std::to_string(layer) + " not in config");
    }
  }
  auto& tape = p.tape();
  const ad::Var<Scalar> ctx = context ? *context : p("null_text");
  auto inj_at = [&](int layer) -> const InjectedKV<Scalar>* {
    if (!injected) return nullptr;
    auto it = injected->find(layer);
    return it == injected->end() ? nullptr : &it->second;
  };

  auto emb = tape.constant(timestep_embedding<Scalar>(t, cfg.time_width));
  auto temb = ad::add(ad::matmul(ad::silu(ad::add(ad::matmul(emb, p("temb.w1")), p("temb.b1"))), p("temb.w2")), p("temb.b2"));
  Net<Scalar> net{cfg, p, ad::silu(temb)};

  DenoiserGraph<Scalar> out;
  auto h = ad::conv3x3(z_tokens, p("conv_in.w"), p("conv_in.b"), cfg.height, cfg.width);
  std::vector<ad::Var<Scalar>> skips;
  for (int i = 0; i < n; ++i) {
    const int layer = encoder_layer(i);
    const std::string b = block_name(n, layer);
    h = net.resblock(h, b + ".res", i);
    TapVars<Scalar> tap;
    h = net.self_attn(h, b + ".sa", &tap);
    out.taps[layer] = tap;
    h = net.cross_attn(h, ctx, b + ".ca", inj_at(layer));
    skips.push_back(h);
    if (i + 1 < n) h = ad::avg_pool2(h, cfg.level_height(i), cfg.level_width(i));
  }
  h = net.resblock(h, "mid.res", n - 1);
  h = net.self_attn(h, "mid.sa", nullptr);
  h = net.cross_attn(h, ctx, "mid.ca", nullptr);
  for (int j = 0; j < n; ++j) {
    const int level = n - 1 - j;
    const int layer = decoder_layer(n, j);
    const std::string b = block_name(n, layer);
    if (j > 0) h = ad::upsample2(h, cfg.level_height(level + 1), cfg.level_width(level + 1));
    h = ad::concat_cols(h, skips[static_cast<std::size_t>(level)]);
    h = net.resblock(h, b + ".res", level);
    TapVars<Scalar> tap;
    h = net.self_attn(h, b + ".sa", &tap);
    out.taps[layer] = tap;
    h = net.cross_attn(h, ctx, b + ".ca", inj_at(layer));
  }
  h = ad::silu(net.gn(h, "out.gn"));
  out.eps = ad::conv3x3(h, p("out.conv.w"), p("out.conv.b"), cfg.height, cfg.width);
  return out;
}

template <typename Scalar>
std::map<int, InjectedKV<Scalar>> bind_injection(ad::Tape<Scalar>& tape, const std::map<int, KVFeatures<Scalar>>& features,
                                                 const SynapseParams& gates, Index text_tokens,
                                                 const std::vector<ad::Var<Scalar>>* raw_leaves) {
  std::map<int, InjectedKV<Scalar>> out;
  if (!gates.injects()) return out;
  std::vector<ad::Var<Scalar>> alpha_slots;
  const auto mode = gates.config().mode;
  for (Index s = 0; s < gates.raw().size(); ++s) {
    if (mode == GateMode::fixed) {
      alpha_slots.push_back(tape.constant(MatrixX<Scalar>::Constant(1, 1, static_cast<Scalar>(gates.config().fixed_alpha))));
    } else if (raw_leaves) {
      alpha_slots.push_back(ad::sigmoid((*raw_leaves)[static_cast<std::size_t>(s)]));
    } else {
      alpha_slots.push_back(tape.constant(MatrixX<Scalar>::Constant(1, 1, static_cast<Scalar>(sigmoid(gates.raw()[s])))));
    }
  }
  for (int layer : gates.layers()) {
    auto it = features.find(layer);
    if (it == features.end()) throw Error("injection: no tapped features for block " + std::to_string(layer));
    out[layer] = InjectedKV<Scalar>{tape.constant(resample_tokens(it->second.k, text_tokens)),
                                    tape.constant(resample_tokens(it->second.v, text_tokens)),
                                    alpha_slots[gates.slot(layer)]};
  }
  return out;
}

template <typename Scalar>
NoisePrediction<Scalar> predict_noise(const DenoiserConfig& cfg, const ParamSet<Scalar>& params, const Tensor<Scalar>& z,
                                      const std::type_identity_t<MatrixX<Scalar>>* text, int t,
                                      const std::type_identity_t<std::map<int, KVFeatures<Scalar>>>* injected, const SynapseParams* gates) {
  if (z.dims() != cfg.latent_shape()) {
    throw ShapeError("predict_noise: latent " + shape_string(z.dims()) + " vs config " + shape_string(cfg.latent_shape()));
  }
  if (injected && !gates) throw Error("predict_noise: injected features need gates");
  ad::Tape<Scalar> tape;
  BoundParams<Scalar> bound(tape, params, false);
  auto zt = tape.constant(z.matrix(cfg.height * cfg.width, cfg.channels));
  ad::Var<Scalar> ctx;
  if (text) ctx = tape.constant(*text);
  std::map<int, InjectedKV<Scalar>> inj;
  if (injected) {
    for (const auto& [layer, kv] : *injected) {
      if (layer < 0 || layer >= 2 * cfg.n_blocks()) throw Error("predict_noise: injected layer " + std::to_string(layer) + " not in config");
    }
    inj = bind_injection(tape, *injected, *gates, cfg.text_tokens);
  }
  auto graph = denoiser_forward(cfg, bound, zt, text ? &ctx : nullptr, t, inj.empty() ? nullptr : &inj);
  NoisePrediction<Scalar> out{Tensor<Scalar>::from_matrix(z.dims(), graph.eps.value()), {}};
  for (const auto& [layer, tap] : graph.taps) {
    out.taps[layer] = KVFeatures<Scalar>{tap.k.value(), tap.v.value(), layer, t};
  }
  return out;
}

#define MELSYN_INSTANTIATE_DENOISER(S)                                                                        \
  template RowVectorX<S> timestep_embedding<S>(int, Index);                                                   \
  template ParamSet<S> init_denoiser<S>(const DenoiserConfig&, Rng&);                                         \
  template class BoundParams<S>;                                                                              \
  template DenoiserGraph<S> denoiser_forward(const DenoiserConfig&, const BoundParams<S>&, const ad::Var<S>&, \
                                             const ad::Var<S>*, int, const std::map<int, InjectedKV<S>>*);    \
  template std::map<int, InjectedKV<S>> bind_injection(ad::Tape<S>&, const std::map<int, KVFeatures<S>>&,     \
                                                       const SynapseParams&, Index,                           \
                                                       const std::vector<ad::Var<S>>*);                       \
  template NoisePrediction<S> predict_noise(const DenoiserConfig&, const ParamSet<S>&, const Tensor<S>&,      \
                                            const MatrixX<S>*, int, const std::map<int, KVFeatures<S>>*,      \
                                            const SynapseParams*);

MELSYN_INSTANTIATE_DENOISER(float)
MELSYN_INSTANTIATE_DENOISER(double)

}  // namespace melsyn
