#pragma once

#include <optional>

#include "melsyn/autodiff.hpp"

namespace melsyn {

/// Single-head projections: Wq, Wk, Wv are d_in x d_k (Wk, Wv are d_c x d_k
/// for cross-attention), Wo is d_k x d_out. No biases.
template <typename Scalar>
struct AttentionWeights {
  MatrixX<Scalar> wq, wk, wv, wo;
};

/// Keys and values tapped from a self-attention layer.
template <typename Scalar>
struct KVFeatures {
  MatrixX<Scalar> k;
  MatrixX<Scalar> v;
  int layer_id = -1;
  int timestep = 0;
};

template <typename Scalar>
struct AttentionVars {
  ad::Var<Scalar> wq, wk, wv, wo;
};

/// softmax(Q K^T / sqrt(d_k)) V
template <typename Scalar>
ad::Var<Scalar> attend(const ad::Var<Scalar>& q, const ad::Var<Scalar>& k, const ad::Var<Scalar>& v);

template <typename Scalar>
struct SelfAttentionResult {
  ad::Var<Scalar> out;
  ad::Var<Scalar> k;
  ad::Var<Scalar> v;
};

template <typename Scalar>
SelfAttentionResult<Scalar> self_attention(const ad::Var<Scalar>& f, const AttentionVars<Scalar>& w);

/// Injected keys/values (already s x d_k) and their 1x1 gate.
template <typename Scalar>
struct InjectedKV {
  ad::Var<Scalar> k;
  ad::Var<Scalar> v;
  ad::Var<Scalar> alpha;
};

template <typename Scalar>
ad::Var<Scalar> cross_attention(const ad::Var<Scalar>& f, const ad::Var<Scalar>& c, const AttentionVars<Scalar>& w,
                                const InjectedKV<Scalar>* injected = nullptr);

// ---- Value-level wrappers

template <typename Scalar>
MatrixX<Scalar> attend(const MatrixX<Scalar>& q, const MatrixX<Scalar>& k, const MatrixX<Scalar>& v);

template <typename Scalar>
std::pair<MatrixX<Scalar>, KVFeatures<Scalar>> self_attention(const MatrixX<Scalar>& f,
                                                              const AttentionWeights<Scalar>& w);

template <typename Scalar>
MatrixX<Scalar> cross_attention(const MatrixX<Scalar>& f, const MatrixX<Scalar>& c, const AttentionWeights<Scalar>& w,
                                const KVFeatures<Scalar>* injected = nullptr,
                                std::optional<double> alpha = std::nullopt);

}  // namespace melsyn
