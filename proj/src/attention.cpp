#include "melsyn/attention.hpp"

#include <cmath>

namespace melsyn {

template <typename Scalar>
ad::Var<Scalar> attend(const ad::Var<Scalar>& q, const ad::Var<Scalar>& k, const ad::Var<Scalar>& v) {
  if (q.cols() != k.cols()) {
    throw ShapeError("attend: d_k mismatch (" + std::to_string(q.cols()) + " vs " + std::to_string(k.cols()) + ")");
  }
  if (k.rows() != v.rows() || k.rows() < 1) throw ShapeError("attend: keys and values need matching token counts");
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  return ad::matmul(ad::softmax_rows(ad::scale(ad::matmul_nt(q, k), inv_sqrt)), v);
}

template <typename Scalar>
SelfAttentionResult<Scalar> self_attention(const ad::Var<Scalar>& f, const AttentionVars<Scalar>& w) {
  if (f.cols() != w.wq.rows()) throw ShapeError("self_attention: input width does not match Wq");
  auto q = ad::matmul(f, w.wq);
  auto k = ad::matmul(f, w.wk);
  auto v = ad::matmul(f, w.wv);
  return {ad::matmul(attend(q, k, v), w.wo), k, v};
}

template <typename Scalar>
ad::Var<Scalar> cross_attention(const ad::Var<Scalar>& f, const ad::Var<Scalar>& c, const AttentionVars<Scalar>& w,
                                const InjectedKV<Scalar>* injected) {
  if (f.cols() != w.wq.rows()) throw ShapeError("cross_attention: input width does not match Wq");
  if (c.cols() != w.wk.rows()) throw ShapeError("cross_attention: context width does not match Wk");
  auto q = ad::matmul(f, w.wq);
  auto k = ad::matmul(c, w.wk);
  auto v = ad::matmul(c, w.wv);
  if (injected) {
    if (injected->k.rows() != k.rows() || injected->v.rows() != v.rows()) {
      throw ShapeError("cross_attention: injected features have " + std::to_string(injected->k.rows()) +
                       " tokens, context has " + std::to_string(k.rows()));
    }
    k = ad::mix(k, injected->k, injected->alpha);
    v = ad::mix(v, injected->v, injected->alpha);
  }
  return ad::matmul(attend(q, k, v), w.wo);
}

template <typename Scalar>
MatrixX<Scalar> attend(const MatrixX<Scalar>& q, const MatrixX<Scalar>& k, const MatrixX<Scalar>& v) {
  ad::Tape<Scalar> tape;
  return attend(tape.constant(q), tape.constant(k), tape.constant(v)).value();
}

template <typename Scalar>
std::pair<MatrixX<Scalar>, KVFeatures<Scalar>> self_attention(const MatrixX<Scalar>& f,
                                                              const AttentionWeights<Scalar>& w) {
  ad::Tape<Scalar> tape;
  AttentionVars<Scalar> vars{tape.constant(w.wq), tape.constant(w.wk), tape.constant(w.wv), tape.constant(w.wo)};
  auto r = self_attention(tape.constant(f), vars);
  return {r.out.value(), KVFeatures<Scalar>{r.k.value(), r.v.value()}};
}

template <typename Scalar>
MatrixX<Scalar> cross_attention(const MatrixX<Scalar>& f, const MatrixX<Scalar>& c, const AttentionWeights<Scalar>& w,
                                const KVFeatures<Scalar>* injected, std::optional<double> alpha) {
  ad::Tape<Scalar> tape;
  AttentionVars<Scalar> vars{tape.constant(w.wq), tape.constant(w.wk), tape.constant(w.wv), tape.constant(w.wo)};
  if (!injected) return cross_attention(tape.constant(f), tape.constant(c), vars).value();
  if (!alpha) throw Error("cross_attention: injected features need a gate value");
  InjectedKV<Scalar> inj{tape.constant(injected->k), tape.constant(injected->v),
                         tape.constant(MatrixX<Scalar>::Constant(1, 1, static_cast<Scalar>(*alpha)))};
  return cross_attention(tape.constant(f), tape.constant(c), vars, &inj).value();
}

#define MELSYN_INSTANTIATE_ATTN(S)                                                                       \
  template ad::Var<S> attend(const ad::Var<S>&, const ad::Var<S>&, const ad::Var<S>&);                   \
  template SelfAttentionResult<S> self_attention(const ad::Var<S>&, const AttentionVars<S>&);            \
  template ad::Var<S> cross_attention(const ad::Var<S>&, const ad::Var<S>&, const AttentionVars<S>&,     \
                                      const InjectedKV<S>*);                                             \
  template MatrixX<S> attend(const MatrixX<S>&, const MatrixX<S>&, const MatrixX<S>&);                   \
  template std::pair<MatrixX<S>, KVFeatures<S>> self_attention(const MatrixX<S>&, const AttentionWeights<S>&); \
  template MatrixX<S> cross_attention(const MatrixX<S>&, const MatrixX<S>&, const AttentionWeights<S>&,  \
                                      const KVFeatures<S>*, std::optional<double>);

MELSYN_INSTANTIATE_ATTN(float)
MELSYN_INSTANTIATE_ATTN(double)

}  // namespace melsyn
