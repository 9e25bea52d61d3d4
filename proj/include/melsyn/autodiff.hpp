#pragma once

// Matrix-valued reverse-mode differentiation. A Tape records each operation's
// value and a closure that pushes the output gradient back to its inputs.
// Every network in the project (denoisers, synapse gates, metric embedders)
// is built from the free functions below, so one finite-difference harness
// covers all trainable paths.

#include <functional>
#include <initializer_list>
#include <vector>

#include "melsyn/numerics.hpp"

namespace melsyn::ad {

template <typename Scalar>
class Tape;

template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const MatrixX<Scalar>& value() const { return tape_->value(id_); }
  const MatrixX<Scalar>& grad() const { return tape_->grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = MatrixX<Scalar>;
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false, {}); }
  Var<Scalar> leaf(Mat value) { return push(std::move(value), true, {}); }

  /// Records an op. The closure runs only if some parent requires a gradient.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> parents, Backward backward) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || (p.valid() && requires_grad(p.id()));
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and runs all closures in reverse.
  void backward(const Var<Scalar>& root) {
    if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward needs a scalar root");
    nodes_[root.id()].grad = Mat::Ones(1, 1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
  }

  const Mat& value(std::size_t id) const { return nodes_[id].value; }

  /// Gradient accumulated so far; zeros if nothing reached the node.
  const Mat& grad(std::size_t id) const {
    Node& n = const_cast<Node&>(nodes_[id]);
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var<Scalar> push(Mat value, bool requires_grad, Backward backward) {
    nodes_.push_back({std::move(value), Mat(), std::move(backward), requires_grad});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

// ---- Linear algebra

template <typename Scalar> Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);
/// a * b^T
template <typename Scalar> Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> transpose(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& a, Scalar s);
template <typename Scalar> Var<Scalar> cwise_mul(const Var<Scalar>& a, const Var<Scalar>& b);
/// Adds a 1 x cols row to every row of `a`.
template <typename Scalar> Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row);
template <typename Scalar> Var<Scalar> concat_cols(const Var<Scalar>& a, const Var<Scalar>& b);

template <typename Scalar> Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar> Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar> Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return matmul(a, b); }

// ---- Elementwise and row-wise nonlinearities

template <typename Scalar> Var<Scalar> silu(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> sigmoid(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> softmax_rows(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> log_softmax_rows(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> l2_normalize_rows(const Var<Scalar>& a);

/// Convex mix `alpha * b + (1 - alpha) * a` with a 1x1 `alpha`. Evaluated in
/// that form so alpha = 0 returns `a` and alpha = 1 returns `b` bit-exactly.
template <typename Scalar> Var<Scalar> mix(const Var<Scalar>& a, const Var<Scalar>& b, const Var<Scalar>& alpha);

// ---- Reductions

template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> mean(const Var<Scalar>& a);
/// Mean of the diagonal of a square matrix.
template <typename Scalar> Var<Scalar> diag_mean(const Var<Scalar>& a);
/// Mean squared error against a constant target.
template <typename Scalar> Var<Scalar> mse(const Var<Scalar>& pred, const MatrixX<Scalar>& target);

// ---- Spatial ops on token matrices (H*W rows in row-major pixel order, channel columns)

/// Group normalization over (tokens x channels-in-group); gamma/beta are 1 x C.
template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Index groups, Scalar eps = Scalar(1e-5));
/// Zero-padded 3x3 neighbourhoods: (H*W) x (9*C), block k = (dy+1)*3 + (dx+1).
template <typename Scalar> Var<Scalar> im2col3x3(const Var<Scalar>& x, Index height, Index width);
/// 3x3 same-padding convolution; weight is (9*Cin) x Cout, bias 1 x Cout.
template <typename Scalar>
Var<Scalar> conv3x3(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                    Index height, Index width);
template <typename Scalar> Var<Scalar> avg_pool2(const Var<Scalar>& x, Index height, Index width);
template <typename Scalar> Var<Scalar> upsample2(const Var<Scalar>& x, Index height, Index width);

}  // namespace melsyn::ad
