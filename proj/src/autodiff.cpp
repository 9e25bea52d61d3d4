#include "melsyn/autodiff.hpp"

#include <cmath>

namespace melsyn::ad {

namespace {

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

template <typename Scalar>
MatrixX<Scalar> sigmoid_of(const MatrixX<Scalar>& x) {
  return x.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
}

template <typename Scalar>
MatrixX<Scalar> softmax_of(const MatrixX<Scalar>& x) {
  MatrixX<Scalar> y = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  return y;
}

}  // namespace

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dims " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner dims " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value().transpose(), {a, b},
                         [ia, ib](Tape<Scalar>& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
                         });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  return a.tape().record(a.value().transpose(), {a}, [ia](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).transpose());
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a, b, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {a, b}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  const std::size_t ia = a.id();
  return a.tape().record(a.value() * s, {a}, [ia, s](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self) * s);
  });
}

template <typename Scalar>
Var<Scalar> cwise_mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a, b, "cwise_mul");
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b},
                         [ia, ib](Tape<Scalar>& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                           if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                         });
}

template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row must be 1 x cols");
  const std::size_t ia = a.id(), ir = row.id();
  MatrixX<Scalar> out = a.value().rowwise() + row.value().row(0);
  return a.tape().record(std::move(out), {a, row}, [ia, ir](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row mismatch");
  const std::size_t ia = a.id(), ib = b.id();
  const Index ca = a.cols(), cb = b.cols();
  MatrixX<Scalar> out(a.rows(), ca + cb);
  out << a.value(), b.value();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, ca, cb](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.leftCols(ca));
    if (t.requires_grad(ib)) t.accumulate(ib, g.rightCols(cb));
  });
}

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  const MatrixX<Scalar> s = sigmoid_of(a.value());
  MatrixX<Scalar> out = a.value().cwiseProduct(s);
  return a.tape().record(std::move(out), {a}, [ia, s](Tape<Scalar>& t, std::size_t self) {
    const auto& x = t.value(ia);
    auto local = (s.array() * (Scalar(1) + x.array() * (Scalar(1) - s.array()))).matrix();
    t.accumulate(ia, t.grad(self).cwiseProduct(local));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  return a.tape().record(sigmoid_of(a.value()), {a}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(ia, (t.grad(self).array() * y.array() * (Scalar(1) - y.array())).matrix());
  });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  return a.tape().record(softmax_of(a.value()), {a}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    const VectorX<Scalar> dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(ia, (y.array() * (g.colwise() - dot).array()).matrix());
  });
}

template <typename Scalar>
Var<Scalar> log_softmax_rows(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  const auto& x = a.value();
  const VectorX<Scalar> mx = x.rowwise().maxCoeff();
  const MatrixX<Scalar> shifted = x.colwise() - mx;
  const VectorX<Scalar> lse = shifted.array().exp().rowwise().sum().log().matrix();
  MatrixX<Scalar> out = shifted.colwise() - lse;
  return a.tape().record(std::move(out), {a}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const MatrixX<Scalar> p = t.value(self).array().exp().matrix();
    const VectorX<Scalar> gsum = g.rowwise().sum();
    t.accumulate(ia, g - (p.array().colwise() * gsum.array()).matrix());
  });
}

template <typename Scalar>
Var<Scalar> l2_normalize_rows(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  const VectorX<Scalar> norms = a.value().rowwise().norm();
  if ((norms.array() <= Scalar(0)).any()) throw NumericError("l2_normalize_rows: zero row");
  MatrixX<Scalar> out = (a.value().array().colwise() / norms.array()).matrix();
  return a.tape().record(std::move(out), {a}, [ia, norms](Tape<Scalar>& t, std::size_t self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    const VectorX<Scalar> dot = g.cwiseProduct(y).rowwise().sum();
    MatrixX<Scalar> gx = g - (y.array().colwise() * dot.array()).matrix();
    gx.array().colwise() /= norms.array();
    t.accumulate(ia, gx);
  });
}

template <typename Scalar>
Var<Scalar> mix(const Var<Scalar>& a, const Var<Scalar>& b, const Var<Scalar>& alpha) {
  require_same_shape(a, b, "mix");
  if (alpha.rows() != 1 || alpha.cols() != 1) throw ShapeError("mix: alpha must be 1x1");
  const std::size_t ia = a.id(), ib = b.id(), il = alpha.id();
  const Scalar al = alpha.scalar();
  MatrixX<Scalar> out = al * b.value() + (Scalar(1) - al) * a.value();
  return a.tape().record(std::move(out), {a, b, alpha}, [ia, ib, il, al](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * (Scalar(1) - al));
    if (t.requires_grad(ib)) t.accumulate(ib, g * al);
    if (t.requires_grad(il)) {
      MatrixX<Scalar> d(1, 1);
      d(0, 0) = g.cwiseProduct(t.value(ib) - t.value(ia)).sum();
      t.accumulate(il, d);
    }
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  const std::size_t ia = a.id();
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [ia](Tape<Scalar>& t, std::size_t self) {
    const auto& x = t.value(ia);
    t.accumulate(ia, MatrixX<Scalar>::Constant(x.rows(), x.cols(), t.grad(self)(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

template <typename Scalar>
Var<Scalar> diag_mean(const Var<Scalar>& a) {
  if (a.rows() != a.cols()) throw ShapeError("diag_mean: matrix must be square");
  const std::size_t ia = a.id();
  const Index n = a.rows();
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = a.value().diagonal().sum() / static_cast<Scalar>(n);
  return a.tape().record(std::move(out), {a}, [ia, n](Tape<Scalar>& t, std::size_t self) {
    MatrixX<Scalar> g = MatrixX<Scalar>::Zero(n, n);
    g.diagonal().setConstant(t.grad(self)(0, 0) / static_cast<Scalar>(n));
    t.accumulate(ia, g);
  });
}

template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& pred, const MatrixX<Scalar>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ShapeError("mse: shape mismatch");
  const std::size_t ip = pred.id();
  const MatrixX<Scalar> diff = pred.value() - target;
  const Scalar n = static_cast<Scalar>(diff.size());
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return pred.tape().record(std::move(out), {pred}, [ip, diff, n](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ip, diff * (Scalar(2) * t.grad(self)(0, 0) / n));
  });
}

template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Index groups, Scalar eps) {
  const Index tokens = x.rows(), channels = x.cols();
  if (groups <= 0 || channels % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.cols() != channels || beta.cols() != channels) throw ShapeError("group_norm: affine width");
  const Index cg = channels / groups;
  const Scalar count = static_cast<Scalar>(tokens * cg);
  MatrixX<Scalar> xhat(tokens, channels);
  VectorX<Scalar> inv_std(groups);
  for (Index g = 0; g < groups; ++g) {
    auto block = x.value().middleCols(g * cg, cg);
    const Scalar mu = block.sum() / count;
    const Scalar var = (block.array() - mu).square().sum() / count;
    inv_std[g] = Scalar(1) / std::sqrt(var + eps);
    xhat.middleCols(g * cg, cg) = ((block.array() - mu) * inv_std[g]).matrix();
  }
  MatrixX<Scalar> out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  const std::size_t ix = x.id(), igam = gamma.id(), ibet = beta.id();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [ix, igam, ibet, xhat, inv_std, groups, cg, count](Tape<Scalar>& t, std::size_t self) {
        const auto& g = t.grad(self);
        if (t.requires_grad(igam)) t.accumulate(igam, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(ibet)) t.accumulate(ibet, g.colwise().sum());
        if (!t.requires_grad(ix)) return;
        const MatrixX<Scalar> gh = (g.array().rowwise() * t.value(igam).row(0).array()).matrix();
        MatrixX<Scalar> gx(g.rows(), g.cols());
        for (Index k = 0; k < groups; ++k) {
          auto ghb = gh.middleCols(k * cg, cg);
          auto xb = xhat.middleCols(k * cg, cg);
          const Scalar m1 = ghb.sum() / count;
          const Scalar m2 = ghb.cwiseProduct(xb).sum() / count;
          gx.middleCols(k * cg, cg) = ((ghb.array() - m1 - xb.array() * m2) * inv_std[k]).matrix();
        }
        t.accumulate(ix, gx);
      });
}

template <typename Scalar>
Var<Scalar> im2col3x3(const Var<Scalar>& x, Index height, Index width) {
  const Index channels = x.cols();
  if (x.rows() != height * width) throw ShapeError("im2col3x3: token count does not match grid");
  const auto& xv = x.value();
  MatrixX<Scalar> cols = MatrixX<Scalar>::Zero(height * width, 9 * channels);
  for (Index dy = -1; dy <= 1; ++dy) {
    for (Index dx = -1; dx <= 1; ++dx) {
      const Index k = (dy + 1) * 3 + (dx + 1);
      for (Index h = 0; h < height; ++h) {
        const Index sh = h + dy;
        if (sh < 0 || sh >= height) continue;
        for (Index w = 0; w < width; ++w) {
          const Index sw = w + dx;
          if (sw < 0 || sw >= width) continue;
          cols.block(h * width + w, k * channels, 1, channels) = xv.row(sh * width + sw);
        }
      }
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(cols), {x}, [ix, height, width, channels](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    MatrixX<Scalar> gx = MatrixX<Scalar>::Zero(height * width, channels);
    for (Index dy = -1; dy <= 1; ++dy) {
      for (Index dx = -1; dx <= 1; ++dx) {
        const Index k = (dy + 1) * 3 + (dx + 1);
        for (Index h = 0; h < height; ++h) {
          const Index sh = h + dy;
          if (sh < 0 || sh >= height) continue;
          for (Index w = 0; w < width; ++w) {
            const Index sw = w + dx;
            if (sw < 0 || sw >= width) continue;
            gx.row(sh * width + sw) += g.block(h * width + w, k * channels, 1, channels);
          }
        }
      }
    }
    t.accumulate(ix, gx);
  });
}

template <typename Scalar>
Var<Scalar> conv3x3(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                    Index height, Index width) {
  if (weight.rows() != 9 * x.cols()) throw ShapeError("conv3x3: weight rows must be 9 * Cin");
  return add_row(matmul(im2col3x3(x, height, width), weight), bias);
}

template <typename Scalar>
Var<Scalar> avg_pool2(const Var<Scalar>& x, Index height, Index width) {
  if (height % 2 || width % 2) throw ShapeError("avg_pool2: grid must be even");
  if (x.rows() != height * width) throw ShapeError("avg_pool2: token count does not match grid");
  const Index oh = height / 2, ow = width / 2;
  const auto& xv = x.value();
  MatrixX<Scalar> out(oh * ow, x.cols());
  for (Index h = 0; h < oh; ++h) {
    for (Index w = 0; w < ow; ++w) {
      out.row(h * ow + w) = Scalar(0.25) * (xv.row(2 * h * width + 2 * w) + xv.row(2 * h * width + 2 * w + 1) +
                                            xv.row((2 * h + 1) * width + 2 * w) +
                                            xv.row((2 * h + 1) * width + 2 * w + 1));
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, height, width, oh, ow](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    MatrixX<Scalar> gx(height * width, g.cols());
    for (Index h = 0; h < oh; ++h) {
      for (Index w = 0; w < ow; ++w) {
        const auto q = Scalar(0.25) * g.row(h * ow + w);
        gx.row(2 * h * width + 2 * w) = q;
        gx.row(2 * h * width + 2 * w + 1) = q;
        gx.row((2 * h + 1) * width + 2 * w) = q;
        gx.row((2 * h + 1) * width + 2 * w + 1) = q;
      }
    }
    t.accumulate(ix, gx);
  });
}

template <typename Scalar>
Var<Scalar> upsample2(const Var<Scalar>& x, Index height, Index width) {
  if (x.rows() != height * width) throw ShapeError("upsample2: token count does not match grid");
  const Index oh = 2 * height, ow = 2 * width;
  const auto& xv = x.value();
  MatrixX<Scalar> out(oh * ow, x.cols());
  for (Index h = 0; h < oh; ++h) {
    for (Index w = 0; w < ow; ++w) out.row(h * ow + w) = xv.row((h / 2) * width + w / 2);
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, height, width, oh, ow](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    MatrixX<Scalar> gx = MatrixX<Scalar>::Zero(height * width, g.cols());
    for (Index h = 0; h < oh; ++h) {
      for (Index w = 0; w < ow; ++w) gx.row((h / 2) * width + w / 2) += g.row(h * ow + w);
    }
    t.accumulate(ix, gx);
  });
}

#define MELSYN_INSTANTIATE_AD(S)                                                                 \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                         \
  template Var<S> matmul_nt(const Var<S>&, const Var<S>&);                                      \
  template Var<S> transpose(const Var<S>&);                                                     \
  template Var<S> add(const Var<S>&, const Var<S>&);                                            \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                            \
  template Var<S> scale(const Var<S>&, S);                                                      \
  template Var<S> cwise_mul(const Var<S>&, const Var<S>&);                                      \
  template Var<S> add_row(const Var<S>&, const Var<S>&);                                        \
  template Var<S> concat_cols(const Var<S>&, const Var<S>&);                                    \
  template Var<S> silu(const Var<S>&);                                                          \
  template Var<S> sigmoid(const Var<S>&);                                                       \
  template Var<S> softmax_rows(const Var<S>&);                                                  \
  template Var<S> log_softmax_rows(const Var<S>&);                                              \
  template Var<S> l2_normalize_rows(const Var<S>&);                                             \
  template Var<S> mix(const Var<S>&, const Var<S>&, const Var<S>&);                             \
  template Var<S> sum(const Var<S>&);                                                           \
  template Var<S> mean(const Var<S>&);                                                          \
  template Var<S> diag_mean(const Var<S>&);                                                     \
  template Var<S> mse(const Var<S>&, const MatrixX<S>&);                                        \
  template Var<S> group_norm(const Var<S>&, const Var<S>&, const Var<S>&, Index, S);            \
  template Var<S> im2col3x3(const Var<S>&, Index, Index);                                       \
  template Var<S> conv3x3(const Var<S>&, const Var<S>&, const Var<S>&, Index, Index);           \
  template Var<S> avg_pool2(const Var<S>&, Index, Index);                                       \
  template Var<S> upsample2(const Var<S>&, Index, Index);

MELSYN_INSTANTIATE_AD(float)
MELSYN_INSTANTIATE_AD(double)

#undef MELSYN_INSTANTIATE_AD

}  // namespace melsyn::ad
