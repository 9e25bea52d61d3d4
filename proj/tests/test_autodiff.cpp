#include <doctest.h>

#include "melsyn/autodiff.hpp"
#include "melsyn/gradcheck.hpp"

using namespace melsyn;
using ad::Tape;
using ad::Var;

namespace {

using Op = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// FD check of sum(op(inputs) .* R) for a fixed random R.
double worst_error(const std::vector<Eigen::MatrixXd>& inputs, const Op& op, std::uint64_t seed = 1) {
  ParamSet<double> params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.add("x" + std::to_string(i), inputs[i]);
  Eigen::MatrixXd probe;
  DifferentiableLoss loss = [&](const ParamSet<double>& p, ParamSet<double>* g) {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& item : p) leaves.push_back(tape.leaf(item.value));
    Var<double> out = op(tape, leaves);
    if (probe.size() == 0) {
      Rng rng(seed);
      probe = gaussian_matrix<double>(rng, out.rows(), out.cols());
    }
    Var<double> l = ad::sum(ad::cwise_mul(out, tape.constant(probe)));
    if (g) {
      tape.backward(l);
      for (std::size_t i = 0; i < leaves.size(); ++i) (*g)[i].value = leaves[i].grad();
    }
    return l.scalar();
  };
  double worst = 0.0;
  for (const auto& r : finite_diff_check(loss, params, 1e-6)) worst = std::max(worst, r.max_rel_error);
  return worst;
}

Eigen::MatrixXd rnd(Index r, Index c, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian_matrix<double>(rng, r, c);
}

}  // namespace

TEST_CASE("linear algebra gradients") {
  CHECK(worst_error({rnd(3, 4, 1), rnd(4, 2, 2)}, [](auto&, auto& v) { return ad::matmul(v[0], v[1]); }) < 1e-6);
  CHECK(worst_error({rnd(3, 4, 3), rnd(5, 4, 4)}, [](auto&, auto& v) { return ad::matmul_nt(v[0], v[1]); }) < 1e-6);
  CHECK(worst_error({rnd(3, 4, 5)}, [](auto&, auto& v) { return ad::transpose(v[0]); }) < 1e-6);
  CHECK(worst_error({rnd(3, 4, 6), rnd(3, 4, 7)}, [](auto&, auto& v) { return ad::sub(ad::add(v[0], v[1]), ad::cwise_mul(v[0], v[1])); }) < 1e-6);
  CHECK(worst_error({rnd(3, 4, 8), rnd(1, 4, 9)}, [](auto&, auto& v) { return ad::add_row(v[0], v[1]); }) < 1e-6);
  CHECK(worst_error({rnd(3, 2, 10), rnd(3, 3, 11)}, [](auto&, auto& v) { return ad::concat_cols(v[0], v[1]); }) < 1e-6);
  CHECK(worst_error({rnd(3, 3, 12)}, [](auto&, auto& v) { return ad::scale(v[0], -2.5); }) < 1e-6);
}

TEST_CASE("nonlinearity gradients") {
  CHECK(worst_error({rnd(3, 4, 20)}, [](auto&, auto& v) { return ad::silu(v[0]); }) < 1e-6);
  CHECK(worst_error({rnd(3, 4, 21)}, [](auto&, auto& v) { return ad::sigmoid(v[0]); }) < 1e-6);
  CHECK(worst_error({rnd(3, 4, 22)}, [](auto&, auto& v) { return ad::softmax_rows(v[0]); }) < 1e-6);
  CHECK(worst_error({rnd(3, 4, 23)}, [](auto&, auto& v) { return ad::log_softmax_rows(v[0]); }) < 1e-6);
  CHECK(worst_error({rnd(3, 4, 24)}, [](auto&, auto& v) { return ad::l2_normalize_rows(v[0]); }) < 1e-6);
  CHECK(worst_error({rnd(3, 4, 25), rnd(3, 4, 26), rnd(1, 1, 27)},
                    [](auto&, auto& v) { return ad::mix(v[0], v[1], ad::sigmoid(v[2])); }) < 1e-6);
}

TEST_CASE("reduction gradients") {
  CHECK(worst_error({rnd(3, 4, 30)}, [](auto& t, auto& v) { return ad::add(ad::sum(v[0]), ad::mean(ad::cwise_mul(v[0], v[0]))) + t.constant(Eigen::MatrixXd::Zero(1, 1)); }) < 1e-6);
  CHECK(worst_error({rnd(4, 4, 31)}, [](auto&, auto& v) { return ad::diag_mean(v[0]); }) < 1e-6);
  const Eigen::MatrixXd target = rnd(3, 4, 32);
  CHECK(worst_error({rnd(3, 4, 33)}, [&](auto&, auto& v) { return ad::mse(v[0], target); }) < 1e-6);
}

TEST_CASE("spatial op gradients") {
  CHECK(worst_error({rnd(16, 4, 40), rnd(1, 4, 41), rnd(1, 4, 42)},
                    [](auto&, auto& v) { return ad::group_norm(v[0], v[1], v[2], 2); }) < 1e-5);
  CHECK(worst_error({rnd(16, 3, 43), rnd(27, 2, 44), rnd(1, 2, 45)},
                    [](auto&, auto& v) { return ad::conv3x3(v[0], v[1], v[2], 4, 4); }) < 1e-6);
  CHECK(worst_error({rnd(16, 3, 46)}, [](auto&, auto& v) { return ad::avg_pool2(v[0], 4, 4); }) < 1e-6);
  CHECK(worst_error({rnd(4, 3, 47)}, [](auto&, auto& v) { return ad::upsample2(v[0], 2, 2); }) < 1e-6);
}

TEST_CASE("mix is exact at the endpoints") {
  Tape<double> tape;
  const auto a = tape.constant(rnd(3, 3, 50));
  const auto b = tape.constant(rnd(3, 3, 51));
  CHECK(ad::mix(a, b, tape.constant(Eigen::MatrixXd::Zero(1, 1))).value() == a.value());
  CHECK(ad::mix(a, b, tape.constant(Eigen::MatrixXd::Ones(1, 1))).value() == b.value());
}

TEST_CASE("im2col places neighbours by offset") {
  Tape<double> tape;
  Eigen::MatrixXd x(4, 1);
  x << 1, 2, 3, 4;  // 2x2 grid
  const auto cols = ad::im2col3x3(tape.constant(x), 2, 2).value();
  CHECK(cols(0, 4) == 1.0);  // centre
  CHECK(cols(0, 5) == 2.0);  // right neighbour
  CHECK(cols(0, 7) == 3.0);  // below
  CHECK(cols(0, 0) == 0.0);  // padded
}

TEST_CASE("closures are skipped when no input needs a gradient") {
  Tape<double> tape;
  const auto c = tape.constant(rnd(2, 2, 60));
  const auto y = ad::silu(c);
  CHECK_FALSE(y.requires_grad());
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}
