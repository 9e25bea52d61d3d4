#include <doctest.h>

#include "melsyn/gradcheck.hpp"
#include "melsyn/synapse.hpp"

using namespace melsyn;

TEST_CASE("gate values") {
  SynapseParams p(SynapseConfig{}, 3);
  REQUIRE(p.layers() == std::vector<int>{3, 4, 5});
  CHECK(p.gate(3) == doctest::Approx(0.5));
  p.raw()[1] = -50.0;
  CHECK(p.gate(4) < 1e-20);
  p.raw()[2] = 50.0;
  CHECK(p.gate(5) > 1.0 - 1e-12);
  CHECK_THROWS(p.gate(0));
  CHECK_THROWS(p.gate(6));
}

TEST_CASE("placement and sharing") {
  SynapseConfig c;
  c.placement = {true, true, false};
  SynapseParams both(c, 3);
  CHECK(both.layers() == std::vector<int>{0, 1, 2, 3, 4, 5});
  CHECK(both.raw().size() == 1);
  CHECK(both.slot(0) == 0);
  CHECK(both.slot(5) == 0);

  c.placement = {true, false, true};
  SynapseParams enc(c, 3);
  CHECK(enc.layers() == std::vector<int>{0, 1, 2});
  CHECK(enc.raw().size() == 3);
  CHECK_FALSE(enc.coupled(3));

  c.placement = {false, false, true};
  CHECK_THROWS_AS(SynapseParams(c, 3), ConfigError);
}

TEST_CASE("gate modes") {
  SynapseParams p(SynapseConfig{}, 3);
  CHECK(p.injects());
  p.set_mode(GateMode::fixed, 0.25);
  CHECK(p.gate(4) == 0.25);
  p.set_mode(GateMode::bypass);
  CHECK_FALSE(p.injects());
  CHECK(parse_gate_mode(to_string(GateMode::learned)) == GateMode::learned);
  CHECK_THROWS_AS(parse_gate_mode("sometimes"), ConfigError);
}

TEST_CASE("fuse examples") {
  Eigen::MatrixXd km(1, 1), ki(1, 1);
  km << 2;
  ki << 4;
  CHECK(fuse<double>(km, km, ki, ki, 0.5).first(0, 0) == 3.0);
  Rng rng(1);
  const Eigen::MatrixXd a = gaussian_matrix<double>(rng, 3, 2), b = gaussian_matrix<double>(rng, 3, 2);
  const Eigen::MatrixXd c = gaussian_matrix<double>(rng, 3, 2), d = gaussian_matrix<double>(rng, 3, 2);
  auto zero = fuse<double>(a, b, c, d, 0.0);
  CHECK(zero.first == a);
  CHECK(zero.second == b);
  auto one = fuse<double>(a, b, c, d, 1.0);
  CHECK(one.first == c);
  CHECK(one.second == d);
  CHECK_THROWS_AS(fuse<double>(a, b, Eigen::MatrixXd::Zero(2, 2), d, 0.5), ShapeError);
}

TEST_CASE("fuse derivative in alpha is kI - kM") {
  Rng rng(2);
  const Eigen::MatrixXd km = gaussian_matrix<double>(rng, 2, 2), ki = gaussian_matrix<double>(rng, 2, 2);
  const double h = 1e-6;
  const Eigen::MatrixXd fd =
      (fuse<double>(km, km, ki, ki, 0.3 + h).first - fuse<double>(km, km, ki, ki, 0.3 - h).first) / (2 * h);
  CHECK((fd - (ki - km)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("resample_tokens") {
  Rng rng(3);
  const Eigen::MatrixXd x = gaussian_matrix<double>(rng, 4, 3);
  CHECK(resample_tokens<double>(x, 4) == x);

  Eigen::MatrixXd two(2, 1);
  two << 0, 2;
  const Eigen::MatrixXd three = resample_tokens<double>(two, 3);
  CHECK(three(0, 0) == doctest::Approx(0.0));
  CHECK(three(1, 0) == doctest::Approx(1.0));
  CHECK(three(2, 0) == doctest::Approx(2.0));

  const Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(16, 2, 0.7);
  const Eigen::MatrixXd r = resample_tokens<double>(constant, 5);
  CHECK(r.rows() == 5);
  CHECK((r.array() - 0.7).abs().maxCoeff() < 1e-6);
  CHECK((resample_tokens<double>(r, 16).colwise().mean().array() - 0.7).abs().maxCoeff() < 1e-6);
}
