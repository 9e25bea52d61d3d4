#include <doctest.h>

#include <Eigen/Dense>
#include <sstream>

#include "melsyn/gradcheck.hpp"
#include "melsyn/numerics.hpp"

using namespace melsyn;

TEST_CASE("gaussian_sample is deterministic per seed") {
  Rng a(7), b(7);
  CHECK(gaussian_sample<double>(a, {3, 4}) == gaussian_sample<double>(b, {3, 4}));
  Rng c(7);
  CHECK(gaussian_sample<float>(c, {2, 3}).dims() == Shape{2, 3});
}

TEST_CASE("gaussian_sample moments") {
  Rng rng(11);
  const auto x = gaussian_sample<double>(rng, {100000});
  const double mean = x.data().mean();
  const double var = (x.data().array() - mean).square().sum() / (x.size() - 1);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("split streams differ") {
  Rng base(3);
  Rng s1 = base.split(1), s2 = base.split(2);
  int same = 0;
  for (int i = 0; i < 1000; ++i) same += s1.next_u64() == s2.next_u64();
  CHECK(same == 0);
}

TEST_CASE("finite_diff_check on a quadratic") {
  ParamSet<double> p;
  p.add("p", (Eigen::MatrixXd(2, 1) << 1.0, -2.0).finished());
  DifferentiableLoss loss = [](const ParamSet<double>& q, ParamSet<double>* g) {
    if (g) g->at("p") = 2.0 * q.at("p");
    return q.at("p").squaredNorm();
  };
  auto reports = finite_diff_check(loss, p, 1e-4);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].analytic(0, 0) == doctest::Approx(2.0));
  CHECK(reports[0].analytic(1, 0) == doctest::Approx(-4.0));
  CHECK(reports[0].max_rel_error < 1e-8);
}

TEST_CASE("finite_diff_check on a constant loss") {
  ParamSet<double> p;
  p.add("p", Eigen::MatrixXd::Ones(2, 2));
  DifferentiableLoss loss = [](const ParamSet<double>&, ParamSet<double>*) { return 3.0; };
  auto reports = finite_diff_check(loss, p);
  CHECK(reports[0].numeric.cwiseAbs().maxCoeff() == 0.0);
  CHECK(reports[0].analytic.cwiseAbs().maxCoeff() == 0.0);
  CHECK(reports[0].passed());
}

TEST_CASE("finite_diff_check flags non-finite losses and bad epsilon") {
  ParamSet<double> p;
  p.add("p", Eigen::MatrixXd::Ones(1, 1));
  DifferentiableLoss loss = [](const ParamSet<double>&, ParamSet<double>*) { return std::nan(""); };
  CHECK_FALSE(finite_diff_check(loss, p)[0].passed());
  CHECK_THROWS_AS(finite_diff_check(loss, p, 0.1), ConfigError);
}

TEST_CASE("fit_gaussian") {
  Eigen::MatrixXd same(2, 3);
  same << 1, 2, 3, 1, 2, 3;
  CHECK(fit_gaussian(same).cov.cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd x(4, 2);
  x << 0, 0, 2, 0, 0, 2, 2, 2;
  const auto fit = fit_gaussian(x);
  CHECK(fit.mean(0) == doctest::Approx(1.0));
  CHECK(fit.mean(1) == doctest::Approx(1.0));
  CHECK(fit.cov(0, 0) == doctest::Approx(4.0 / 3.0));
  CHECK(fit.cov(1, 1) == doctest::Approx(4.0 / 3.0));
  CHECK(std::abs(fit.cov(0, 1)) < 1e-15);
  CHECK(fit.cov == fit.cov.transpose());

  CHECK_THROWS(fit_gaussian(Eigen::MatrixXd::Ones(1, 2)));
}

TEST_CASE("sqrtm_psd") {
  CHECK((sqrtm_psd(Eigen::MatrixXd::Identity(3, 3)) - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
  Eigen::MatrixXd d = Eigen::Vector2d(4.0, 9.0).asDiagonal();
  const Eigen::MatrixXd sd = sqrtm_psd(d);
  CHECK(sd(0, 0) == doctest::Approx(2.0));
  CHECK(sd(1, 1) == doctest::Approx(3.0));

  Rng rng(5);
  const Eigen::MatrixXd b = gaussian_matrix<double>(rng, 3, 3);
  const Eigen::MatrixXd a = b.transpose() * b;
  const Eigen::MatrixXd s = sqrtm_psd(a);
  CHECK((s * s - a).norm() / std::max(a.norm(), 1.0) < 1e-6);

  Eigen::MatrixXd asym(2, 2);
  asym << 1, 0.5, 0, 1;
  CHECK_THROWS_AS(sqrtm_psd(asym), NumericError);
}

TEST_CASE("MELT header and round trip") {
  Rng rng(9);
  const auto t = gaussian_sample<float>(rng, {2, 3, 4});
  std::stringstream ss;
  write_melt(ss, t);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 3 + 3 * 4 + 24 * 4);
  CHECK(bytes.substr(0, 4) == "MELT");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 1);
  CHECK(bytes[6] == 3);
  CHECK(static_cast<unsigned char>(bytes[7]) == 2);
  CHECK(read_melt<float>(ss) == t);

  std::stringstream bad("NOPE");
  CHECK_THROWS(read_melt<double>(bad));
}

TEST_CASE("tensor shape contract") {
  CHECK_THROWS_AS(Tensor<double>({2, 3}, Eigen::VectorXd::Zero(5)), ShapeError);
  Tensor<double> t({2, 3});
  CHECK(t.size() == 6);
  CHECK(shape_string(t.dims()) == "(2, 3)");
}
