#include <doctest.h>

#include "melsyn/diffusion.hpp"
#include "tiny.hpp"

using namespace melsyn;

namespace {

NoiseFn<double> linear_model(double k) {
  return [k](const Tensor<double>& z, int) { return Tensor<double>(z.dims(), k * z.data()); };
}

double rel_l2(const Tensor<double>& a, const Tensor<double>& b) {
  return (a.data() - b.data()).norm() / b.data().norm();
}

/// Scalar factor of one DDIM transfer from level t to level t_to under eps = k z.
double transfer_gain(const NoiseSchedule& s, int t, int t_to, double k) {
  const double gb = s.gamma_bar(t), gb_to = s.gamma_bar(t_to);
  const double x0 = (1.0 - std::sqrt(1.0 - gb) * k) / std::sqrt(gb);
  return std::sqrt(gb_to) * x0 + std::sqrt(1.0 - gb_to) * k;
}

}  // namespace

TEST_CASE("step_sequence") {
  CHECK(step_sequence(100, 4) == std::vector<int>{25, 50, 75, 100});
  CHECK(step_sequence(10, 10).front() == 1);
  CHECK(step_sequence(10, 3) == std::vector<int>{3, 7, 10});
  CHECK_THROWS_AS(step_sequence(10, 11), ConfigError);
}

TEST_CASE("ddim_step examples") {
  auto s = make_schedule(ScheduleKind::linear, 100, 1e-4, 0.02);
  Rng rng(1);
  auto z = gaussian_sample<double>(rng, {2, 3, 3});
  Tensor<double> zero(z.dims());
  auto out = ddim_step(s, zero, z, 40, 30);
  CHECK((out.data() - std::sqrt(s.gamma_bar(30) / s.gamma_bar(40)) * z.data()).cwiseAbs().maxCoeff() < 1e-12);

  auto eps = gaussian_sample<double>(rng, z.dims());
  CHECK(ddim_step(s, eps, z, 17, 17) == z);
  CHECK_THROWS(ddim_step(s, eps, z, 17, 18));
  CHECK_THROWS(ddim_step(s, eps, z, 17, -1));

  // Explicit clean-estimate form.
  auto step = ddim_step(s, eps, z, 50, 0);
  Eigen::VectorXd x0 = (z.data() - std::sqrt(1.0 - s.gamma_bar(50)) * eps.data()) / std::sqrt(s.gamma_bar(50));
  CHECK((step.data() - x0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("one step down and back up under a linear model") {
  auto s = make_schedule(ScheduleKind::linear, 100, 1e-4, 0.02);
  auto eps = linear_model(0.1);
  Rng rng(2);
  auto z = gaussian_sample<double>(rng, {4, 4, 4});
  auto down = ddim_step(s, eps(z, 60), z, 60, 59);
  // First order: the recurrence oracle predicts the result exactly.
  auto first_order = ddim_transfer(s, eps(down, 60), down, 59, 60);
  CHECK((first_order.data() - transfer_gain(s, 59, 60, 0.1) * transfer_gain(s, 60, 59, 0.1) * z.data())
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK((first_order.data() - z.data()).cwiseAbs().maxCoeff() < 1e-4);
  // One fixed-point pass already meets the 1e-5 bound; more passes converge to the exact inverse.
  auto once = ddim_transfer(s, eps(first_order, 60), down, 59, 60);
  CHECK((once.data() - z.data()).cwiseAbs().maxCoeff() < 1e-5);
  auto exact = once;
  for (int r = 0; r < 10; ++r) exact = ddim_transfer(s, eps(exact, 60), down, 59, 60);
  CHECK((exact.data() - z.data()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("inversion round trip under linear models") {
  auto s = make_schedule(ScheduleKind::linear, 100, 1e-4, 0.02);
  auto steps = step_sequence(100, 100);
  Rng rng(3);
  auto z = gaussian_sample<double>(rng, {4, 4, 4});

  auto refined = linear_model(0.1);
  auto back = ddim_sample(refined, s, ddim_invert(refined, s, z, steps, 8), steps);
  CHECK(rel_l2(back, z) < 1e-5);

  auto weak = linear_model(1e-3);
  const auto zT = ddim_invert(weak, s, z, steps, 0);
  double gain = 1.0;
  int prev = 0;
  for (int t : steps) {
    gain *= transfer_gain(s, prev, t, 1e-3);
    prev = t;
  }
  CHECK((zT.data() - gain * z.data()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(rel_l2(ddim_sample(weak, s, zT, steps), z) < 1e-5);
}

TEST_CASE("inversion is a no-op when beta is zero") {
  auto s = NoiseSchedule::from_betas(std::vector<double>(10, 0.0));
  Rng rng(4);
  auto z = gaussian_sample<double>(rng, {2, 2});
  CHECK(ddim_invert(linear_model(0.3), s, z, step_sequence(10, 10)) == z);
}

TEST_CASE("inversion trajectory covers every step") {
  auto s = make_schedule(ScheduleKind::linear, 10, 1e-3, 0.05);
  Rng rng(5);
  auto z = gaussian_sample<double>(rng, {2, 2});
  auto traj = ddim_invert_trajectory(linear_model(0.1), s, z, step_sequence(10, 5));
  CHECK(traj.size() == 6);
  CHECK(traj.at(0) == z);
  CHECK(traj.count(10) == 1);
  CHECK_THROWS(ddim_invert_trajectory(linear_model(0.1), s, z, {3, 3}));
}

TEST_CASE("classifier-free guidance identities") {
  auto cfg = testing::tiny_denoiser();
  Rng rng(6);
  auto params = init_denoiser<double>(cfg, rng);
  testing::wake_output(params, rng);
  auto z = gaussian_sample<double>(rng, cfg.latent_shape());
  const Eigen::MatrixXd text = gaussian_matrix<double>(rng, cfg.text_tokens, cfg.d_c);
  const auto cond = predict_noise(cfg, params, z, &text, 4).eps;
  const auto uncond = predict_noise(cfg, params, z, nullptr, 4).eps;
  CHECK(cfg_predict(cfg, params, z, text, 4, 1.0, nullptr, nullptr) == cond);
  CHECK(cfg_predict(cfg, params, z, text, 4, 0.0, nullptr, nullptr) == uncond);
  const auto mid = cfg_predict(cfg, params, z, text, 4, 7.0, nullptr, nullptr);
  CHECK((mid.data() - (uncond.data() + 7.0 * (cond.data() - uncond.data()))).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS(cfg_predict(cfg, params, z, text, 4, -1.0, nullptr, nullptr));
  CHECK((cond.data() - uncond.data()).norm() > 0.0);
}

TEST_CASE("sampler config validation") {
  SamplerConfig sc;
  CHECK_NOTHROW(sc.validate(100));
  CHECK_THROWS_AS(sc.validate(50), ConfigError);
  sc.steps = 10;
  sc.eta = 0.5;
  CHECK_THROWS_AS(sc.validate(100), ConfigError);
}
