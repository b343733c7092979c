#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "safegp/env.hpp"

using namespace safegp;
using Catch::Approx;

namespace {

// Independent transcription of the mountain-car update for trace checking.
void mc_reference(double& p, double& v, double u) {
  u = std::max(-1.0, std::min(1.0, u));
  v += u * 0.0015 - 0.0025 * std::cos(3.0 * p);
  if (v > 0.07) v = 0.07;
  if (v < -0.07) v = -0.07;
  p += v;
  if (p > 0.6) p = 0.6;
  if (p < -1.2) p = -1.2;
  if (p == -1.2 && v < 0.0) v = 0.0;
}

// Independent transcription of the pendulum update.
void pend_reference(double& th, double& thdot, double u) {
  u = std::max(-2.0, std::min(2.0, u));
  double acc = 3.0 * 10.0 / (2.0 * 1.0) * std::sin(th) + 3.0 * u;
  double newthdot = std::max(-8.0, std::min(8.0, thdot + acc * 0.05));
  th += newthdot * 0.05;
  thdot = newthdot;
}

// Cart-pole accelerations in an algebraically rearranged form.
Eigen::Vector4d cp_reference_deriv(const Eigen::Vector4d& s, double f) {
  const double g = 9.8, mc = 1.0, mp = 0.1, l = 0.5;
  const double total = mc + mp;
  const double sth = std::sin(s[2]), cth = std::cos(s[2]);
  const double th_acc = (g * sth * total - cth * (f + mp * l * s[3] * s[3] * sth)) /
                        (l * (4.0 / 3.0 * total - mp * cth * cth));
  const double x_acc =
      (f + mp * l * (s[3] * s[3] * sth - th_acc * cth)) / total;
  return {s[1], x_acc, s[3], th_acc};
}

Eigen::Vector4d cp_reference_rk4(Eigen::Vector4d s, double f, double h,
                                 int substeps) {
  const double hs = h / substeps;
  for (int i = 0; i < substeps; ++i) {
    const Eigen::Vector4d k1 = cp_reference_deriv(s, f);
    const Eigen::Vector4d k2 = cp_reference_deriv(s + 0.5 * hs * k1, f);
    const Eigen::Vector4d k3 = cp_reference_deriv(s + 0.5 * hs * k2, f);
    const Eigen::Vector4d k4 = cp_reference_deriv(s + hs * k3, f);
    s += (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return s;
}

}  // namespace

TEST_CASE("registry builds each environment with its advertised shape") {
  struct Row {
    const char* name;
    int n, m;
  };
  for (const Row& r : {Row{"linear_cars", 4, 1}, Row{"mountain_car", 2, 1},
                       Row{"pendulum_swingup", 3, 1}, Row{"cartpole", 4, 1}}) {
    auto env = make_environment(r.name);
    REQUIRE(env->spec().name == r.name);
    REQUIRE(env->spec().state_dim == r.n);
    REQUIRE(env->spec().control_dim == r.m);
    REQUIRE(env->spec().control_min.size() == r.m);
    REQUIRE(env->spec().init_mean.size() == env->spec().init_var.size());
  }
  REQUIRE_THROWS_AS(make_environment("swimmer"), ConfigError);
}

TEST_CASE("linear cars follow the Euler update") {
  auto env = make_environment("linear_cars");
  env->set_latent_state((VectorXd(4) << -5.0, 1.0, -5.0, 1.0).finished());
  Rng rng(1);
  StepResult r = env->step(VectorXd::Zero(1), rng);
  VectorXd s = env->latent_state();
  REQUIRE(s[0] == Approx(-4.9).margin(1e-15));
  REQUIRE(s[1] == Approx(1.0).margin(1e-15));
  REQUIRE(s[2] == Approx(-4.9).margin(1e-15));
  REQUIRE(s[3] == Approx(1.0).margin(1e-15));
  REQUIRE(r.reward == Approx(0.1 * -4.9).margin(1e-15));
  REQUIRE_FALSE(r.terminal);

  // A held positive force integrates into velocity then position.
  env->set_latent_state(VectorXd::Zero(4));
  env->step(VectorXd::Constant(1, 2.0), rng);
  s = env->latent_state();
  REQUIRE(s[1] == Approx(0.2).margin(1e-15));
  REQUIRE(s[0] == Approx(0.0).margin(1e-15));  // position lags one step
  env->step(VectorXd::Constant(1, 2.0), rng);
  REQUIRE(env->latent_state()[0] == Approx(0.02).margin(1e-15));
}

TEST_CASE("linear cars ground truth safety follows the attached spec") {
  SafetySpec spec;
  spec.root = SafetyNode::any_of(
      {SafetyNode::box(0, -1.0, 1.0, true), SafetyNode::box(2, -1.0, 1.0, true)});
  spec.compile(4);

  auto env = make_environment("linear_cars");
  env->attach_safety(&spec);
  REQUIRE_FALSE(env->is_safe(VectorXd::Zero(4)));  // both cars in the junction
  VectorXd clear = VectorXd::Zero(4);
  clear[0] = 5.0;
  REQUIRE(env->is_safe(clear));  // car 1 already through
  clear[0] = 0.5;
  clear[2] = -3.0;
  REQUIRE(env->is_safe(clear));  // car 2 still far away

  // Without a spec everything counts as safe.
  auto bare = make_environment("linear_cars");
  REQUIRE(bare->is_safe(VectorXd::Zero(4)));

  Rng rng(7);
  env->set_latent_state((VectorXd(4) << 0.0, 1.0, 0.0, 1.0).finished());
  StepResult r = env->step(VectorXd::Zero(1), rng);
  REQUIRE_FALSE(r.safe);  // both cars still inside after one step
}

TEST_CASE("mountain car matches an independent reference trace") {
  auto env = make_environment("mountain_car");
  env->set_latent_state((VectorXd(2) << -0.5, 0.0).finished());
  double p = -0.5, v = 0.0;
  Rng ctrl_rng(2024);
  Rng env_rng(99);
  for (int t = 0; t < 50; ++t) {
    const double u = ctrl_rng.uniform(-1.0, 1.0);
    env->step(VectorXd::Constant(1, u), env_rng);
    mc_reference(p, v, u);
    REQUIRE(env->latent_state()[0] == Approx(p).margin(1e-12));
    REQUIRE(env->latent_state()[1] == Approx(v).margin(1e-12));
  }
}

TEST_CASE("mountain car force balance and wall behavior") {
  auto env = make_environment("mountain_car");
  Rng rng(5);

  // At position -pi/6 the slope term cos(3p) vanishes, so with zero throttle
  // the velocity is unchanged to machine precision.
  env->set_latent_state((VectorXd(2) << -kPi / 6.0, 0.01).finished());
  env->step(VectorXd::Zero(1), rng);
  REQUIRE(env->latent_state()[1] == Approx(0.01).margin(1e-15));

  // Hitting the left wall with leftward motion zeroes the velocity.
  env->set_latent_state((VectorXd(2) << -1.199, -0.05).finished());
  StepResult r = env->step(VectorXd::Zero(1), rng);
  REQUIRE(env->latent_state()[0] == Approx(-1.2).margin(1e-15));
  REQUIRE(env->latent_state()[1] == 0.0);
  REQUIRE_FALSE(r.terminal);

  // Crossing the goal position terminates with the bonus.
  env->set_latent_state((VectorXd(2) << 0.449, 0.07).finished());
  r = env->step(VectorXd::Constant(1, 1.0), rng);
  REQUIRE(r.terminal);
  REQUIRE(r.reward == Approx(100.0 - 0.1).margin(1e-12));
}

TEST_CASE("pendulum matches an independent reference trace") {
  auto env = make_environment("pendulum_swingup");
  env->set_latent_state((VectorXd(2) << kPi - 0.3, 0.2).finished());
  double th = kPi - 0.3, thdot = 0.2;
  Rng ctrl_rng(77);
  Rng env_rng(3);
  for (int t = 0; t < 50; ++t) {
    const double u = ctrl_rng.uniform(-2.0, 2.0);
    env->step(VectorXd::Constant(1, u), env_rng);
    pend_reference(th, thdot, u);
    REQUIRE(env->latent_state()[0] == Approx(th).margin(1e-12));
    REQUIRE(env->latent_state()[1] == Approx(thdot).margin(1e-12));
  }
}

TEST_CASE("pendulum observations stay on the unit circle despite noise") {
  auto env = make_environment("pendulum_swingup");
  Rng rng(11);
  VectorXd obs = env->reset(rng);
  REQUIRE(obs.size() == 3);
  for (int t = 0; t < 40; ++t) {
    obs = env->step(VectorXd::Constant(1, rng.uniform(-2.0, 2.0)), rng).obs;
    REQUIRE(obs[0] * obs[0] + obs[1] * obs[1] == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("pendulum reward peaks at the upright fixed point") {
  auto env = make_environment("pendulum_swingup");
  Rng rng(13);
  env->set_latent_state(VectorXd::Zero(2));
  StepResult r = env->step(VectorXd::Zero(1), rng);
  REQUIRE(r.reward == 0.0);
  REQUIRE(env->latent_state().norm() == 0.0);  // upright is an equilibrium

  // Hanging down costs about pi^2 per step.
  env->set_latent_state((VectorXd(2) << kPi, 0.0).finished());
  r = env->step(VectorXd::Zero(1), rng);
  REQUIRE(r.reward == Approx(-kPi * kPi).margin(1e-12));

  // The angle cost wraps: 2*pi is as good as upright.
  env->set_latent_state((VectorXd(2) << 2.0 * kPi, 0.0).finished());
  r = env->step(VectorXd::Zero(1), rng);
  REQUIRE(r.reward == Approx(0.0).margin(1e-12));
}

TEST_CASE("pendulum angular speed saturates") {
  auto env = make_environment("pendulum_swingup");
  Rng rng(17);
  env->set_latent_state((VectorXd(2) << kPi / 2.0, 7.9).finished());
  for (int t = 0; t < 20; ++t) env->step(VectorXd::Constant(1, 2.0), rng);
  REQUIRE(std::abs(env->latent_state()[1]) <= 8.0 + 1e-15);
}

TEST_CASE("cartpole upright rest state is a fixed point") {
  auto env = make_environment("cartpole");
  Rng rng(19);
  env->set_latent_state(VectorXd::Zero(4));
  StepResult r = env->step(VectorXd::Zero(1), rng);
  REQUIRE(env->latent_state().norm() == 0.0);
  REQUIRE(r.reward == 1.0);
  REQUIRE_FALSE(r.terminal);
}

TEST_CASE("cartpole integration agrees with a finely substepped reference") {
  auto env = make_environment("cartpole");
  Eigen::Vector4d ref(0.0, 0.0, 0.05, 0.0);
  env->set_latent_state(ref);
  Rng rng(23);
  const double u = 0.5;
  for (int t = 0; t < 10; ++t) {
    env->step(VectorXd::Constant(1, u), rng);
    ref = cp_reference_rk4(ref, u, 0.02, 1000);
  }
  REQUIRE((env->latent_state() - VectorXd(ref)).norm() < 1e-6);
}

TEST_CASE("cartpole conserves energy without forcing") {
  auto env = make_environment("cartpole");
  env->set_latent_state((VectorXd(4) << 0.0, 0.0, 0.1, 0.0).finished());
  const double e0 = CartpoleEnv::energy(env->latent_state());
  Rng rng(29);
  for (int t = 0; t < 100; ++t) env->step(VectorXd::Zero(1), rng);
  const double e1 = CartpoleEnv::energy(env->latent_state());
  REQUIRE(e1 == Approx(e0).margin(1e-4));
}

TEST_CASE("cartpole terminates when the pole leaves the angle band") {
  auto env = make_environment("cartpole");
  Rng rng(31);
  env->set_latent_state((VectorXd(4) << 0.0, 0.0, 0.19, 1.0).finished());
  StepResult r = env->step(VectorXd::Zero(1), rng);
  REQUIRE(r.terminal);
  REQUIRE(r.reward == 0.0);
}

TEST_CASE("controls are clipped to the advertised bounds") {
  auto a = make_environment("linear_cars");
  auto b = make_environment("linear_cars");
  VectorXd s0 = (VectorXd(4) << -5.0, 1.0, -5.0, 1.0).finished();
  a->set_latent_state(s0);
  b->set_latent_state(s0);
  Rng ra(41), rb(41);
  a->step(VectorXd::Constant(1, 50.0), ra);
  b->step(VectorXd::Constant(1, 2.0), rb);
  REQUIRE((a->latent_state() - b->latent_state()).norm() == 0.0);

  REQUIRE_THROWS_AS(a->step(VectorXd::Zero(2), ra), ConfigError);
}

TEST_CASE("identical seeds replay identical episodes") {
  for (const char* name :
       {"linear_cars", "mountain_car", "pendulum_swingup", "cartpole"}) {
    auto a = make_environment(name);
    auto b = make_environment(name);
    Rng ra(1234), rb(1234), ctrl(555);
    VectorXd oa = a->reset(ra), ob = b->reset(rb);
    REQUIRE((oa - ob).norm() == 0.0);
    for (int t = 0; t < 20; ++t) {
      VectorXd u = VectorXd::Constant(
          1, ctrl.uniform(a->spec().control_min[0], a->spec().control_max[0]));
      Rng cu = ctrl;  // same control for both copies
      StepResult sa = a->step(u, ra);
      StepResult sb = b->step(u, rb);
      (void)cu;
      REQUIRE((sa.obs - sb.obs).norm() == 0.0);
      REQUIRE(sa.reward == sb.reward);
      REQUIRE(sa.terminal == sb.terminal);
    }
  }
}

TEST_CASE("noise enters observations but never the latent dynamics") {
  auto noisy = make_environment("mountain_car");
  auto clean = make_environment("mountain_car");
  VectorXd s0 = (VectorXd(2) << -0.5, 0.0).finished();
  noisy->set_latent_state(s0);
  clean->set_latent_state(s0);
  Rng rng_a(100), rng_b(200);  // different noise streams
  bool saw_noise = false;
  for (int t = 0; t < 30; ++t) {
    VectorXd u = VectorXd::Constant(1, std::sin(0.3 * t));
    StepResult ra = noisy->step(u, rng_a);
    StepResult rb = clean->step(u, rng_b);
    REQUIRE((noisy->latent_state() - clean->latent_state()).norm() == 0.0);
    REQUIRE((noisy->true_observation() - clean->true_observation()).norm() ==
            0.0);
    if ((ra.obs - rb.obs).norm() > 0) saw_noise = true;
  }
  REQUIRE(saw_noise);
}

TEST_CASE("cloned environments evolve independently") {
  auto env = make_environment("pendulum_swingup");
  Rng rng(314);
  env->reset(rng);
  auto copy = env->clone();
  REQUIRE((copy->latent_state() - env->latent_state()).norm() == 0.0);
  env->step(VectorXd::Constant(1, 1.0), rng);
  REQUIRE((copy->latent_state() - env->latent_state()).norm() > 0.0);
}
