#pragma once

#include <iostream>
#include <memory>
#include <string>

#include "safegp/rng.hpp"
#include "safegp/safety.hpp"

namespace safegp {

// Native simulated environments with a uniform episodic API.  Each instance
// owns a latent simulator state; observations are the planner-visible view
// with additive noise.  Noise never enters the latent state, so identical
// control sequences give identical latent trajectories.
//
// Ground-truth constraint checking delegates to the SafetySpec attached by
// the harness, keeping the planner and the simulator reading one definition.

struct EnvSpec {
  std::string name;
  int state_dim = 0;    // observed dims, the planner space
  int control_dim = 0;
  VectorXd control_min;
  VectorXd control_max;
  double dt = 0.0;
  VectorXd init_mean;      // latent-space init sampler N(mean, diag(var))
  VectorXd init_var;
  VectorXd obs_noise_std;  // per noise channel (see each env)
};

struct StepResult {
  VectorXd obs;
  double reward = 0.0;
  bool terminal = false;
  bool safe = true;  // ground truth at the new latent state
};

class Environment {
 public:
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }

  void attach_safety(const SafetySpec* s) { safety_ = s; }

  void set_obs_noise(const VectorXd& std) {
    if (std.size() != spec_.obs_noise_std.size())
      throw ConfigError("environment " + spec_.name + " has " +
                        std::to_string(spec_.obs_noise_std.size()) +
                        " observation noise channels");
    spec_.obs_noise_std = std;
  }

  bool is_safe(const VectorXd& obs) const {
    return safety_ == nullptr || safety_->is_safe(obs);
  }

  VectorXd reset(Rng& rng) {
    latent_ = spec_.init_mean;
    for (int i = 0; i < latent_.size(); ++i)
      latent_[i] += std::sqrt(spec_.init_var[i]) * rng.normal();
    terminal_ = false;
    clip_warned_ = false;
    return noisy_observation(rng);
  }

  StepResult step(const VectorXd& u, Rng& rng) {
    if (u.size() != spec_.control_dim)
      throw ConfigError("environment " + spec_.name + " expects " +
                        std::to_string(spec_.control_dim) + " control dims");
    VectorXd uc = u.cwiseMax(spec_.control_min).cwiseMin(spec_.control_max);
    if (!clip_warned_ && (uc - u).norm() > 0) {
      std::cerr << "warning: " << spec_.name << " control clipped to bounds\n";
      clip_warned_ = true;
    }
    StepResult r;
    r.reward = advance(uc);
    r.terminal = terminal_;
    r.obs = noisy_observation(rng);
    r.safe = is_safe(true_observation());
    return r;
  }

  VectorXd true_observation() const { return observe(latent_); }
  const VectorXd& latent_state() const { return latent_; }
  void set_latent_state(const VectorXd& s) {
    latent_ = s;
    terminal_ = false;
  }
  bool terminal() const { return terminal_; }

  virtual std::unique_ptr<Environment> clone() const = 0;

 protected:
  // Advances the latent state under a clipped control, returns the native
  // reward of the transition and may set terminal_.
  virtual double advance(const VectorXd& u) = 0;
  virtual VectorXd observe(const VectorXd& latent) const { return latent; }
  virtual VectorXd noisy_observation(Rng& rng) {
    VectorXd o = observe(latent_);
    for (int i = 0; i < o.size(); ++i)
      o[i] += spec_.obs_noise_std[i] * rng.normal();
    return o;
  }

  EnvSpec spec_;
  VectorXd latent_;
  bool terminal_ = false;
  bool clip_warned_ = false;
  const SafetySpec* safety_ = nullptr;
};

// Two cars approach a junction at the origin; the policy drives car 1 by
// force, car 2 rolls at constant velocity.  State (p1, v1, p2, v2).
// Constants are reproduction assumptions (the scenario's source gives none).
class LinearCarsEnv : public Environment {
 public:
  LinearCarsEnv() {
    spec_.name = "linear_cars";
    spec_.state_dim = 4;
    spec_.control_dim = 1;
    spec_.control_min = VectorXd::Constant(1, -2.0);
    spec_.control_max = VectorXd::Constant(1, 2.0);
    spec_.dt = 0.1;
    spec_.init_mean = (VectorXd(4) << -5.0, 1.0, -5.0, 1.0).finished();
    spec_.init_var = VectorXd::Constant(4, 0.1);
    spec_.obs_noise_std = VectorXd::Constant(4, 0.01);
    latent_ = spec_.init_mean;
  }

  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<LinearCarsEnv>(*this);
  }

 protected:
  double advance(const VectorXd& u) override {
    const double dt = spec_.dt;
    VectorXd s = latent_;
    s[0] = latent_[0] + dt * latent_[1];
    s[1] = latent_[1] + dt * u[0];  // unit mass
    s[2] = latent_[2] + dt * latent_[3];
    // Car 2 keeps its velocity.
    latent_ = s;
    return 0.1 * latent_[0];
  }
};

// MountainCarContinuous dynamics: weak engine, gravity well, hard position
// bounds with a dead stop at the left wall.  State (position, velocity).
class MountainCarEnv : public Environment {
 public:
  static constexpr double kPower = 0.0015;
  static constexpr double kMinPos = -1.2;
  static constexpr double kMaxPos = 0.6;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr double kGoalPos = 0.45;

  MountainCarEnv() {
    spec_.name = "mountain_car";
    spec_.state_dim = 2;
    spec_.control_dim = 1;
    spec_.control_min = VectorXd::Constant(1, -1.0);
    spec_.control_max = VectorXd::Constant(1, 1.0);
    spec_.dt = 1.0;  // the reference dynamics are per discrete tick
    spec_.init_mean = (VectorXd(2) << -0.5, 0.0).finished();
    spec_.init_var = (VectorXd(2) << 0.01, 1e-4).finished();
    spec_.obs_noise_std = VectorXd::Constant(2, 0.01);
    latent_ = spec_.init_mean;
  }

  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<MountainCarEnv>(*this);
  }

 protected:
  double advance(const VectorXd& u) override {
    double position = latent_[0], velocity = latent_[1];
    velocity += u[0] * kPower - 0.0025 * std::cos(3.0 * position);
    velocity = std::min(kMaxSpeed, std::max(-kMaxSpeed, velocity));
    position += velocity;
    position = std::min(kMaxPos, std::max(kMinPos, position));
    if (position == kMinPos && velocity < 0.0) velocity = 0.0;
    latent_[0] = position;
    latent_[1] = velocity;
    double reward = -0.1 * u[0] * u[0];
    if (position >= kGoalPos) {
      terminal_ = true;
      reward += 100.0;
    }
    return reward;
  }
};

// Torque-limited pendulum swing-up.  Latent (angle, angular velocity) with
// angle 0 upright; observed as (cos, sin, angular velocity).  Observation
// noise perturbs the angle before encoding, so cos^2 + sin^2 stays exact.
class PendulumEnv : public Environment {
 public:
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kMaxSpeed = 8.0;

  PendulumEnv() {
    spec_.name = "pendulum_swingup";
    spec_.state_dim = 3;
    spec_.control_dim = 1;
    spec_.control_min = VectorXd::Constant(1, -2.0);
    spec_.control_max = VectorXd::Constant(1, 2.0);
    spec_.dt = 0.05;
    spec_.init_mean = (VectorXd(2) << kPi, 0.0).finished();
    spec_.init_var = VectorXd::Constant(2, 0.01);
    spec_.obs_noise_std = VectorXd::Constant(2, 0.01);  // angle, velocity
    latent_ = spec_.init_mean;
  }

  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<PendulumEnv>(*this);
  }

  static double angle_normalize(double a) {
    return std::fmod(a + kPi, 2.0 * kPi) < 0.0
               ? std::fmod(a + kPi, 2.0 * kPi) + kPi
               : std::fmod(a + kPi, 2.0 * kPi) - kPi;
  }

 protected:
  double advance(const VectorXd& u) override {
    const double th = latent_[0], thdot = latent_[1];
    const double cost = angle_normalize(th) * angle_normalize(th) +
                        0.1 * thdot * thdot + 0.001 * u[0] * u[0];
    const double acc = 3.0 * kGravity / (2.0 * kLength) * std::sin(th) +
                       3.0 / (kMass * kLength * kLength) * u[0];
    double new_thdot = thdot + acc * spec_.dt;
    new_thdot = std::min(kMaxSpeed, std::max(-kMaxSpeed, new_thdot));
    latent_[0] = th + new_thdot * spec_.dt;
    latent_[1] = new_thdot;
    return -cost;
  }

  VectorXd observe(const VectorXd& latent) const override {
    return (VectorXd(3) << std::cos(latent[0]), std::sin(latent[0]),
            latent[1])
        .finished();
  }

  VectorXd noisy_observation(Rng& rng) override {
    VectorXd noisy = latent_;
    noisy[0] += spec_.obs_noise_std[0] * rng.normal();
    noisy[1] += spec_.obs_noise_std[1] * rng.normal();
    return observe(noisy);
  }
};

// Classic cart-pole balancing (pole as uniform rod, no friction), integrated
// with RK4.  State (cart position, cart velocity, pole angle, pole velocity),
// angle 0 upright.  Reward 1 per step the angle stays inside the threshold.
class CartpoleEnv : public Environment {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kCartMass = 1.0;
  static constexpr double kPoleMass = 0.1;
  static constexpr double kHalfLength = 0.5;
  static constexpr double kAngleLimit = 0.20943951023931953;  // 12 degrees

  CartpoleEnv() {
    spec_.name = "cartpole";
    spec_.state_dim = 4;
    spec_.control_dim = 1;
    spec_.control_min = VectorXd::Constant(1, -10.0);
    spec_.control_max = VectorXd::Constant(1, 10.0);
    spec_.dt = 0.02;
    spec_.init_mean = VectorXd::Zero(4);
    spec_.init_var = VectorXd::Constant(4, 0.0025);
    spec_.obs_noise_std = VectorXd::Constant(4, 0.01);
    latent_ = spec_.init_mean;
  }

  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<CartpoleEnv>(*this);
  }

  static Eigen::Vector4d derivatives(const Eigen::Vector4d& s, double force) {
    const double total = kCartMass + kPoleMass;
    const double ml = kPoleMass * kHalfLength;
    const double sin_th = std::sin(s[2]), cos_th = std::cos(s[2]);
    const double temp = (force + ml * s[3] * s[3] * sin_th) / total;
    const double th_acc =
        (kGravity * sin_th - cos_th * temp) /
        (kHalfLength * (4.0 / 3.0 - kPoleMass * cos_th * cos_th / total));
    const double x_acc = temp - ml * th_acc * cos_th / total;
    return {s[1], x_acc, s[3], th_acc};
  }

  static double energy(const Eigen::Vector4d& s) {
    // Kinetic + potential of cart plus uniform rod, zero level at the pivot.
    const double ke_cart = 0.5 * kCartMass * s[1] * s[1];
    const double ke_pole = 0.5 * kPoleMass * s[1] * s[1] +
                           kPoleMass * kHalfLength * s[1] * s[3] *
                               std::cos(s[2]) +
                           (2.0 / 3.0) * kPoleMass * kHalfLength *
                               kHalfLength * s[3] * s[3];
    const double pe = kPoleMass * kGravity * kHalfLength * std::cos(s[2]);
    return ke_cart + ke_pole + pe;
  }

 protected:
  double advance(const VectorXd& u) override {
    const double h = spec_.dt;
    const Eigen::Vector4d s = latent_;
    const Eigen::Vector4d k1 = derivatives(s, u[0]);
    const Eigen::Vector4d k2 = derivatives(s + 0.5 * h * k1, u[0]);
    const Eigen::Vector4d k3 = derivatives(s + 0.5 * h * k2, u[0]);
    const Eigen::Vector4d k4 = derivatives(s + h * k3, u[0]);
    latent_ = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (std::abs(latent_[2]) > kAngleLimit) {
      terminal_ = true;
      return 0.0;
    }
    return 1.0;
  }
};

inline std::unique_ptr<Environment> make_environment(const std::string& name) {
  if (name == "linear_cars") return std::make_unique<LinearCarsEnv>();
  if (name == "mountain_car") return std::make_unique<MountainCarEnv>();
  if (name == "pendulum_swingup") return std::make_unique<PendulumEnv>();
  if (name == "cartpole") return std::make_unique<CartpoleEnv>();
  throw ConfigError("unknown environment '" + name +
                    "' (expected linear_cars, mountain_car, "
                    "pendulum_swingup, or cartpole)");
}

}  // namespace safegp
