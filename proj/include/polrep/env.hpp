#pragma once

#include "polrep/common.hpp"

namespace polrep {

/// Point-mass velocity-tracking environment with a quadratic action cost.
/// State is (position, velocity); the scalar action is clipped to [-1, 1].
struct EnvConfig {
  double dt = 1.0;
  double drag = 0.05;
  double gain = 0.2;
  double ctrl_gain = 1.0;
  double noise_sigma = 0.05;
  int horizon = 64;
};

struct Transition {
  Vec2 state;   // (x, v) before the step
  double action;
  Vec2 reward;  // (velocity attained, negative squared raw action)
};

struct Trajectory {
  double knob = 0.0;  // behavior parameter in [0, 1]; target velocity is 0.8 * knob at steady state
  std::vector<Transition> transitions;
  Vec2 returns;       // discount-free sums of the two reward channels
};

/// One deterministic dynamics step. Returns (next state, reward).
/// reward[0] = next velocity, reward[1] = -(raw action)^2 before clipping.
std::pair<Vec2, Vec2> env_step(const Vec2& state, double action, const EnvConfig& cfg);

/// Rolls out the built-in proportional controller a = clip(ctrl_gain*(knob - v)) + noise.
/// Stored fields are rounded to f32 precision so saved datasets round-trip bit-exactly.
Trajectory rollout(double knob, const EnvConfig& cfg, Rng& rng);

/// M rollouts for each of the given knobs, in order. Requires >= 2 knobs and M >= 1.
std::vector<Trajectory> population(const std::vector<double>& knobs, int traj_per_knob,
                                   const EnvConfig& cfg, Rng& rng);

/// Monte-Carlo mean return over n_mc rollouts with independently derived seeds.
Vec2 oracle_return(double knob, const EnvConfig& cfg, int n_mc, uint64_t seed);

}  // namespace polrep
