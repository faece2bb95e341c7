#include "polrep/env.hpp"

#include <algorithm>
#include <cmath>

namespace polrep {

std::pair<Vec2, Vec2> env_step(const Vec2& state, double action, const EnvConfig& cfg) {
  if (!state.allFinite() || !std::isfinite(action)) {
    throw Error("env_step: non-finite state or action");
  }
  const double a_clipped = std::clamp(action, -1.0, 1.0);
  const double v_next = state[1] + cfg.gain * a_clipped - cfg.drag * state[1];
  const double x_next = state[0] + cfg.dt * v_next;
  Vec2 next(x_next, v_next);
  Vec2 reward(v_next, -action * action);  // cost uses the raw action, not the clipped one
  return {next, reward};
}

Trajectory rollout(double knob, const EnvConfig& cfg, Rng& rng) {
  if (knob < 0.0 || knob > 1.0) {
    throw Error("rollout: knob must lie in [0, 1], got " + std::to_string(knob));
  }
  if (cfg.horizon < 1) throw Error("rollout: horizon must be >= 1");
  Trajectory traj;
  traj.knob = knob;
  traj.transitions.reserve(static_cast<size_t>(cfg.horizon));
  Vec2 state(0.0, 0.0);
  double sum0 = 0.0, sum1 = 0.0;
  for (int t = 0; t < cfg.horizon; ++t) {
    double action = cfg.ctrl_gain * (knob - state[1]);
    action = std::clamp(action, -1.0, 1.0);
    action += cfg.noise_sigma * rng.normal();
    action = quantize_f32(action);
    auto [next, reward] = env_step(state, action, cfg);
    next[0] = quantize_f32(next[0]);
    next[1] = quantize_f32(next[1]);
    reward[0] = quantize_f32(reward[0]);
    reward[1] = quantize_f32(reward[1]);
    traj.transitions.push_back({state, action, reward});
    sum0 += reward[0];
    sum1 += reward[1];
    state = next;
  }
  traj.returns = Vec2(quantize_f32(sum0), quantize_f32(sum1));
  return traj;
}

std::vector<Trajectory> population(const std::vector<double>& knobs, int traj_per_knob,
                                   const EnvConfig& cfg, Rng& rng) {
  if (knobs.empty()) throw Error("population: empty knob list");
  if (knobs.size() < 2) throw Error("population: need at least 2 knobs");
  if (traj_per_knob < 1) throw Error("population: traj_per_knob must be >= 1");
  std::vector<Trajectory> out;
  out.reserve(knobs.size() * static_cast<size_t>(traj_per_knob));
  for (double knob : knobs) {
    for (int m = 0; m < traj_per_knob; ++m) {
      out.push_back(rollout(knob, cfg, rng));
    }
  }
  return out;
}

Vec2 oracle_return(double knob, const EnvConfig& cfg, int n_mc, uint64_t seed) {
  if (n_mc < 1) throw Error("oracle_return: n_mc must be >= 1");
  Vec2 acc(0.0, 0.0);
  for (int i = 0; i < n_mc; ++i) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(i)));
    acc += rollout(knob, cfg, rng).returns;
  }
  return acc / static_cast<double>(n_mc);
}

}  // namespace polrep
