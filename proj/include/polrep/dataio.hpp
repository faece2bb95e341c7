#pragma once

#include "polrep/common.hpp"
#include "polrep/env.hpp"

namespace polrep {

/// Normalization statistics computed from the training split only.
/// Stds are population stds with a 1e-6 floor.
struct NormStats {
  Vec2 state_mean = Vec2::Zero();
  Vec2 state_std = Vec2::Ones();
  double action_mean = 0.0;
  double action_std = 1.0;
  Vec2 return_mean = Vec2::Zero();
  Vec2 return_std = Vec2::Ones();

  Vec2 norm_state(const Vec2& s) const { return (s - state_mean).cwiseQuotient(state_std); }
  double norm_action(double a) const { return (a - action_mean) / action_std; }
  double denorm_action(double a) const { return a * action_std + action_mean; }
  double norm_return(double r, int task) const { return (r - return_mean[task]) / return_std[task]; }
  double denorm_return(double r, int task) const { return r * return_std[task] + return_mean[task]; }
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  std::vector<int> train_idx;  // indices into trajectories; disjoint from test_idx
  std::vector<int> test_idx;
  NormStats stats;             // from train split
  int horizon = 0;
  static constexpr int kNumTasks = 2;
};

/// Population mean/std over all transitions (and returns) of the indexed trajectories.
NormStats compute_norm_stats(const std::vector<Trajectory>& trajs, const std::vector<int>& indices);

/// Generates the full corpus: n_knobs evenly spaced knobs in [0, 1], traj_per_knob rollouts
/// each. Every holdout_every-th knob (index 0, holdout_every, ...) is held out for testing.
Dataset build_dataset(const EnvConfig& env, int n_knobs, int traj_per_knob, int holdout_every,
                      uint64_t seed);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// A context set: L (state, action) rows drawn from one trajectory, normalized.
struct ContextSet {
  Mat pairs;           // L x 3, rows are (x, v, a) in normalized units
  int source_traj = -1;
};

ContextSet sample_context(const Dataset& ds, int traj_idx, int L, Rng& rng);

/// Mini-batch for representation training: two independent context views per trajectory.
/// Rows 2i and 2i+1 are the paired views of the i-th sampled trajectory and share its
/// return labels; every view carries its own query transition for the decoder.
struct TwoViewBatch {
  std::vector<ContextSet> contexts;  // 2I entries
  Mat returns;                       // 2I x K, normalized
  Mat query_state;                   // 2I x 2, normalized; one fresh transition per view
  Vec query_action;                  // 2I, normalized
  std::vector<int> source;           // 2I trajectory indices
  int n_pairs = 0;                   // I
};

TwoViewBatch two_view_batch(const Dataset& ds, const std::vector<int>& traj_ids, int L, Rng& rng);

/// Samples I distinct training trajectories, then builds the batch.
TwoViewBatch sample_two_view_batch(const Dataset& ds, int I, int L, Rng& rng);

}  // namespace polrep
