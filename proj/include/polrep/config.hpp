#pragma once

#include "polrep/steer.hpp"
#include "polrep/trainer.hpp"

namespace polrep {

struct DataParams {
  int n_knobs = 40;
  int traj_per_knob = 20;
  int holdout_every = 5;
  uint64_t seed = 1;
};

struct EvalParams {
  int n_triplets = 2000;
  int n_queries = 20;
  double probe_ridge = 1e-6;
  int n_eval = 16;
  uint64_t seed = 1;
};

/// One config covers every subcommand; sections are [env], [data], [train],
/// [steer], [eval]. Parsing rejects unknown sections and keys.
struct RunConfig {
  EnvConfig env;
  DataParams data;
  TrainConfig train;
  SteerOptions steer;
  uint64_t steer_seed = 1;
  EvalParams eval;
};

/// Sectioned key=value text. '#' starts a comment; keys may appear in any
/// order; later assignments win.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Canonical form: sections and keys sorted, values at full precision.
/// parse_config(serialize_config(c)) reproduces c exactly.
std::string serialize_config(const RunConfig& cfg);

/// Point every per-section seed at one value (the --seed override).
void override_seed(RunConfig& cfg, uint64_t seed);

}  // namespace polrep
