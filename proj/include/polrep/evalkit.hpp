#pragma once

#include "polrep/steer.hpp"

namespace polrep {

/// Spearman rank correlation with average-rank tie handling.
double spearman(const Vec& x, const Vec& y);

/// Distance-ordering diagnostics of projected embeddings against label distances:
/// triplet violations (i closer to j than l in label space but not in embedding
/// space) and the Spearman correlation of anchored pair distances.
struct OrderingReport {
  Vec violation_rate;  // per task
  Vec rank_corr;       // per task
  int n_triplets = 0;
};

OrderingReport ordering_metrics(const std::vector<Mat>& z_per_task, const Mat& labels,
                                int n_triplets, Rng& rng);

/// Ridge least squares (intercept unpenalized) from embeddings to normalized returns.
struct ProbeReport {
  Vec train_mse;  // per task
  Vec test_mse;
  double train_mean = 0.0;
  double test_mean = 0.0;
};

ProbeReport linear_probe(const Mat& h_train, const Mat& y_train, const Mat& h_test,
                         const Mat& y_test, double ridge);

/// Per-trajectory decode-and-rollout fidelity against the recorded returns.
struct ImitationRow {
  int traj = 0;
  double knob = 0.0;
  bool heldout = false;
  Vec2 target = Vec2::Zero();
  Vec2 realized = Vec2::Zero();
  Vec2 rel_diff = Vec2::Zero();  // |realized - target| / (|target| + 1)
};

struct ImitationReport {
  std::vector<ImitationRow> rows;
  double median_overall = 0.0;  // pooled over tasks
  Vec median_per_task;
};

ImitationReport imitation_eval(Bundle& bundle, const Dataset& ds, const EnvConfig& env,
                               bool heldout_split, int n_eval, uint64_t seed);

/// Random steering tasks: targets over the middle of the train return range,
/// constraint bounds inside the per-target feasible band read off the bank.
struct BenchRow {
  int query = 0;
  double target = 0.0;
  double bound = 0.0;
  bool success = false;
  Vec predicted_raw;
  Vec2 realized = Vec2::Zero();
  double e_targ = 0.0;  // % deviation of realized task-1 return from the target
  double e_cons = 0.0;  // % breach of the bound by the realized task-2 return
  int iters = 0;
  std::string termination;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double success_pct = 0.0;
  double e_targ_pct = 0.0;
  double e_cons_pct = 0.0;
};

BenchReport steering_benchmark(Bundle& bundle, const EnvConfig& env, int n_queries,
                               const SteerOptions& opt, uint64_t seed);

/// Mean-centered top-2 principal coordinates plus aligned labels.
struct Pca2d {
  Mat coords;        // n x 2
  double pc1_knob_rank_corr = 0.0;
};

Pca2d pca2d_plotdata(const Mat& h, const Vec& knobs);

void write_ordering_csv(const OrderingReport& r, const std::string& path);
void write_probe_csv(const std::vector<std::pair<std::string, ProbeReport>>& rows,
                     const std::string& path);
void write_imitation_csv(const ImitationReport& r, const std::string& path);
void write_bench_csv(const BenchReport& r, const std::string& path);
void write_pca_csv(const Pca2d& p, const Mat& returns, const Vec& knobs,
                   const std::string& path);
void write_pca_svg(const Pca2d& p, const Vec& knobs, const std::string& path);

}  // namespace polrep
