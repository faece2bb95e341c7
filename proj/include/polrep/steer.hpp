#pragma once

#include "polrep/trainer.hpp"

#include <functional>

namespace polrep {

/// Per-task scalar predictor over the latent space. Implementations: the trained
/// regressor-on-projection stack, and analytic fixtures for solver tests.
class Surrogate {
 public:
  virtual ~Surrogate() = default;
  virtual int n_tasks() const = 0;
  virtual double value(const Vec& h, int task) const = 0;
  virtual Vec grad(const Vec& h, int task) const = 0;
};

/// v_k(h) = value-regressor(projector_k(h)) in normalized return units.
class ModelSurrogate : public Surrogate {
 public:
  explicit ModelSurrogate(Model& model) : model_(&model) {}
  int n_tasks() const override { return model_->config().n_tasks; }
  double value(const Vec& h, int task) const override;
  Vec grad(const Vec& h, int task) const override;

 private:
  Model* model_;
};

/// Lower bound on one task's predicted value: v_task(h) >= bound, tracked through
/// c(h) = bound - v_task(h) <= 0. Units match the surrogate (normalized for models).
struct Constraint {
  int task = 1;
  double bound = 0.0;
};

struct SteerOptions {
  double eta_h = 0.05;
  double eta_lambda = 0.1;
  int max_iters = 500;
  int n_neighbors = 32;
  int pca_rank = 8;
  double tol_target = 0.05;      // on |v_1 - target|, surrogate units
  double tol_constraint = 0.0;   // on c_k
  int n_eval = 16;               // rollouts per decode evaluation
};

/// P = V V^T from the top principal directions of the n_neighbors bank embeddings
/// nearest to h. Directions with negligible singular values are dropped, so the rank
/// can fall below pca_rank for degenerate neighborhoods.
Mat tangent_projector(const Vec& h, const Mat& bank_h, int n_neighbors, int pca_rank);

/// d/dh [ (v_1(h) - target)^2 + sum_j lambda_j c_j(h) ].
Vec lagrangian_grad(const Surrogate& sur, const Vec& h, const Vec& lambda, double target,
                    const std::vector<Constraint>& constraints);

struct TraceStep {
  Vec h;
  Vec lambda;
  Vec predicted;  // all surrogate tasks at h
  bool feasible = false;
};

struct SteerTrace {
  std::vector<TraceStep> steps;  // one per visited iterate, h_0 first
  std::string termination;       // "converged", "max_iters", or "non_finite"
  bool success = false;
};

using ProjectorFn = std::function<Mat(const Vec&)>;

/// Projected primal-dual loop: h descends the Lagrangian through a per-iterate
/// projector, the multipliers ascend on constraint violation and clamp at zero.
/// Terminates early once the target tolerance and all constraints hold.
SteerTrace primal_dual(const Surrogate& sur, double target,
                       const std::vector<Constraint>& constraints, const Vec& h0,
                       const SteerOptions& opt, const ProjectorFn& projector);

/// Mean raw-unit returns of n_eval stochastic decoder rollouts at a fixed embedding.
Vec2 decode_eval(Model& model, const NormStats& stats, const EnvConfig& env, const Vec& h,
                 int n_eval, uint64_t seed);

/// One full synthesis task against a trained bundle, raw-unit in and out.
struct SteeringQuery {
  double target_raw = 0.0;                 // task-1 return target
  std::vector<Constraint> constraints_raw; // raw-unit lower bounds on other tasks
  int init_index = -1;                     // bank row for h0; -1 draws one uniformly
  bool project = true;                     // false: identity projector (naive variant)
};

struct SteeringOutcome {
  SteerTrace trace;
  Vec h_final;
  Vec predicted_norm;
  Vec predicted_raw;
  Vec2 realized_raw;
  bool success = false;
  std::string termination;
};

SteeringOutcome run_steering(Bundle& bundle, const EnvConfig& env, const SteeringQuery& query,
                             const SteerOptions& opt, uint64_t seed);

void write_trace_csv(const SteerTrace& trace, const std::string& path);

}  // namespace polrep
