#include "polrep/steer.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace polrep {

double ModelSurrogate::value(const Vec& h, int task) const {
  const Mat z = model_->project(h.transpose(), task);
  return model_->predict_value(z, task)[0];
}

Vec ModelSurrogate::grad(const Vec& h, int task) const {
  const Mat z = model_->project(h.transpose(), task);
  Mlp::Tape tape;
  model_->predict_value(z, task, &tape);
  const Mat d_z = model_->predict_value_backward(task, tape, Vec::Ones(1));
  // pull back through the affine projector without touching its parameter gradients
  return (d_z * model_->projector_matrix(task)).row(0).transpose();
}

Mat tangent_projector(const Vec& h, const Mat& bank_h, int n_neighbors, int pca_rank) {
  const int n = static_cast<int>(bank_h.rows());
  const int dim = static_cast<int>(bank_h.cols());
  if (n_neighbors < 1 || pca_rank < 1) throw Error("tangent_projector: counts must be positive");
  if (pca_rank > n_neighbors) throw Error("tangent_projector: pca_rank exceeds n_neighbors");
  if (n < n_neighbors) throw Error("tangent_projector: bank smaller than n_neighbors");
  if (h.size() != dim) throw Error("tangent_projector: dimension mismatch");

  std::vector<std::pair<double, int>> dist(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    dist[static_cast<size_t>(i)] = {(bank_h.row(i).transpose() - h).norm(), i};
  }
  std::partial_sort(dist.begin(), dist.begin() + n_neighbors, dist.end());
  Mat nb(n_neighbors, dim);
  for (int i = 0; i < n_neighbors; ++i) {
    nb.row(i) = bank_h.row(dist[static_cast<size_t>(i)].second);
  }
  const Eigen::RowVectorXd center = nb.colwise().mean();
  nb.rowwise() -= center;

  Eigen::JacobiSVD<Mat> svd(nb, Eigen::ComputeThinV);
  const Vec sv = svd.singularValues();
  const double cutoff = sv.size() > 0 ? std::max(sv[0] * 1e-10, 1e-14) : 0.0;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size() && rank < pca_rank; ++i) {
    if (sv[i] > cutoff) ++rank;
  }
  if (rank == 0) return Mat::Zero(dim, dim);
  const Mat v = svd.matrixV().leftCols(rank);
  return v * v.transpose();
}

Vec lagrangian_grad(const Surrogate& sur, const Vec& h, const Vec& lambda, double target,
                    const std::vector<Constraint>& constraints) {
  if (lambda.size() != static_cast<Eigen::Index>(constraints.size())) {
    throw Error("lagrangian_grad: multiplier count mismatch");
  }
  const double v1 = sur.value(h, 0);
  Vec g = 2.0 * (v1 - target) * sur.grad(h, 0);
  for (size_t j = 0; j < constraints.size(); ++j) {
    const Constraint& c = constraints[j];
    if (c.task <= 0 || c.task >= sur.n_tasks()) {
      throw Error("lagrangian_grad: constraint task out of range");
    }
    // c_j(h) = bound - v_task(h), so the multiplier pushes v_task upward
    g -= lambda[static_cast<Eigen::Index>(j)] * sur.grad(h, c.task);
  }
  if (!g.allFinite()) throw Error("lagrangian_grad: non-finite gradient");
  return g;
}

namespace {

Vec predict_all(const Surrogate& sur, const Vec& h) {
  Vec out(sur.n_tasks());
  for (int k = 0; k < sur.n_tasks(); ++k) out[k] = sur.value(h, k);
  return out;
}

bool meets_tolerances(const Vec& predicted, double target,
                      const std::vector<Constraint>& constraints, const SteerOptions& opt) {
  if (std::abs(predicted[0] - target) > opt.tol_target) return false;
  for (const Constraint& c : constraints) {
    if (c.bound - predicted[c.task] > opt.tol_constraint) return false;
  }
  return true;
}

}  // namespace

SteerTrace primal_dual(const Surrogate& sur, double target,
                       const std::vector<Constraint>& constraints, const Vec& h0,
                       const SteerOptions& opt, const ProjectorFn& projector) {
  SteerTrace trace;
  Vec h = h0;
  Vec lambda = Vec::Zero(static_cast<Eigen::Index>(constraints.size()));
  for (int t = 0;; ++t) {
    TraceStep step;
    step.h = h;
    step.lambda = lambda;
    step.predicted = predict_all(sur, h);
    step.feasible = meets_tolerances(step.predicted, target, constraints, opt);
    trace.steps.push_back(step);
    if (!step.predicted.allFinite() || !h.allFinite()) {
      trace.termination = "non_finite";
      trace.success = false;
      return trace;
    }
    if (step.feasible) {
      trace.termination = "converged";
      trace.success = true;
      return trace;
    }
    if (t == opt.max_iters) {
      trace.termination = "max_iters";
      trace.success = false;
      return trace;
    }
    const Vec g = lagrangian_grad(sur, h, lambda, target, constraints);
    const Mat p = projector ? projector(h) : Mat::Identity(h.size(), h.size());
    h -= opt.eta_h * (p * g);
    for (size_t j = 0; j < constraints.size(); ++j) {
      const double cval = constraints[j].bound - sur.value(h, constraints[j].task);
      lambda[static_cast<Eigen::Index>(j)] =
          std::max(0.0, lambda[static_cast<Eigen::Index>(j)] + opt.eta_lambda * cval);
    }
  }
}

Vec2 decode_eval(Model& model, const NormStats& stats, const EnvConfig& env, const Vec& h,
                 int n_eval, uint64_t seed) {
  if (n_eval < 1) throw Error("decode_eval: n_eval must be >= 1");
  Vec2 acc(0.0, 0.0);
  const Mat h_row = h.transpose();
  for (int e = 0; e < n_eval; ++e) {
    Rng rng(mix_seed(seed, 0xdec0deULL + static_cast<uint64_t>(e)));
    Vec2 state(0.0, 0.0);
    Vec2 ret(0.0, 0.0);
    for (int t = 0; t < env.horizon; ++t) {
      Mat s_norm(1, 2);
      const Vec2 sn = stats.norm_state(state);
      s_norm << sn[0], sn[1];
      const ActionDist dist = model.decode(s_norm, h_row);
      const double a_norm = dist.mu[0] + std::exp(dist.log_std[0]) * rng.normal();
      const double action = stats.denorm_action(a_norm);
      auto [next, reward] = env_step(state, action, env);
      ret += reward;
      state = next;
    }
    acc += ret;
  }
  return acc / static_cast<double>(n_eval);
}

SteeringOutcome run_steering(Bundle& bundle, const EnvConfig& env, const SteeringQuery& query,
                             const SteerOptions& opt, uint64_t seed) {
  const NormStats& stats = bundle.stats;
  const int n_bank = static_cast<int>(bundle.bank.h.rows());
  if (n_bank == 0) throw Error("run_steering: empty embedding bank");

  const double target_norm = stats.norm_return(query.target_raw, 0);
  std::vector<Constraint> cons_norm;
  for (const Constraint& c : query.constraints_raw) {
    cons_norm.push_back({c.task, stats.norm_return(c.bound, c.task)});
  }

  Vec h0;
  if (query.init_index >= 0) {
    if (query.init_index >= n_bank) throw Error("run_steering: init_index out of range");
    h0 = bundle.bank.h.row(query.init_index).transpose();
  } else {
    Rng rng(mix_seed(seed, 0x696e6974ULL));
    h0 = bundle.bank.h.row(rng.uniform_int(n_bank)).transpose();
  }

  ModelSurrogate sur(bundle.model);
  ProjectorFn projector;
  if (query.project) {
    projector = [&](const Vec& h) {
      return tangent_projector(h, bundle.bank.h, opt.n_neighbors, opt.pca_rank);
    };
  }
  SteeringOutcome out;
  out.trace = primal_dual(sur, target_norm, cons_norm, h0, opt, projector);
  out.h_final = out.trace.steps.back().h;
  out.predicted_norm = out.trace.steps.back().predicted;
  out.predicted_raw.resize(out.predicted_norm.size());
  for (int k = 0; k < out.predicted_norm.size(); ++k) {
    out.predicted_raw[k] = stats.denorm_return(out.predicted_norm[k], k);
  }
  out.realized_raw =
      decode_eval(bundle.model, stats, env, out.h_final, opt.n_eval, mix_seed(seed, 0x65766cULL));
  out.success = out.trace.success;
  out.termination = out.trace.termination;
  return out;
}

void write_trace_csv(const SteerTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  const int K = trace.steps.empty() ? 0 : static_cast<int>(trace.steps.front().predicted.size());
  const int C = trace.steps.empty() ? 0 : static_cast<int>(trace.steps.front().lambda.size());
  out << "t,h_norm";
  for (int k = 1; k <= K; ++k) out << ",pred_" << k;
  for (int j = 1; j <= C; ++j) out << ",lambda_" << j;
  out << ",feasible\n";
  char buf[64];
  for (size_t t = 0; t < trace.steps.size(); ++t) {
    const TraceStep& s = trace.steps[t];
    out << t;
    std::snprintf(buf, sizeof(buf), ",%.10g", s.h.norm());
    out << buf;
    for (int k = 0; k < K; ++k) {
      std::snprintf(buf, sizeof(buf), ",%.10g", s.predicted[k]);
      out << buf;
    }
    for (int j = 0; j < C; ++j) {
      std::snprintf(buf, sizeof(buf), ",%.10g", s.lambda[j]);
      out << buf;
    }
    out << "," << (s.feasible ? 1 : 0) << "\n";
  }
  if (!out) throw Error("write failed on '" + path + "'");
}

}  // namespace polrep
