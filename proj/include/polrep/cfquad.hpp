#pragma once

#include "polrep/common.hpp"

#include <functional>

namespace polrep {

/// Integration target with analytic score, plus kernel/solver knobs.
/// Default score is the standard normal's, u(x) = -x.
struct SteinTarget {
  int dim = 1;
  double lengthscale = 0.0;  // <= 0 selects the median pairwise distance of the fit split
  double lambda_reg = 1e-6;  // ridge scale; the solved system is K0 + lambda_reg * m * I
  double split_frac = 0.5;   // fit-split fraction m/N (m = ceil(split_frac * N))
  std::function<Vec(const Vec&)> score;

  Vec score_at(const Vec& x) const { return score ? score(x) : Vec(-x); }
};

/// Gaussian RBF base kernel exp(-||x-y||^2 / (2 ls^2)).
double rbf_kernel(const Vec& x, const Vec& y, double lengthscale);

/// Langevin Stein kernel of the RBF base kernel under the target's score:
/// k0 = div_x div_y kappa + grad_x kappa . u(y) + grad_y kappa . u(x) + kappa u(x).u(y).
/// Functions built from k0 integrate to zero under the target density.
double stein_kernel(const Vec& x, const Vec& y, const SteinTarget& target, double lengthscale);

/// Quadrature weights over the concatenated sample list [fit split; estimate split].
/// The weighted sum of any function values reproduces the closed-form estimator; the
/// weights do not depend on the integrand and sum to one.
struct CfWeights {
  Vec w;  // size N, ordered as [d0 rows; d1 rows]
  int n_fit = 0;
  double lengthscale = 0.0;
};

CfWeights cf_weights(const Mat& d0, const Mat& d1, const SteinTarget& target);

/// Literal evaluation of the split-sample estimator (surrogate fit on d0, residual
/// average on d1 plus the fitted constant). Kept as an independent route from
/// cf_weights for cross-validation.
double cf_estimate_direct(const Mat& d0, const Mat& d1, const Vec& f0, const Vec& f1,
                          const SteinTarget& target);

/// Splits `samples` per target.split_frac and applies cf_weights. Columns of `fvals`
/// are independent integrands evaluated at the sample rows.
double cf_estimate(const Mat& samples, const Vec& fvals, const SteinTarget& target);
Vec cf_estimate_multi(const Mat& samples, const Mat& fvals, const SteinTarget& target);

/// Error-vs-N comparison of the control-functional estimator against plain Monte
/// Carlo on a fixed integrand with known mean. Slopes are least-squares fits of
/// log(mean abs error) against log(N).
struct RateResult {
  std::vector<int> ns;
  Vec cf_err;
  Vec mc_err;
  double cf_slope = 0.0;
  double mc_slope = 0.0;
  int trials = 0;
};

RateResult rate_experiment(const SteinTarget& target, const std::function<double(const Vec&)>& f,
                           double true_value, const std::vector<int>& ns, int trials,
                           uint64_t seed);

/// Columns (N, cf_err, mc_err, trials); final row holds the fitted slopes.
void write_rate_csv(const RateResult& r, const std::string& path);

}  // namespace polrep
