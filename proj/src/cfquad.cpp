#include "polrep/cfquad.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace polrep {

double rbf_kernel(const Vec& x, const Vec& y, double lengthscale) {
  const double r2 = (x - y).squaredNorm();
  return std::exp(-0.5 * r2 / (lengthscale * lengthscale));
}

double stein_kernel(const Vec& x, const Vec& y, const SteinTarget& target, double lengthscale) {
  if (!x.allFinite() || !y.allFinite()) throw Error("stein_kernel: non-finite input");
  const double ls2 = lengthscale * lengthscale;
  const double kappa = rbf_kernel(x, y, lengthscale);
  const Vec diff = x - y;
  const double r2 = diff.squaredNorm();
  const Vec ux = target.score_at(x);
  const Vec uy = target.score_at(y);
  const double div_term = kappa * (static_cast<double>(x.size()) / ls2 - r2 / (ls2 * ls2));
  const double gx_uy = -kappa / ls2 * diff.dot(uy);  // grad_x kappa = -kappa (x-y)/ls^2
  const double gy_ux = kappa / ls2 * diff.dot(ux);   // grad_y kappa = +kappa (x-y)/ls^2
  const double uu = kappa * ux.dot(uy);
  return div_term + gx_uy + gy_ux + uu;
}

namespace {

double median_lengthscale(const Mat& d0) {
  std::vector<double> dists;
  const int m = static_cast<int>(d0.rows());
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      dists.push_back((d0.row(i) - d0.row(j)).norm());
    }
  }
  if (dists.empty()) return 1.0;
  std::sort(dists.begin(), dists.end());
  const double med = dists[dists.size() / 2];
  return med > 0.0 ? med : 1.0;
}

struct FitSystem {
  Eigen::LDLT<Mat> ldlt;
  Mat k0;
  double lengthscale = 0.0;
};

FitSystem build_system(const Mat& d0, const SteinTarget& target) {
  const int m = static_cast<int>(d0.rows());
  if (m < 2) throw Error("control-functional fit split needs at least 2 samples");
  FitSystem sys;
  sys.lengthscale = target.lengthscale > 0.0 ? target.lengthscale : median_lengthscale(d0);
  sys.k0.resize(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = i; j < m; ++j) {
      const double v = stein_kernel(d0.row(i).transpose(), d0.row(j).transpose(), target,
                                    sys.lengthscale);
      sys.k0(i, j) = v;
      sys.k0(j, i) = v;
    }
  }
  Mat system = sys.k0 + target.lambda_reg * static_cast<double>(m) * Mat::Identity(m, m);
  sys.ldlt.compute(system);
  if (sys.ldlt.info() != Eigen::Success) {
    throw Error("control-functional system is singular; increase lambda_reg");
  }
  // LDLT accepts semidefinite systems silently; reject ones it cannot actually solve.
  // Duplicated samples with lambda_reg = 0 leave (near-)zero pivots, and a consistent
  // right-hand side would slip past a residual probe alone.
  const Vec pivots = sys.ldlt.vectorD().cwiseAbs();
  if (pivots.minCoeff() <= pivots.maxCoeff() * 1e-14) {
    throw Error("control-functional system is singular; increase lambda_reg");
  }
  const Vec probe = Vec::Ones(m);
  const Vec sol = sys.ldlt.solve(probe);
  const double resid = (system * sol - probe).norm() / std::sqrt(static_cast<double>(m));
  if (!sol.allFinite() || resid > 1e-6) {
    throw Error("control-functional system is singular; increase lambda_reg");
  }
  return sys;
}

Mat cross_kernel(const Mat& d1, const Mat& d0, const SteinTarget& target, double lengthscale) {
  Mat k10(d1.rows(), d0.rows());
  for (int i = 0; i < k10.rows(); ++i) {
    for (int j = 0; j < k10.cols(); ++j) {
      k10(i, j) =
          stein_kernel(d1.row(i).transpose(), d0.row(j).transpose(), target, lengthscale);
    }
  }
  return k10;
}

}  // namespace

CfWeights cf_weights(const Mat& d0, const Mat& d1, const SteinTarget& target) {
  const int m = static_cast<int>(d0.rows());
  const int n1 = static_cast<int>(d1.rows());
  if (n1 < 1) throw Error("cf_weights: estimate split is empty");
  const FitSystem sys = build_system(d0, target);
  const Mat k10 = cross_kernel(d1, d0, target, sys.lengthscale);

  const Vec g = sys.ldlt.solve(Vec::Ones(m));          // (K0 + lam m I)^-1 1
  const Vec v = k10.colwise().sum().transpose();       // K10^T 1
  const Vec q = sys.ldlt.solve(v);                     // (K0 + lam m I)^-1 K10^T 1
  const double s = g.sum();                            // 1^T (K0 + lam m I)^-1 1
  if (std::abs(s) < 1e-300) {
    throw Error("control-functional constant term degenerate; increase lambda_reg");
  }
  CfWeights cw;
  cw.n_fit = m;
  cw.lengthscale = sys.lengthscale;
  cw.w.resize(m + n1);
  const double inv_n1 = 1.0 / static_cast<double>(n1);
  cw.w.head(m) = -inv_n1 * q + (v.dot(g) * inv_n1 / s) * g;
  cw.w.tail(n1).setConstant(inv_n1);
  if (!cw.w.allFinite()) throw Error("cf_weights: non-finite weights");
  return cw;
}

double cf_estimate_direct(const Mat& d0, const Mat& d1, const Vec& f0, const Vec& f1,
                          const SteinTarget& target) {
  const int m = static_cast<int>(d0.rows());
  const int n1 = static_cast<int>(d1.rows());
  if (f0.size() != m || f1.size() != n1) throw Error("cf_estimate_direct: size mismatch");
  const FitSystem sys = build_system(d0, target);
  const Mat k10 = cross_kernel(d1, d0, target, sys.lengthscale);
  const Vec a_f0 = sys.ldlt.solve(f0);
  const Vec a_one = sys.ldlt.solve(Vec::Ones(m));
  const double beta = f0.dot(a_one) / a_one.sum();
  const Vec fhat1 = k10 * a_f0 + (Vec::Ones(n1) - k10 * a_one) * beta;
  return (f1 - fhat1).sum() / static_cast<double>(n1) + beta;
}

namespace {
void split_samples(const Mat& samples, const SteinTarget& target, Mat& d0, Mat& d1) {
  const int n = static_cast<int>(samples.rows());
  if (n < 4) throw Error("cf_estimate: need at least 4 samples");
  int m = static_cast<int>(std::ceil(target.split_frac * n));
  m = std::clamp(m, 1, n - 1);
  d0 = samples.topRows(m);
  d1 = samples.bottomRows(n - m);
}
}  // namespace

double cf_estimate(const Mat& samples, const Vec& fvals, const SteinTarget& target) {
  return cf_estimate_multi(samples, Mat(fvals), target)[0];
}

Vec cf_estimate_multi(const Mat& samples, const Mat& fvals, const SteinTarget& target) {
  if (fvals.rows() != samples.rows()) throw Error("cf_estimate: value count mismatch");
  Mat d0, d1;
  split_samples(samples, target, d0, d1);
  const CfWeights cw = cf_weights(d0, d1, target);
  return (cw.w.transpose() * fvals).transpose();
}

RateResult rate_experiment(const SteinTarget& target, const std::function<double(const Vec&)>& f,
                           double true_value, const std::vector<int>& ns, int trials,
                           uint64_t seed) {
  if (ns.empty()) throw Error("rate_experiment: empty N grid");
  if (trials < 1) throw Error("rate_experiment: trials must be >= 1");
  RateResult out;
  out.ns = ns;
  out.trials = trials;
  out.cf_err.resize(static_cast<Eigen::Index>(ns.size()));
  out.mc_err.resize(static_cast<Eigen::Index>(ns.size()));
  for (size_t gi = 0; gi < ns.size(); ++gi) {
    const int n = ns[gi];
    double cf_acc = 0.0, mc_acc = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
      Rng rng(mix_seed(seed, (static_cast<uint64_t>(gi) << 32) + static_cast<uint64_t>(trial)));
      Mat samples(n, target.dim);
      Vec fv(n);
      for (int i = 0; i < n; ++i) {
        for (int d = 0; d < target.dim; ++d) samples(i, d) = rng.normal();
        fv[i] = f(samples.row(i).transpose());
      }
      cf_acc += std::abs(cf_estimate(samples, fv, target) - true_value);
      mc_acc += std::abs(fv.mean() - true_value);
    }
    out.cf_err[static_cast<Eigen::Index>(gi)] = cf_acc / trials;
    out.mc_err[static_cast<Eigen::Index>(gi)] = mc_acc / trials;
  }
  auto slope = [&](const Vec& err) {
    const Eigen::Index k = err.size();
    Vec x(k), y(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      x[i] = std::log(static_cast<double>(ns[static_cast<size_t>(i)]));
      y[i] = std::log(std::max(err[i], 1e-300));
    }
    const double xm = x.mean(), ym = y.mean();
    return (x.array() - xm).cwiseProduct(y.array() - ym).sum() / (x.array() - xm).square().sum();
  };
  out.cf_slope = slope(out.cf_err);
  out.mc_slope = slope(out.mc_err);
  return out;
}

void write_rate_csv(const RateResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "N,cf_err,mc_err,trials\n";
  char buf[128];
  for (size_t i = 0; i < r.ns.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%d\n", r.ns[i],
                  r.cf_err[static_cast<Eigen::Index>(i)], r.mc_err[static_cast<Eigen::Index>(i)],
                  r.trials);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "slope,%.10g,%.10g,%d\n", r.cf_slope, r.mc_slope, r.trials);
  out << buf;
  if (!out) throw Error("write failed on '" + path + "'");
}

}  // namespace polrep
