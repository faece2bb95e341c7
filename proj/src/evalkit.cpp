#include "polrep/evalkit.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace polrep {

namespace {

Vec average_ranks(const Vec& x) {
  const int n = static_cast<int>(x.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return x[a] < x[b]; });
  Vec ranks(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * (i + j) + 1.0;  // average rank, 1-based
    for (int t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw Error("median of empty sample");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

FILE* open_csv(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error("cannot open " + path + " for writing");
  return f;
}

}  // namespace

double spearman(const Vec& x, const Vec& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw Error("spearman needs two equal-length samples of size >= 2");
  const Vec rx = average_ranks(x);
  const Vec ry = average_ranks(y);
  const Vec cx = rx.array() - rx.mean();
  const Vec cy = ry.array() - ry.mean();
  const double denom = std::sqrt(cx.squaredNorm() * cy.squaredNorm());
  if (denom < 1e-12) return 0.0;  // a constant ranking carries no order signal
  return cx.dot(cy) / denom;
}

OrderingReport ordering_metrics(const std::vector<Mat>& z_per_task, const Mat& labels,
                                int n_triplets, Rng& rng) {
  const int n_tasks = static_cast<int>(z_per_task.size());
  const int n = static_cast<int>(labels.rows());
  if (n_tasks == 0 || n < 3) throw Error("ordering_metrics needs >= 3 rows");
  if (n_triplets < 1) throw Error("ordering_metrics needs n_triplets >= 1");
  OrderingReport rep;
  rep.violation_rate = Vec::Zero(n_tasks);
  rep.rank_corr = Vec::Zero(n_tasks);
  rep.n_triplets = n_triplets;
  for (int k = 0; k < n_tasks; ++k) {
    const Mat& z = z_per_task[k];
    if (z.rows() != n) throw Error("ordering_metrics: embedding/label row mismatch");
    int violations = 0, counted = 0;
    Vec dl(n_triplets), de(n_triplets);
    for (int t = 0; t < n_triplets; ++t) {
      // Rejection-sample a triplet with strictly ordered label distances.
      int i, j, l;
      int guard = 0;
      double dij, dil;
      do {
        i = rng.uniform_int(n);
        j = rng.uniform_int(n);
        l = rng.uniform_int(n);
        dij = std::abs(labels(i, k) - labels(j, k));
        dil = std::abs(labels(i, k) - labels(l, k));
        if (++guard > 10000)
          throw Error("ordering_metrics: could not sample distinct triplet");
      } while (i == j || i == l || j == l || dij == dil);
      if (dij > dil) {
        std::swap(j, l);
        std::swap(dij, dil);
      }
      const double eij = (z.row(i) - z.row(j)).norm();
      const double eil = (z.row(i) - z.row(l)).norm();
      if (!(eij < eil)) ++violations;
      ++counted;
      dl[t] = dij;
      de[t] = eij;
    }
    rep.violation_rate[k] = static_cast<double>(violations) / counted;
    rep.rank_corr[k] = spearman(dl, de);
  }
  return rep;
}

ProbeReport linear_probe(const Mat& h_train, const Mat& y_train, const Mat& h_test,
                         const Mat& y_test, double ridge) {
  const int n = static_cast<int>(h_train.rows());
  const int d = static_cast<int>(h_train.cols());
  const int n_tasks = static_cast<int>(y_train.cols());
  if (n < 2 || y_train.rows() != n) throw Error("linear_probe: bad training shapes");
  if (h_test.cols() != d || y_test.cols() != n_tasks)
    throw Error("linear_probe: bad test shapes");
  Mat xt(n, d + 1);
  xt << h_train, Vec::Ones(n);
  Mat gram = xt.transpose() * xt;
  for (int i = 0; i < d; ++i) gram(i, i) += ridge;  // intercept stays unpenalized
  Eigen::LDLT<Mat> solver(gram);
  if (solver.info() != Eigen::Success) throw Error("linear_probe: singular system");
  const Mat w = solver.solve(xt.transpose() * y_train);
  Mat xs(h_test.rows(), d + 1);
  xs << h_test, Vec::Ones(h_test.rows());
  ProbeReport rep;
  rep.train_mse = Vec::Zero(n_tasks);
  rep.test_mse = Vec::Zero(n_tasks);
  const Mat rtr = xt * w - y_train;
  const Mat rte = xs * w - y_test;
  for (int k = 0; k < n_tasks; ++k) {
    rep.train_mse[k] = rtr.col(k).squaredNorm() / n;
    rep.test_mse[k] = rte.col(k).squaredNorm() / std::max<int>(1, rte.rows());
  }
  rep.train_mean = rep.train_mse.mean();
  rep.test_mean = rep.test_mse.mean();
  return rep;
}

ImitationReport imitation_eval(Bundle& bundle, const Dataset& ds, const EnvConfig& env,
                               bool heldout_split, int n_eval, uint64_t seed) {
  const std::vector<int>& ids = heldout_split ? ds.test_idx : ds.train_idx;
  if (ids.empty()) throw Error("imitation_eval: empty split");
  const int L = bundle.train.context_length;
  ImitationReport rep;
  std::vector<double> pooled;
  std::vector<std::vector<double>> per_task(Dataset::kNumTasks);
  for (int tid : ids) {
    Rng ctx_rng(mix_seed(seed, 0x696d6900u + static_cast<uint64_t>(tid)));
    const ContextSet ctx = sample_context(ds, tid, L, ctx_rng);
    const Posterior post = bundle.model.encode({ctx});
    const Vec h = post.mu.row(0).transpose();
    const Vec realized = decode_eval(bundle.model, bundle.stats, env, h, n_eval,
                                     mix_seed(seed, 0x726f6c00u + static_cast<uint64_t>(tid)));
    ImitationRow row;
    row.traj = tid;
    row.knob = ds.trajectories[tid].knob;
    row.heldout = heldout_split;
    row.target = ds.trajectories[tid].returns;
    row.realized = Vec2(realized[0], realized[1]);
    for (int k = 0; k < Dataset::kNumTasks; ++k) {
      row.rel_diff[k] =
          std::abs(row.realized[k] - row.target[k]) / (std::abs(row.target[k]) + 1.0);
      pooled.push_back(row.rel_diff[k]);
      per_task[k].push_back(row.rel_diff[k]);
    }
    rep.rows.push_back(row);
  }
  rep.median_overall = median_of(pooled);
  rep.median_per_task = Vec::Zero(Dataset::kNumTasks);
  for (int k = 0; k < Dataset::kNumTasks; ++k)
    rep.median_per_task[k] = median_of(per_task[k]);
  return rep;
}

BenchReport steering_benchmark(Bundle& bundle, const EnvConfig& env, int n_queries,
                               const SteerOptions& opt, uint64_t seed) {
  if (n_queries < 1) throw Error("steering_benchmark needs n_queries >= 1");
  const int nb = static_cast<int>(bundle.bank.returns_raw.rows());
  if (nb < 2) throw Error("steering_benchmark: embedding bank too small");
  const Vec r1 = bundle.bank.returns_raw.col(0);
  const Vec r2 = bundle.bank.returns_raw.col(1);
  const double r1_lo = r1.minCoeff(), r1_hi = r1.maxCoeff();
  const double span = r1_hi - r1_lo;
  const double r2_lo = r2.minCoeff();
  Rng rng(mix_seed(seed, 0x62656e63u));
  BenchReport rep;
  double s_sum = 0.0, et_sum = 0.0, ec_sum = 0.0;
  for (int q = 0; q < n_queries; ++q) {
    BenchRow row;
    row.query = q;
    // Target inside the middle 80% of the achieved range; cost bound no
    // tighter than what the nearest-by-target bank member achieves.
    row.target = rng.uniform(r1_lo + 0.1 * span, r1_hi - 0.1 * span);
    int nearest = 0;
    for (int i = 1; i < nb; ++i)
      if (std::abs(r1[i] - row.target) < std::abs(r1[nearest] - row.target))
        nearest = i;
    const double reachable = r2[nearest];
    row.bound = reachable > r2_lo ? rng.uniform(r2_lo, reachable) : r2_lo;

    SteeringQuery query;
    query.target_raw = row.target;
    query.constraints_raw.push_back({1, row.bound});
    SteeringOutcome out = run_steering(bundle, env, query, opt,
                                       mix_seed(seed, 0x71000000u + static_cast<uint64_t>(q)));
    row.success = out.success;
    row.predicted_raw = out.predicted_raw;
    row.realized = Vec2(out.realized_raw[0], out.realized_raw[1]);
    row.e_targ = 100.0 * std::abs(row.realized[0] - row.target) /
                 std::max(std::abs(row.target), 1e-6);
    row.e_cons = 100.0 * std::max(0.0, row.bound - row.realized[1]) /
                 std::max(std::abs(row.bound), 1e-6);
    row.iters = static_cast<int>(out.trace.steps.size()) - 1;
    row.termination = out.termination;
    s_sum += row.success ? 1.0 : 0.0;
    et_sum += row.e_targ;
    ec_sum += row.e_cons;
    rep.rows.push_back(row);
  }
  rep.success_pct = 100.0 * s_sum / n_queries;
  rep.e_targ_pct = et_sum / n_queries;
  rep.e_cons_pct = ec_sum / n_queries;
  return rep;
}

Pca2d pca2d_plotdata(const Mat& h, const Vec& knobs) {
  const int n = static_cast<int>(h.rows());
  if (n < 3 || knobs.size() != n) throw Error("pca2d_plotdata: bad shapes");
  Mat centered = h.rowwise() - h.colwise().mean();
  Eigen::JacobiSVD<Mat> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Pca2d out;
  out.coords = centered * svd.matrixV().leftCols(2);
  out.pc1_knob_rank_corr = std::abs(spearman(out.coords.col(0), knobs));
  return out;
}

void write_ordering_csv(const OrderingReport& r, const std::string& path) {
  FILE* f = open_csv(path);
  std::fprintf(f, "task,violation_rate,rank_corr,n_triplets\n");
  for (int k = 0; k < r.violation_rate.size(); ++k)
    std::fprintf(f, "%d,%.10g,%.10g,%d\n", k + 1, r.violation_rate[k], r.rank_corr[k],
                 r.n_triplets);
  std::fclose(f);
}

void write_probe_csv(const std::vector<std::pair<std::string, ProbeReport>>& rows,
                     const std::string& path) {
  FILE* f = open_csv(path);
  std::fprintf(f, "variant,task,train_mse,test_mse\n");
  for (const auto& [name, rep] : rows) {
    for (int k = 0; k < rep.train_mse.size(); ++k)
      std::fprintf(f, "%s,%d,%.10g,%.10g\n", name.c_str(), k + 1, rep.train_mse[k],
                   rep.test_mse[k]);
    std::fprintf(f, "%s,mean,%.10g,%.10g\n", name.c_str(), rep.train_mean,
                 rep.test_mean);
  }
  std::fclose(f);
}

void write_imitation_csv(const ImitationReport& r, const std::string& path) {
  FILE* f = open_csv(path);
  std::fprintf(f, "traj,knob,heldout,target_1,target_2,realized_1,realized_2,"
                  "rel_diff_1,rel_diff_2\n");
  for (const auto& row : r.rows)
    std::fprintf(f, "%d,%.10g,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", row.traj,
                 row.knob, row.heldout ? 1 : 0, row.target[0], row.target[1],
                 row.realized[0], row.realized[1], row.rel_diff[0], row.rel_diff[1]);
  std::fprintf(f, "median,,,,,,,%.10g,%.10g\n", r.median_per_task[0],
               r.median_per_task[1]);
  std::fclose(f);
}

void write_bench_csv(const BenchReport& r, const std::string& path) {
  FILE* f = open_csv(path);
  std::fprintf(f, "query,target,bound,success,realized_1,realized_2,e_targ,e_cons,"
                  "iters,termination\n");
  for (const auto& row : r.rows)
    std::fprintf(f, "%d,%.10g,%.10g,%d,%.10g,%.10g,%.10g,%.10g,%d,%s\n", row.query,
                 row.target, row.bound, row.success ? 1 : 0, row.realized[0],
                 row.realized[1], row.e_targ, row.e_cons, row.iters,
                 row.termination.c_str());
  std::fprintf(f, "summary,,,%.10g,,,%.10g,%.10g,,\n", r.success_pct, r.e_targ_pct,
               r.e_cons_pct);
  std::fclose(f);
}

void write_pca_csv(const Pca2d& p, const Mat& returns, const Vec& knobs,
                   const std::string& path) {
  FILE* f = open_csv(path);
  std::fprintf(f, "x,y,r1,r2,knob\n");
  for (int i = 0; i < p.coords.rows(); ++i)
    std::fprintf(f, "%.10g,%.10g,%.10g,%.10g,%.10g\n", p.coords(i, 0), p.coords(i, 1),
                 returns(i, 0), returns(i, 1), knobs[i]);
  std::fclose(f);
}

void write_pca_svg(const Pca2d& p, const Vec& knobs, const std::string& path) {
  const int n = static_cast<int>(p.coords.rows());
  const double x_lo = p.coords.col(0).minCoeff(), x_hi = p.coords.col(0).maxCoeff();
  const double y_lo = p.coords.col(1).minCoeff(), y_hi = p.coords.col(1).maxCoeff();
  const double k_lo = knobs.minCoeff(), k_hi = knobs.maxCoeff();
  const double w = 640, hgt = 480, pad = 40;
  auto sx = [&](double x) {
    return pad + (w - 2 * pad) * (x - x_lo) / std::max(x_hi - x_lo, 1e-12);
  };
  auto sy = [&](double y) {
    return hgt - pad - (hgt - 2 * pad) * (y - y_lo) / std::max(y_hi - y_lo, 1e-12);
  };
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\""
    << hgt << "\" viewBox=\"0 0 " << w << " " << hgt << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << w - 2 * pad
    << "\" height=\"" << hgt - 2 * pad
    << "\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\"/>\n";
  for (int i = 0; i < n; ++i) {
    const double t = (knobs[i] - k_lo) / std::max(k_hi - k_lo, 1e-12);
    const int red = static_cast<int>(40 + 200 * t);
    const int blue = static_cast<int>(240 - 200 * t);
    f << "<circle cx=\"" << sx(p.coords(i, 0)) << "\" cy=\"" << sy(p.coords(i, 1))
      << "\" r=\"3\" fill=\"rgb(" << red << ",60," << blue << ")\" fill-opacity=\"0.8\"/>\n";
  }
  f << "<text x=\"" << w / 2 << "\" y=\"" << hgt - 10
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
    << "first principal coordinate</text>\n";
  f << "<text x=\"15\" y=\"" << hgt / 2
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
    << "transform=\"rotate(-90 15 " << hgt / 2 << ")\">second principal coordinate</text>\n";
  f << "</svg>\n";
  if (!f.good()) throw Error("failed writing " + path);
}

}  // namespace polrep
