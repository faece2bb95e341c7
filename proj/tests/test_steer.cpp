#include "polrep/steer.hpp"

#include "doctest.h"

#include <cmath>
#include <fstream>

using namespace polrep;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// one-dimensional linear surrogate: v_1 = h, v_2 = -h
class LinearFixture : public Surrogate {
 public:
  int n_tasks() const override { return 2; }
  double value(const Vec& h, int task) const override { return task == 0 ? h[0] : -h[0]; }
  Vec grad(const Vec& h, int task) const override {
    return Vec::Constant(1, task == 0 ? 1.0 : -1.0);
  }
};

// task 1 reports garbage on the negative half-line; task 0 stays clean
class HalfLineFixture : public Surrogate {
 public:
  int n_tasks() const override { return 2; }
  double value(const Vec& h, int task) const override {
    if (task == 0) return h[0];
    return h[0] < 0.0 ? std::nan("") : h[0];
  }
  Vec grad(const Vec&, int) const override { return Vec::Ones(1); }
};

class QuadFixture : public Surrogate {
 public:
  int n_tasks() const override { return 3; }
  double value(const Vec& h, int task) const override {
    return 0.5 * (task + 1) * h.squaredNorm() + h[0];
  }
  Vec grad(const Vec& h, int task) const override {
    Vec g = static_cast<double>(task + 1) * h;
    g[0] += 1.0;
    return g;
  }
};

struct TrainedFixture {
  Dataset ds;
  Bundle bundle;
  EnvConfig env;

  TrainedFixture() : bundle() {
    env.horizon = 16;
    ds = build_dataset(env, 6, 3, 3, 2);
    TrainConfig cfg;
    cfg.context_length = 8;
    cfg.rep_epochs = 3;
    cfg.rep_batch = 4;
    cfg.reg_epochs = 2;
    cfg.reg_batch = 8;
    cfg.hidden = 8;
    cfg.latent_dim = 4;
    cfg.task_dim = 2;
    cfg.seed = 11;
    Model model = make_model(cfg);
    train_phase1(model, ds, cfg);
    train_phase2(model, ds, cfg);
    bundle.model = model;
    bundle.train = cfg;
    bundle.stats = ds.stats;
    bundle.bank = build_embedding_bank(model, ds, cfg.context_length, cfg.seed);
    bundle.config_text = "";
  }
};

}  // namespace

TEST_CASE("tangent projector is a symmetric idempotent of the requested rank") {
  Rng rng(61);
  const Mat bank = random_mat(40, 6, rng);
  const Vec h = random_mat(6, 1, rng);
  const Mat p = tangent_projector(h, bank, 12, 4);
  REQUIRE(p.rows() == 6);
  REQUIRE(p.cols() == 6);
  CHECK((p * p - p).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(p.trace() == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("a one-dimensional neighborhood projects onto its line") {
  Rng rng(63);
  Vec dir(3);
  dir << 1.0, -2.0, 0.5;
  dir.normalize();
  Mat bank(20, 3);
  for (int i = 0; i < 20; ++i) bank.row(i) = (0.3 * i) * dir.transpose();
  const Vec h = 2.0 * dir;
  const Mat p = tangent_projector(h, bank, 8, 3);
  CHECK(p.trace() == doctest::Approx(1.0).epsilon(1e-8));
  CHECK((p * dir - dir).cwiseAbs().maxCoeff() <= 1e-10);
  Vec ortho(3);
  ortho << 2.0, 1.0, 0.0;  // orthogonal to dir
  CHECK((p * ortho).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("a spanning neighborhood yields the identity and a collapsed one yields zero") {
  Rng rng(65);
  const Mat bank = random_mat(30, 3, rng);
  const Vec h = random_mat(3, 1, rng);
  const Mat full = tangent_projector(h, bank, 10, 3);
  CHECK((full - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-12);

  Mat collapsed(12, 3);
  collapsed.rowwise() = Eigen::RowVector3d(0.4, -0.1, 0.9);
  const Mat zero = tangent_projector(h, collapsed, 8, 3);
  CHECK(zero.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("tangent projector input validation") {
  const Mat bank = Mat::Zero(10, 3);
  const Vec h = Vec::Zero(3);
  CHECK_THROWS_AS(tangent_projector(h, bank, 0, 1), Error);
  CHECK_THROWS_AS(tangent_projector(h, bank, 4, 5), Error);
  CHECK_THROWS_AS(tangent_projector(h, bank, 11, 2), Error);
  CHECK_THROWS_AS(tangent_projector(Vec::Zero(4), bank, 4, 2), Error);
}

TEST_CASE("lagrangian gradient matches finite differences of the scalar lagrangian") {
  QuadFixture sur;
  Rng rng(67);
  const Vec h = random_mat(3, 1, rng);
  Vec lambda(2);
  lambda << 0.7, 1.3;
  const double target = 0.4;
  const std::vector<Constraint> cons = {{1, 0.2}, {2, -0.1}};
  const Vec g = lagrangian_grad(sur, h, lambda, target, cons);

  auto scalar_l = [&](const Vec& hh) {
    double l = std::pow(sur.value(hh, 0) - target, 2);
    for (size_t j = 0; j < cons.size(); ++j)
      l += lambda[static_cast<Eigen::Index>(j)] * (cons[j].bound - sur.value(hh, cons[j].task));
    return l;
  };
  const double eps = 1e-6;
  for (int i = 0; i < 3; ++i) {
    Vec hp = h, hm = h;
    hp[i] += eps;
    hm[i] -= eps;
    CHECK(g[i] == doctest::Approx((scalar_l(hp) - scalar_l(hm)) / (2 * eps)).epsilon(1e-6));
  }

  CHECK_THROWS_AS(lagrangian_grad(sur, h, Vec::Zero(1), target, cons), Error);
  CHECK_THROWS_AS(lagrangian_grad(sur, h, Vec::Zero(1), target, {{0, 0.0}}), Error);
  CHECK_THROWS_AS(lagrangian_grad(sur, h, Vec::Zero(1), target, {{3, 0.0}}), Error);
}

TEST_CASE("primal-dual settles onto the constrained saddle point") {
  LinearFixture sur;
  SteerOptions opt;  // eta_h 0.05, eta_lambda 0.1, 500 iters
  const std::vector<Constraint> cons = {{1, -1.0}};  // -h >= -1, i.e. h <= 1

  for (const double start : {3.0, -0.5}) {
    const SteerTrace trace =
        primal_dual(sur, 2.0, cons, Vec::Constant(1, start), opt, nullptr);
    CHECK(trace.termination == "max_iters");  // target 2 is unreachable under h <= 1
    CHECK_FALSE(trace.success);
    REQUIRE(trace.steps.size() == static_cast<size_t>(opt.max_iters) + 1);
    const TraceStep& last = trace.steps.back();
    CHECK(std::abs(last.h[0] - 1.0) <= 1e-3);
    CHECK(std::abs(last.lambda[0] - 2.0) <= 1e-2);
    CHECK(trace.steps.front().h[0] == start);
    CHECK(trace.steps.front().lambda[0] == 0.0);
  }
}

TEST_CASE("primal-dual stops immediately when the start already qualifies") {
  LinearFixture sur;
  SteerOptions opt;
  const SteerTrace trace = primal_dual(sur, 0.49, {}, Vec::Constant(1, 0.5), opt, nullptr);
  CHECK(trace.termination == "converged");
  CHECK(trace.success);
  CHECK(trace.steps.size() == 1);
  CHECK(trace.steps[0].feasible);
}

TEST_CASE("primal-dual reports non-finite surrogate output instead of looping") {
  HalfLineFixture sur;
  SteerOptions opt;
  opt.max_iters = 200;
  // chasing a negative target walks h across zero, where task 2 turns to NaN
  const SteerTrace trace = primal_dual(sur, -5.0, {}, Vec::Constant(1, 1.0), opt, nullptr);
  CHECK(trace.termination == "non_finite");
  CHECK_FALSE(trace.success);
  CHECK(trace.steps.size() > 1);
  CHECK(trace.steps.size() < 200);
}

TEST_CASE("the projected update stays inside the projector's range") {
  QuadFixture sur;
  SteerOptions opt;
  opt.max_iters = 40;
  Mat p = Mat::Zero(3, 3);
  p(0, 0) = 1.0;  // only the first coordinate may move
  Vec h0(3);
  h0 << 2.0, 0.7, -0.4;
  const SteerTrace trace =
      primal_dual(sur, 0.0, {}, h0, opt, [&](const Vec&) { return p; });
  for (const TraceStep& s : trace.steps) {
    CHECK(s.h[1] == 0.7);
    CHECK(s.h[2] == -0.4);
  }
  CHECK(trace.steps.back().h[0] != 2.0);
}

TEST_CASE("model surrogate wraps projection and value heads with usable gradients") {
  TrainedFixture fx;
  ModelSurrogate sur(fx.bundle.model);
  CHECK(sur.n_tasks() == 2);
  Rng rng(69);
  const Vec h = random_mat(4, 1, rng);
  for (int k = 0; k < 2; ++k) {
    const Mat z = fx.bundle.model.project(h.transpose(), k);
    const double direct = fx.bundle.model.predict_value(z, k)[0];
    CHECK(sur.value(h, k) == doctest::Approx(direct).epsilon(1e-14));
    const Vec g = sur.grad(h, k);
    for (int i = 0; i < 4; ++i) {
      Vec hp = h, hm = h;
      hp[i] += 1e-6;
      hm[i] -= 1e-6;
      const double num = (sur.value(hp, k) - sur.value(hm, k)) / 2e-6;
      CHECK(std::abs(g[i] - num) <= 1e-5 * std::max(1.0, std::abs(num)));
    }
  }
}

TEST_CASE("decoder evaluation is seed-deterministic") {
  TrainedFixture fx;
  const Vec h = fx.bundle.bank.h.row(0).transpose();
  const Vec2 a = decode_eval(fx.bundle.model, fx.bundle.stats, fx.env, h, 4, 77);
  const Vec2 b = decode_eval(fx.bundle.model, fx.bundle.stats, fx.env, h, 4, 77);
  const Vec2 c = decode_eval(fx.bundle.model, fx.bundle.stats, fx.env, h, 4, 78);
  CHECK(a[0] == b[0]);
  CHECK(a[1] == b[1]);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
  CHECK(std::isfinite(a[0]));
  CHECK(std::isfinite(a[1]));
  CHECK_THROWS_AS(decode_eval(fx.bundle.model, fx.bundle.stats, fx.env, h, 0, 77), Error);
}

TEST_CASE("full steering runs end to end, deterministically") {
  TrainedFixture fx;
  SteerOptions opt;
  opt.max_iters = 50;
  opt.n_neighbors = 6;
  opt.pca_rank = 3;
  opt.n_eval = 2;

  SteeringQuery query;
  query.target_raw = fx.bundle.bank.returns_raw.col(0).mean();
  query.init_index = 0;
  const SteeringOutcome out = run_steering(fx.bundle, fx.env, query, opt, 5);
  REQUIRE(!out.trace.steps.empty());
  CHECK(out.h_final.size() == 4);
  CHECK(out.predicted_raw.size() == 2);
  CHECK(std::isfinite(out.realized_raw[0]));
  CHECK(std::isfinite(out.realized_raw[1]));
  CHECK((out.termination == "converged" || out.termination == "max_iters"));

  const SteeringOutcome again = run_steering(fx.bundle, fx.env, query, opt, 5);
  CHECK((out.h_final - again.h_final).cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.realized_raw[0] == again.realized_raw[0]);
  CHECK(out.trace.steps.size() == again.trace.steps.size());

  // every visited iterate sees a well-formed tangent projector
  size_t checked = 0;
  for (const TraceStep& s : out.trace.steps) {
    if (++checked > 10) break;
    const Mat p = tangent_projector(s.h, fx.bundle.bank.h, opt.n_neighbors, opt.pca_rank);
    CHECK((p * p - p).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-8);
  }

  SteeringQuery bad = query;
  bad.init_index = 1000;
  CHECK_THROWS_AS(run_steering(fx.bundle, fx.env, bad, opt, 5), Error);
}

TEST_CASE("a target the start already satisfies succeeds without moving") {
  TrainedFixture fx;
  SteerOptions opt;
  opt.n_eval = 2;
  const Vec h0 = fx.bundle.bank.h.row(0).transpose();
  ModelSurrogate sur(fx.bundle.model);
  const double v1_norm = sur.value(h0, 0);
  SteeringQuery query;
  query.target_raw = fx.bundle.stats.denorm_return(v1_norm, 0);
  query.init_index = 0;
  const SteeringOutcome out = run_steering(fx.bundle, fx.env, query, opt, 5);
  CHECK(out.success);
  CHECK(out.termination == "converged");
  CHECK(out.trace.steps.size() == 1);
  CHECK((out.h_final - h0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("trace csv lists one row per iterate with per-task and multiplier columns") {
  SteerTrace trace;
  for (int t = 0; t < 2; ++t) {
    TraceStep s;
    s.h = Vec::Constant(3, 1.0 + t);
    s.lambda = Vec::Constant(1, 0.25 * t);
    s.predicted = Vec::Constant(2, 0.5);
    s.feasible = t == 1;
    trace.steps.push_back(s);
  }
  const std::string path = "/tmp/polrep_trace_test.csv";
  write_trace_csv(trace, path);
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  std::remove(path.c_str());
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "t,h_norm,pred_1,pred_2,lambda_1,feasible");
  CHECK(lines[1].substr(0, 2) == "0,");
  CHECK(lines[1].back() == '0');
  CHECK(lines[2].back() == '1');
}
