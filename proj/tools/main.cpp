// Command-line front end: data generation, training, evaluation, steering,
// and the quadrature rate study. Every subcommand takes --config/--seed/--out;
// the effective configuration is echoed into the output directory.
#include "polrep/cfquad.hpp"
#include "polrep/config.hpp"
#include "polrep/evalkit.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace polrep;

namespace {

struct CliArgs {
  std::string config_path;
  std::string out_dir = "out";
  uint64_t seed = 0;
  bool seed_given = false;
  std::string data_path;
  std::string bundle_path;
  std::string split = "both";
  double target = 0.0;
  std::vector<std::string> constraint_specs;
  int init_index = -1;
  bool no_project = false;
};

// Files created by the current run; removed if it fails partway.
struct OutputTracker {
  std::vector<fs::path> files;
  fs::path track(const fs::path& p) {
    files.push_back(p);
    return p;
  }
  void discard_all() {
    for (const auto& p : files) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
};

RunConfig load_effective_config(const CliArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_config(args.config_path);
  if (args.seed_given) override_seed(cfg, args.seed);
  return cfg;
}

void echo_config(const RunConfig& cfg, const fs::path& out_dir, OutputTracker& track) {
  const fs::path p = track.track(out_dir / "effective_config.txt");
  std::ofstream f(p);
  if (!f) throw Error("cannot write " + p.string());
  f << serialize_config(cfg);
}

std::vector<double> to_std(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

// one reparameterized draw per trajectory; the probe regresses these, not the means,
// so posterior noise counts against the representation
Mat encode_split_samples(Bundle& bundle, const Dataset& ds, const std::vector<int>& ids,
                         uint64_t seed) {
  const int latent = bundle.train.latent_dim;
  Mat h(ids.size(), latent);
  for (size_t i = 0; i < ids.size(); ++i) {
    Rng rng(mix_seed(seed, 0x63747800u + static_cast<uint64_t>(ids[i])));
    const ContextSet ctx = sample_context(ds, ids[i], bundle.train.context_length, rng);
    const Posterior post = bundle.model.encode({ctx});
    Mat eps(1, latent);
    for (int d = 0; d < latent; ++d) eps(0, d) = rng.normal();
    h.row(i) = bundle.model.reparameterize(post, eps).row(0);
  }
  return h;
}

Mat normalized_returns(const Dataset& ds, const std::vector<int>& ids) {
  Mat y(ids.size(), Dataset::kNumTasks);
  for (size_t i = 0; i < ids.size(); ++i)
    for (int k = 0; k < Dataset::kNumTasks; ++k)
      y(static_cast<int>(i), k) =
          ds.stats.norm_return(ds.trajectories[ids[i]].returns[k], k);
  return y;
}

int cmd_gen_data(const CliArgs& args, OutputTracker& track) {
  const RunConfig cfg = load_effective_config(args);
  echo_config(cfg, args.out_dir, track);
  const Dataset ds = build_dataset(cfg.env, cfg.data.n_knobs, cfg.data.traj_per_knob,
                                   cfg.data.holdout_every, cfg.data.seed);
  const fs::path out = track.track(fs::path(args.out_dir) / "dataset.bin");
  save_dataset(ds, out.string());
  std::printf("wrote %s: %zu trajectories (%zu train / %zu test), horizon %d\n",
              out.string().c_str(), ds.trajectories.size(), ds.train_idx.size(),
              ds.test_idx.size(), ds.horizon);
  return 0;
}

int cmd_train(const CliArgs& args, OutputTracker& track) {
  const RunConfig cfg = load_effective_config(args);
  echo_config(cfg, args.out_dir, track);
  const Dataset ds = load_dataset(args.data_path);
  Model model = make_model(cfg.train);
  const fs::path log_path = track.track(fs::path(args.out_dir) / "train_log.csv");
  std::error_code ec;
  fs::remove(log_path, ec);
  const TrainLog log1 = train_phase1(model, ds, cfg.train);
  log1.append_csv(log_path.string(), Dataset::kNumTasks);
  const TrainLog log2 = train_phase2(model, ds, cfg.train);
  log2.append_csv(log_path.string(), Dataset::kNumTasks);
  const EmbeddingBank bank =
      build_embedding_bank(model, ds, cfg.train.context_length, cfg.train.seed);
  const fs::path bundle_path = track.track(fs::path(args.out_dir) / "bundle.bin");
  save_bundle(bundle_path.string(), model, cfg.train, ds.stats, bank,
              serialize_config(cfg));
  const LossBreakdown& last = log1.epochs.back().mean;
  std::printf("wrote %s; final recon %.6f kl %.6f rnc %.6f ortho %.6f value %.6f\n",
              bundle_path.string().c_str(), last.nll, last.kl, last.rnc.mean(),
              last.ortho.mean(), log2.epochs.back().mean.value_mse.mean());
  return 0;
}

int cmd_probe(const CliArgs& args, OutputTracker& track) {
  const RunConfig cfg = load_effective_config(args);
  echo_config(cfg, args.out_dir, track);
  const Dataset ds = load_dataset(args.data_path);
  Bundle bundle = load_bundle(args.bundle_path);

  std::vector<Mat> z_per_task;
  for (int k = 0; k < bundle.model.config().n_tasks; ++k)
    z_per_task.push_back(bundle.model.project(bundle.bank.h, k));
  Rng rng(mix_seed(cfg.eval.seed, 0x6f726472u));
  const OrderingReport ord =
      ordering_metrics(z_per_task, bundle.bank.returns_raw, cfg.eval.n_triplets, rng);
  write_ordering_csv(ord, track.track(fs::path(args.out_dir) / "ordering.csv").string());

  const Mat h_train = encode_split_samples(bundle, ds, ds.train_idx, cfg.eval.seed);
  const Mat h_test = encode_split_samples(bundle, ds, ds.test_idx, cfg.eval.seed);
  const ProbeReport probe =
      linear_probe(h_train, normalized_returns(ds, ds.train_idx), h_test,
                   normalized_returns(ds, ds.test_idx), cfg.eval.probe_ridge);
  write_probe_csv({{"full", probe}},
                  track.track(fs::path(args.out_dir) / "probe.csv").string());

  for (int k = 0; k < ord.violation_rate.size(); ++k)
    std::printf("task %d: triplet violation %.4f, pair rank corr %.4f\n", k + 1,
                ord.violation_rate[k], ord.rank_corr[k]);
  std::printf("probe mse: train %.6f test %.6f\n", probe.train_mean, probe.test_mean);
  return 0;
}

int cmd_plot(const CliArgs& args, OutputTracker& track) {
  const RunConfig cfg = load_effective_config(args);
  echo_config(cfg, args.out_dir, track);
  Bundle bundle = load_bundle(args.bundle_path);
  const Pca2d p = pca2d_plotdata(bundle.bank.h, bundle.bank.knobs);
  write_pca_csv(p, bundle.bank.returns_raw, bundle.bank.knobs,
                track.track(fs::path(args.out_dir) / "pca.csv").string());
  write_pca_svg(p, bundle.bank.knobs,
                track.track(fs::path(args.out_dir) / "pca.svg").string());
  std::printf("pc1/knob rank correlation: %.4f\n", p.pc1_knob_rank_corr);
  return 0;
}

int cmd_eval_imitation(const CliArgs& args, OutputTracker& track) {
  const RunConfig cfg = load_effective_config(args);
  echo_config(cfg, args.out_dir, track);
  const Dataset ds = load_dataset(args.data_path);
  Bundle bundle = load_bundle(args.bundle_path);
  if (args.split != "train" && args.split != "test" && args.split != "both")
    throw Error("eval-imitation: --split must be train, test, or both");
  for (const std::string& split : {std::string("train"), std::string("test")}) {
    if (args.split != "both" && args.split != split) continue;
    const ImitationReport rep = imitation_eval(bundle, ds, cfg.env, split == "test",
                                               cfg.eval.n_eval, cfg.eval.seed);
    write_imitation_csv(
        rep, track.track(fs::path(args.out_dir) / ("imitation_" + split + ".csv")).string());
    std::printf("%s split: median relative return gap %.4f (per task %.4f / %.4f)\n",
                split.c_str(), rep.median_overall, rep.median_per_task[0],
                rep.median_per_task[1]);
  }
  return 0;
}

SteeringQuery parse_query(const CliArgs& args) {
  SteeringQuery q;
  q.target_raw = args.target;
  q.init_index = args.init_index;
  q.project = !args.no_project;
  for (const std::string& spec : args.constraint_specs) {
    const size_t colon = spec.find(':');
    if (colon == std::string::npos)
      throw Error("steer: constraint must be task:bound, got '" + spec + "'");
    int task = 0;
    double bound = 0.0;
    try {
      task = std::stoi(spec.substr(0, colon));
      bound = std::stod(spec.substr(colon + 1));
    } catch (const std::exception&) {
      throw Error("steer: constraint must be task:bound, got '" + spec + "'");
    }
    if (task < 2) throw Error("steer: constraints apply to tasks >= 2");
    q.constraints_raw.push_back({task - 1, bound});
  }
  return q;
}

int cmd_steer(const CliArgs& args, OutputTracker& track) {
  const RunConfig cfg = load_effective_config(args);
  echo_config(cfg, args.out_dir, track);
  Bundle bundle = load_bundle(args.bundle_path);
  const SteeringQuery query = parse_query(args);
  const SteeringOutcome out =
      run_steering(bundle, cfg.env, query, cfg.steer, cfg.steer_seed);
  write_trace_csv(out.trace,
                  track.track(fs::path(args.out_dir) / "steer_trace.csv").string());
  json result;
  result["success"] = out.success;
  result["termination"] = out.termination;
  result["iterations"] = out.trace.steps.size() - 1;
  result["target"] = query.target_raw;
  result["predicted"] = to_std(out.predicted_raw);
  result["realized"] = to_std(out.realized_raw);
  result["h_final"] = to_std(out.h_final);
  const fs::path jp = track.track(fs::path(args.out_dir) / "steer_result.json");
  std::ofstream jf(jp);
  if (!jf) throw Error("cannot write " + jp.string());
  jf << result.dump(2) << "\n";
  std::printf("steering %s after %zu iterations; predicted (%.4f, %.4f), realized "
              "(%.4f, %.4f)\n",
              out.success ? "succeeded" : "failed", out.trace.steps.size() - 1,
              out.predicted_raw[0], out.predicted_raw[1], out.realized_raw[0],
              out.realized_raw[1]);
  return 0;
}

int cmd_bench_steer(const CliArgs& args, OutputTracker& track) {
  const RunConfig cfg = load_effective_config(args);
  echo_config(cfg, args.out_dir, track);
  Bundle bundle = load_bundle(args.bundle_path);
  const BenchReport rep = steering_benchmark(bundle, cfg.env, cfg.eval.n_queries,
                                             cfg.steer, cfg.eval.seed);
  write_bench_csv(rep, track.track(fs::path(args.out_dir) / "bench.csv").string());
  std::printf("success %.1f%%, target error %.2f%%, constraint breach %.2f%% over %d "
              "queries\n",
              rep.success_pct, rep.e_targ_pct, rep.e_cons_pct, cfg.eval.n_queries);
  return 0;
}

int cmd_cf_rate(const CliArgs& args, OutputTracker& track) {
  const RunConfig cfg = load_effective_config(args);
  echo_config(cfg, args.out_dir, track);
  SteinTarget target;
  target.dim = 1;
  const auto f = [](const Vec& x) { return x[0] * x[0]; };  // mean 1 under N(0,1)
  const std::vector<int> ns = {8, 16, 32, 64, 128, 256};
  const RateResult r = rate_experiment(target, f, 1.0, ns, 100, cfg.eval.seed);
  write_rate_csv(r, track.track(fs::path(args.out_dir) / "rate.csv").string());
  std::printf("error slopes: quadrature %.3f, plain monte carlo %.3f\n", r.cf_slope,
              r.mc_slope);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"context-set policy representations: training, probing, and steering"};
  app.require_subcommand(1);
  CliArgs args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "run configuration file");
    sub->add_option("--seed", args.seed, "override every seed in the config")
        ->each([&](const std::string&) { args.seed_given = true; });
    sub->add_option("--out", args.out_dir, "output directory (created if missing)");
  };
  auto need_data = [&](CLI::App* sub) {
    sub->add_option("--data", args.data_path, "dataset file")->required();
  };
  auto need_bundle = [&](CLI::App* sub) {
    sub->add_option("--bundle", args.bundle_path, "trained checkpoint bundle")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the trajectory dataset");
  add_common(gen);
  CLI::App* train = app.add_subcommand("train", "two-phase training on a dataset");
  add_common(train);
  need_data(train);
  CLI::App* probe = app.add_subcommand("probe", "ordering metrics and linear value probe");
  add_common(probe);
  need_data(probe);
  need_bundle(probe);
  CLI::App* evalim = app.add_subcommand("eval-imitation", "decode-and-rollout return fidelity");
  add_common(evalim);
  need_data(evalim);
  need_bundle(evalim);
  evalim->add_option("--split", args.split, "train, test, or both");
  CLI::App* steer = app.add_subcommand("steer", "steer one embedding to a return target");
  add_common(steer);
  need_bundle(steer);
  steer->add_option("--target", args.target, "raw task-1 return target")->required();
  steer->add_option("--constraint", args.constraint_specs,
                    "task:bound lower bound on a raw return, e.g. 2:-10");
  steer->add_option("--init", args.init_index, "bank index of the starting embedding");
  steer->add_flag("--no-project", args.no_project, "skip the tangent projection");
  CLI::App* bench = app.add_subcommand("bench-steer", "randomized steering benchmark");
  add_common(bench);
  need_bundle(bench);
  CLI::App* rate = app.add_subcommand("cf-rate", "quadrature error-rate study");
  add_common(rate);
  CLI::App* plot = app.add_subcommand("plot", "2d embedding map of the bank");
  add_common(plot);
  need_bundle(plot);

  CLI11_PARSE(app, argc, argv);

  const std::string sub = app.get_subcommands().front()->get_name();
  OutputTracker track;
  try {
    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    if (ec) throw Error("cannot create output directory " + args.out_dir);
    if (sub == "gen-data") return cmd_gen_data(args, track);
    if (sub == "train") return cmd_train(args, track);
    if (sub == "probe") return cmd_probe(args, track);
    if (sub == "eval-imitation") return cmd_eval_imitation(args, track);
    if (sub == "steer") return cmd_steer(args, track);
    if (sub == "bench-steer") return cmd_bench_steer(args, track);
    if (sub == "cf-rate") return cmd_cf_rate(args, track);
    if (sub == "plot") return cmd_plot(args, track);
    std::fprintf(stderr, "polrep: unknown subcommand %s\n", sub.c_str());
    return 2;
  } catch (const std::exception& e) {
    track.discard_all();
    const std::string msg = e.what();
    std::fprintf(stderr, "polrep %s: %s\n", sub.c_str(), msg.c_str());
    // Configuration mistakes are usage errors; anything else is a runtime failure.
    return msg.rfind("config", 0) == 0 ? 2 : 1;
  }
}
