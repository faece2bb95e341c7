// Python surface: dataset generation, two-phase training, encoding/decoding,
// value prediction, steering, and the quadrature routines.
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "polrep/cfquad.hpp"
#include "polrep/config.hpp"
#include "polrep/evalkit.hpp"

namespace py = pybind11;
using namespace polrep;

namespace {

Mat dataset_returns(const Dataset& ds) {
  Mat r(ds.trajectories.size(), Dataset::kNumTasks);
  for (size_t i = 0; i < ds.trajectories.size(); ++i)
    r.row(static_cast<int>(i)) = ds.trajectories[i].returns.transpose();
  return r;
}

Vec dataset_knobs(const Dataset& ds) {
  Vec k(ds.trajectories.size());
  for (size_t i = 0; i < ds.trajectories.size(); ++i)
    k[static_cast<int>(i)] = ds.trajectories[i].knob;
  return k;
}

Bundle train_full(const Dataset& ds, const TrainConfig& cfg) {
  Model model = make_model(cfg);
  train_phase1(model, ds, cfg);
  train_phase2(model, ds, cfg);
  Bundle b;
  b.model = std::move(model);
  b.train = cfg;
  b.stats = ds.stats;
  b.bank = build_embedding_bank(b.model, ds, cfg.context_length, cfg.seed);
  return b;
}

Vec embed_trajectory(const Bundle& b, const Dataset& ds, int traj_idx, uint64_t seed) {
  Rng rng(mix_seed(seed, 0x63747800u + static_cast<uint64_t>(traj_idx)));
  const ContextSet ctx = sample_context(ds, traj_idx, b.train.context_length, rng);
  return b.model.encode({ctx}).mu.row(0).transpose();
}

py::dict steer_to_dict(const SteeringOutcome& out) {
  py::dict d;
  d["success"] = out.success;
  d["termination"] = out.termination;
  d["iterations"] = static_cast<int>(out.trace.steps.size()) - 1;
  d["h_final"] = out.h_final;
  d["predicted"] = out.predicted_raw;
  d["realized"] = out.realized_raw;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "context-set policy representations: C++ core operations";

  py::register_exception<Error>(m, "CoreError");

  py::class_<EnvConfig>(m, "EnvConfig")
      .def(py::init<>())
      .def_readwrite("dt", &EnvConfig::dt)
      .def_readwrite("drag", &EnvConfig::drag)
      .def_readwrite("gain", &EnvConfig::gain)
      .def_readwrite("ctrl_gain", &EnvConfig::ctrl_gain)
      .def_readwrite("noise_sigma", &EnvConfig::noise_sigma)
      .def_readwrite("horizon", &EnvConfig::horizon);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("n_trajectories",
                             [](const Dataset& d) { return d.trajectories.size(); })
      .def_property_readonly("train_indices",
                             [](const Dataset& d) { return d.train_idx; })
      .def_property_readonly("test_indices", [](const Dataset& d) { return d.test_idx; })
      .def_property_readonly("returns", &dataset_returns)
      .def_property_readonly("knobs", &dataset_knobs)
      .def_property_readonly("horizon", [](const Dataset& d) { return d.horizon; });

  m.def("build_dataset", &build_dataset, py::arg("env"), py::arg("n_knobs"),
        py::arg("traj_per_knob"), py::arg("holdout_every"), py::arg("seed"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));
  m.def("load_dataset", &load_dataset, py::arg("path"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("context_length", &TrainConfig::context_length)
      .def_readwrite("rep_epochs", &TrainConfig::rep_epochs)
      .def_readwrite("rep_batch", &TrainConfig::rep_batch)
      .def_readwrite("reg_epochs", &TrainConfig::reg_epochs)
      .def_readwrite("reg_batch", &TrainConfig::reg_batch)
      .def_readwrite("hidden", &TrainConfig::hidden)
      .def_readwrite("latent_dim", &TrainConfig::latent_dim)
      .def_readwrite("task_dim", &TrainConfig::task_dim)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("zeta", &TrainConfig::zeta)
      .def_readwrite("beta_start", &TrainConfig::beta_start)
      .def_readwrite("beta_end", &TrainConfig::beta_end)
      .def_readwrite("tau_sim", &TrainConfig::tau_sim)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("vae_only", &TrainConfig::vae_only)
      .def_readwrite("unconstrained_projector", &TrainConfig::unconstrained_projector)
      .def_readwrite("mean_pool_encoder", &TrainConfig::mean_pool_encoder)
      .def_readwrite("deterministic_ae", &TrainConfig::deterministic_ae);

  // registered before Bundle and the cf_* functions: both use these as defaults
  py::class_<SteerOptions>(m, "SteerOptions")
      .def(py::init<>())
      .def_readwrite("eta_h", &SteerOptions::eta_h)
      .def_readwrite("eta_lambda", &SteerOptions::eta_lambda)
      .def_readwrite("max_iters", &SteerOptions::max_iters)
      .def_readwrite("n_neighbors", &SteerOptions::n_neighbors)
      .def_readwrite("pca_rank", &SteerOptions::pca_rank)
      .def_readwrite("tol_target", &SteerOptions::tol_target)
      .def_readwrite("tol_constraint", &SteerOptions::tol_constraint)
      .def_readwrite("n_eval", &SteerOptions::n_eval);

  py::class_<SteinTarget>(m, "SteinTarget")
      .def(py::init<>())
      .def_readwrite("dim", &SteinTarget::dim)
      .def_readwrite("lengthscale", &SteinTarget::lengthscale)
      .def_readwrite("lambda_reg", &SteinTarget::lambda_reg)
      .def_readwrite("split_frac", &SteinTarget::split_frac)
      .def_readwrite("score", &SteinTarget::score);

  py::class_<Bundle>(m, "Bundle")
      .def_property_readonly("bank_embeddings",
                             [](const Bundle& b) { return b.bank.h; })
      .def_property_readonly("bank_knobs", [](const Bundle& b) { return b.bank.knobs; })
      .def_property_readonly("bank_returns",
                             [](const Bundle& b) { return b.bank.returns_raw; })
      .def("embed", &embed_trajectory, py::arg("dataset"), py::arg("traj_idx"),
           py::arg("seed"))
      .def("project",
           [](const Bundle& b, const Mat& h, int task) { return b.model.project(h, task); },
           py::arg("h"), py::arg("task"))
      .def("predict_values",
           [](Bundle& b, const Vec& h) {
             Vec out(b.model.config().n_tasks);
             for (int k = 0; k < b.model.config().n_tasks; ++k) {
               const Mat z = b.model.project(h.transpose(), k);
               out[k] = b.model.predict_value(z, k)(0);
             }
             return out;
           },
           py::arg("h"),
           "per-task value predictions in normalized units")
      .def("rollout_returns",
           [](Bundle& b, const EnvConfig& env, const Vec& h, int n_eval, uint64_t seed) {
             return decode_eval(b.model, b.stats, env, h, n_eval, seed);
           },
           py::arg("env"), py::arg("h"), py::arg("n_eval"), py::arg("seed"),
           "decode the embedding and roll it out; raw return means")
      .def("steer",
           [](Bundle& b, const EnvConfig& env, double target,
              const std::vector<std::pair<int, double>>& constraints, int init_index,
              bool project, const SteerOptions& opt, uint64_t seed) {
             SteeringQuery q;
             q.target_raw = target;
             for (const auto& [task, bound] : constraints)
               q.constraints_raw.push_back({task - 1, bound});
             q.init_index = init_index;
             q.project = project;
             return steer_to_dict(run_steering(b, env, q, opt, seed));
           },
           py::arg("env"), py::arg("target"),
           py::arg("constraints") = std::vector<std::pair<int, double>>{},
           py::arg("init_index") = -1, py::arg("project") = true,
           py::arg("options") = SteerOptions{}, py::arg("seed") = 1,
           "steer toward a raw task-1 return target; constraints are (task, bound) "
           "pairs with 1-based task numbers");

  m.def("train", &train_full, py::arg("dataset"), py::arg("config"),
        "two-phase training; returns the bundle");
  m.def("save_bundle",
        [](const std::string& path, const Bundle& b) {
          save_bundle(path, b.model, b.train, b.stats, b.bank, b.config_text);
        },
        py::arg("path"), py::arg("bundle"));
  m.def("load_bundle", &load_bundle, py::arg("path"));

  m.def("stein_kernel", &stein_kernel, py::arg("x"), py::arg("y"), py::arg("target"),
        py::arg("lengthscale"));
  m.def("cf_weights",
        [](const Mat& d0, const Mat& d1, const SteinTarget& t) {
          const CfWeights w = cf_weights(d0, d1, t);
          return py::make_tuple(w.w, w.n_fit, w.lengthscale);
        },
        py::arg("d0"), py::arg("d1"), py::arg("target") = SteinTarget{});
  m.def("cf_estimate",
        [](const Mat& samples, const Vec& fvals, const SteinTarget& t) {
          return cf_estimate(samples, fvals, t);
        },
        py::arg("samples"), py::arg("fvals"), py::arg("target") = SteinTarget{});

  m.def("spearman", &spearman, py::arg("x"), py::arg("y"));
  m.def("mix_seed", &mix_seed, py::arg("base"), py::arg("stream"));
}
