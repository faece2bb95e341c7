#include "polrep/trainer.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace polrep {

LossWeights TrainConfig::effective_weights() const {
  LossWeights w;
  w.alpha = vae_only ? 0.0 : alpha;
  w.zeta = unconstrained_projector ? 0.0 : zeta;
  w.beta_start = beta_start;
  w.beta_end = beta_end;
  w.tau_sim = tau_sim;
  return w;
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig mc;
  mc.latent_dim = latent_dim;
  mc.task_dim = task_dim;
  mc.n_tasks = Dataset::kNumTasks;
  mc.hidden = hidden;
  mc.mean_pool = mean_pool_encoder;
  mc.deterministic = deterministic_ae;
  return mc;
}

Model make_model(const TrainConfig& cfg) {
  Model model(cfg.model_config());
  model.init(cfg.seed);
  return model;
}

void TrainLog::append_csv(const std::string& path, int n_tasks) const {
  std::ifstream probe(path);
  const bool fresh = !probe || probe.peek() == std::ifstream::traits_type::eof();
  probe.close();
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  if (fresh) {
    out << "epoch,nll,kl";
    for (int k = 1; k <= n_tasks; ++k) out << ",rnc_" << k;
    for (int k = 1; k <= n_tasks; ++k) out << ",ortho_" << k;
    for (int k = 1; k <= n_tasks; ++k) out << ",value_mse_" << k;
    out << ",total,h_norm\n";
  }
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), ",%.10g", v);
    out << buf;
  };
  for (const EpochLog& e : epochs) {
    out << e.epoch;
    put(e.mean.nll);
    put(e.mean.kl);
    for (int k = 0; k < n_tasks; ++k) put(e.mean.rnc.size() > k ? e.mean.rnc[k] : 0.0);
    for (int k = 0; k < n_tasks; ++k)
      put(e.mean.ortho.size() > k ? e.mean.ortho[k] : 0.0);
    for (int k = 0; k < n_tasks; ++k)
      put(e.mean.value_mse.size() > k ? e.mean.value_mse[k] : 0.0);
    put(e.mean.total);
    put(e.h_norm);
    out << "\n";
  }
  if (!out) throw Error("write failed on '" + path + "'");
}

namespace {

std::vector<std::vector<int>> epoch_batches(const Dataset& ds, int batch_size, Rng& rng) {
  std::vector<int> ids = ds.train_idx;
  rng.shuffle(ids);
  std::vector<std::vector<int>> batches;
  for (size_t start = 0; start + static_cast<size_t>(batch_size) <= ids.size();
       start += static_cast<size_t>(batch_size)) {
    batches.emplace_back(ids.begin() + static_cast<long>(start),
                         ids.begin() + static_cast<long>(start) + batch_size);
  }
  return batches;
}

Mat draw_noise(int rows, int cols, Rng& rng) {
  Mat eps(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) eps(i, j) = rng.normal();
  }
  return eps;
}

}  // namespace

TrainLog train_phase1(Model& model, const Dataset& ds, const TrainConfig& cfg) {
  if (static_cast<int>(ds.train_idx.size()) < cfg.rep_batch) {
    throw Error("train_phase1: train split smaller than batch size");
  }
  const LossWeights w = cfg.effective_weights();
  const AdamwConfig opt{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
  AdamwState opt_state;
  const std::vector<std::string> update_set = model.representation_param_names();
  const int K = model.config().n_tasks;

  TrainLog log;
  for (int epoch = 0; epoch < cfg.rep_epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 0x70310000ULL + static_cast<uint64_t>(epoch)));
    const auto batches = epoch_batches(ds, cfg.rep_batch, rng);
    LossBreakdown acc;
    acc.rnc = Vec::Zero(K);
    acc.ortho = Vec::Zero(K);
    double h_norm_acc = 0.0;
    for (size_t b = 0; b < batches.size(); ++b) {
      try {
        const TwoViewBatch batch = two_view_batch(ds, batches[b], cfg.context_length, rng);
        const Mat eps = draw_noise(2 * cfg.rep_batch, cfg.latent_dim, rng);
        model.params().zero_grad();
        double h_norm = 0.0;
        const LossBreakdown part =
            phase1_loss(model, batch, eps, w, epoch, cfg.rep_epochs, true, &h_norm);
        adamw_step(model.params(), update_set, opt, opt_state);
        acc.nll += part.nll;
        acc.kl += part.kl;
        acc.rnc += part.rnc;
        acc.ortho += part.ortho;
        acc.total += part.total;
        acc.beta = part.beta;
        h_norm_acc += h_norm;
      } catch (const Error& e) {
        throw Error("train_phase1: epoch " + std::to_string(epoch) + " batch " +
                    std::to_string(b) + ": " + e.what());
      }
    }
    const double nb = static_cast<double>(batches.size());
    EpochLog el;
    el.epoch = epoch;
    el.mean.nll = acc.nll / nb;
    el.mean.kl = acc.kl / nb;
    el.mean.rnc = acc.rnc / nb;
    el.mean.ortho = acc.ortho / nb;
    el.mean.value_mse = Vec();
    el.mean.beta = acc.beta;
    el.mean.total = acc.total / nb;
    el.h_norm = h_norm_acc / nb;
    log.epochs.push_back(el);
  }
  return log;
}

TrainLog train_phase2(Model& model, const Dataset& ds, const TrainConfig& cfg) {
  if (static_cast<int>(ds.train_idx.size()) < cfg.reg_batch) {
    throw Error("train_phase2: train split smaller than batch size");
  }
  const AdamwConfig opt{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
  AdamwState opt_state;
  const std::vector<std::string> update_set = model.regressor_param_names();
  const int K = model.config().n_tasks;
  const int dim = model.config().task_dim;

  TrainLog log;
  for (int epoch = 0; epoch < cfg.reg_epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 0x70320000ULL + static_cast<uint64_t>(epoch)));
    const auto batches = epoch_batches(ds, cfg.reg_batch, rng);
    Vec mse_acc = Vec::Zero(K);
    for (size_t b = 0; b < batches.size(); ++b) {
      try {
        const auto& ids = batches[b];
        const int n = static_cast<int>(ids.size());
        std::vector<ContextSet> contexts;
        contexts.reserve(static_cast<size_t>(n));
        Mat labels(n, K);
        for (int i = 0; i < n; ++i) {
          contexts.push_back(sample_context(ds, ids[static_cast<size_t>(i)], cfg.context_length, rng));
          for (int k = 0; k < K; ++k) {
            labels(i, k) =
                ds.stats.norm_return(ds.trajectories[static_cast<size_t>(ids[static_cast<size_t>(i)])].returns[k], k);
          }
        }
        const Posterior post = model.encode(contexts);
        const Mat eps = draw_noise(n, cfg.latent_dim, rng);
        const Mat h = model.reparameterize(post, eps);
        model.params().zero_grad();
        for (int k = 0; k < K; ++k) {
          const Mat z = model.project(h, k);
          Mlp::Tape tape;
          const Vec pred = model.predict_value(z, k, &tape);
          Vec d_pred = Vec::Zero(n);
          mse_acc[k] += value_loss(pred, labels.col(k), &d_pred);
          model.predict_value_backward(k, tape, d_pred);
        }
        adamw_step(model.params(), update_set, opt, opt_state);
      } catch (const Error& e) {
        throw Error("train_phase2: epoch " + std::to_string(epoch) + " batch " +
                    std::to_string(b) + ": " + e.what());
      }
    }
    const double nb = static_cast<double>(batches.size());
    EpochLog el;
    el.epoch = cfg.rep_epochs + epoch;
    el.mean.rnc = Vec::Zero(K);
    el.mean.ortho = Vec::Zero(K);
    el.mean.value_mse = mse_acc / nb;
    el.mean.total = el.mean.value_mse.mean();
    log.epochs.push_back(el);
  }
  return log;
}

EmbeddingBank build_embedding_bank(const Model& model, const Dataset& ds, int context_length,
                                   uint64_t seed) {
  const int n = static_cast<int>(ds.train_idx.size());
  if (n == 0) throw Error("build_embedding_bank: empty train split");
  const int K = model.config().n_tasks;
  std::vector<ContextSet> contexts;
  contexts.reserve(static_cast<size_t>(n));
  EmbeddingBank bank;
  bank.knobs.resize(n);
  bank.returns_raw.resize(n, K);
  for (int i = 0; i < n; ++i) {
    const int tid = ds.train_idx[static_cast<size_t>(i)];
    Rng rng(mix_seed(seed, 0x62616e6bULL + static_cast<uint64_t>(tid)));
    contexts.push_back(sample_context(ds, tid, context_length, rng));
    const Trajectory& tr = ds.trajectories[static_cast<size_t>(tid)];
    bank.knobs[i] = tr.knob;
    for (int k = 0; k < K; ++k) bank.returns_raw(i, k) = tr.returns[k];
  }
  bank.h = model.encode(contexts).mu;
  return bank;
}

namespace {

constexpr char kBundleMagic[4] = {'P', 'B', 'N', 'D'};
constexpr uint32_t kBundleVersion = 1;

void put_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& out, double v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t take_u32(std::istream& in, const char* sect) {
  uint32_t v;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw Error(std::string("checkpoint bundle truncated in ") + sect + " section");
  return v;
}
uint64_t take_u64(std::istream& in, const char* sect) {
  uint64_t v;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw Error(std::string("checkpoint bundle truncated in ") + sect + " section");
  return v;
}
double take_f64(std::istream& in, const char* sect) {
  double v;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw Error(std::string("checkpoint bundle truncated in ") + sect + " section");
  return v;
}

void write_train_config(std::ostream& out, const TrainConfig& c) {
  for (int v : {c.context_length, c.rep_epochs, c.rep_batch, c.reg_epochs, c.reg_batch, c.hidden,
                c.latent_dim, c.task_dim}) {
    put_u32(out, static_cast<uint32_t>(v));
  }
  for (double v : {c.lr, c.weight_decay, c.alpha, c.zeta, c.beta_start, c.beta_end, c.tau_sim}) {
    put_f64(out, v);
  }
  put_u64(out, c.seed);
  const uint8_t flags[4] = {static_cast<uint8_t>(c.vae_only),
                            static_cast<uint8_t>(c.unconstrained_projector),
                            static_cast<uint8_t>(c.mean_pool_encoder),
                            static_cast<uint8_t>(c.deterministic_ae)};
  out.write(reinterpret_cast<const char*>(flags), 4);
}

TrainConfig read_train_config(std::istream& in) {
  TrainConfig c;
  c.context_length = static_cast<int>(take_u32(in, "config"));
  c.rep_epochs = static_cast<int>(take_u32(in, "config"));
  c.rep_batch = static_cast<int>(take_u32(in, "config"));
  c.reg_epochs = static_cast<int>(take_u32(in, "config"));
  c.reg_batch = static_cast<int>(take_u32(in, "config"));
  c.hidden = static_cast<int>(take_u32(in, "config"));
  c.latent_dim = static_cast<int>(take_u32(in, "config"));
  c.task_dim = static_cast<int>(take_u32(in, "config"));
  c.lr = take_f64(in, "config");
  c.weight_decay = take_f64(in, "config");
  c.alpha = take_f64(in, "config");
  c.zeta = take_f64(in, "config");
  c.beta_start = take_f64(in, "config");
  c.beta_end = take_f64(in, "config");
  c.tau_sim = take_f64(in, "config");
  c.seed = take_u64(in, "config");
  uint8_t flags[4];
  in.read(reinterpret_cast<char*>(flags), 4);
  if (!in) throw Error("checkpoint bundle truncated in config section");
  c.vae_only = flags[0] != 0;
  c.unconstrained_projector = flags[1] != 0;
  c.mean_pool_encoder = flags[2] != 0;
  c.deterministic_ae = flags[3] != 0;
  return c;
}

void write_stats(std::ostream& out, const NormStats& st) {
  for (double v : {st.state_mean[0], st.state_mean[1], st.state_std[0], st.state_std[1],
                   st.action_mean, st.action_std, st.return_mean[0], st.return_mean[1],
                   st.return_std[0], st.return_std[1]}) {
    put_f64(out, v);
  }
}

NormStats read_stats(std::istream& in) {
  NormStats st;
  st.state_mean[0] = take_f64(in, "stats");
  st.state_mean[1] = take_f64(in, "stats");
  st.state_std[0] = take_f64(in, "stats");
  st.state_std[1] = take_f64(in, "stats");
  st.action_mean = take_f64(in, "stats");
  st.action_std = take_f64(in, "stats");
  st.return_mean[0] = take_f64(in, "stats");
  st.return_mean[1] = take_f64(in, "stats");
  st.return_std[0] = take_f64(in, "stats");
  st.return_std[1] = take_f64(in, "stats");
  return st;
}

}  // namespace

void save_bundle(const std::string& path, const Model& model, const TrainConfig& cfg,
                 const NormStats& stats, const EmbeddingBank& bank,
                 const std::string& config_text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(kBundleMagic, 4);
  put_u32(out, kBundleVersion);
  write_train_config(out, cfg);
  put_u64(out, config_text.size());
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  write_stats(out, stats);
  write_params(out, model.params());
  const uint32_t n = static_cast<uint32_t>(bank.h.rows());
  const uint32_t dim = static_cast<uint32_t>(bank.h.cols());
  const uint32_t K = static_cast<uint32_t>(bank.returns_raw.cols());
  put_u32(out, n);
  put_u32(out, dim);
  put_u32(out, K);
  for (uint32_t i = 0; i < n; ++i) {
    for (uint32_t j = 0; j < dim; ++j) put_f64(out, bank.h(i, j));
    put_f64(out, bank.knobs[i]);
    for (uint32_t k = 0; k < K; ++k) put_f64(out, bank.returns_raw(i, k));
  }
  if (!out) throw Error("write failed on '" + path + "'");
}

Bundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kBundleMagic, 4) != 0) {
    throw Error("'" + path + "' is not a checkpoint bundle");
  }
  const uint32_t version = take_u32(in, "header");
  if (version != kBundleVersion) {
    throw Error("unsupported checkpoint bundle version " + std::to_string(version));
  }
  Bundle b;
  b.train = read_train_config(in);
  const uint64_t text_len = take_u64(in, "config");
  b.config_text.resize(text_len);
  in.read(b.config_text.data(), static_cast<std::streamsize>(text_len));
  if (!in) throw Error("checkpoint bundle truncated in config section");
  b.stats = read_stats(in);
  b.model = Model(b.train.model_config());
  read_params(in, b.model.params(), "checkpoint bundle params section");
  if (in.peek() == std::char_traits<char>::eof()) {
    throw Error("checkpoint bundle missing embedding-bank section");
  }
  const uint32_t n = take_u32(in, "bank");
  const uint32_t dim = take_u32(in, "bank");
  const uint32_t K = take_u32(in, "bank");
  b.bank.h.resize(n, dim);
  b.bank.knobs.resize(n);
  b.bank.returns_raw.resize(n, K);
  for (uint32_t i = 0; i < n; ++i) {
    for (uint32_t j = 0; j < dim; ++j) b.bank.h(i, j) = take_f64(in, "bank");
    b.bank.knobs[i] = take_f64(in, "bank");
    for (uint32_t k = 0; k < K; ++k) b.bank.returns_raw(i, k) = take_f64(in, "bank");
  }
  return b;
}

}  // namespace polrep
