#include "polrep/dataio.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace polrep {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'E', 'P'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw Error("write failed on '" + path_ + "'");
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void f32(float v) { bytes(&v, 4); }
  void f64(double v) { bytes(&v, 8); }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open '" + path + "' for reading");
  }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) {
      throw Error("truncated file '" + path_ + "' at byte offset " + std::to_string(offset_));
    }
    offset_ += n;
  }
  uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
  float f32() { float v; bytes(&v, 4); return v; }
  double f64() { double v; bytes(&v, 8); return v; }
  size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  size_t offset_ = 0;
};

}  // namespace

NormStats compute_norm_stats(const std::vector<Trajectory>& trajs, const std::vector<int>& indices) {
  if (indices.empty()) throw Error("compute_norm_stats: empty input");
  if (indices.size() < 2) throw Error("compute_norm_stats: need at least 2 trajectories");
  Eigen::Array2d s_sum = Eigen::Array2d::Zero(), s_sq = Eigen::Array2d::Zero();
  double a_sum = 0.0, a_sq = 0.0;
  Eigen::Array2d r_sum = Eigen::Array2d::Zero(), r_sq = Eigen::Array2d::Zero();
  size_t n_trans = 0;
  for (int idx : indices) {
    if (idx < 0 || idx >= static_cast<int>(trajs.size())) {
      throw Error("compute_norm_stats: trajectory index out of range");
    }
    const Trajectory& tr = trajs[static_cast<size_t>(idx)];
    for (const Transition& t : tr.transitions) {
      s_sum += t.state.array();
      s_sq += t.state.array().square();
      a_sum += t.action;
      a_sq += t.action * t.action;
      ++n_trans;
    }
    r_sum += tr.returns.array();
    r_sq += tr.returns.array().square();
  }
  if (n_trans == 0) throw Error("compute_norm_stats: no transitions");
  const double nt = static_cast<double>(n_trans);
  const double nr = static_cast<double>(indices.size());
  auto pop_std = [](double sq, double mean, double n) {
    return std::sqrt(std::max(0.0, sq / n - mean * mean));
  };
  NormStats st;
  st.state_mean = (s_sum / nt).matrix();
  st.action_mean = a_sum / nt;
  st.return_mean = (r_sum / nr).matrix();
  for (int d = 0; d < 2; ++d) {
    st.state_std[d] = std::max(pop_std(s_sq[d], st.state_mean[d], nt), 1e-6);
    st.return_std[d] = std::max(pop_std(r_sq[d], st.return_mean[d], nr), 1e-6);
  }
  st.action_std = std::max(pop_std(a_sq, st.action_mean, nt), 1e-6);
  return st;
}

Dataset build_dataset(const EnvConfig& env, int n_knobs, int traj_per_knob, int holdout_every,
                      uint64_t seed) {
  if (n_knobs < 2) throw Error("build_dataset: n_knobs must be >= 2");
  if (holdout_every < 2) throw Error("build_dataset: holdout_every must be >= 2");
  std::vector<double> knobs(static_cast<size_t>(n_knobs));
  for (int i = 0; i < n_knobs; ++i) {
    knobs[static_cast<size_t>(i)] = static_cast<double>(i) / static_cast<double>(n_knobs - 1);
  }
  Rng rng(seed);
  Dataset ds;
  ds.trajectories = population(knobs, traj_per_knob, env, rng);
  ds.horizon = env.horizon;
  for (int i = 0; i < n_knobs; ++i) {
    auto& dst = (i % holdout_every == 0) ? ds.test_idx : ds.train_idx;
    for (int m = 0; m < traj_per_knob; ++m) dst.push_back(i * traj_per_knob + m);
  }
  ds.stats = compute_norm_stats(ds.trajectories, ds.train_idx);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<uint32_t>(Dataset::kNumTasks));
  w.u32(static_cast<uint32_t>(ds.horizon));
  w.u32(static_cast<uint32_t>(ds.trajectories.size()));
  for (const Trajectory& tr : ds.trajectories) {
    if (static_cast<int>(tr.transitions.size()) != ds.horizon) {
      throw Error("save_dataset: trajectory length does not match horizon");
    }
    w.f64(tr.knob);
    for (const Transition& t : tr.transitions) {
      w.f32(static_cast<float>(t.state[0]));
      w.f32(static_cast<float>(t.state[1]));
    }
    for (const Transition& t : tr.transitions) w.f32(static_cast<float>(t.action));
    for (const Transition& t : tr.transitions) {
      w.f32(static_cast<float>(t.reward[0]));
      w.f32(static_cast<float>(t.reward[1]));
    }
    w.f32(static_cast<float>(tr.returns[0]));
    w.f32(static_cast<float>(tr.returns[1]));
  }
  const NormStats& st = ds.stats;
  w.f64(st.state_mean[0]); w.f64(st.state_mean[1]);
  w.f64(st.state_std[0]);  w.f64(st.state_std[1]);
  w.f64(st.action_mean);   w.f64(st.action_std);
  w.f64(st.return_mean[0]); w.f64(st.return_mean[1]);
  w.f64(st.return_std[0]);  w.f64(st.return_std[1]);
  w.u32(static_cast<uint32_t>(ds.train_idx.size()));
  for (int i : ds.train_idx) w.u32(static_cast<uint32_t>(i));
  w.u32(static_cast<uint32_t>(ds.test_idx.size()));
  for (int i : ds.test_idx) w.u32(static_cast<uint32_t>(i));
}

Dataset load_dataset(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error("'" + path + "' is not a dataset file");
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw Error("unsupported dataset version " + std::to_string(version) + " in '" + path + "'");
  }
  const uint32_t K = r.u32();
  if (K != Dataset::kNumTasks) {
    throw Error("dataset '" + path + "' has " + std::to_string(K) + " reward channels, expected 2");
  }
  Dataset ds;
  ds.horizon = static_cast<int>(r.u32());
  const uint32_t n_traj = r.u32();
  if (ds.horizon < 1 || n_traj == 0) throw Error("dataset '" + path + "' has empty shape");
  ds.trajectories.resize(n_traj);
  const int T = ds.horizon;
  for (Trajectory& tr : ds.trajectories) {
    tr.knob = r.f64();
    tr.transitions.resize(static_cast<size_t>(T));
    for (Transition& t : tr.transitions) {
      t.state[0] = r.f32();
      t.state[1] = r.f32();
    }
    for (Transition& t : tr.transitions) t.action = r.f32();
    for (Transition& t : tr.transitions) {
      t.reward[0] = r.f32();
      t.reward[1] = r.f32();
    }
    tr.returns[0] = r.f32();
    tr.returns[1] = r.f32();
  }
  NormStats& st = ds.stats;
  st.state_mean[0] = r.f64(); st.state_mean[1] = r.f64();
  st.state_std[0] = r.f64();  st.state_std[1] = r.f64();
  st.action_mean = r.f64();   st.action_std = r.f64();
  st.return_mean[0] = r.f64(); st.return_mean[1] = r.f64();
  st.return_std[0] = r.f64();  st.return_std[1] = r.f64();
  auto read_split = [&](std::vector<int>& v) {
    const uint32_t n = r.u32();
    v.resize(n);
    for (uint32_t i = 0; i < n; ++i) {
      const uint32_t idx = r.u32();
      if (idx >= n_traj) throw Error("dataset '" + path + "' split index out of range");
      v[i] = static_cast<int>(idx);
    }
  };
  read_split(ds.train_idx);
  read_split(ds.test_idx);
  return ds;
}

ContextSet sample_context(const Dataset& ds, int traj_idx, int L, Rng& rng) {
  if (L <= 0) throw Error("sample_context: L must be positive");
  if (traj_idx < 0 || traj_idx >= static_cast<int>(ds.trajectories.size())) {
    throw Error("sample_context: trajectory index out of range");
  }
  const Trajectory& tr = ds.trajectories[static_cast<size_t>(traj_idx)];
  if (tr.transitions.empty()) throw Error("sample_context: empty trajectory");
  ContextSet ctx;
  ctx.source_traj = traj_idx;
  ctx.pairs.resize(L, 3);
  const int T = static_cast<int>(tr.transitions.size());
  for (int i = 0; i < L; ++i) {
    const Transition& t = tr.transitions[static_cast<size_t>(rng.uniform_int(T))];
    const Vec2 s = ds.stats.norm_state(t.state);
    ctx.pairs(i, 0) = s[0];
    ctx.pairs(i, 1) = s[1];
    ctx.pairs(i, 2) = ds.stats.norm_action(t.action);
  }
  return ctx;
}

TwoViewBatch two_view_batch(const Dataset& ds, const std::vector<int>& traj_ids, int L, Rng& rng) {
  if (traj_ids.empty()) throw Error("two_view_batch: empty trajectory list");
  const int I = static_cast<int>(traj_ids.size());
  TwoViewBatch b;
  b.n_pairs = I;
  b.contexts.resize(static_cast<size_t>(2 * I));
  b.returns.resize(2 * I, Dataset::kNumTasks);
  b.query_state.resize(2 * I, 2);
  b.query_action.resize(2 * I);
  b.source.resize(static_cast<size_t>(2 * I));
  for (int i = 0; i < I; ++i) {
    for (int view = 0; view < 2; ++view) {
      const int row = 2 * i + view;
      const int tid = traj_ids[static_cast<size_t>(i)];
      if (tid < 0 || tid >= static_cast<int>(ds.trajectories.size())) {
        throw Error("two_view_batch: trajectory index out of range");
      }
      const Trajectory& tr = ds.trajectories[static_cast<size_t>(tid)];
      b.contexts[static_cast<size_t>(row)] = sample_context(ds, tid, L, rng);
      for (int k = 0; k < Dataset::kNumTasks; ++k) {
        b.returns(row, k) = ds.stats.norm_return(tr.returns[k], k);
      }
      const Transition& q =
          tr.transitions[static_cast<size_t>(rng.uniform_int(static_cast<int>(tr.transitions.size())))];
      const Vec2 s = ds.stats.norm_state(q.state);
      b.query_state(row, 0) = s[0];
      b.query_state(row, 1) = s[1];
      b.query_action[row] = ds.stats.norm_action(q.action);
      b.source[static_cast<size_t>(row)] = tid;
    }
  }
  return b;
}

TwoViewBatch sample_two_view_batch(const Dataset& ds, int I, int L, Rng& rng) {
  if (I < 2) throw Error("sample_two_view_batch: need at least 2 trajectories per batch");
  if (I > static_cast<int>(ds.train_idx.size())) {
    throw Error("sample_two_view_batch: batch size exceeds training split");
  }
  std::vector<int> ids = ds.train_idx;
  rng.shuffle(ids);
  ids.resize(static_cast<size_t>(I));
  return two_view_batch(ds, ids, L, rng);
}

}  // namespace polrep
