#include "polrep/diffnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace polrep {

Tensor& ParamStore::add(const std::string& name, int rows, int cols) {
  if (has(name)) throw Error("ParamStore::add: duplicate tensor '" + name + "'");
  if (rows < 1 || cols < 1) throw Error("ParamStore::add: bad shape for '" + name + "'");
  Tensor t;
  t.value = Mat::Zero(rows, cols);
  t.grad = Mat::Zero(rows, cols);
  t.m = Mat::Zero(rows, cols);
  t.v = Mat::Zero(rows, cols);
  return tensors_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("ParamStore: unknown tensor '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("ParamStore: unknown tensor '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : tensors_) t.grad.setZero();
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

void adamw_step(ParamStore& params, const std::vector<std::string>& names,
                const AdamwConfig& cfg, AdamwState& state) {
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
  for (const std::string& name : names) {
    Tensor& t = params.at(name);
    if (!t.grad.allFinite()) throw Error("adamw_step: non-finite gradient in '" + name + "'");
    t.m = cfg.beta1 * t.m + (1.0 - cfg.beta1) * t.grad;
    t.v = cfg.beta2 * t.v.array().matrix() + (1.0 - cfg.beta2) * t.grad.cwiseProduct(t.grad);
    const Mat m_hat = t.m / bc1;
    const Mat v_hat = t.v / bc2;
    t.value -= cfg.lr * (m_hat.array() / (v_hat.array().sqrt() + cfg.eps)).matrix();
    t.value -= cfg.lr * cfg.weight_decay * t.value;
  }
}

void adamw_step(ParamStore& params, const AdamwConfig& cfg, AdamwState& state) {
  adamw_step(params, params.names(), cfg, state);
}

Mlp::Mlp(std::string prefix, int in_dim, std::vector<int> widths)
    : prefix_(std::move(prefix)), in_dim_(in_dim), widths_(std::move(widths)) {
  if (in_dim_ < 1 || widths_.empty()) throw Error("Mlp: bad layer spec for '" + prefix_ + "'");
  for (int w : widths_) {
    if (w < 1) throw Error("Mlp: bad layer width in '" + prefix_ + "'");
  }
}

void Mlp::init(ParamStore& params, Rng& rng) const {
  int fan_in = in_dim_;
  for (size_t l = 0; l < widths_.size(); ++l) {
    const int out = widths_[l];
    Tensor& w = params.add(prefix_ + ".w" + std::to_string(l), out, fan_in);
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int i = 0; i < w.value.rows(); ++i) {
      for (int j = 0; j < w.value.cols(); ++j) w.value(i, j) = rng.uniform(-s, s);
    }
    params.add(prefix_ + ".b" + std::to_string(l), out, 1);
    fan_in = out;
  }
}

Mat Mlp::forward(const ParamStore& params, const Mat& x, Tape* tape) const {
  if (x.cols() != in_dim_) {
    throw Error("Mlp::forward: '" + prefix_ + "' expects " + std::to_string(in_dim_) +
                " input columns, got " + std::to_string(x.cols()));
  }
  Mat a = x;
  if (tape) {
    tape->clear();
    tape->acts.push_back(a);
  }
  for (size_t l = 0; l < widths_.size(); ++l) {
    const Mat& w = params.at(prefix_ + ".w" + std::to_string(l)).value;
    const Mat& b = params.at(prefix_ + ".b" + std::to_string(l)).value;
    Mat z = a * w.transpose();
    z.rowwise() += b.col(0).transpose();
    a = (l + 1 < widths_.size()) ? z.array().tanh().matrix() : z;
    if (tape) tape->acts.push_back(a);
  }
  if (tape) tape->valid = true;
  return a;
}

Mat Mlp::backward(ParamStore& params, const Tape& tape, const Mat& d_out) const {
  if (!tape.valid) throw Error("Mlp::backward: '" + prefix_ + "' tape is empty or already cleared");
  const size_t n_layers = widths_.size();
  if (tape.acts.size() != n_layers + 1) throw Error("Mlp::backward: tape does not match layer spec");
  if (d_out.rows() != tape.acts.back().rows() || d_out.cols() != tape.acts.back().cols()) {
    throw Error("Mlp::backward: '" + prefix_ + "' output gradient shape mismatch");
  }
  Mat d = d_out;
  for (size_t l = n_layers; l-- > 0;) {
    if (l + 1 < n_layers) {
      d = d.cwiseProduct((1.0 - tape.acts[l + 1].array().square()).matrix());
    }
    Tensor& w = params.at(prefix_ + ".w" + std::to_string(l));
    Tensor& b = params.at(prefix_ + ".b" + std::to_string(l));
    w.grad.noalias() += d.transpose() * tape.acts[l];
    b.grad.col(0) += d.colwise().sum().transpose();
    d = d * w.value;
  }
  return d;
}

std::vector<std::string> Mlp::param_names() const {
  std::vector<std::string> out;
  for (size_t l = 0; l < widths_.size(); ++l) {
    out.push_back(prefix_ + ".w" + std::to_string(l));
    out.push_back(prefix_ + ".b" + std::to_string(l));
  }
  return out;
}

FdReport fd_check(const std::function<double()>& loss, ParamStore& params,
                  const std::vector<std::string>& names, int n_coords, double eps, Rng& rng) {
  struct Coord {
    std::string name;
    int r, c;
  };
  std::vector<Coord> coords;
  for (const std::string& name : names) {
    const Mat& v = params.at(name).value;
    for (int c = 0; c < v.cols(); ++c) {
      for (int r = 0; r < v.rows(); ++r) coords.push_back({name, r, c});
    }
  }
  if (coords.empty()) throw Error("fd_check: no coordinates to check");
  rng.shuffle(coords);
  if (static_cast<int>(coords.size()) > n_coords) coords.resize(static_cast<size_t>(n_coords));

  FdReport rep;
  rep.n_checked = static_cast<int>(coords.size());
  for (const Coord& co : coords) {
    Tensor& t = params.at(co.name);
    const double orig = t.value(co.r, co.c);
    t.value(co.r, co.c) = orig + eps;
    const double lp = loss();
    t.value(co.r, co.c) = orig - eps;
    const double lm = loss();
    t.value(co.r, co.c) = orig;
    const double numeric = (lp - lm) / (2.0 * eps);
    const double analytic = t.grad(co.r, co.c);
    const double denom = std::max({1e-3, std::abs(numeric), std::abs(analytic)});
    const double rel = std::abs(numeric - analytic) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_tensor = co.name;
      rep.worst_row = co.r;
      rep.worst_col = co.c;
      rep.analytic = analytic;
      rep.numeric = numeric;
    }
  }
  return rep;
}

namespace {
constexpr char kParamMagic[4] = {'P', 'C', 'K', 'P'};
constexpr uint32_t kParamVersion = 1;

void put_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t get_u32(std::istream& in, const std::string& what) {
  uint32_t v;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw Error("truncated parameter data in " + what);
  return v;
}
}  // namespace

void write_params(std::ostream& out, const ParamStore& params) {
  out.write(kParamMagic, 4);
  put_u32(out, kParamVersion);
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<uint32_t>(t.value.rows()));
    put_u32(out, static_cast<uint32_t>(t.value.cols()));
    out.write(reinterpret_cast<const char*>(t.value.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.value.size())));
  }
  if (!out) throw Error("write_params: stream write failed");
}

void read_params(std::istream& in, ParamStore& params, const std::string& what) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kParamMagic, 4) != 0) {
    throw Error(what + " does not hold a parameter snapshot");
  }
  const uint32_t version = get_u32(in, what);
  if (version != kParamVersion) {
    throw Error(what + ": unsupported parameter snapshot version " + std::to_string(version));
  }
  const uint32_t n = get_u32(in, what);
  const bool fresh = params.size() == 0;
  if (!fresh && params.size() != n) {
    throw Error(what + ": snapshot holds " + std::to_string(n) + " tensors, expected " +
                std::to_string(params.size()));
  }
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t name_len = get_u32(in, what);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw Error("truncated parameter data in " + what);
    const uint32_t rows = get_u32(in, what);
    const uint32_t cols = get_u32(in, what);
    Tensor* t;
    if (fresh) {
      t = &params.add(name, static_cast<int>(rows), static_cast<int>(cols));
    } else {
      if (!params.has(name)) throw Error(what + ": snapshot tensor '" + name + "' not in model");
      t = &params.at(name);
      if (t->value.rows() != static_cast<int>(rows) || t->value.cols() != static_cast<int>(cols)) {
        throw Error(what + ": shape mismatch for tensor '" + name + "'");
      }
    }
    in.read(reinterpret_cast<char*>(t->value.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (!in) throw Error("truncated parameter data in " + what);
    t->grad.setZero();
    t->m.setZero();
    t->v.setZero();
  }
}

void save_params(const ParamStore& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_params(out, params);
}

void load_params(ParamStore& params, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  read_params(in, params, "'" + path + "'");
}

}  // namespace polrep
