#include "polrep/config.hpp"

#include <cerrno>
#include <cinttypes>
#include <climits>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace polrep {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  // ERANGE with a sub-normal result is underflow; only overflow is an error.
  const bool overflow = errno == ERANGE && std::abs(x) >= 1.0;
  if (end == v.c_str() || *end != '\0' || overflow)
    throw Error("bad numeric value for " + key + ": '" + v + "'");
  return x;
}

int parse_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long x = std::strtol(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0' || errno == ERANGE || x < INT_MIN || x > INT_MAX)
    throw Error("bad integer value for " + key + ": '" + v + "'");
  return static_cast<int>(x);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0' || errno == ERANGE || v.find('-') != std::string::npos)
    throw Error("bad seed value for " + key + ": '" + v + "'");
  return static_cast<uint64_t>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("bad boolean value for " + key + " (use true/false): '" + v + "'");
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// One settable entry: how to assign from text and how to print back.
struct Field {
  std::function<void(const std::string&, const std::string&)> set;
  std::function<std::string()> get;
};

using Section = std::map<std::string, Field>;

Field f_double(double* p) {
  return {[p](const std::string& k, const std::string& v) { *p = parse_double(k, v); },
          [p] { return fmt_double(*p); }};
}
Field f_int(int* p) {
  return {[p](const std::string& k, const std::string& v) { *p = parse_int(k, v); },
          [p] { return std::to_string(*p); }};
}
Field f_u64(uint64_t* p) {
  return {[p](const std::string& k, const std::string& v) { *p = parse_u64(k, v); },
          [p] {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%" PRIu64, *p);
            return std::string(buf);
          }};
}
Field f_bool(bool* p) {
  return {[p](const std::string& k, const std::string& v) { *p = parse_bool(k, v); },
          [p] { return std::string(*p ? "true" : "false"); }};
}

std::map<std::string, Section> schema(RunConfig& c) {
  std::map<std::string, Section> s;
  s["env"] = {
      {"dt", f_double(&c.env.dt)},
      {"drag", f_double(&c.env.drag)},
      {"gain", f_double(&c.env.gain)},
      {"ctrl_gain", f_double(&c.env.ctrl_gain)},
      {"noise_sigma", f_double(&c.env.noise_sigma)},
      {"horizon", f_int(&c.env.horizon)},
  };
  s["data"] = {
      {"n_knobs", f_int(&c.data.n_knobs)},
      {"traj_per_knob", f_int(&c.data.traj_per_knob)},
      {"holdout_every", f_int(&c.data.holdout_every)},
      {"seed", f_u64(&c.data.seed)},
  };
  s["train"] = {
      {"context_length", f_int(&c.train.context_length)},
      {"rep_epochs", f_int(&c.train.rep_epochs)},
      {"rep_batch", f_int(&c.train.rep_batch)},
      {"reg_epochs", f_int(&c.train.reg_epochs)},
      {"reg_batch", f_int(&c.train.reg_batch)},
      {"hidden", f_int(&c.train.hidden)},
      {"latent_dim", f_int(&c.train.latent_dim)},
      {"task_dim", f_int(&c.train.task_dim)},
      {"lr", f_double(&c.train.lr)},
      {"weight_decay", f_double(&c.train.weight_decay)},
      {"alpha", f_double(&c.train.alpha)},
      {"zeta", f_double(&c.train.zeta)},
      {"beta_start", f_double(&c.train.beta_start)},
      {"beta_end", f_double(&c.train.beta_end)},
      {"tau_sim", f_double(&c.train.tau_sim)},
      {"seed", f_u64(&c.train.seed)},
      {"vae_only", f_bool(&c.train.vae_only)},
      {"unconstrained_projector", f_bool(&c.train.unconstrained_projector)},
      {"mean_pool_encoder", f_bool(&c.train.mean_pool_encoder)},
      {"deterministic_ae", f_bool(&c.train.deterministic_ae)},
  };
  s["steer"] = {
      {"eta_h", f_double(&c.steer.eta_h)},
      {"eta_lambda", f_double(&c.steer.eta_lambda)},
      {"max_iters", f_int(&c.steer.max_iters)},
      {"n_neighbors", f_int(&c.steer.n_neighbors)},
      {"pca_rank", f_int(&c.steer.pca_rank)},
      {"tol_target", f_double(&c.steer.tol_target)},
      {"tol_constraint", f_double(&c.steer.tol_constraint)},
      {"n_eval", f_int(&c.steer.n_eval)},
      {"seed", f_u64(&c.steer_seed)},
  };
  s["eval"] = {
      {"n_triplets", f_int(&c.eval.n_triplets)},
      {"n_queries", f_int(&c.eval.n_queries)},
      {"probe_ridge", f_double(&c.eval.probe_ridge)},
      {"n_eval", f_int(&c.eval.n_eval)},
      {"seed", f_u64(&c.eval.seed)},
  };
  return s;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  auto sections = schema(cfg);
  std::istringstream in(text);
  std::string raw;
  std::string current;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw Error("config line " + std::to_string(lineno) + ": malformed section header");
      current = trim(line.substr(1, line.size() - 2));
      if (!sections.count(current))
        throw Error("config line " + std::to_string(lineno) + ": unknown section [" +
                    current + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    if (current.empty())
      throw Error("config line " + std::to_string(lineno) + ": key before any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto& sect = sections.at(current);
    auto it = sect.find(key);
    if (it == sect.end())
      throw Error("config line " + std::to_string(lineno) + ": unknown key '" + key +
                  "' in section [" + current + "]");
    try {
      it->second.set(current + "." + key, value);
    } catch (const Error& e) {
      throw Error("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open config file " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& cfg) {
  RunConfig& mut = const_cast<RunConfig&>(cfg);  // getters only read
  auto sections = schema(mut);
  std::ostringstream out;
  bool first = true;
  for (const auto& [sname, sect] : sections) {  // std::map: already sorted
    if (!first) out << "\n";
    first = false;
    out << "[" << sname << "]\n";
    for (const auto& [key, field] : sect) out << key << " = " << field.get() << "\n";
  }
  return out.str();
}

void override_seed(RunConfig& cfg, uint64_t seed) {
  cfg.data.seed = seed;
  cfg.train.seed = seed;
  cfg.steer_seed = seed;
  cfg.eval.seed = seed;
}

}  // namespace polrep
