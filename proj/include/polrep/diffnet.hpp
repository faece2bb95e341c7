#pragma once

#include "polrep/common.hpp"

#include <functional>
#include <iosfwd>
#include <map>

namespace polrep {

/// A named parameter with its gradient accumulator and AdamW moment buffers.
struct Tensor {
  Mat value;
  Mat grad;
  Mat m;   // first moment
  Mat v;   // second moment
};

/// Ordered (by name) collection of parameters. Iteration order is the sorted name
/// order, which keeps optimizer updates and serialization deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, int rows, int cols);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  void zero_grad();
  std::vector<std::string> names() const;
  size_t size() const { return tensors_.size(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::map<std::string, Tensor> tensors_;
};

struct AdamwConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamwState {
  long step_count = 0;
};

/// Decoupled-weight-decay Adam step over the named subset. Bias-corrected moments;
/// moments live inside each Tensor and start at zero. Throws on non-finite gradients.
void adamw_step(ParamStore& params, const std::vector<std::string>& names,
                const AdamwConfig& cfg, AdamwState& state);
void adamw_step(ParamStore& params, const AdamwConfig& cfg, AdamwState& state);

/// Multi-layer perceptron over f64 Eigen matrices: tanh hidden layers, identity output.
/// Weights are scaled-uniform fan-in initialized, biases zero. Row-major batches:
/// forward maps an n x in matrix to n x out.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, int in_dim, std::vector<int> widths);

  void init(ParamStore& params, Rng& rng) const;

  struct Tape {
    std::vector<Mat> acts;  // acts[0] = input, acts[l] = post-activation of layer l
    bool valid = false;
    void clear() { acts.clear(); valid = false; }
  };

  Mat forward(const ParamStore& params, const Mat& x, Tape* tape = nullptr) const;

  /// Accumulates parameter gradients into params (+=) and returns d(loss)/d(input).
  Mat backward(ParamStore& params, const Tape& tape, const Mat& d_out) const;

  std::vector<std::string> param_names() const;
  int in_dim() const { return in_dim_; }
  int out_dim() const { return widths_.back(); }

 private:
  std::string prefix_;
  int in_dim_ = 0;
  std::vector<int> widths_;
};

/// Finite-difference gradient audit. `loss` must be a pure deterministic function of the
/// parameter values; analytic gradients are read from the stores' grad buffers (populate
/// them before calling). Checks up to n_coords randomly chosen coordinates across the
/// named tensors with central differences.
struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  int worst_row = -1;
  int worst_col = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int n_checked = 0;
};

FdReport fd_check(const std::function<double()>& loss, ParamStore& params,
                  const std::vector<std::string>& names, int n_coords, double eps, Rng& rng);

/// Binary parameter snapshots: bit-exact value round-trip, name/shape validated on load.
/// Loading into an empty store recreates the tensors; loading into a populated store
/// requires matching names and shapes. Stream variants allow embedding in other files.
void save_params(const ParamStore& params, const std::string& path);
void load_params(ParamStore& params, const std::string& path);
void write_params(std::ostream& out, const ParamStore& params);
void read_params(std::istream& in, ParamStore& params, const std::string& what);

}  // namespace polrep
