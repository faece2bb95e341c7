#pragma once

#include "polrep/dataio.hpp"
#include "polrep/diffnet.hpp"

namespace polrep {

struct ModelConfig {
  int state_dim = 2;
  int action_dim = 1;
  int latent_dim = 32;   // dim of the behavior embedding h
  int task_dim = 4;      // dim of each per-objective view z_k
  int n_tasks = 2;
  int hidden = 64;
  double logstd_min = -6.0;
  double logstd_max = 2.0;
  bool mean_pool = false;       // ablation: uniform context weights instead of learned ones
  bool deterministic = false;   // ablation: posterior collapsed to its mean, no KL

  int pair_dim() const { return state_dim + action_dim; }
  int feat_dim() const { return 2 * latent_dim; }
};

/// Diagonal-Gaussian posterior over the behavior embedding, one row per context set.
struct Posterior {
  Mat mu;         // n x latent_dim
  Mat log_sigma;  // n x latent_dim, clamped to [logstd_min, logstd_max]
};

/// Per-row diagonal Gaussian over actions produced by the policy decoder.
struct ActionDist {
  Vec mu;
  Vec log_std;  // clamped like the posterior
};

/// Per-row Gaussian log-density log N(a | mu, exp(log_std)^2).
Vec action_logprob(const ActionDist& dist, const Vec& actions);
/// Per-row draw a = mu + exp(log_std) * eps.
Vec action_sample(const ActionDist& dist, Rng& rng);

/// The full parameter set: context encoder, per-objective projectors + value heads,
/// and the context-conditioned policy decoder. All parameters live in one ParamStore
/// under structured names; the *_param_names() groups drive the two training phases.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  void init(uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct EncodeTape {
    int n = 0, L = 0;
    Mat x;                  // (n*L) x pair_dim stacked context rows
    Mlp::Tape t_elem, t_summary, t_score, t_feat;
    Mat pooled_in;          // n x hidden (mean of element net outputs)
    Mat summary;            // n x hidden
    Mat weights;            // n x L softmax attention weights (or uniform)
    Mat feats;              // (n*L) x feat_dim
    Mat pre_clamp;          // n x latent_dim raw log-sigma before clamping
    bool valid = false;
  };

  Posterior encode(const std::vector<ContextSet>& contexts, EncodeTape* tape = nullptr) const;
  void encode_backward(const EncodeTape& tape, const Mat& d_mu, const Mat& d_log_sigma);

  /// h = mu + exp(log_sigma) .* eps rowwise (deterministic model ignores eps).
  Mat reparameterize(const Posterior& post, const Mat& eps) const;
  void reparameterize_backward(const Posterior& post, const Mat& eps, const Mat& d_h,
                               Mat& d_mu, Mat& d_log_sigma) const;

  /// z_k = U_k h + b_k per row; U_k is task_dim x latent_dim.
  Mat project(const Mat& h, int task) const;
  void project_backward(const Mat& h, int task, const Mat& d_z, Mat* d_h);

  /// Scalar value prediction per row from a projected embedding.
  Vec predict_value(const Mat& z, int task, Mlp::Tape* tape = nullptr) const;
  Mat predict_value_backward(int task, const Mlp::Tape& tape, const Vec& d_v);

  struct DecodeTape {
    Mlp::Tape t_trunk, t_head;
    Mat pre_clamp;  // n x 1 raw log-std
    bool valid = false;
  };

  /// Action distribution for normalized query states given embeddings h (row-aligned).
  ActionDist decode(const Mat& query_state, const Mat& h, DecodeTape* tape = nullptr) const;
  /// Propagates (d_mu, d_log_std) into decoder params; returns d_h (n x latent_dim).
  Mat decode_backward(const DecodeTape& tape, const Vec& d_mu, const Vec& d_log_std);

  std::vector<std::string> encoder_param_names() const;
  std::vector<std::string> decoder_param_names() const;
  std::vector<std::string> projector_param_names() const;
  std::vector<std::string> regressor_param_names() const;
  /// Everything but the value heads (phase-1 update set).
  std::vector<std::string> representation_param_names() const;

  const Mat& projector_matrix(int task) const;

 private:
  void check_task(int task) const;

  ModelConfig cfg_;
  ParamStore params_;
  Mlp elem_net_;     // per-element summary features
  Mlp summary_net_;  // pooled summary -> set descriptor
  Mlp score_net_;    // (element, set descriptor) -> attention logit
  Mlp feat_net_;     // per-element features; their weighted sum splits into (mu, log-sigma)
  Mlp trunk_net_;    // decoder state trunk
  Mlp head_net_;     // decoder head on (trunk features, embedding)
  std::vector<Mlp> value_nets_;
};

}  // namespace polrep
