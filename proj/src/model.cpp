#include "polrep/model.hpp"

#include <cmath>

namespace polrep {

namespace {
Mat clamp_mat(const Mat& x, double lo, double hi) {
  return x.array().min(hi).max(lo).matrix();
}

Mat clamp_mask(const Mat& pre, double lo, double hi) {
  return ((pre.array() > lo) && (pre.array() < hi)).cast<double>().matrix();
}
}  // namespace

Vec action_logprob(const ActionDist& dist, const Vec& actions) {
  if (actions.size() != dist.mu.size()) throw Error("action_logprob: size mismatch");
  const Eigen::ArrayXd sigma = dist.log_std.array().exp();
  const Eigen::ArrayXd resid = (actions - dist.mu).array() / sigma;
  constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*log(2*pi)
  return (-kHalfLog2Pi - dist.log_std.array() - 0.5 * resid.square()).matrix();
}

Vec action_sample(const ActionDist& dist, Rng& rng) {
  Vec out(dist.mu.size());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out[i] = dist.mu[i] + std::exp(dist.log_std[i]) * rng.normal();
  }
  return out;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg_.latent_dim < 1 || cfg_.task_dim < 1 || cfg_.n_tasks < 1 || cfg_.hidden < 1) {
    throw Error("Model: bad dimensions in config");
  }
  if (!(cfg_.logstd_min < cfg_.logstd_max)) throw Error("Model: bad log-std clamp range");
  const int p = cfg_.pair_dim();
  const int h = cfg_.hidden;
  if (!cfg_.mean_pool) {
    elem_net_ = Mlp("enc.elem", p, {h, h});
    summary_net_ = Mlp("enc.summary", h, {h, h});
    score_net_ = Mlp("enc.score", p + h, {h, 1});
  }
  feat_net_ = Mlp("enc.feat", p, {h, cfg_.feat_dim()});
  trunk_net_ = Mlp("dec.trunk", cfg_.state_dim, {h, h});
  head_net_ = Mlp("dec.head", h + cfg_.latent_dim, {h, 2});
  for (int k = 0; k < cfg_.n_tasks; ++k) {
    value_nets_.emplace_back("val" + std::to_string(k), cfg_.task_dim, std::vector<int>{h, h, 1});
  }
}

void Model::init(uint64_t seed) {
  if (params_.size() != 0) throw Error("Model::init: parameters already initialized");
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  if (!cfg_.mean_pool) {
    elem_net_.init(params_, rng);
    summary_net_.init(params_, rng);
    score_net_.init(params_, rng);
  }
  feat_net_.init(params_, rng);
  trunk_net_.init(params_, rng);
  head_net_.init(params_, rng);
  for (int k = 0; k < cfg_.n_tasks; ++k) {
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.latent_dim));
    Tensor& u = params_.add("proj" + std::to_string(k) + ".u", cfg_.task_dim, cfg_.latent_dim);
    for (int i = 0; i < u.value.rows(); ++i) {
      for (int j = 0; j < u.value.cols(); ++j) u.value(i, j) = rng.uniform(-s, s);
    }
    params_.add("proj" + std::to_string(k) + ".b", cfg_.task_dim, 1);
    value_nets_[static_cast<size_t>(k)].init(params_, rng);
  }
}

Posterior Model::encode(const std::vector<ContextSet>& contexts, EncodeTape* tape) const {
  if (contexts.empty()) throw Error("Model::encode: empty context batch");
  const int n = static_cast<int>(contexts.size());
  const int L = static_cast<int>(contexts.front().pairs.rows());
  const int p = cfg_.pair_dim();
  if (L < 1) throw Error("Model::encode: empty context set");
  Mat x(n * L, p);
  for (int i = 0; i < n; ++i) {
    const Mat& pairs = contexts[static_cast<size_t>(i)].pairs;
    if (pairs.rows() != L || pairs.cols() != p) {
      throw Error("Model::encode: context sets must share shape L x " + std::to_string(p));
    }
    x.middleRows(i * L, L) = pairs;
  }

  EncodeTape local;
  EncodeTape& tp = tape ? *tape : local;
  tp.n = n;
  tp.L = L;
  tp.x = x;

  Mat weights;
  if (cfg_.mean_pool) {
    weights = Mat::Constant(n, L, 1.0 / static_cast<double>(L));
  } else {
    const Mat elem = elem_net_.forward(params_, x, tape ? &tp.t_elem : nullptr);
    Mat pooled(n, cfg_.hidden);
    for (int i = 0; i < n; ++i) {
      pooled.row(i) = elem.middleRows(i * L, L).colwise().mean();
    }
    tp.pooled_in = pooled;
    const Mat summary = summary_net_.forward(params_, pooled, tape ? &tp.t_summary : nullptr);
    tp.summary = summary;
    Mat scored(n * L, p + cfg_.hidden);
    scored.leftCols(p) = x;
    for (int i = 0; i < n; ++i) {
      scored.middleRows(i * L, L).rightCols(cfg_.hidden).rowwise() = summary.row(i);
    }
    const Mat logits = score_net_.forward(params_, scored, tape ? &tp.t_score : nullptr);
    weights.resize(n, L);
    for (int i = 0; i < n; ++i) {
      Eigen::ArrayXd row = logits.block(i * L, 0, L, 1).array();
      row -= row.maxCoeff();
      row = row.exp();
      weights.row(i) = (row / row.sum()).transpose();
    }
  }
  tp.weights = weights;

  const Mat feats = feat_net_.forward(params_, x, tape ? &tp.t_feat : nullptr);
  tp.feats = feats;
  Mat y(n, cfg_.feat_dim());
  for (int i = 0; i < n; ++i) {
    y.row(i) = weights.row(i) * feats.middleRows(i * L, L);
  }

  Posterior post;
  post.mu = y.leftCols(cfg_.latent_dim);
  tp.pre_clamp = y.rightCols(cfg_.latent_dim);
  post.log_sigma = clamp_mat(tp.pre_clamp, cfg_.logstd_min, cfg_.logstd_max);
  tp.valid = true;
  return post;
}

void Model::encode_backward(const EncodeTape& tp, const Mat& d_mu, const Mat& d_log_sigma) {
  if (!tp.valid) throw Error("Model::encode_backward: tape is empty or already cleared");
  const int n = tp.n, L = tp.L;
  if (d_mu.rows() != n || d_log_sigma.rows() != n) {
    throw Error("Model::encode_backward: gradient shape mismatch");
  }
  Mat d_y(n, cfg_.feat_dim());
  d_y.leftCols(cfg_.latent_dim) = d_mu;
  d_y.rightCols(cfg_.latent_dim) =
      d_log_sigma.cwiseProduct(clamp_mask(tp.pre_clamp, cfg_.logstd_min, cfg_.logstd_max));

  Mat d_feats(n * L, cfg_.feat_dim());
  Mat d_weights(n, L);
  for (int i = 0; i < n; ++i) {
    for (int m = 0; m < L; ++m) {
      d_feats.row(i * L + m) = tp.weights(i, m) * d_y.row(i);
    }
    d_weights.row(i) = (tp.feats.middleRows(i * L, L) * d_y.row(i).transpose()).transpose();
  }
  feat_net_.backward(params_, tp.t_feat, d_feats);

  if (cfg_.mean_pool) return;

  // softmax backward per set: dq = w .* (dw - <w, dw>)
  Mat d_logits(n * L, 1);
  for (int i = 0; i < n; ++i) {
    const double inner = tp.weights.row(i).dot(d_weights.row(i));
    for (int m = 0; m < L; ++m) {
      d_logits(i * L + m, 0) = tp.weights(i, m) * (d_weights(i, m) - inner);
    }
  }
  const Mat d_scored = score_net_.backward(params_, tp.t_score, d_logits);
  Mat d_summary(n, cfg_.hidden);
  for (int i = 0; i < n; ++i) {
    d_summary.row(i) = d_scored.middleRows(i * L, L).rightCols(cfg_.hidden).colwise().sum();
  }
  const Mat d_pooled = summary_net_.backward(params_, tp.t_summary, d_summary);
  Mat d_elem(n * L, cfg_.hidden);
  for (int i = 0; i < n; ++i) {
    for (int m = 0; m < L; ++m) {
      d_elem.row(i * L + m) = d_pooled.row(i) / static_cast<double>(L);
    }
  }
  elem_net_.backward(params_, tp.t_elem, d_elem);
}

Mat Model::reparameterize(const Posterior& post, const Mat& eps) const {
  if (cfg_.deterministic) return post.mu;
  if (eps.rows() != post.mu.rows() || eps.cols() != post.mu.cols()) {
    throw Error("Model::reparameterize: eps shape mismatch");
  }
  return post.mu + post.log_sigma.array().exp().matrix().cwiseProduct(eps);
}

void Model::reparameterize_backward(const Posterior& post, const Mat& eps, const Mat& d_h,
                                    Mat& d_mu, Mat& d_log_sigma) const {
  d_mu += d_h;
  if (cfg_.deterministic) return;
  d_log_sigma += d_h.cwiseProduct(post.log_sigma.array().exp().matrix()).cwiseProduct(eps);
}

Mat Model::project(const Mat& h, int task) const {
  check_task(task);
  const Mat& u = params_.at("proj" + std::to_string(task) + ".u").value;
  const Mat& b = params_.at("proj" + std::to_string(task) + ".b").value;
  Mat z = h * u.transpose();
  z.rowwise() += b.col(0).transpose();
  return z;
}

void Model::project_backward(const Mat& h, int task, const Mat& d_z, Mat* d_h) {
  check_task(task);
  Tensor& u = params_.at("proj" + std::to_string(task) + ".u");
  Tensor& b = params_.at("proj" + std::to_string(task) + ".b");
  u.grad.noalias() += d_z.transpose() * h;
  b.grad.col(0) += d_z.colwise().sum().transpose();
  if (d_h) *d_h += d_z * u.value;
}

Vec Model::predict_value(const Mat& z, int task, Mlp::Tape* tape) const {
  check_task(task);
  return value_nets_[static_cast<size_t>(task)].forward(params_, z, tape).col(0);
}

Mat Model::predict_value_backward(int task, const Mlp::Tape& tape, const Vec& d_v) {
  check_task(task);
  return value_nets_[static_cast<size_t>(task)].backward(params_, tape, d_v);
}

ActionDist Model::decode(const Mat& query_state, const Mat& h, DecodeTape* tape) const {
  if (query_state.rows() != h.rows()) throw Error("Model::decode: row count mismatch");
  DecodeTape local;
  DecodeTape& tp = tape ? *tape : local;
  const Mat trunk = trunk_net_.forward(params_, query_state, tape ? &tp.t_trunk : nullptr);
  Mat joint(trunk.rows(), trunk.cols() + h.cols());
  joint << trunk, h;
  const Mat out = head_net_.forward(params_, joint, tape ? &tp.t_head : nullptr);
  ActionDist dist;
  dist.mu = out.col(0);
  tp.pre_clamp = out.col(1);
  dist.log_std = clamp_mat(tp.pre_clamp, cfg_.logstd_min, cfg_.logstd_max).col(0);
  tp.valid = true;
  return dist;
}

Mat Model::decode_backward(const DecodeTape& tp, const Vec& d_mu, const Vec& d_log_std) {
  if (!tp.valid) throw Error("Model::decode_backward: tape is empty or already cleared");
  Mat d_out(d_mu.size(), 2);
  d_out.col(0) = d_mu;
  d_out.col(1) =
      d_log_std.cwiseProduct(clamp_mask(tp.pre_clamp, cfg_.logstd_min, cfg_.logstd_max).col(0));
  const Mat d_joint = head_net_.backward(params_, tp.t_head, d_out);
  trunk_net_.backward(params_, tp.t_trunk, d_joint.leftCols(cfg_.hidden));
  return d_joint.rightCols(cfg_.latent_dim);
}

std::vector<std::string> Model::encoder_param_names() const {
  std::vector<std::string> out;
  if (!cfg_.mean_pool) {
    for (const Mlp* net : {&elem_net_, &summary_net_, &score_net_}) {
      for (auto& n : net->param_names()) out.push_back(n);
    }
  }
  for (auto& n : feat_net_.param_names()) out.push_back(n);
  return out;
}

std::vector<std::string> Model::decoder_param_names() const {
  std::vector<std::string> out;
  for (auto& n : trunk_net_.param_names()) out.push_back(n);
  for (auto& n : head_net_.param_names()) out.push_back(n);
  return out;
}

std::vector<std::string> Model::projector_param_names() const {
  std::vector<std::string> out;
  for (int k = 0; k < cfg_.n_tasks; ++k) {
    out.push_back("proj" + std::to_string(k) + ".u");
    out.push_back("proj" + std::to_string(k) + ".b");
  }
  return out;
}

std::vector<std::string> Model::regressor_param_names() const {
  std::vector<std::string> out;
  for (const Mlp& net : value_nets_) {
    for (auto& n : net.param_names()) out.push_back(n);
  }
  return out;
}

std::vector<std::string> Model::representation_param_names() const {
  std::vector<std::string> out = encoder_param_names();
  for (auto& n : decoder_param_names()) out.push_back(n);
  for (auto& n : projector_param_names()) out.push_back(n);
  return out;
}

const Mat& Model::projector_matrix(int task) const {
  check_task(task);
  return params_.at("proj" + std::to_string(task) + ".u").value;
}

void Model::check_task(int task) const {
  if (task < 0 || task >= cfg_.n_tasks) {
    throw Error("Model: task index " + std::to_string(task) + " out of range");
  }
}

}  // namespace polrep
