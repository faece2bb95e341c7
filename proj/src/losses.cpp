#include "polrep/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace polrep {

namespace {
double lse2(double a, double b) {
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}
}  // namespace

void LossBreakdown::check_consistency(const LossWeights& w) const {
  const int K = static_cast<int>(rnc.size());
  double expect = nll + beta * kl;
  for (int k = 0; k < K; ++k) {
    expect += (w.alpha * rnc[k] + w.zeta * ortho[k]) / static_cast<double>(K);
  }
  if (value_mse.size() > 0) {
    expect += value_mse.sum() / static_cast<double>(value_mse.size());
  }
  if (std::abs(expect - total) > 1e-12) {
    throw Error("LossBreakdown: total drifted from its parts by " + std::to_string(expect - total));
  }
}

double beta_schedule(int epoch, int total_epochs, const LossWeights& w) {
  if (epoch < 0 || epoch > total_epochs) throw Error("beta_schedule: epoch out of range");
  if (total_epochs == 0) return w.beta_end;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return w.beta_start + (w.beta_end - w.beta_start) * t;
}

double gaussian_nll(const ActionDist& dist, const Vec& actions, Vec* d_mu, Vec* d_log_std) {
  const Eigen::Index n = actions.size();
  if (n == 0) throw Error("gaussian_nll: empty batch");
  if (dist.mu.size() != n || dist.log_std.size() != n) throw Error("gaussian_nll: size mismatch");
  constexpr double kHalfLog2Pi = 0.9189385332046727;
  const Eigen::ArrayXd sigma = dist.log_std.array().exp();
  const Eigen::ArrayXd resid = (actions - dist.mu).array() / sigma;
  const double nll =
      (kHalfLog2Pi + dist.log_std.array() + 0.5 * resid.square()).sum() / static_cast<double>(n);
  if (!std::isfinite(nll)) throw Error("gaussian_nll: non-finite loss");
  if (d_mu) {
    *d_mu += ((dist.mu - actions).array() / sigma.square() / static_cast<double>(n)).matrix();
  }
  if (d_log_std) {
    *d_log_std += ((1.0 - resid.square()) / static_cast<double>(n)).matrix();
  }
  return nll;
}

double kl_to_standard(const Posterior& post, Mat* d_mu, Mat* d_log_sigma) {
  const Eigen::Index n = post.mu.rows();
  if (n == 0) throw Error("kl_to_standard: empty batch");
  const Eigen::ArrayXXd var = (2.0 * post.log_sigma.array()).exp();
  const double kl =
      0.5 * (post.mu.array().square() + var - 1.0 - 2.0 * post.log_sigma.array()).sum() /
      static_cast<double>(n);
  if (!std::isfinite(kl)) throw Error("kl_to_standard: non-finite loss");
  if (d_mu) *d_mu += post.mu / static_cast<double>(n);
  if (d_log_sigma) *d_log_sigma += ((var - 1.0) / static_cast<double>(n)).matrix();
  return kl;
}

double rnc_loss(const Mat& z, const Vec& labels, double tau, Mat* d_z) {
  const int B = static_cast<int>(z.rows());
  if (B < 2) throw Error("rnc_loss: batch must hold at least 2 embeddings");
  if (labels.size() != B) throw Error("rnc_loss: label count mismatch");
  if (tau <= 0.0) throw Error("rnc_loss: tau must be positive");

  Mat dist(B, B);
  dist.setZero();
  for (int i = 0; i < B; ++i) {
    for (int j = i + 1; j < B; ++j) {
      const double d = (z.row(i) - z.row(j)).norm();
      dist(i, j) = d;
      dist(j, i) = d;
    }
  }
  const Mat sim = -dist / tau;

  const double norm = 1.0 / (static_cast<double>(B) * static_cast<double>(B - 1));
  double loss = 0.0;
  const int m = B - 1;
  std::vector<int> order(static_cast<size_t>(m));
  std::vector<double> ldist(static_cast<size_t>(m)), s(static_cast<size_t>(m));
  std::vector<double> prefix(static_cast<size_t>(m)), suffix(static_cast<size_t>(m));
  std::vector<int> last_tied(static_cast<size_t>(m));

  for (int i = 0; i < B; ++i) {
    int c = 0;
    for (int j = 0; j < B; ++j) {
      if (j != i) order[static_cast<size_t>(c++)] = j;
    }
    // candidates sorted by label distance to the anchor, farthest first
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double da = std::abs(labels[i] - labels[a]);
      const double db = std::abs(labels[i] - labels[b]);
      return da != db ? da > db : a < b;
    });
    for (int t = 0; t < m; ++t) {
      ldist[static_cast<size_t>(t)] = std::abs(labels[i] - labels[order[static_cast<size_t>(t)]]);
      s[static_cast<size_t>(t)] = sim(i, order[static_cast<size_t>(t)]);
    }
    // prefix log-sum-exp of similarities and tie-group extents
    prefix[0] = s[0];
    for (int t = 1; t < m; ++t) {
      prefix[static_cast<size_t>(t)] = lse2(prefix[static_cast<size_t>(t - 1)], s[static_cast<size_t>(t)]);
    }
    for (int t = m - 1; t >= 0; --t) {
      if (t + 1 < m && ldist[static_cast<size_t>(t)] == ldist[static_cast<size_t>(t + 1)]) {
        last_tied[static_cast<size_t>(t)] = last_tied[static_cast<size_t>(t + 1)];
      } else {
        last_tied[static_cast<size_t>(t)] = t;
      }
    }
    for (int t = 0; t < m; ++t) {
      loss += prefix[static_cast<size_t>(last_tied[static_cast<size_t>(t)])] - s[static_cast<size_t>(t)];
    }
    if (!d_z) continue;

    // d loss / d s_u = norm * (exp(s_u) * sum_{t: e(t) >= u} 1/W(e(t)) - 1), computed in
    // log space via a suffix log-sum-exp of -prefix[e(t)]
    suffix[static_cast<size_t>(m - 1)] = -prefix[static_cast<size_t>(last_tied[static_cast<size_t>(m - 1)])];
    for (int t = m - 2; t >= 0; --t) {
      suffix[static_cast<size_t>(t)] =
          lse2(-prefix[static_cast<size_t>(last_tied[static_cast<size_t>(t)])], suffix[static_cast<size_t>(t + 1)]);
    }
    int tp = 0;
    for (int u = 0; u < m; ++u) {
      while (last_tied[static_cast<size_t>(tp)] < u) ++tp;
      const double coef = std::exp(s[static_cast<size_t>(u)] + suffix[static_cast<size_t>(tp)]) - 1.0;
      const double ds = norm * coef;
      const int j = order[static_cast<size_t>(u)];
      const double denom = tau * std::max(dist(i, j), 1e-12);
      const Eigen::RowVectorXd g = (ds / denom) * (z.row(j) - z.row(i));
      d_z->row(i) += g;
      d_z->row(j) -= g;
    }
  }
  loss *= norm;
  if (!std::isfinite(loss)) throw Error("rnc_loss: non-finite loss");
  return loss;
}

double ortho_loss(const Mat& u, Mat* d_u) {
  const Mat resid = u * u.transpose() - Mat::Identity(u.rows(), u.rows());
  if (d_u) *d_u += 4.0 * resid * u;
  return resid.squaredNorm();
}

double value_loss(const Vec& pred, const Vec& labels, Vec* d_pred) {
  const Eigen::Index n = pred.size();
  if (n == 0) throw Error("value_loss: empty batch");
  if (labels.size() != n) throw Error("value_loss: label count mismatch");
  const Vec resid = pred - labels;
  if (d_pred) *d_pred += 2.0 * resid / static_cast<double>(n);
  return resid.squaredNorm() / static_cast<double>(n);
}

LossBreakdown phase1_loss(Model& model, const TwoViewBatch& batch, const Mat& eps,
                          const LossWeights& w, int epoch, int total_epochs, bool backward,
                          double* h_norm_out) {
  const ModelConfig& cfg = model.config();
  const int K = cfg.n_tasks;
  const int n = static_cast<int>(batch.contexts.size());
  if (n == 0) throw Error("phase1_loss: empty batch");
  if (batch.returns.rows() != n || batch.returns.cols() != K) {
    throw Error("phase1_loss: label shape mismatch");
  }

  LossBreakdown out;
  out.rnc = Vec::Zero(K);
  out.ortho = Vec::Zero(K);
  out.value_mse = Vec();
  out.beta = beta_schedule(epoch, total_epochs, w);

  Model::EncodeTape enc_tape;
  const Posterior post = model.encode(batch.contexts, backward ? &enc_tape : nullptr);
  const Mat h = model.reparameterize(post, eps);

  if (h_norm_out) *h_norm_out = h.rowwise().norm().mean();

  Model::DecodeTape dec_tape;
  const ActionDist dist = model.decode(batch.query_state, h, backward ? &dec_tape : nullptr);

  Vec d_nll_mu = Vec::Zero(n), d_nll_logstd = Vec::Zero(n);
  out.nll = gaussian_nll(dist, batch.query_action, backward ? &d_nll_mu : nullptr,
                         backward ? &d_nll_logstd : nullptr);

  Mat d_mu = Mat::Zero(n, cfg.latent_dim);
  Mat d_log_sigma = Mat::Zero(n, cfg.latent_dim);
  if (!cfg.deterministic) {
    Mat d_kl_mu = Mat::Zero(n, cfg.latent_dim);
    Mat d_kl_logsig = Mat::Zero(n, cfg.latent_dim);
    out.kl = kl_to_standard(post, backward ? &d_kl_mu : nullptr, backward ? &d_kl_logsig : nullptr);
    if (backward) {
      d_mu += out.beta * d_kl_mu;
      d_log_sigma += out.beta * d_kl_logsig;
    }
  }

  Mat d_h = Mat::Zero(n, cfg.latent_dim);
  if (backward) d_h += model.decode_backward(dec_tape, d_nll_mu, d_nll_logstd);

  for (int k = 0; k < K; ++k) {
    const Mat z = model.project(h, k);
    Mat d_z = Mat::Zero(n, cfg.task_dim);
    out.rnc[k] = rnc_loss(z, batch.returns.col(k), w.tau_sim, backward ? &d_z : nullptr);
    Mat d_u = Mat::Zero(cfg.task_dim, cfg.latent_dim);
    out.ortho[k] = ortho_loss(model.projector_matrix(k), backward ? &d_u : nullptr);
    if (backward) {
      d_z *= w.alpha / static_cast<double>(K);
      model.project_backward(h, k, d_z, &d_h);
      const std::string name = "proj" + std::to_string(k) + ".u";
      model.params().at(name).grad += (w.zeta / static_cast<double>(K)) * d_u;
    }
  }

  if (backward) {
    model.reparameterize_backward(post, eps, d_h, d_mu, d_log_sigma);
    model.encode_backward(enc_tape, d_mu, d_log_sigma);
  }

  out.total = out.nll + out.beta * out.kl;
  for (int k = 0; k < K; ++k) {
    out.total += (w.alpha * out.rnc[k] + w.zeta * out.ortho[k]) / static_cast<double>(K);
  }
  if (!std::isfinite(out.total)) throw Error("phase1_loss: non-finite total loss");
  out.check_consistency(w);
  return out;
}

}  // namespace polrep
