#pragma once

#include "polrep/model.hpp"

namespace polrep {

struct LossWeights {
  double alpha = 1.0;      // contrastive term
  double zeta = 5.0;       // projector orthonormality term
  double beta_start = 0.0;
  double beta_end = 0.05;
  double tau_sim = 0.5;
};

struct LossBreakdown {
  double nll = 0.0;
  double kl = 0.0;
  Vec rnc;        // per task
  Vec ortho;      // per task
  Vec value_mse;  // per task (zero during phase 1)
  double beta = 0.0;
  double total = 0.0;

  /// total must equal nll + beta*kl + (1/K) sum_k (alpha*rnc_k + zeta*ortho_k)
  /// (+ mean value mse when present) within 1e-12.
  void check_consistency(const LossWeights& w) const;
};

/// Linear KL-weight ramp: beta_start at epoch 0, beta_end at epoch == total_epochs.
double beta_schedule(int epoch, int total_epochs, const LossWeights& w);

/// Mean diagonal-Gaussian negative log-likelihood of actions; accumulates
/// d(mean nll)/d(mu, log_std) when gradient outputs are given.
double gaussian_nll(const ActionDist& dist, const Vec& actions, Vec* d_mu = nullptr,
                    Vec* d_log_std = nullptr);

/// Mean KL(q || N(0, I)) over the batch, 0.5 * sum_d (mu^2 + sigma^2 - 1 - 2 log sigma).
double kl_to_standard(const Posterior& post, Mat* d_mu = nullptr, Mat* d_log_sigma = nullptr);

/// Ranked contrastive loss over a batch of projected embeddings with scalar labels.
/// Similarity s_ij = -||z_i - z_j|| / tau; for each ordered pair (i, j) the log-ratio
/// of exp(s_ij) against all candidates at least as label-far as j is averaged.
/// Accumulates d(loss)/dz into d_z when given (same shape as z).
double rnc_loss(const Mat& z, const Vec& labels, double tau, Mat* d_z = nullptr);

/// || U U^T - I ||_F^2 with gradient 4 (U U^T - I) U.
double ortho_loss(const Mat& u, Mat* d_u = nullptr);

/// Mean squared error between predictions and labels; d(loss)/d(pred) optional.
double value_loss(const Vec& pred, const Vec& labels, Vec* d_pred = nullptr);

/// Full phase-1 objective on one two-view batch: decoder NLL + beta*KL plus the
/// per-task contrastive and orthonormality terms averaged over tasks. When
/// `backward`, accumulates gradients for encoder, decoder, and projectors into the
/// model's parameter store. `eps` is the fixed reparameterization noise (2I x latent).
LossBreakdown phase1_loss(Model& model, const TwoViewBatch& batch, const Mat& eps,
                          const LossWeights& w, int epoch, int total_epochs, bool backward,
                          double* h_norm_out = nullptr);

}  // namespace polrep
