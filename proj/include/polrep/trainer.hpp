#pragma once

#include "polrep/losses.hpp"

namespace polrep {

struct TrainConfig {
  int context_length = 32;
  int rep_epochs = 200;   // phase 1
  int rep_batch = 64;     // trajectories per two-view batch (I)
  int reg_epochs = 100;   // phase 2
  int reg_batch = 256;    // trajectories per regressor batch (J)
  int hidden = 64;
  int latent_dim = 32;
  int task_dim = 4;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double alpha = 1.0;
  double zeta = 5.0;
  double beta_start = 0.0;
  double beta_end = 0.05;
  double tau_sim = 0.5;
  uint64_t seed = 1;
  bool vae_only = false;               // drops the contrastive term (alpha = 0)
  bool unconstrained_projector = false;  // drops the orthonormality term (zeta = 0)
  bool mean_pool_encoder = false;
  bool deterministic_ae = false;       // collapses the posterior, drops the KL term

  LossWeights effective_weights() const;
  ModelConfig model_config() const;
};

Model make_model(const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  LossBreakdown mean;
  double h_norm = 0.0;  // mean embedding norm over the epoch
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  void append_csv(const std::string& path, int n_tasks) const;
};

/// Phase 1: joint update of encoder, decoder, and projectors on two-view batches.
/// Epochs iterate a freshly shuffled partition of the train split into batches of
/// rep_batch trajectories (remainder dropped). Deterministic given (dataset, config).
TrainLog train_phase1(Model& model, const Dataset& ds, const TrainConfig& cfg);

/// Phase 2: value-regressor training with everything else frozen. Epoch numbering in
/// the returned log continues after rep_epochs.
TrainLog train_phase2(Model& model, const Dataset& ds, const TrainConfig& cfg);

/// One posterior-mean embedding per training trajectory with aligned raw labels.
struct EmbeddingBank {
  Mat h;            // n_train x latent_dim
  Vec knobs;        // n_train
  Mat returns_raw;  // n_train x K
};

EmbeddingBank build_embedding_bank(const Model& model, const Dataset& ds, int context_length,
                                   uint64_t seed);

/// Everything needed to evaluate and steer: parameters, typed train config, canonical
/// run-config text (provenance), normalization stats, and the embedding bank.
struct Bundle {
  Model model;
  TrainConfig train;
  NormStats stats;
  EmbeddingBank bank;
  std::string config_text;

  Bundle() : model(ModelConfig{}) {}
};

void save_bundle(const std::string& path, const Model& model, const TrainConfig& cfg,
                 const NormStats& stats, const EmbeddingBank& bank,
                 const std::string& config_text);
Bundle load_bundle(const std::string& path);

}  // namespace polrep
