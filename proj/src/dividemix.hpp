#pragma once

#include "datasets.hpp"
#include "gmm.hpp"
#include "metrics.hpp"
#include "nn.hpp"

#include <array>
#include <optional>
#include <vector>

namespace badlabel {

// Worker cap from BADLABEL_THREADS (default 1). Results never depend on it.
int worker_threads();

// ---- standard training ----

struct StandardConfig {
  std::vector<int> hidden = {64, 64};
  int epochs = 30;
  SgdConfig sgd;
  std::uint64_t seed = 0;

  static StandardConfig defaults();
  void validate() const;
};

struct StandardResult {
  MlpModel model;
  RunMetrics metrics;
};

// Plain cross-entropy training on the noisy labels; test accuracy recorded
// after every epoch when a test set is given.
StandardResult train_standard(const Dataset& train, const NoisyLabels& labels, const StandardConfig& cfg,
                              const Dataset* test = nullptr);

// ---- Robust DivideMix ----

struct MixMatchConfig {
  double temperature = 0.5;  // sharpening
  int augmentations = 2;
  double mixup_alpha = 4.0;
  double lambda_u = 25.0;  // unlabeled loss weight after ramp-up
  int rampup_epochs = 16;
  double jitter_std = 0.1;

  void validate() const;
};

struct DivideConfig {
  std::vector<int> hidden = {64, 64};
  int warmup_epochs = 4;
  double cp_weight = 0.5;
  double lambda = 0.8;  // label perturbation step
  double tau_p = 0.5;
  double tau_c = 0.5;
  int epochs = 20;  // Stage II MixMatch epochs
  VbConfig gmm;
  MixMatchConfig mixmatch;
  SgdConfig sgd;
  std::uint64_t seed = 0;
  double fallback_fraction = 0.1;

  bool use_bayes_gmm = true;
  bool use_perturbation = true;
  bool use_filtering = true;

  static DivideConfig defaults();
  void validate() const;
};

struct PairState {
  std::array<MlpModel, 2> nets;
  std::array<Sgd, 2> opts;
  std::array<Rng, 2> rngs;  // per-network streams
  int epoch = 0;
  std::array<Vector, 2> cached_posteriors;

  static PairState create(std::span<const int> dims, const SgdConfig& sgd, std::uint64_t seed);
};

struct Division {
  std::vector<int> labeled;
  std::vector<int> unlabeled;
  Vector source;
  double threshold = 0.5;
  bool empty_labeled = false;
};

// Trains both networks on the noisy labels with loss CE - cp_weight*H.
void warmup(PairState& pair, const Matrix& x, std::span<const int> noisy, int epochs, double cp_weight);

// Y + lambda * (-log P); no projection back onto the simplex.
Matrix perturb_labels(const Matrix& labels, const Matrix& probs, double lambda);

std::vector<int> harden(const Matrix& soft);

Division divide(const Vector& posterior, double threshold);

// Top ceil(fraction*n) samples by posterior become the labeled set.
Division fallback_division(const Vector& posterior, double threshold, double fraction);

Matrix sharpen(const Matrix& probs, double temperature);

// Mixup coefficient max(b, 1-b) with b ~ Beta(a, a).
double mixup_coefficient(double a, Rng& rng);

// Cross-entropy over the first labeled_rows rows plus lambda_u times the mean
// squared error between probabilities and targets over the rest. Writes the
// gradient with respect to the logits when dlogits is non-null.
double mixmatch_objective(const Matrix& logits, const Matrix& targets, Eigen::Index labeled_rows, double lambda_u,
                          Matrix* dlogits = nullptr);

// One epoch of semi-supervised training of student on the division produced
// by its peer. mixmatch_epoch counts epochs since MixMatch started (ramp-up).
// Returns the mean training loss.
double mixmatch_epoch(MlpModel& student, Sgd& opt, const Division& peer_division, const Matrix& x,
                      std::span<const int> noisy, const DivideConfig& cfg, int mixmatch_epoch, Rng& rng);

// Per-sample loss after perturbing the noisy labels with the network's own
// predictions and hardening them.
Vector perturbed_loss(const MlpModel& net, const Matrix& x, std::span<const int> noisy, double lambda);

MixtureFit fit_mixture(std::span<const double> losses, const DivideConfig& cfg);

struct RunResult {
  PairState pair;
  std::array<MlpModel, 2> warmed;  // networks right after warm-up
  std::array<Division, 2> stage_one;
  std::vector<std::array<Division, 2>> stage_two;
  RunMetrics metrics;
};

RunResult run(const Dataset& train, const NoisyLabels& labels, const DivideConfig& cfg,
              const Dataset* test = nullptr);

std::vector<int> joint_predict(const MlpModel& a, const MlpModel& b, const Matrix& x);

}  // namespace badlabel
