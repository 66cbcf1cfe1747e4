#pragma once

#include "datasets.hpp"
#include "nn.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace badlabel {

// Per-sample affinity scores to every class; rows live on the simplex after
// each update.
struct FlagArray {
  Matrix scores;  // n x C
  int iteration = 0;
};

struct BadLabelConfig {
  int epochs = 30;
  double alpha = 0.1;
  std::vector<int> hidden = {64, 64};
  SgdConfig sgd;
  std::uint64_t seed = 0;

  // Desk-scale defaults: lr 0.1 divided by 10 at T/2 and again at 3T/4.
  static BadLabelConfig defaults(int epochs = 30);
  // T=20, lr 0.01, momentum 0.5.
  static BadLabelConfig mnist_preset();
  void validate() const;
};

NoisyLabels apply_symmetric(const Dataset& data, double ratio, std::uint64_t seed);

// mapping[c] is the target class of c; defaults to c -> (c+1) mod C.
NoisyLabels apply_asymmetric(const Dataset& data, double ratio, std::uint64_t seed,
                             std::optional<std::vector<int>> mapping = std::nullopt);

struct IdnOptions {
  double rate_std = 0.1;
  // Widening of the pooled class spread used for the boundary weight.
  double widen = 1.5;
};

NoisyLabels apply_idn(const Dataset& data, double ratio, std::uint64_t seed, IdnOptions opts = {});

// z' = softmax_rows(z + alpha * log P)
FlagArray update_flag(const FlagArray& z, const Matrix& probs, double alpha);

struct CraftResult {
  NoisyLabels labels;
  FlagArray flags;
  MlpModel model;  // the crafting network after T epochs
};

CraftResult craft_badlabel(const Dataset& data, double ratio, const BadLabelConfig& cfg);

// Stage II of the crafting procedure on a finished flag array.
NoisyLabels flip_by_affinity(const Dataset& data, const FlagArray& flags, double ratio);

struct TransitionMatrix {
  Matrix values;              // C x C, row = clean class, column = noisy class
  std::vector<bool> present;  // false where the clean class has no samples
};

TransitionMatrix transition_matrix(const NoisyLabels& labels, int classes);
void save_transition_csv(const std::filesystem::path& path, const TransitionMatrix& tm);

double noise_rate(const NoisyLabels& labels);

}  // namespace badlabel
