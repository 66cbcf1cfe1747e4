#pragma once

#include "common.hpp"

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace badlabel {

// Dense feed-forward classifier: rectifier on hidden layers, identity on the
// output layer. weights[l] is dims[l+1] x dims[l].
struct MlpModel {
  std::vector<int> dims;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  int input_dim() const { return dims.front(); }
  int class_count() const { return dims.back(); }
  int layer_count() const { return static_cast<int>(weights.size()); }
  std::size_t parameter_count() const;

  bool operator==(const MlpModel& other) const;
};

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // (epoch, multiplier) pairs; the multiplier of the last entry whose epoch is
  // <= the current epoch applies.
  std::vector<std::pair<int, double>> schedule;
  int batch_size = 128;

  void validate() const;
  double rate_at(int epoch) const;
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

struct ForwardCache {
  // activations[0] is the input; activations[l] feeds layer l.
  std::vector<Matrix> activations;
  Matrix logits;
};

// SGD with classical momentum: v = mu*v - lr*(g + wd*W); W += v.
// Weight decay touches weights only.
class Sgd {
public:
  Sgd(const MlpModel& model, SgdConfig config);

  void set_epoch(int epoch) { epoch_ = epoch; }
  int epoch() const { return epoch_; }
  const SgdConfig& config() const { return config_; }
  void step(MlpModel& model, const Gradients& grads);

private:
  SgdConfig config_;
  int epoch_ = 0;
  std::vector<Matrix> weight_velocity_;
  std::vector<Vector> bias_velocity_;
};

MlpModel init_mlp(std::span<const int> dims, std::uint64_t seed);

Matrix forward(const MlpModel& model, const Matrix& x);
Matrix forward(const MlpModel& model, const Matrix& x, ForwardCache& cache);

// Reverse accumulation from dL/dlogits to parameter gradients.
Gradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& dlogits);

Matrix softmax(const Matrix& logits);
Vector cross_entropy_soft(const Matrix& targets, const Matrix& probs);
Vector entropy(const Matrix& probs);

// d/dY of the soft-label cross-entropy; -log(max(P, eps)) for every entry.
Matrix label_gradient(const Matrix& targets, const Matrix& probs);

Matrix one_hot(std::span<const int> labels, int classes);

// mean_i [CE_i - cp_weight * H_i]
double batch_objective(const MlpModel& model, const Matrix& x, const Matrix& targets,
                       double cp_weight);
Gradients objective_gradient(const MlpModel& model, const Matrix& x, const Matrix& targets,
                             double cp_weight, double* loss = nullptr);

// One SGD step on mean[CE - cp_weight*H]; returns the batch loss before the step.
double train_step(MlpModel& model, Sgd& opt, const Matrix& x, const Matrix& targets,
                  double cp_weight);

// One pass over (x, targets) in seeded shuffled mini-batches. Returns the
// sample-weighted mean loss.
double train_epoch(MlpModel& model, Sgd& opt, const Matrix& x, const Matrix& targets,
                   double cp_weight, Rng& rng);

Vector per_sample_loss(const MlpModel& model, const Matrix& x, std::span<const int> labels);
std::vector<int> predict(const MlpModel& model, const Matrix& x);
double accuracy(std::span<const int> predicted, std::span<const int> truth);

void save_checkpoint(const std::filesystem::path& path, const MlpModel& model);
MlpModel load_checkpoint(const std::filesystem::path& path);

}  // namespace badlabel
