#pragma once

#include "common.hpp"

#include <array>
#include <span>
#include <vector>

namespace badlabel {

// Settings shared by the EM and variational fits. The stopping rule compares
// the per-iteration improvement of the fit objective against tolerance.
struct VbConfig {
  double tolerance = 0.01;  // delta
  int max_iterations = 20;  // N_iter
  double dirichlet_prior = 1.0;
  double mean_precision_prior = 1.0;  // beta0; the mean prior is the data mean
  double precision_shape_prior = 1.0;  // a0; the rate prior b0 is the data variance
  double variance_floor = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class MixtureKind { Em, Variational };

struct MixtureFit {
  MixtureKind kind = MixtureKind::Em;
  std::array<double, 2> means{};
  std::array<double, 2> variances{};
  std::array<double, 2> weights{};
  Matrix responsibilities;  // n x 2
  bool converged = false;
  int iterations_used = 0;
  double objective = 0.0;  // mean log-likelihood (EM) or total ELBO (VB)
  std::vector<double> trace;  // objective after initialization and after every iteration

  // variational posterior parameters (VB only)
  std::array<double, 2> dirichlet{};
  std::array<double, 2> mean_precision{};
  std::array<double, 2> shape{};
  std::array<double, 2> rate{};

  // Responsibilities of both components at arbitrary values.
  Matrix evaluate(std::span<const double> values) const;
};

MixtureFit fit_em(std::span<const double> values, const VbConfig& config);
MixtureFit fit_vb(std::span<const double> values, const VbConfig& config);

// Posterior probability of the component with the smaller mean.
Vector posterior_low_mean(const MixtureFit& fit, std::span<const double> values);

}  // namespace badlabel
