#pragma once

#include "common.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace badlabel {

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  std::size_t clean = 0;
  std::size_t noisy = 0;
};

// Equal-width bins over [min, max] of the losses, counted separately for
// clean and noisy samples.
std::vector<HistogramBin> loss_histogram(std::span<const double> losses, const std::vector<bool>& clean_mask,
                                         int bins);

// Probability that a random noisy sample has a larger loss than a random
// clean one (rank statistic, midranks for ties).
double separability_auc(std::span<const double> losses, const std::vector<bool>& clean_mask);

struct DivisionQuality {
  double precision = 0.0;
  double recall = 0.0;
};

DivisionQuality division_quality(std::span<const int> labeled, const std::vector<bool>& clean_mask);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double labeled_precision = 0.0;
  double labeled_recall = 0.0;
  bool gmm_converged = false;
  int gmm_iterations = 0;
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;

  void add(EpochRecord record);
  std::vector<double> accuracies() const;
};

struct AccuracySummary {
  double best = 0.0;
  double last_mean = 0.0;  // mean over the final min(10, E) epochs
};

AccuracySummary track(const RunMetrics& metrics);

void save_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics);
void save_histogram_csv(const std::filesystem::path& path, const std::vector<HistogramBin>& bins);

}  // namespace badlabel
