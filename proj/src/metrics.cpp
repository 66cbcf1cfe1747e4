#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace badlabel {

std::vector<HistogramBin> loss_histogram(std::span<const double> losses, const std::vector<bool>& clean_mask,
                                         int bins) {
  if (losses.empty()) throw DataError("loss_histogram: empty input");
  if (losses.size() != clean_mask.size()) throw ShapeError("loss_histogram: losses and mask differ in length");
  if (bins < 1) throw ConfigError("loss_histogram: bins must be >= 1");
  const auto [lo_it, hi_it] = std::minmax_element(losses.begin(), losses.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const double width = (hi - lo) / bins;

  std::vector<HistogramBin> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[b].left = lo + width * b;
    out[b].right = b + 1 == bins ? hi : lo + width * (b + 1);
  }
  for (std::size_t i = 0; i < losses.size(); ++i) {
    int b = width > 0.0 ? static_cast<int>((losses[i] - lo) / width) : 0;
    b = std::clamp(b, 0, bins - 1);
    if (clean_mask[i]) {
      ++out[b].clean;
    } else {
      ++out[b].noisy;
    }
  }
  return out;
}

double separability_auc(std::span<const double> losses, const std::vector<bool>& clean_mask) {
  if (losses.size() != clean_mask.size()) throw ShapeError("separability_auc: losses and mask differ in length");
  const std::size_t n = losses.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });

  // midranks, 1-based
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && losses[order[j + 1]] == losses[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double noisy_rank_sum = 0.0;
  std::size_t noisy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!clean_mask[i]) {
      noisy_rank_sum += rank[i];
      ++noisy;
    }
  }
  const std::size_t clean = n - noisy;
  if (noisy == 0 || clean == 0) throw DataError("separability_auc: need both clean and noisy samples");
  const double nn = static_cast<double>(noisy);
  return (noisy_rank_sum - nn * (nn + 1.0) / 2.0) / (nn * static_cast<double>(clean));
}

DivisionQuality division_quality(std::span<const int> labeled, const std::vector<bool>& clean_mask) {
  if (labeled.empty()) throw DataError("division_quality: empty labeled set");
  std::size_t hit = 0;
  for (int i : labeled) {
    if (i < 0 || static_cast<std::size_t>(i) >= clean_mask.size())
      throw DataError("division_quality: index outside the dataset");
    hit += clean_mask[static_cast<std::size_t>(i)];
  }
  const auto total_clean = static_cast<std::size_t>(std::count(clean_mask.begin(), clean_mask.end(), true));
  DivisionQuality q;
  q.precision = static_cast<double>(hit) / static_cast<double>(labeled.size());
  q.recall = total_clean ? static_cast<double>(hit) / static_cast<double>(total_clean) : 0.0;
  return q;
}

void RunMetrics::add(EpochRecord record) {
  record.epoch = static_cast<int>(epochs.size());
  epochs.push_back(record);
}

std::vector<double> RunMetrics::accuracies() const {
  std::vector<double> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) out.push_back(e.test_accuracy);
  return out;
}

AccuracySummary track(const RunMetrics& metrics) {
  if (metrics.epochs.empty()) throw DataError("track: no epochs recorded");
  const auto acc = metrics.accuracies();
  AccuracySummary s;
  s.best = *std::max_element(acc.begin(), acc.end());
  const std::size_t tail = std::min<std::size_t>(10, acc.size());
  s.last_mean = std::accumulate(acc.end() - static_cast<std::ptrdiff_t>(tail), acc.end(), 0.0) / static_cast<double>(tail);
  return s;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_metrics_csv(const std::filesystem::path& path, const RunMetrics& metrics) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  os << "epoch,train_loss,test_acc,labeled_precision,labeled_recall,gmm_converged,gmm_iters\n";
  for (const auto& e : metrics.epochs) {
    os << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.test_accuracy) << ',' << fmt(e.labeled_precision)
       << ',' << fmt(e.labeled_recall) << ',' << (e.gmm_converged ? 1 : 0) << ',' << e.gmm_iterations << '\n';
  }
  if (!os) throw DataError(path.string() + ": write failed");
}

void save_histogram_csv(const std::filesystem::path& path, const std::vector<HistogramBin>& bins) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  os << "bin_left,bin_right,count_clean,count_noisy\n";
  for (const auto& b : bins) os << fmt(b.left) << ',' << fmt(b.right) << ',' << b.clean << ',' << b.noisy << '\n';
  if (!os) throw DataError(path.string() + ": write failed");
}

}  // namespace badlabel
