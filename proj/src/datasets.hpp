#pragma once

#include "common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace badlabel {

struct Dataset {
  Matrix features;          // n x d
  std::vector<int> labels;  // clean labels in [0, classes)
  int classes = 0;
  std::string split = "train";

  std::size_t size() const { return labels.size(); }
  int dim() const { return static_cast<int>(features.cols()); }
  void validate() const;
};

struct SyntheticSpec {
  std::vector<std::vector<double>> centers;
  std::vector<double> stds;  // one per class
  int train_per_class = 1000;
  int test_per_class = 500;
  std::uint64_t seed = 0;

  // Three classes at (0,0), (4,0), (2,3.5) with std 0.7.
  static SyntheticSpec defaults(std::uint64_t seed = 0);
  void validate() const;
};

std::pair<Dataset, Dataset> gen_synthetic(const SyntheticSpec& spec);

// IDX image/label pair; pixels scaled to [0,1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> limit = std::nullopt);

// Dataset CSV: header index,f0,...,f{d-1},label
void save_dataset_csv(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset_csv(const std::filesystem::path& path, int classes, const std::string& split);

// A dataset directory holds train.csv, test.csv and meta.txt.
void save_dataset_dir(const std::filesystem::path& dir, const Dataset& train, const Dataset& test,
                      const std::string& kind);
std::pair<Dataset, Dataset> load_dataset_dir(const std::filesystem::path& dir);

// Distance of every sample to the mean of its own clean class.
Vector centroid_distances(const Dataset& data);

enum class NoiseKind { None, Symmetric, Asymmetric, Idn, BadLabel };

const char* noise_kind_name(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

struct LabelRecord {
  int index = 0;
  int clean = 0;
  int noisy = 0;
  bool operator==(const LabelRecord&) const = default;
};

struct NoisyLabels {
  std::vector<LabelRecord> records;  // sorted by index
  int classes = 0;
  NoiseKind kind = NoiseKind::None;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return records.size(); }
  std::vector<int> noisy() const;
  std::vector<int> clean() const;
  // true where the noisy label equals the clean one
  std::vector<bool> clean_mask() const;
  void validate() const;

  bool operator==(const NoisyLabels&) const = default;
};

NoisyLabels identity_labels(const Dataset& data, NoiseKind kind, double ratio, std::uint64_t seed);

// Label file: '#'-prefixed provenance lines, then header
// index,clean_label,noisy_label and one row per sample sorted by index.
void save_labels(const std::filesystem::path& path, const NoisyLabels& labels);
NoisyLabels load_labels(const std::filesystem::path& path);

// Rejects label files that do not describe every row of the dataset.
void check_labels_match(const NoisyLabels& labels, const Dataset& data);

}  // namespace badlabel
