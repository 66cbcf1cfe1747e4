#include "noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace badlabel {

namespace {

void check_ratio(double ratio, bool allow_one = true) {
  if (!(ratio >= 0.0) || ratio > 1.0 || (!allow_one && ratio >= 1.0))
    throw ConfigError("noise ratio must lie in [0,1" + std::string(allow_one ? "]" : ")"));
}

std::size_t flip_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
}

}  // namespace

BadLabelConfig BadLabelConfig::defaults(int epochs) {
  BadLabelConfig c;
  c.epochs = epochs;
  c.sgd.learning_rate = 0.1;
  c.sgd.momentum = 0.9;
  c.sgd.weight_decay = 5e-4;
  c.sgd.batch_size = 128;
  c.sgd.schedule = {{epochs / 2, 0.1}, {(3 * epochs) / 4, 0.01}};
  return c;
}

BadLabelConfig BadLabelConfig::mnist_preset() {
  BadLabelConfig c;
  c.epochs = 20;
  c.alpha = 0.1;
  c.sgd.learning_rate = 0.01;
  c.sgd.momentum = 0.5;
  c.sgd.weight_decay = 5e-4;
  c.sgd.batch_size = 128;
  return c;
}

void BadLabelConfig::validate() const {
  if (epochs < 1) throw ConfigError("badlabel: epochs must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("badlabel: alpha must be > 0");
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("badlabel: hidden widths must be positive");
  }
  sgd.validate();
}

NoisyLabels apply_symmetric(const Dataset& data, double ratio, std::uint64_t seed) {
  check_ratio(ratio);
  NoisyLabels out = identity_labels(data, NoiseKind::Symmetric, ratio, seed);
  const std::size_t k = flip_count(ratio, data.size());
  if (k == 0) return out;
  if (data.classes < 2) throw ConfigError("symmetric noise needs at least two classes");

  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<int> other(0, data.classes - 2);
  for (std::size_t r = 0; r < k; ++r) {
    auto& rec = out.records[order[r]];
    const int draw = other(rng);
    rec.noisy = draw >= rec.clean ? draw + 1 : draw;
  }
  return out;
}

NoisyLabels apply_asymmetric(const Dataset& data, double ratio, std::uint64_t seed,
                             std::optional<std::vector<int>> mapping) {
  check_ratio(ratio);
  const int classes = data.classes;
  std::vector<int> map;
  if (mapping) {
    map = *mapping;
  } else {
    for (int c = 0; c < classes; ++c) map.push_back((c + 1) % classes);
  }
  if (static_cast<int>(map.size()) != classes) throw ConfigError("asymmetric: mapping must cover every class");
  for (int c = 0; c < classes; ++c) {
    if (map[c] < 0 || map[c] >= classes) throw ConfigError("asymmetric: mapping target out of range");
    if (map[c] == c) throw ConfigError("asymmetric: mapping has fixed point at class " + std::to_string(c));
  }

  NoisyLabels out = identity_labels(data, NoiseKind::Asymmetric, ratio, seed);
  Rng rng(seed);
  for (int c = 0; c < classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.labels[i] == c) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t k = flip_count(ratio, members.size());
    for (std::size_t r = 0; r < k; ++r) out.records[members[r]].noisy = map[c];
  }
  return out;
}

namespace {

// 1 - posterior of the sample's own class under isotropic Gaussian classes
// with a pooled, widened variance: ~0 deep inside a class, ~(C-1)/C at a
// boundary.
std::vector<double> boundary_weights(const Dataset& data, double widen) {
  const int classes = data.classes;
  const int d = data.dim();
  Matrix centroids = Matrix::Zero(classes, d);
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    centroids.row(data.labels[i]) += data.features.row(static_cast<Eigen::Index>(i));
    counts[static_cast<std::size_t>(data.labels[i])] += 1.0;
  }
  for (int c = 0; c < classes; ++c)
    if (counts[static_cast<std::size_t>(c)] > 0) centroids.row(c) /= counts[static_cast<std::size_t>(c)];
  double ss = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    ss += (data.features.row(static_cast<Eigen::Index>(i)) - centroids.row(data.labels[i])).squaredNorm();
  const double var = std::max(ss / (static_cast<double>(data.size()) * d), 1e-12) * widen * widen;

  std::vector<double> w(data.size());
  RowVector logit(classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.features.row(static_cast<Eigen::Index>(i));
    for (int c = 0; c < classes; ++c)
      logit(c) = counts[static_cast<std::size_t>(c)] > 0 ? -(x - centroids.row(c)).squaredNorm() / (2.0 * var)
                                                          : -std::numeric_limits<double>::infinity();
    const double m = logit.maxCoeff();
    const double z = (logit.array() - m).exp().sum();
    w[i] = 1.0 - std::exp(logit(data.labels[i]) - m) / z;
  }
  return w;
}

}  // namespace

NoisyLabels apply_idn(const Dataset& data, double ratio, std::uint64_t seed, IdnOptions opts) {
  check_ratio(ratio, false);
  NoisyLabels out = identity_labels(data, NoiseKind::Idn, ratio, seed);
  if (data.size() == 0 || (ratio == 0.0 && opts.rate_std == 0.0)) return out;
  if (data.classes < 2) throw ConfigError("idn noise needs at least two classes");

  Rng rng(seed);
  const int d = data.dim();
  const int classes = data.classes;
  const std::size_t n = data.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix projection(d, classes);
  for (Eigen::Index i = 0; i < projection.size(); ++i) projection.data()[i] = normal(rng);
  std::vector<double> jitter(n);
  for (double& g : jitter) g = opts.rate_std * normal(rng);

  // Per-sample rate: Gaussian around a boundary-weighted mean, clipped to
  // [0,1]; the weight scale is solved so the rates average exactly ratio.
  const std::vector<double> weight = boundary_weights(data, opts.widen);
  std::vector<double> rate(n, 0.0);
  auto fill = [&](double scale) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      rate[i] = std::clamp(scale * weight[i] + jitter[i], 0.0, 1.0);
      sum += rate[i];
    }
    return sum / static_cast<double>(n);
  };
  double lo = 0.0;
  double hi = 1.0;
  while (fill(hi) < ratio && hi < 1e12) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (fill(mid) < ratio ? lo : hi) = mid;
  }
  fill(ratio == 0.0 ? 0.0 : hi);

  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double u = unit(rng);
    const double pick = unit(rng);
    if (u >= rate[i]) continue;
    const int clean = data.labels[i];
    RowVector scores = data.features.row(row) * projection;
    double best = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < classes; ++c)
      if (c != clean) best = std::max(best, scores(c));
    double total = 0.0;
    for (int c = 0; c < classes; ++c)
      if (c != clean) total += std::exp(scores(c) - best);
    double acc = 0.0;
    int target = -1;
    for (int c = 0; c < classes; ++c) {
      if (c == clean) continue;
      acc += std::exp(scores(c) - best) / total;
      target = c;
      if (pick < acc) break;
    }
    out.records[i].noisy = target;
  }
  return out;
}

FlagArray update_flag(const FlagArray& z, const Matrix& probs, double alpha) {
  if (z.scores.rows() != probs.rows() || z.scores.cols() != probs.cols())
    throw ShapeError("update_flag: flag array and probabilities differ in shape");
  Matrix next = z.scores + alpha * probs.unaryExpr([](double p) { return std::log(std::max(p, kProbFloor)); });
  if (!next.allFinite()) throw NumericError("update_flag: non-finite affinity scores");
  return {softmax(next), z.iteration + 1};
}

NoisyLabels flip_by_affinity(const Dataset& data, const FlagArray& flags, double ratio) {
  check_ratio(ratio);
  const std::size_t n = data.size();
  if (static_cast<std::size_t>(flags.scores.rows()) != n || flags.scores.cols() != data.classes)
    throw ShapeError("flip_by_affinity: flag array does not match dataset");
  NoisyLabels out = identity_labels(data, NoiseKind::BadLabel, ratio, 0);
  const std::size_t k = flip_count(ratio, n);
  if (k == 0) return out;
  if (data.classes < 2) throw ConfigError("badlabel needs at least two classes");

  std::vector<double> lowest(n);
  for (std::size_t i = 0; i < n; ++i) lowest[i] = flags.scores.row(static_cast<Eigen::Index>(i)).minCoeff();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lowest[a] < lowest[b]; });

  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t i = order[r];
    const auto row = flags.scores.row(static_cast<Eigen::Index>(i));
    const int clean = data.labels[i];
    int target = argmin_row(row);
    if (target == clean) {
      // lowest affinity among the other classes
      target = -1;
      for (int c = 0; c < data.classes; ++c) {
        if (c == clean) continue;
        if (target < 0 || row(c) < row(target)) target = c;
      }
    }
    out.records[i].noisy = target;
  }
  return out;
}

CraftResult craft_badlabel(const Dataset& data, double ratio, const BadLabelConfig& cfg) {
  cfg.validate();
  check_ratio(ratio);
  std::vector<int> dims{data.dim()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(data.classes);

  MlpModel model = init_mlp(dims, derive_seed(cfg.seed, 0));
  Sgd opt(model, cfg.sgd);
  Rng shuffle(derive_seed(cfg.seed, 1));
  const Matrix targets = one_hot(data.labels, data.classes);

  FlagArray flags{targets, 0};
  for (int t = 0; t < cfg.epochs; ++t) {
    opt.set_epoch(t);
    train_epoch(model, opt, data.features, targets, 0.0, shuffle);
    flags = update_flag(flags, softmax(forward(model, data.features)), cfg.alpha);
  }

  NoisyLabels labels = flip_by_affinity(data, flags, ratio);
  labels.seed = cfg.seed;
  return {std::move(labels), std::move(flags), std::move(model)};
}

TransitionMatrix transition_matrix(const NoisyLabels& labels, int classes) {
  TransitionMatrix tm{Matrix::Zero(classes, classes), std::vector<bool>(static_cast<std::size_t>(classes), false)};
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (const auto& r : labels.records) {
    if (r.clean >= classes || r.noisy >= classes) throw DataError("transition_matrix: label >= class count");
    tm.values(r.clean, r.noisy) += 1.0;
    counts[static_cast<std::size_t>(r.clean)] += 1.0;
  }
  for (int c = 0; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0.0) continue;
    tm.present[static_cast<std::size_t>(c)] = true;
    tm.values.row(c) /= counts[static_cast<std::size_t>(c)];
  }
  return tm;
}

void save_transition_csv(const std::filesystem::path& path, const TransitionMatrix& tm) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  const auto classes = tm.values.rows();
  os << "clean\\noisy";
  for (Eigen::Index c = 0; c < classes; ++c) os << ',' << c;
  os << '\n';
  char buf[32];
  for (Eigen::Index c = 0; c < classes; ++c) {
    os << c;
    for (Eigen::Index j = 0; j < classes; ++j) {
      if (!tm.present[static_cast<std::size_t>(c)]) {
        os << ",NA";
        continue;
      }
      std::snprintf(buf, sizeof(buf), "%.17g", tm.values(c, j));
      os << ',' << buf;
    }
    os << '\n';
  }
  if (!os) throw DataError(path.string() + ": write failed");
}

double noise_rate(const NoisyLabels& labels) {
  if (labels.records.empty()) throw DataError("noise_rate: empty label set");
  std::size_t flipped = 0;
  for (const auto& r : labels.records) flipped += r.noisy != r.clean;
  return static_cast<double>(flipped) / static_cast<double>(labels.records.size());
}

}  // namespace badlabel
