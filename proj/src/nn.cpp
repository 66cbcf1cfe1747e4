#include "nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace badlabel {

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (int l = 0; l < layer_count(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

bool MlpModel::operator==(const MlpModel& other) const {
  if (dims != other.dims) return false;
  for (int l = 0; l < layer_count(); ++l) {
    if (weights[l] != other.weights[l] || biases[l] != other.biases[l]) return false;
  }
  return true;
}

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("sgd: learning rate must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd: momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("sgd: weight decay must be >= 0");
  if (batch_size < 1) throw ConfigError("sgd: batch size must be >= 1");
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    if (schedule[i].first <= schedule[i - 1].first)
      throw ConfigError("sgd: schedule epochs must be strictly increasing");
  }
}

double SgdConfig::rate_at(int epoch) const {
  double mult = 1.0;
  for (const auto& [e, m] : schedule) {
    if (e <= epoch) mult = m;
  }
  return learning_rate * mult;
}

Sgd::Sgd(const MlpModel& model, SgdConfig config) : config_(std::move(config)) {
  config_.validate();
  for (int l = 0; l < model.layer_count(); ++l) {
    weight_velocity_.push_back(Matrix::Zero(model.weights[l].rows(), model.weights[l].cols()));
    bias_velocity_.push_back(Vector::Zero(model.biases[l].size()));
  }
}

void Sgd::step(MlpModel& model, const Gradients& grads) {
  const double lr = config_.rate_at(epoch_);
  const double mu = config_.momentum;
  const double wd = config_.weight_decay;
  for (int l = 0; l < model.layer_count(); ++l) {
    weight_velocity_[l] = mu * weight_velocity_[l] - lr * (grads.weights[l] + wd * model.weights[l]);
    bias_velocity_[l] = mu * bias_velocity_[l] - lr * grads.biases[l];
    model.weights[l] += weight_velocity_[l];
    model.biases[l] += bias_velocity_[l];
  }
}

MlpModel init_mlp(std::span<const int> dims, std::uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("init_mlp: need at least input and output dims");
  for (int d : dims) {
    if (d <= 0) throw ConfigError("init_mlp: dims must be positive");
  }
  MlpModel model;
  model.dims.assign(dims.begin(), dims.end());
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l];
    const double scale = std::sqrt(2.0 / fan_in);
    Matrix w(dims[l + 1], fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * normal(rng);
    model.weights.push_back(std::move(w));
    model.biases.push_back(Vector::Zero(dims[l + 1]));
  }
  return model;
}

Matrix forward(const MlpModel& model, const Matrix& x, ForwardCache& cache) {
  if (x.cols() != model.input_dim()) {
    std::ostringstream os;
    os << "forward: input has " << x.cols() << " columns, model expects " << model.input_dim();
    throw ShapeError(os.str());
  }
  cache.activations.clear();
  cache.activations.push_back(x);
  Matrix h = x;
  for (int l = 0; l < model.layer_count(); ++l) {
    Matrix z = h * model.weights[l].transpose();
    z.rowwise() += model.biases[l].transpose();
    if (l + 1 < model.layer_count()) {
      h = z.cwiseMax(0.0);
      cache.activations.push_back(h);
    } else {
      cache.logits = std::move(z);
    }
  }
  return cache.logits;
}

Matrix forward(const MlpModel& model, const Matrix& x) {
  ForwardCache cache;
  return forward(model, x, cache);
}

Gradients backward(const MlpModel& model, const ForwardCache& cache, const Matrix& dlogits) {
  const int layers = model.layer_count();
  Gradients g;
  g.weights.resize(layers);
  g.biases.resize(layers);
  Matrix delta = dlogits;
  for (int l = layers - 1; l >= 0; --l) {
    const Matrix& input = cache.activations[l];
    g.weights[l] = delta.transpose() * input;
    g.biases[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix upstream = delta * model.weights[l];
      // rectifier: pass gradient only where the unit was active
      delta = upstream.cwiseProduct((input.array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

Matrix softmax(const Matrix& logits) {
  if (!logits.allFinite()) throw NumericError("softmax: non-finite logits");
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      p(i, j) = std::exp(logits(i, j) - m);
      sum += p(i, j);
    }
    p.row(i) /= sum;
  }
  return p;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << op << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
       << b.cols();
    throw ShapeError(os.str());
  }
}

inline double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

}  // namespace

Vector cross_entropy_soft(const Matrix& targets, const Matrix& probs) {
  require_same_shape(targets, probs, "cross_entropy_soft");
  Vector loss(targets.rows());
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < targets.cols(); ++j) s -= targets(i, j) * safe_log(probs(i, j));
    loss(i) = s;
  }
  return loss;
}

Vector entropy(const Matrix& probs) {
  Vector h(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < probs.cols(); ++j) s -= probs(i, j) * safe_log(probs(i, j));
    h(i) = s;
  }
  return h;
}

Matrix label_gradient(const Matrix& targets, const Matrix& probs) {
  require_same_shape(targets, probs, "label_gradient");
  return probs.unaryExpr([](double p) { return -safe_log(p); });
}

Matrix one_hot(std::span<const int> labels, int classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      std::ostringstream os;
      os << "one_hot: label " << labels[i] << " at row " << i << " outside [0," << classes << ")";
      throw DataError(os.str());
    }
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

double batch_objective(const MlpModel& model, const Matrix& x, const Matrix& targets,
                       double cp_weight) {
  const Matrix p = softmax(forward(model, x));
  const Vector ce = cross_entropy_soft(targets, p);
  if (cp_weight == 0.0) return ce.mean();
  return (ce - cp_weight * entropy(p)).mean();
}

Gradients objective_gradient(const MlpModel& model, const Matrix& x, const Matrix& targets,
                             double cp_weight, double* loss) {
  ForwardCache cache;
  const Matrix p = softmax(forward(model, x, cache));
  require_same_shape(targets, p, "objective_gradient");
  const Eigen::Index n = x.rows();
  const Eigen::Index c = p.cols();

  // dCE/dz = p * sum(Y) - Y ; dH/dz_k = -p_k (log p_k + H)
  Matrix dlogits(n, c);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ysum = targets.row(i).sum();
    double ce = 0.0;
    double h = 0.0;
    for (Eigen::Index j = 0; j < c; ++j) {
      const double lp = safe_log(p(i, j));
      ce -= targets(i, j) * lp;
      h -= p(i, j) * lp;
    }
    for (Eigen::Index j = 0; j < c; ++j) {
      double d = p(i, j) * ysum - targets(i, j);
      if (cp_weight != 0.0) d += cp_weight * p(i, j) * (safe_log(p(i, j)) + h);
      dlogits(i, j) = d / static_cast<double>(n);
    }
    total += ce - cp_weight * h;
  }
  if (loss) *loss = total / static_cast<double>(n);
  return backward(model, cache, dlogits);
}

double train_step(MlpModel& model, Sgd& opt, const Matrix& x, const Matrix& targets,
                  double cp_weight) {
  if (x.rows() == 0) throw DataError("train_step: empty batch");
  double loss = 0.0;
  Gradients g = objective_gradient(model, x, targets, cp_weight, &loss);
  if (!std::isfinite(loss)) throw NumericError("train_step: non-finite loss");
  opt.step(model, g);
  return loss;
}

double train_epoch(MlpModel& model, Sgd& opt, const Matrix& x, const Matrix& targets,
                   double cp_weight, Rng& rng) {
  const Eigen::Index n = x.rows();
  if (n == 0) throw DataError("train_epoch: empty training set");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);

  const Eigen::Index bs = opt.config().batch_size;
  double weighted = 0.0;
  int batch = 0;
  for (Eigen::Index start = 0; start < n; start += bs, ++batch) {
    const Eigen::Index m = std::min(bs, n - start);
    Matrix xb(m, x.cols());
    Matrix yb(m, targets.cols());
    for (Eigen::Index r = 0; r < m; ++r) {
      xb.row(r) = x.row(order[start + r]);
      yb.row(r) = targets.row(order[start + r]);
    }
    try {
      weighted += train_step(model, opt, xb, yb, cp_weight) * static_cast<double>(m);
    } catch (const NumericError& e) {
      std::ostringstream os;
      os << e.what() << " (epoch " << opt.epoch() << ", batch " << batch << ")";
      throw NumericError(os.str());
    }
  }
  return weighted / static_cast<double>(n);
}

Vector per_sample_loss(const MlpModel& model, const Matrix& x, std::span<const int> labels) {
  const Matrix y = one_hot(labels, model.class_count());
  return cross_entropy_soft(y, softmax(forward(model, x)));
}

std::vector<int> predict(const MlpModel& model, const Matrix& x) {
  const Matrix logits = forward(model, x);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out[i] = argmax_row(logits.row(i));
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw ShapeError("accuracy: length mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

// Checkpoint layout: "BLAB", u16 version, u16 dim count, u32 dims, then per
// layer the row-major weight matrix followed by the bias vector, all
// little-endian f64.
namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const std::filesystem::path& path) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
    throw DataError("checkpoint " + path.string() + ": truncated file");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
  return value;
}

void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& is, const std::filesystem::path& path) {
  return std::bit_cast<double>(get_le<std::uint64_t>(is, path));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MlpModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint " + path.string() + ": cannot open for writing");
  os.write("BLAB", 4);
  put_le<std::uint16_t>(os, kCheckpointVersion);
  put_le<std::uint16_t>(os, static_cast<std::uint16_t>(model.dims.size()));
  for (int d : model.dims) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (int l = 0; l < model.layer_count(); ++l) {
    for (Eigen::Index i = 0; i < model.weights[l].size(); ++i) put_f64(os, model.weights[l].data()[i]);
    for (Eigen::Index i = 0; i < model.biases[l].size(); ++i) put_f64(os, model.biases[l](i));
  }
  if (!os) throw DataError("checkpoint " + path.string() + ": write failed");
}

MlpModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint " + path.string() + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "BLAB")
    throw DataError("checkpoint " + path.string() + ": bad magic");
  const auto version = get_le<std::uint16_t>(is, path);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint16_t>(is, path);
  if (count < 2) throw DataError("checkpoint " + path.string() + ": fewer than two dims");
  MlpModel model;
  for (std::uint16_t i = 0; i < count; ++i) {
    const auto d = get_le<std::uint32_t>(is, path);
    if (d == 0 || d > (1u << 24)) throw DataError("checkpoint " + path.string() + ": bad dim");
    model.dims.push_back(static_cast<int>(d));
  }
  for (std::size_t l = 0; l + 1 < model.dims.size(); ++l) {
    Matrix w(model.dims[l + 1], model.dims[l]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = get_f64(is, path);
    Vector b(model.dims[l + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = get_f64(is, path);
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw DataError("checkpoint " + path.string() + ": trailing bytes");
  return model;
}

}  // namespace badlabel
