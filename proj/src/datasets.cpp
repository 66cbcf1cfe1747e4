#include "datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace badlabel {

void Dataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw DataError("dataset: feature rows and label count differ");
  for (int y : labels) {
    if (y < 0 || y >= classes) throw DataError("dataset: label outside [0, classes)");
  }
}

SyntheticSpec SyntheticSpec::defaults(std::uint64_t seed) {
  SyntheticSpec s;
  s.centers = {{0.0, 0.0}, {4.0, 0.0}, {2.0, 3.5}};
  s.stds = {0.7, 0.7, 0.7};
  s.seed = seed;
  return s;
}

void SyntheticSpec::validate() const {
  if (centers.empty()) throw ConfigError("synthetic: no class centers");
  if (stds.size() != centers.size()) throw ConfigError("synthetic: need one std per class");
  const std::size_t d = centers.front().size();
  if (d == 0) throw ConfigError("synthetic: centers must have at least one coordinate");
  for (const auto& c : centers) {
    if (c.size() != d) throw ConfigError("synthetic: centers differ in dimension");
  }
  for (std::size_t a = 0; a < centers.size(); ++a)
    for (std::size_t b = a + 1; b < centers.size(); ++b)
      if (centers[a] == centers[b]) throw ConfigError("synthetic: class centers must be distinct");
  for (double s : stds) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("synthetic: std must be positive");
  }
  if (train_per_class < 1 || test_per_class < 0)
    throw ConfigError("synthetic: samples per class must be >= 1");
}

std::pair<Dataset, Dataset> gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int classes = static_cast<int>(spec.centers.size());
  const int d = static_cast<int>(spec.centers.front().size());
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto draw = [&](int per_class, const char* split) {
    Dataset out;
    out.classes = classes;
    out.split = split;
    out.features.resize(static_cast<Eigen::Index>(per_class) * classes, d);
    Eigen::Index row = 0;
    for (int c = 0; c < classes; ++c) {
      for (int k = 0; k < per_class; ++k, ++row) {
        for (int j = 0; j < d; ++j) out.features(row, j) = spec.centers[c][j] + spec.stds[c] * normal(rng);
        out.labels.push_back(c);
      }
    }
    return out;
  };
  Dataset train = draw(spec.train_per_class, "train");
  Dataset test = draw(spec.test_per_class, "test");
  return {std::move(train), std::move(test)};
}

namespace {

std::uint32_t read_be32(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError(path.string() + ": truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

std::vector<unsigned char> read_bytes(std::istream& is, std::size_t n, const std::filesystem::path& path) {
  std::vector<unsigned char> buf(n);
  if (n && !is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
    throw DataError(path.string() + ": truncated IDX payload");
  return buf;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<std::size_t> limit) {
  std::ifstream img(images, std::ios::binary);
  if (!img) throw DataError(images.string() + ": cannot open");
  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw DataError(labels.string() + ": cannot open");

  if (read_be32(img, images) != 0x00000803) throw DataError(images.string() + ": bad IDX image magic");
  const std::uint32_t n_img = read_be32(img, images);
  const std::uint32_t rows = read_be32(img, images);
  const std::uint32_t cols = read_be32(img, images);
  if (read_be32(lab, labels) != 0x00000801) throw DataError(labels.string() + ": bad IDX label magic");
  const std::uint32_t n_lab = read_be32(lab, labels);
  if (n_img != n_lab) {
    std::ostringstream os;
    os << images.string() << ": " << n_img << " images but " << labels.string() << " has " << n_lab
       << " labels";
    throw DataError(os.str());
  }

  const std::vector<unsigned char> all_labels = read_bytes(lab, n_lab, labels);
  int max_label = -1;
  for (unsigned char y : all_labels) max_label = std::max(max_label, int{y});

  const std::size_t n = std::min<std::size_t>(n_img, limit.value_or(n_img));
  const std::size_t d = std::size_t{rows} * cols;
  const std::vector<unsigned char> pixels = read_bytes(img, n * d, images);

  Dataset out;
  out.classes = std::max(max_label + 1, 1);
  out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n * d; ++i) out.features.data()[i] = pixels[i] / 255.0;
  out.labels.assign(all_labels.begin(), all_labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

namespace {

void append_double(std::string& line, double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  line.append(buf, end);
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && end == s.data() + s.size();
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

void save_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  std::string line = "index";
  for (int j = 0; j < data.dim(); ++j) line += ",f" + std::to_string(j);
  line += ",label\n";
  os << line;
  for (std::size_t i = 0; i < data.size(); ++i) {
    line = std::to_string(i);
    for (int j = 0; j < data.dim(); ++j) {
      line += ',';
      append_double(line, data.features(static_cast<Eigen::Index>(i), j));
    }
    line += ',' + std::to_string(data.labels[i]) + '\n';
    os << line;
  }
  if (!os) throw DataError(path.string() + ": write failed");
}

Dataset load_dataset_csv(const std::filesystem::path& path, int classes, const std::string& split) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path.string() + ": cannot open");
  std::string header;
  if (!std::getline(is, header)) throw DataError(path.string() + ": missing header");
  header = strip_cr(header);
  const auto cols = split_commas(header);
  if (cols.size() < 2 || cols.front() != "index" || cols.back() != "label")
    throw DataError(path.string() + ": header must be index,f0,...,label");
  const int d = static_cast<int>(cols.size()) - 2;

  std::vector<double> values;
  Dataset out;
  out.classes = classes;
  out.split = split;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    auto fail = [&](const std::string& why) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    if (static_cast<int>(fields.size()) != d + 2) fail("wrong field count");
    std::size_t index = 0;
    if (!parse_number(fields[0], index) || index != out.labels.size()) fail("bad or out-of-order index");
    for (int j = 0; j < d; ++j) {
      double v = 0.0;
      if (!parse_number(fields[1 + j], v) || !std::isfinite(v)) fail("bad feature value");
      values.push_back(v);
    }
    int y = 0;
    if (!parse_number(fields.back(), y) || y < 0) fail("bad label");
    if (classes > 0 && y >= classes) fail("label >= class count");
    out.labels.push_back(y);
  }
  if (out.classes <= 0) {
    int m = -1;
    for (int y : out.labels) m = std::max(m, y);
    out.classes = m + 1;
  }
  out.features = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(out.labels.size()), d);
  return out;
}

void save_dataset_dir(const std::filesystem::path& dir, const Dataset& train, const Dataset& test,
                      const std::string& kind) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(dir.string() + ": cannot create directory");
  save_dataset_csv(dir / "train.csv", train);
  save_dataset_csv(dir / "test.csv", test);
  std::ofstream meta(dir / "meta.txt", std::ios::binary);
  meta << "kind = " << kind << "\nclasses = " << train.classes << "\ndim = " << train.dim()
       << "\nn_train = " << train.size() << "\nn_test = " << test.size() << "\n";
  if (!meta) throw DataError(dir.string() + ": cannot write meta.txt");
}

std::pair<Dataset, Dataset> load_dataset_dir(const std::filesystem::path& dir) {
  int classes = 0;
  std::ifstream meta(dir / "meta.txt");
  if (meta) {
    std::string line;
    while (std::getline(meta, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq);
      key.erase(key.find_last_not_of(" \t") + 1);
      if (key == "classes") classes = std::stoi(line.substr(eq + 1));
    }
  }
  Dataset train = load_dataset_csv(dir / "train.csv", classes, "train");
  Dataset test = std::filesystem::exists(dir / "test.csv")
                     ? load_dataset_csv(dir / "test.csv", train.classes, "test")
                     : Dataset{Matrix(0, train.dim()), {}, train.classes, "test"};
  return {std::move(train), std::move(test)};
}

Vector centroid_distances(const Dataset& data) {
  Matrix centroids = Matrix::Zero(data.classes, data.dim());
  std::vector<int> counts(static_cast<std::size_t>(data.classes), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    centroids.row(data.labels[i]) += data.features.row(static_cast<Eigen::Index>(i));
    ++counts[static_cast<std::size_t>(data.labels[i])];
  }
  for (int c = 0; c < data.classes; ++c)
    if (counts[static_cast<std::size_t>(c)] > 0) centroids.row(c) /= counts[static_cast<std::size_t>(c)];
  Vector dist(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    dist(r) = (data.features.row(r) - centroids.row(data.labels[i])).norm();
  }
  return dist;
}

const char* noise_kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::None: return "none";
    case NoiseKind::Symmetric: return "symmetric";
    case NoiseKind::Asymmetric: return "asymmetric";
    case NoiseKind::Idn: return "idn";
    case NoiseKind::BadLabel: return "badlabel";
  }
  return "none";
}

NoiseKind parse_noise_kind(const std::string& name) {
  for (NoiseKind k : {NoiseKind::None, NoiseKind::Symmetric, NoiseKind::Asymmetric, NoiseKind::Idn,
                      NoiseKind::BadLabel}) {
    if (name == noise_kind_name(k)) return k;
  }
  throw ConfigError("unknown noise kind '" + name + "'");
}

std::vector<int> NoisyLabels::noisy() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.noisy);
  return out;
}

std::vector<int> NoisyLabels::clean() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.clean);
  return out;
}

std::vector<bool> NoisyLabels::clean_mask() const {
  std::vector<bool> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.noisy == r.clean);
  return out;
}

void NoisyLabels::validate() const {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (i > 0 && r.index <= records[i - 1].index) throw DataError("labels: indices not strictly increasing");
    if (r.index < 0) throw DataError("labels: negative index");
    if (r.clean < 0 || r.noisy < 0 || r.clean >= classes || r.noisy >= classes)
      throw DataError("labels: label outside [0, classes)");
  }
}

NoisyLabels identity_labels(const Dataset& data, NoiseKind kind, double ratio, std::uint64_t seed) {
  NoisyLabels out;
  out.classes = data.classes;
  out.kind = kind;
  out.ratio = ratio;
  out.seed = seed;
  out.records.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out.records.push_back({static_cast<int>(i), data.labels[i], data.labels[i]});
  return out;
}

void save_labels(const std::filesystem::path& path, const NoisyLabels& labels) {
  labels.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  std::string ratio;
  append_double(ratio, labels.ratio);
  os << "# kind=" << noise_kind_name(labels.kind) << "\n# ratio=" << ratio << "\n# seed=" << labels.seed
     << "\n# classes=" << labels.classes << "\n";
  os << "index,clean_label,noisy_label\n";
  for (const auto& r : labels.records) os << r.index << ',' << r.clean << ',' << r.noisy << '\n';
  if (!os) throw DataError(path.string() + ": write failed");
}

NoisyLabels load_labels(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path.string() + ": cannot open");
  NoisyLabels out;
  out.classes = -1;
  bool seen_header = false;
  std::set<int> seen;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    line = strip_cr(line);
    if (!seen_header && !line.empty() && line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      const std::string_view value = std::string_view(line).substr(eq + 1);
      bool ok = true;
      if (key == "kind") {
        try {
          out.kind = parse_noise_kind(std::string(value));
        } catch (const ConfigError&) {
          ok = false;
        }
      } else if (key == "ratio") {
        ok = parse_number(value, out.ratio);
      } else if (key == "seed") {
        ok = parse_number(value, out.seed);
      } else if (key == "classes") {
        ok = parse_number(value, out.classes) && out.classes > 0;
      }
      if (!ok) fail("malformed provenance line");
      continue;
    }
    if (!seen_header) {
      if (line != "index,clean_label,noisy_label") fail("expected header index,clean_label,noisy_label");
      seen_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    LabelRecord r;
    if (fields.size() != 3 || !parse_number(fields[0], r.index) || !parse_number(fields[1], r.clean) ||
        !parse_number(fields[2], r.noisy) || r.index < 0 || r.clean < 0 || r.noisy < 0)
      fail("malformed row");
    if (!seen.insert(r.index).second) fail("duplicate index " + std::to_string(r.index));
    if (!out.records.empty() && r.index < out.records.back().index) fail("rows not sorted by index");
    if (out.classes > 0 && (r.clean >= out.classes || r.noisy >= out.classes))
      fail("label >= class count " + std::to_string(out.classes));
    out.records.push_back(r);
  }
  if (!seen_header) throw DataError(path.string() + ": missing header");
  if (out.classes <= 0) {
    int m = -1;
    for (const auto& r : out.records) m = std::max({m, r.clean, r.noisy});
    out.classes = m + 1;
  }
  return out;
}

void check_labels_match(const NoisyLabels& labels, const Dataset& data) {
  if (labels.size() != data.size())
    throw DataError("label file has " + std::to_string(labels.size()) + " rows, dataset has " +
                    std::to_string(data.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& r = labels.records[i];
    if (r.index != static_cast<int>(i)) throw DataError("label file does not cover every dataset index");
    if (r.clean != data.labels[i])
      throw DataError("label file clean label disagrees with dataset at index " + std::to_string(i));
  }
  if (labels.classes > data.classes) throw DataError("label file class count exceeds dataset's");
}

}  // namespace badlabel
