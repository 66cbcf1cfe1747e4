#include <doctest.h>

#include "datasets.hpp"

#include <filesystem>
#include <fstream>

using namespace badlabel;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bl_ds_" + name);
  std::filesystem::remove_all(p);
  return p;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

void put_be32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

// n images of rows x cols with pixel value (i + k) % 256, labels i % 10.
void write_idx(const std::filesystem::path& img, const std::filesystem::path& lab, std::uint32_t n,
               std::uint32_t label_count, std::uint32_t rows = 2, std::uint32_t cols = 3) {
  std::ofstream oi(img, std::ios::binary);
  put_be32(oi, 0x803);
  put_be32(oi, n);
  put_be32(oi, rows);
  put_be32(oi, cols);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t k = 0; k < rows * cols; ++k) oi.put(static_cast<char>((i + k) % 256));
  std::ofstream ol(lab, std::ios::binary);
  put_be32(ol, 0x801);
  put_be32(ol, label_count);
  for (std::uint32_t i = 0; i < label_count; ++i) ol.put(static_cast<char>(i % 10));
}

}  // namespace

TEST_CASE("gen_synthetic defaults") {
  const auto [train, test] = gen_synthetic(SyntheticSpec::defaults(3));
  CHECK(train.size() == 3000);
  CHECK(test.size() == 1500);
  CHECK(train.dim() == 2);
  std::array<int, 3> hist{};
  for (int y : train.labels) ++hist[static_cast<std::size_t>(y)];
  CHECK(hist == std::array<int, 3>{1000, 1000, 1000});
  CHECK(test.split == "test");

  // nearest-centroid oracle on the test split
  const auto spec = SyntheticSpec::defaults(3);
  int hit = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < 3; ++c) {
      const double dx = test.features(static_cast<Eigen::Index>(i), 0) - spec.centers[c][0];
      const double dy = test.features(static_cast<Eigen::Index>(i), 1) - spec.centers[c][1];
      if (dx * dx + dy * dy < best_d) {
        best_d = dx * dx + dy * dy;
        best = c;
      }
    }
    hit += best == test.labels[i];
  }
  CHECK(hit / 1500.0 > 0.97);
}

TEST_CASE("gen_synthetic determinism and degenerate spread") {
  const auto a = gen_synthetic(SyntheticSpec::defaults(1));
  const auto b = gen_synthetic(SyntheticSpec::defaults(1));
  const auto c = gen_synthetic(SyntheticSpec::defaults(2));
  CHECK(a.first.features == b.first.features);
  CHECK(a.second.features == b.second.features);
  CHECK(a.first.features != c.first.features);

  auto spec = SyntheticSpec::defaults(4);
  spec.stds.assign(3, 1e-9);
  const auto [train, test] = gen_synthetic(spec);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& ctr = spec.centers[static_cast<std::size_t>(train.labels[i])];
    CHECK(std::hypot(train.features(static_cast<Eigen::Index>(i), 0) - ctr[0],
                     train.features(static_cast<Eigen::Index>(i), 1) - ctr[1]) < 1e-6);
  }

  auto bad = SyntheticSpec::defaults(0);
  bad.centers[1] = bad.centers[0];
  CHECK_THROWS_AS(gen_synthetic(bad), ConfigError);
  bad = SyntheticSpec::defaults(0);
  bad.stds[0] = 0.0;
  CHECK_THROWS_AS(gen_synthetic(bad), ConfigError);
}

TEST_CASE("load_idx") {
  const auto dir = scratch("idx");
  std::filesystem::create_directories(dir);
  write_idx(dir / "img", dir / "lab", 12, 12);
  const Dataset all = load_idx(dir / "img", dir / "lab");
  CHECK(all.size() == 12);
  CHECK(all.dim() == 6);
  CHECK(all.classes == 10);
  CHECK(all.features(1, 2) == doctest::Approx(3.0 / 255.0));
  CHECK(all.labels[11] == 1);
  CHECK(all.features.maxCoeff() <= 1.0);

  CHECK(load_idx(dir / "img", dir / "lab", 5).size() == 5);
  CHECK(load_idx(dir / "img", dir / "lab", 0).size() == 0);

  write_idx(dir / "img2", dir / "lab2", 12, 11);
  CHECK_THROWS_AS(load_idx(dir / "img2", dir / "lab2"), DataError);
  CHECK_THROWS_AS(load_idx(dir / "lab", dir / "img"), DataError);  // swapped magic

  // truncated pixel block
  std::filesystem::resize_file(dir / "img", 16 + 20);
  CHECK_THROWS_AS(load_idx(dir / "img", dir / "lab"), DataError);
  try {
    load_idx(dir / "img", dir / "lab");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("img") != std::string::npos);
  }
  CHECK_THROWS_AS(load_idx(dir / "nope", dir / "lab"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset csv round trip") {
  const auto dir = scratch("dir");
  const auto [train, test] = gen_synthetic(SyntheticSpec::defaults(5));
  save_dataset_dir(dir, train, test, "synthetic3");
  const auto [tr2, te2] = load_dataset_dir(dir);
  CHECK(tr2.features == train.features);  // shortest round-trip formatting is exact
  CHECK(tr2.labels == train.labels);
  CHECK(te2.features == test.features);
  CHECK(tr2.classes == 3);

  std::ifstream is(dir / "train.csv");
  std::string header;
  std::getline(is, header);
  CHECK(header == "index,f0,f1,label");

  write_text(dir / "train.csv", "index,f0,label\n0,abc,1\n");
  CHECK_THROWS_AS(load_dataset_dir(dir), DataError);
  write_text(dir / "train.csv", "idx,f0,label\n");
  CHECK_THROWS_AS(load_dataset_dir(dir), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("label file round trip") {
  NoisyLabels labels;
  labels.classes = 3;
  labels.kind = NoiseKind::BadLabel;
  labels.ratio = 0.4;
  labels.seed = 17;
  labels.records = {{0, 0, 2}, {1, 1, 1}, {2, 2, 0}};
  const auto path = scratch("labels.csv");
  save_labels(path, labels);
  CHECK(load_labels(path) == labels);

  std::ifstream is(path, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(is)), {});
  CHECK(text.find("index,clean_label,noisy_label\n0,0,2\n") != std::string::npos);
  CHECK(text.find('\r') == std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("label file validation") {
  const auto path = scratch("bad.csv");
  auto expect_error_at = [&](const std::string& text, const std::string& where) {
    write_text(path, text);
    try {
      load_labels(path);
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(where) != std::string::npos);
    }
  };

  write_text(path, "index,clean_label,noisy_label\n");
  CHECK(load_labels(path).size() == 0);

  expect_error_at("index,clean_label,noisy_label\n3,1,1\n3,2,2\n", ":3: duplicate index");
  expect_error_at("index,clean_label,noisy_label\n0,1\n", ":2: malformed row");
  expect_error_at("index,clean_label,noisy_label\n0,x,1\n", ":2: malformed row");
  expect_error_at("# classes=3\nindex,clean_label,noisy_label\n0,1,3\n", ":3: label >= class count");
  expect_error_at("index,clean_label,noisy_label\n1,0,0\n0,0,0\n", ":3: rows not sorted");
  expect_error_at("index,clean,noisy\n", ":1: expected header");
  std::filesystem::remove(path);
}

TEST_CASE("labels must describe the dataset") {
  const auto [train, test] = gen_synthetic(SyntheticSpec::defaults(1));
  NoisyLabels ok = identity_labels(train, NoiseKind::None, 0.0, 1);
  CHECK_NOTHROW(check_labels_match(ok, train));
  NoisyLabels shorter = ok;
  shorter.records.pop_back();
  CHECK_THROWS_AS(check_labels_match(shorter, train), DataError);
  NoisyLabels wrong = ok;
  wrong.records[5].clean = (wrong.records[5].clean + 1) % 3;
  CHECK_THROWS_AS(check_labels_match(wrong, train), DataError);
}

TEST_CASE("noise kind names") {
  for (auto k : {NoiseKind::None, NoiseKind::Symmetric, NoiseKind::Asymmetric, NoiseKind::Idn, NoiseKind::BadLabel})
    CHECK(parse_noise_kind(noise_kind_name(k)) == k);
  CHECK_THROWS_AS(parse_noise_kind("pairflip"), ConfigError);
}
