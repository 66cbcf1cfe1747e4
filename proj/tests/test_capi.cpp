#include <doctest.h>

#include <badlabel/badlabel.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("bl_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST_CASE("config handle") {
  bl_config* cfg = nullptr;
  REQUIRE(bl_config_new(&cfg) == BL_OK);
  CHECK(bl_config_set(cfg, "rdm.lambda", "0.25") == BL_OK);

  char buf[64];
  size_t needed = 0;
  CHECK(bl_config_get(cfg, "rdm.lambda", buf, sizeof buf, &needed) == BL_OK);
  CHECK(std::string(buf) == "0.25");
  CHECK(needed == 5);
  CHECK(bl_config_get(cfg, "rdm.lambda", buf, 2, &needed) == BL_ERR_INVALID_ARG);
  CHECK(needed == 5);

  CHECK(bl_config_set(cfg, "rdm.lamda", "1") == BL_ERR_CONFIG);
  CHECK(std::string(bl_last_error()).find("rdm.lamda") != std::string::npos);
  CHECK(bl_config_set(cfg, nullptr, "1") == BL_ERR_INVALID_ARG);
  CHECK(bl_config_set(nullptr, "seed", "1") == BL_ERR_INVALID_ARG);

  REQUIRE(bl_config_key_count() > 10);
  for (size_t i = 0; i < bl_config_key_count(); ++i) CHECK(bl_config_key(i) != nullptr);
  CHECK(bl_config_key(bl_config_key_count()) == nullptr);

  const auto dir = scratch("cfg");
  CHECK(bl_config_save(cfg, (dir / "c.txt").c_str()) == BL_OK);
  bl_config* other = nullptr;
  REQUIRE(bl_config_new(&other) == BL_OK);
  CHECK(bl_config_load(other, (dir / "c.txt").c_str()) == BL_OK);
  CHECK(bl_config_get(other, "rdm.lambda", buf, sizeof buf, nullptr) == BL_OK);
  CHECK(std::string(buf) == "0.25");
  CHECK(bl_config_load(other, (dir / "missing.txt").c_str()) == BL_ERR_DATA);

  bl_config_free(other);
  bl_config_free(cfg);
  bl_config_free(nullptr);
  CHECK(std::strlen(bl_version()) > 0);
  fs::remove_all(dir);
}

TEST_CASE("dataset and label handles") {
  bl_dataset* data = nullptr;
  REQUIRE(bl_dataset_synthetic(40, 20, 0.0, 3, &data) == BL_OK);
  size_t n_train = 0, n_test = 0;
  int dim = 0, classes = 0;
  CHECK(bl_dataset_info(data, &n_train, &n_test, &dim, &classes) == BL_OK);
  CHECK(n_train == 120);
  CHECK(n_test == 60);
  CHECK(dim == 2);
  CHECK(classes == 3);

  const auto dir = scratch("data");
  CHECK(bl_dataset_save(data, (dir / "ds").c_str(), "synthetic3") == BL_OK);
  bl_dataset* again = nullptr;
  REQUIRE(bl_dataset_load((dir / "ds").c_str(), &again) == BL_OK);
  CHECK(bl_dataset_load((dir / "nothing").c_str(), &again) == BL_ERR_DATA);

  bl_labels* labels = nullptr;
  REQUIRE(bl_labels_generate(data, "asymmetric", 0.5, 1, nullptr, &labels) == BL_OK);
  double rate = 0.0;
  CHECK(bl_labels_noise_rate(labels, &rate) == BL_OK);
  CHECK(rate == doctest::Approx(0.5));
  size_t size = 0;
  CHECK(bl_labels_size(labels, &size) == BL_OK);
  CHECK(size == 120);
  CHECK(bl_labels_check(labels, again) == BL_OK);

  CHECK(bl_labels_save(labels, (dir / "l.csv").c_str()) == BL_OK);
  bl_labels* loaded = nullptr;
  REQUIRE(bl_labels_load((dir / "l.csv").c_str(), &loaded) == BL_OK);
  CHECK(bl_labels_save(loaded, (dir / "l2.csv").c_str()) == BL_OK);
  CHECK(slurp(dir / "l.csv") == slurp(dir / "l2.csv"));
  CHECK(bl_transition_save(labels, (dir / "t.csv").c_str()) == BL_OK);
  CHECK(slurp(dir / "t.csv").find("0,0.5,0.5,0\n") != std::string::npos);

  bl_labels* bad = nullptr;
  CHECK(bl_labels_generate(data, "pairflip", 0.5, 1, nullptr, &bad) == BL_ERR_CONFIG);
  CHECK(bl_labels_generate(data, "symmetric", 1.5, 1, nullptr, &bad) == BL_ERR_CONFIG);
  CHECK(bad == nullptr);

  bl_dataset* other = nullptr;
  REQUIRE(bl_dataset_synthetic(10, 5, 0.0, 3, &other) == BL_OK);
  CHECK(bl_labels_check(labels, other) == BL_ERR_DATA);

  bl_labels_free(loaded);
  bl_labels_free(labels);
  bl_dataset_free(other);
  bl_dataset_free(again);
  bl_dataset_free(data);
  fs::remove_all(dir);
}

TEST_CASE("training through the C interface") {
  bl_dataset* data = nullptr;
  REQUIRE(bl_dataset_synthetic(100, 50, 0.0, 5, &data) == BL_OK);
  bl_config* cfg = nullptr;
  REQUIRE(bl_config_new(&cfg) == BL_OK);
  bl_config_set(cfg, "seed", "5");
  bl_config_set(cfg, "train.epochs", "3");
  bl_config_set(cfg, "rdm.warmup_epochs", "2");
  bl_config_set(cfg, "rdm.epochs", "1");
  bl_labels* labels = nullptr;
  REQUIRE(bl_labels_generate(data, "symmetric", 0.2, 5, cfg, &labels) == BL_OK);

  const auto dir = scratch("train");
  bl_run* run = nullptr;
  REQUIRE(bl_train(data, labels, cfg, "standard", &run) == BL_OK);
  int count = 0;
  CHECK(bl_run_model_count(run, &count) == BL_OK);
  CHECK(count == 1);
  double best = 0.0, last = 0.0;
  CHECK(bl_run_summary(run, &best, &last) == BL_OK);
  CHECK(best >= last);
  CHECK(best > 0.5);
  CHECK(bl_run_save_metrics(run, (dir / "m.csv").c_str()) == BL_OK);

  bl_model* model = nullptr;
  REQUIRE(bl_run_model(run, 0, &model) == BL_OK);
  CHECK(bl_run_model(run, 1, &model) == BL_ERR_INVALID_ARG);
  CHECK(bl_model_save(model, (dir / "m.ckpt").c_str()) == BL_OK);
  bl_model* loaded = nullptr;
  REQUIRE(bl_model_load((dir / "m.ckpt").c_str(), &loaded) == BL_OK);
  double acc = 0.0;
  const bl_model* one[] = {loaded};
  CHECK(bl_evaluate(one, 1, data, &acc) == BL_OK);
  CHECK(acc <= best);  // the final epoch is one of the tracked ones
  CHECK(acc > 0.5);
  CHECK(bl_evaluate(one, 0, data, &acc) == BL_ERR_INVALID_ARG);

  double auc = 0.0;
  CHECK(bl_separability_auc(loaded, data, labels, &auc) == BL_OK);
  CHECK(auc > 0.5);
  CHECK(bl_loss_histogram_save(loaded, data, labels, 5, (dir / "h.csv").c_str()) == BL_OK);
  CHECK(bl_loss_histogram_save(loaded, data, labels, 0, (dir / "h.csv").c_str()) == BL_ERR_CONFIG);

  bl_run* pair = nullptr;
  REQUIRE(bl_train(data, labels, cfg, "robust-dividemix", &pair) == BL_OK);
  CHECK(bl_run_model_count(pair, &count) == BL_OK);
  CHECK(count == 2);
  bl_run* unknown = nullptr;
  CHECK(bl_train(data, labels, cfg, "coteaching", &unknown) == BL_ERR_CONFIG);

  bl_config_set(cfg, "rdm.tau_c", "2");
  bl_run* invalid = nullptr;
  CHECK(bl_train(data, labels, cfg, "robust-dividemix", &invalid) == BL_ERR_CONFIG);
  CHECK(invalid == nullptr);

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  bl_model* junk = nullptr;
  CHECK(bl_model_load((dir / "junk.ckpt").c_str(), &junk) == BL_ERR_DATA);

  bl_run_free(pair);
  bl_run_free(run);
  bl_model_free(model);
  bl_model_free(loaded);
  bl_labels_free(labels);
  bl_config_free(cfg);
  bl_dataset_free(data);
  fs::remove_all(dir);
}
