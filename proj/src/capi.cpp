#include "badlabel/badlabel.h"

#include "config.hpp"
#include "dividemix.hpp"
#include "metrics.hpp"
#include "noise.hpp"

#include <cstring>
#include <new>
#include <string>

using namespace badlabel;

struct bl_config {
  RunConfig cfg;
};
struct bl_dataset {
  Dataset train;
  Dataset test;
};
struct bl_labels {
  NoisyLabels labels;
};
struct bl_model {
  MlpModel model;
};
struct bl_run {
  std::vector<MlpModel> models;
  RunMetrics metrics;
};

namespace {

thread_local std::string last_error;

bl_status fail(bl_status code, std::string msg) {
  last_error = std::move(msg);
  return code;
}

// Every entry point funnels through here so no exception crosses the C
// boundary.
template <typename Fn>
bl_status guard(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return BL_OK;
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::Config: return fail(BL_ERR_CONFIG, e.what());
      case ErrorKind::Data: return fail(BL_ERR_DATA, e.what());
      case ErrorKind::Numeric: return fail(BL_ERR_NUMERIC, e.what());
      case ErrorKind::Shape: return fail(BL_ERR_SHAPE, e.what());
    }
    return fail(BL_ERR_INTERNAL, e.what());
  } catch (const std::bad_alloc&) {
    return fail(BL_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(BL_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(BL_ERR_INTERNAL, "unknown failure");
  }
}

#define BL_REQUIRE(cond) \
  if (!(cond)) return fail(BL_ERR_INVALID_ARG, std::string(__func__) + ": invalid argument (" #cond ")")

Vector noisy_loss(const MlpModel& model, const Dataset& train, const NoisyLabels& labels) {
  check_labels_match(labels, train);
  if (model.input_dim() != train.dim() || model.class_count() < train.classes)
    throw ShapeError("model does not match the dataset");
  return per_sample_loss(model, train.features, labels.noisy());
}

}  // namespace

extern "C" {

const char* bl_last_error(void) { return last_error.c_str(); }

const char* bl_version(void) { return "1.0.0"; }

bl_status bl_config_new(bl_config** out) {
  BL_REQUIRE(out);
  return guard([&] { *out = new bl_config{}; });
}

void bl_config_free(bl_config* cfg) { delete cfg; }

bl_status bl_config_set(bl_config* cfg, const char* key, const char* value) {
  BL_REQUIRE(cfg && key && value);
  return guard([&] { cfg->cfg.set(key, value); });
}

bl_status bl_config_get(const bl_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  BL_REQUIRE(cfg && key);
  std::string value;
  const bl_status st = guard([&] { value = cfg->cfg.get(key); });
  if (st != BL_OK) return st;
  if (needed) *needed = value.size() + 1;
  if (!buf || cap < value.size() + 1) return fail(BL_ERR_INVALID_ARG, "bl_config_get: buffer too small");
  std::memcpy(buf, value.c_str(), value.size() + 1);
  return BL_OK;
}

bl_status bl_config_load(bl_config* cfg, const char* path) {
  BL_REQUIRE(cfg && path);
  return guard([&] { cfg->cfg.load(path); });
}

bl_status bl_config_save(const bl_config* cfg, const char* path) {
  BL_REQUIRE(cfg && path);
  return guard([&] { cfg->cfg.save(path); });
}

size_t bl_config_key_count(void) { return RunConfig::keys().size(); }

const char* bl_config_key(size_t index) {
  static const std::vector<std::string> keys = RunConfig::keys();
  return index < keys.size() ? keys[index].c_str() : nullptr;
}

bl_status bl_dataset_synthetic(int train_per_class, int test_per_class, double std, uint64_t seed,
                               bl_dataset** out) {
  BL_REQUIRE(out);
  return guard([&] {
    SyntheticSpec spec = SyntheticSpec::defaults(seed);
    spec.train_per_class = train_per_class;
    spec.test_per_class = test_per_class;
    if (std > 0.0) spec.stds.assign(spec.stds.size(), std);
    auto [train, test] = gen_synthetic(spec);
    *out = new bl_dataset{std::move(train), std::move(test)};
  });
}

bl_status bl_dataset_idx(const char* images, const char* labels, const char* test_images, const char* test_labels,
                         size_t limit, bl_dataset** out) {
  BL_REQUIRE(images && labels && out);
  BL_REQUIRE((test_images == nullptr) == (test_labels == nullptr));
  return guard([&] {
    const auto cap = limit ? std::optional<std::size_t>(limit) : std::nullopt;
    Dataset all = load_idx(images, labels, cap);
    auto ds = std::make_unique<bl_dataset>();
    if (test_images) {
      ds->train = std::move(all);
      ds->test = load_idx(test_images, test_labels, cap);
      const int classes = std::max(ds->train.classes, ds->test.classes);
      ds->train.classes = ds->test.classes = classes;
    } else {
      const auto n = static_cast<Eigen::Index>(all.size());
      const Eigen::Index n_test = n / 6;
      if (n_test == 0) throw DataError("bl_dataset_idx: too few samples to hold out a test split");
      ds->train.features = all.features.topRows(n - n_test);
      ds->train.labels.assign(all.labels.begin(), all.labels.end() - n_test);
      ds->test.features = all.features.bottomRows(n_test);
      ds->test.labels.assign(all.labels.end() - n_test, all.labels.end());
      ds->train.classes = ds->test.classes = all.classes;
    }
    ds->test.split = "test";
    ds->train.validate();
    ds->test.validate();
    *out = ds.release();
  });
}

bl_status bl_dataset_load(const char* dir, bl_dataset** out) {
  BL_REQUIRE(dir && out);
  return guard([&] {
    auto [train, test] = load_dataset_dir(dir);
    *out = new bl_dataset{std::move(train), std::move(test)};
  });
}

bl_status bl_dataset_save(const bl_dataset* data, const char* dir, const char* kind) {
  BL_REQUIRE(data && dir && kind);
  return guard([&] { save_dataset_dir(dir, data->train, data->test, kind); });
}

void bl_dataset_free(bl_dataset* data) { delete data; }

bl_status bl_dataset_info(const bl_dataset* data, size_t* n_train, size_t* n_test, int* dim, int* classes) {
  BL_REQUIRE(data);
  if (n_train) *n_train = data->train.size();
  if (n_test) *n_test = data->test.size();
  if (dim) *dim = data->train.dim();
  if (classes) *classes = data->train.classes;
  return BL_OK;
}

bl_status bl_labels_generate(const bl_dataset* data, const char* kind, double ratio, uint64_t seed,
                             const bl_config* cfg, bl_labels** out) {
  BL_REQUIRE(data && kind && out);
  return guard([&] {
    RunConfig rc = cfg ? cfg->cfg : RunConfig{};
    rc.seed = seed;
    rc.finalize();
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("noise ratio must lie in [0,1]");
    NoisyLabels labels;
    switch (parse_noise_kind(kind)) {
      case NoiseKind::Symmetric: labels = apply_symmetric(data->train, ratio, seed); break;
      case NoiseKind::Asymmetric: labels = apply_asymmetric(data->train, ratio, seed); break;
      case NoiseKind::Idn: labels = apply_idn(data->train, ratio, seed, rc.idn); break;
      case NoiseKind::BadLabel: labels = craft_badlabel(data->train, ratio, rc.badlabel).labels; break;
      case NoiseKind::None: labels = identity_labels(data->train, NoiseKind::None, 0.0, seed); break;
    }
    *out = new bl_labels{std::move(labels)};
  });
}

bl_status bl_labels_load(const char* path, bl_labels** out) {
  BL_REQUIRE(path && out);
  return guard([&] { *out = new bl_labels{load_labels(path)}; });
}

bl_status bl_labels_save(const bl_labels* labels, const char* path) {
  BL_REQUIRE(labels && path);
  return guard([&] { save_labels(path, labels->labels); });
}

void bl_labels_free(bl_labels* labels) { delete labels; }

bl_status bl_labels_check(const bl_labels* labels, const bl_dataset* data) {
  BL_REQUIRE(labels && data);
  return guard([&] { check_labels_match(labels->labels, data->train); });
}

bl_status bl_labels_noise_rate(const bl_labels* labels, double* out) {
  BL_REQUIRE(labels && out);
  return guard([&] { *out = noise_rate(labels->labels); });
}

bl_status bl_labels_size(const bl_labels* labels, size_t* out) {
  BL_REQUIRE(labels && out);
  *out = labels->labels.size();
  return BL_OK;
}

bl_status bl_transition_save(const bl_labels* labels, const char* path) {
  BL_REQUIRE(labels && path);
  return guard([&] { save_transition_csv(path, transition_matrix(labels->labels, labels->labels.classes)); });
}

bl_status bl_model_load(const char* path, bl_model** out) {
  BL_REQUIRE(path && out);
  return guard([&] { *out = new bl_model{load_checkpoint(path)}; });
}

bl_status bl_model_save(const bl_model* model, const char* path) {
  BL_REQUIRE(model && path);
  return guard([&] { save_checkpoint(path, model->model); });
}

void bl_model_free(bl_model* model) { delete model; }

bl_status bl_evaluate(const bl_model* const* models, size_t count, const bl_dataset* data, double* accuracy_out) {
  BL_REQUIRE(models && count > 0 && data && accuracy_out);
  for (size_t k = 0; k < count; ++k) BL_REQUIRE(models[k]);
  return guard([&] {
    const Matrix& x = data->test.features;
    if (data->test.size() == 0) throw DataError("evaluate: the dataset has no test split");
    Matrix sum = Matrix::Zero(x.rows(), models[0]->model.class_count());
    for (size_t k = 0; k < count; ++k) {
      const Matrix p = softmax(forward(models[k]->model, x));
      if (p.cols() != sum.cols()) throw ShapeError("evaluate: models disagree on the class count");
      sum += p;
    }
    std::vector<int> pred(static_cast<std::size_t>(sum.rows()));
    for (Eigen::Index i = 0; i < sum.rows(); ++i) pred[static_cast<std::size_t>(i)] = argmax_row(sum.row(i));
    *accuracy_out = accuracy(pred, data->test.labels);
  });
}

bl_status bl_loss_histogram_save(const bl_model* model, const bl_dataset* data, const bl_labels* labels, int bins,
                                 const char* path) {
  BL_REQUIRE(model && data && labels && path);
  return guard([&] {
    const Vector loss = noisy_loss(model->model, data->train, labels->labels);
    const auto hist = loss_histogram({loss.data(), static_cast<std::size_t>(loss.size())},
                                     labels->labels.clean_mask(), bins);
    save_histogram_csv(path, hist);
  });
}

bl_status bl_separability_auc(const bl_model* model, const bl_dataset* data, const bl_labels* labels, double* out) {
  BL_REQUIRE(model && data && labels && out);
  return guard([&] {
    const Vector loss = noisy_loss(model->model, data->train, labels->labels);
    *out = separability_auc({loss.data(), static_cast<std::size_t>(loss.size())}, labels->labels.clean_mask());
  });
}

bl_status bl_train(const bl_dataset* data, const bl_labels* labels, const bl_config* cfg, const char* method,
                   bl_run** out) {
  BL_REQUIRE(data && labels && method && out);
  return guard([&] {
    RunConfig rc = cfg ? cfg->cfg : RunConfig{};
    rc.finalize();
    const Dataset* test = data->test.size() ? &data->test : nullptr;
    auto run_out = std::make_unique<bl_run>();
    const std::string m = method;
    if (m == "standard") {
      auto r = train_standard(data->train, labels->labels, rc.standard, test);
      run_out->models.push_back(std::move(r.model));
      run_out->metrics = std::move(r.metrics);
    } else if (m == "robust-dividemix") {
      auto r = run(data->train, labels->labels, rc.rdm, test);
      run_out->models.push_back(std::move(r.pair.nets[0]));
      run_out->models.push_back(std::move(r.pair.nets[1]));
      run_out->metrics = std::move(r.metrics);
    } else {
      throw ConfigError("unknown training method '" + m + "'");
    }
    *out = run_out.release();
  });
}

void bl_run_free(bl_run* run_handle) { delete run_handle; }

bl_status bl_run_model_count(const bl_run* run_handle, int* out) {
  BL_REQUIRE(run_handle && out);
  *out = static_cast<int>(run_handle->models.size());
  return BL_OK;
}

bl_status bl_run_model(const bl_run* run_handle, int index, bl_model** out) {
  BL_REQUIRE(run_handle && out);
  BL_REQUIRE(index >= 0 && static_cast<std::size_t>(index) < run_handle->models.size());
  return guard([&] { *out = new bl_model{run_handle->models[static_cast<std::size_t>(index)]}; });
}

bl_status bl_run_save_metrics(const bl_run* run_handle, const char* path) {
  BL_REQUIRE(run_handle && path);
  return guard([&] { save_metrics_csv(path, run_handle->metrics); });
}

bl_status bl_run_summary(const bl_run* run_handle, double* best, double* last_mean) {
  BL_REQUIRE(run_handle);
  return guard([&] {
    const AccuracySummary s = track(run_handle->metrics);
    if (best) *best = s.best;
    if (last_mean) *last_mean = s.last_mean;
  });
}

}  // extern "C"
