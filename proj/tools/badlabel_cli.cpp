// Command-line front end. Talks to the library only through the C API.
#include "badlabel/badlabel.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace {

// exit codes
constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

struct Failure {
  int code;
};

int exit_code(bl_status st) {
  switch (st) {
    case BL_OK: return kOk;
    case BL_ERR_CONFIG:
    case BL_ERR_INVALID_ARG: return kUsage;
    case BL_ERR_NUMERIC: return kNumeric;
    default: return kData;
  }
}

void check(bl_status st) {
  if (st == BL_OK) return;
  std::fprintf(stderr, "error: %s\n", bl_last_error());
  throw Failure{exit_code(st)};
}

[[noreturn]] void usage(const std::string& msg) {
  std::fprintf(stderr, "error: %s\n", msg.c_str());
  throw Failure{kUsage};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Config = std::unique_ptr<bl_config, Deleter<bl_config, bl_config_free>>;
using DatasetPtr = std::unique_ptr<bl_dataset, Deleter<bl_dataset, bl_dataset_free>>;
using LabelsPtr = std::unique_ptr<bl_labels, Deleter<bl_labels, bl_labels_free>>;
using ModelPtr = std::unique_ptr<bl_model, Deleter<bl_model, bl_model_free>>;
using RunPtr = std::unique_ptr<bl_run, Deleter<bl_run, bl_run_free>>;

Config make_config(const std::string& file, const std::vector<std::string>& overrides) {
  bl_config* raw = nullptr;
  check(bl_config_new(&raw));
  Config cfg(raw);
  if (!file.empty()) check(bl_config_load(cfg.get(), file.c_str()));
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) usage("--set expects key=value, got '" + kv + "'");
    check(bl_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  return cfg;
}

void set(bl_config* cfg, const char* key, const std::string& value) { check(bl_config_set(cfg, key, value.c_str())); }

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

DatasetPtr open_dataset(const std::string& dir) {
  bl_dataset* raw = nullptr;
  check(bl_dataset_load(dir.c_str(), &raw));
  return DatasetPtr(raw);
}

LabelsPtr open_labels(const std::string& path, const bl_dataset* data) {
  bl_labels* raw = nullptr;
  check(bl_labels_load(path.c_str(), &raw));
  LabelsPtr labels(raw);
  check(bl_labels_check(labels.get(), data));
  return labels;
}

ModelPtr open_model(const std::string& path) {
  bl_model* raw = nullptr;
  check(bl_model_load(path.c_str(), &raw));
  return ModelPtr(raw);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(s.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    std::fprintf(stderr, "error: cannot create %s: %s\n", dir.c_str(), ec.message().c_str());
    throw Failure{kData};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BadLabel noise crafting and Robust DivideMix training"};
  app.require_subcommand(1);
  app.set_version_flag("--version", bl_version());

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data", "Generate or import a dataset directory");
  std::string data_kind, data_out, images, labels_file, test_images, test_labels;
  int per_class = 1000;
  std::optional<int> test_per_class;
  double spread = 0.0;
  std::uint64_t data_seed = 0;
  std::size_t limit = 0;
  gen_data->add_option("--kind", data_kind, "synthetic3 or mnist-idx")
      ->required()
      ->check(CLI::IsMember({"synthetic3", "mnist-idx"}));
  gen_data->add_option("--out", data_out, "Output directory")->required();
  gen_data->add_option("--n", per_class, "Training samples per class (synthetic3)")->check(CLI::PositiveNumber);
  gen_data->add_option("--n-test", test_per_class, "Test samples per class (synthetic3, default n/2)")
      ->check(CLI::PositiveNumber);
  gen_data->add_option("--std", spread, "Blob standard deviation (synthetic3)");
  gen_data->add_option("--seed", data_seed, "Random seed");
  gen_data->add_option("--images", images, "IDX image file (mnist-idx)");
  gen_data->add_option("--labels", labels_file, "IDX label file (mnist-idx)");
  gen_data->add_option("--test-images", test_images, "IDX test image file");
  gen_data->add_option("--test-labels", test_labels, "IDX test label file");
  gen_data->add_option("--limit", limit, "Load at most this many samples per file");

  // gen-noise
  auto* gen_noise = app.add_subcommand("gen-noise", "Write a noisy label file");
  std::string noise_dataset, noise_kind, noise_out, noise_config, arch;
  double ratio = 0.0;
  std::uint64_t noise_seed = 0;
  std::optional<int> craft_epochs;
  std::optional<double> craft_alpha, craft_lr;
  std::vector<std::string> noise_sets;
  gen_noise->add_option("--dataset", noise_dataset, "Dataset directory")->required();
  gen_noise->add_option("--kind", noise_kind, "symmetric, asymmetric, idn or badlabel")
      ->required()
      ->check(CLI::IsMember({"symmetric", "asymmetric", "idn", "badlabel"}));
  gen_noise->add_option("--ratio", ratio, "Noise ratio")->required();
  gen_noise->add_option("--seed", noise_seed, "Random seed");
  gen_noise->add_option("--out", noise_out, "Label file to write")->required();
  gen_noise->add_option("--epochs", craft_epochs, "BadLabel crafting epochs T");
  gen_noise->add_option("--alpha", craft_alpha, "BadLabel flag step size");
  gen_noise->add_option("--lr", craft_lr, "Learning rate of the crafting network");
  gen_noise->add_option("--arch", arch, "Hidden widths of the crafting network, e.g. 64,64");
  gen_noise->add_option("--config", noise_config, "Config file");
  gen_noise->add_option("--set", noise_sets, "Config override key=value");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Audit a noisy label file");
  std::string ins_dataset, ins_noise, tm_out, dist_out, ins_model;
  int bins = 20;
  bool want_auc = false;
  inspect->add_option("--dataset", ins_dataset, "Dataset directory")->required();
  inspect->add_option("--noise", ins_noise, "Label file")->required();
  inspect->add_option("--transition-matrix", tm_out, "Write the transition matrix CSV here");
  inspect->add_option("--loss-dist", dist_out, "Write the loss histogram CSV here (needs --model)");
  inspect->add_option("--model", ins_model, "Checkpoint used for per-sample losses");
  inspect->add_option("--bins", bins, "Histogram bins")->check(CLI::PositiveNumber);
  inspect->add_flag("--auc", want_auc, "Print the clean/noisy loss separability AUC (needs --model)");

  // train
  auto* train = app.add_subcommand("train", "Train on a noisy dataset");
  std::string tr_dataset, tr_noise, method, tr_config, tr_out;
  std::optional<std::uint64_t> tr_seed;
  bool no_bayes = false, no_perturb = false, no_filter = false;
  std::vector<std::string> tr_sets;
  train->add_option("--dataset", tr_dataset, "Dataset directory")->required();
  train->add_option("--noise", tr_noise, "Label file")->required();
  train->add_option("--method", method, "standard or robust-dividemix")
      ->required()
      ->check(CLI::IsMember({"standard", "robust-dividemix"}));
  train->add_option("--config", tr_config, "Config file");
  train->add_option("--out", tr_out, "Output directory")->required();
  train->add_option("--seed", tr_seed, "Random seed (overrides the config)");
  train->add_flag("--no-bayes-gmm", no_bayes, "Use the EM mixture instead of the variational one");
  train->add_flag("--no-perturbation", no_perturb, "Skip label perturbation in Stage I");
  train->add_flag("--no-filtering", no_filter, "Accept every division, converged or not");
  train->add_option("--set", tr_sets, "Config override key=value");

  // eval
  auto* eval = app.add_subcommand("eval", "Test accuracy of one checkpoint or a jointly predicting pair");
  std::string ev_models, ev_dataset;
  eval->add_option("--model", ev_models, "CKPT or CKPT,CKPT")->required();
  eval->add_option("--dataset", ev_dataset, "Dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen_data) {
      bl_dataset* raw = nullptr;
      if (data_kind == "synthetic3") {
        check(bl_dataset_synthetic(per_class, test_per_class.value_or(std::max(1, per_class / 2)), spread, data_seed,
                                   &raw));
      } else {
        if (images.empty() || labels_file.empty()) usage("mnist-idx needs --images and --labels");
        if (test_images.empty() != test_labels.empty()) usage("--test-images and --test-labels go together");
        check(bl_dataset_idx(images.c_str(), labels_file.c_str(), test_images.empty() ? nullptr : test_images.c_str(),
                             test_labels.empty() ? nullptr : test_labels.c_str(), limit, &raw));
      }
      DatasetPtr data(raw);
      ensure_dir(data_out);
      check(bl_dataset_save(data.get(), data_out.c_str(), data_kind.c_str()));
      std::size_t n_train = 0, n_test = 0;
      int dim = 0, classes = 0;
      check(bl_dataset_info(data.get(), &n_train, &n_test, &dim, &classes));
      std::printf("wrote %s: %zu train / %zu test, dim %d, %d classes\n", data_out.c_str(), n_train, n_test, dim,
                  classes);
    } else if (*gen_noise) {
      Config cfg = make_config(noise_config, noise_sets);
      if (craft_epochs) set(cfg.get(), "badlabel.epochs", std::to_string(*craft_epochs));
      if (craft_alpha) set(cfg.get(), "badlabel.alpha", exact(*craft_alpha));
      if (craft_lr) set(cfg.get(), "badlabel.lr", exact(*craft_lr));
      if (!arch.empty()) set(cfg.get(), "badlabel.hidden", arch);
      DatasetPtr data = open_dataset(noise_dataset);
      bl_labels* raw = nullptr;
      check(bl_labels_generate(data.get(), noise_kind.c_str(), ratio, noise_seed, cfg.get(), &raw));
      LabelsPtr labels(raw);
      check(bl_labels_save(labels.get(), noise_out.c_str()));
      double rate = 0.0;
      check(bl_labels_noise_rate(labels.get(), &rate));
      std::printf("wrote %s: %s noise, realized rate %.4f\n", noise_out.c_str(), noise_kind.c_str(), rate);
    } else if (*inspect) {
      DatasetPtr data = open_dataset(ins_dataset);
      LabelsPtr labels = open_labels(ins_noise, data.get());
      double rate = 0.0;
      check(bl_labels_noise_rate(labels.get(), &rate));
      std::printf("noise_rate %.6f\n", rate);
      if (!tm_out.empty()) check(bl_transition_save(labels.get(), tm_out.c_str()));
      if ((!dist_out.empty() || want_auc) && ins_model.empty()) usage("--loss-dist and --auc need --model");
      if (!ins_model.empty()) {
        ModelPtr model = open_model(ins_model);
        if (!dist_out.empty()) check(bl_loss_histogram_save(model.get(), data.get(), labels.get(), bins, dist_out.c_str()));
        if (want_auc) {
          double auc = 0.0;
          check(bl_separability_auc(model.get(), data.get(), labels.get(), &auc));
          std::printf("auc %.6f\n", auc);
        }
      }
    } else if (*train) {
      Config cfg = make_config(tr_config, tr_sets);
      if (tr_seed) set(cfg.get(), "seed", std::to_string(*tr_seed));
      if (no_bayes) set(cfg.get(), "rdm.use_bayes_gmm", "false");
      if (no_perturb) set(cfg.get(), "rdm.use_perturbation", "false");
      if (no_filter) set(cfg.get(), "rdm.use_filtering", "false");
      DatasetPtr data = open_dataset(tr_dataset);
      LabelsPtr labels = open_labels(tr_noise, data.get());
      ensure_dir(tr_out);
      const std::filesystem::path out(tr_out);
      check(bl_config_save(cfg.get(), (out / "config.txt").string().c_str()));

      bl_run* raw = nullptr;
      check(bl_train(data.get(), labels.get(), cfg.get(), method.c_str(), &raw));
      RunPtr result(raw);
      check(bl_run_save_metrics(result.get(), (out / "metrics.csv").string().c_str()));
      int count = 0;
      check(bl_run_model_count(result.get(), &count));
      for (int k = 0; k < count; ++k) {
        bl_model* m = nullptr;
        check(bl_run_model(result.get(), k, &m));
        ModelPtr model(m);
        const std::string name = count == 1 ? "model.ckpt" : "model" + std::to_string(k + 1) + ".ckpt";
        check(bl_model_save(model.get(), (out / name).string().c_str()));
      }
      double best = 0.0, last = 0.0;
      check(bl_run_summary(result.get(), &best, &last));
      std::printf("best %.4f last %.4f\n", best, last);
    } else if (*eval) {
      DatasetPtr data = open_dataset(ev_dataset);
      std::vector<ModelPtr> models;
      std::vector<const bl_model*> handles;
      for (const auto& path : split_commas(ev_models)) {
        if (path.empty()) usage("empty checkpoint path in --model");
        models.push_back(open_model(path));
        handles.push_back(models.back().get());
      }
      double acc = 0.0;
      check(bl_evaluate(handles.data(), handles.size(), data.get(), &acc));
      std::printf("accuracy %.6f\n", acc);
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return kOk;
}
