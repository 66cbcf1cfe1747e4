#include "dividemix.hpp"

#include "noise.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <thread>

namespace badlabel {

int worker_threads() {
  const char* env = std::getenv("BADLABEL_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || v < 1) return 1;
  return static_cast<int>(std::min<long>(v, 64));
}

namespace {

std::vector<int> make_dims(int input, const std::vector<int>& hidden, int classes) {
  std::vector<int> dims{input};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(classes);
  return dims;
}

// Runs fn(0) and fn(1), concurrently when more than one worker is allowed.
// Each call touches only its own network's state.
template <typename Fn>
void for_both(Fn&& fn) {
  if (worker_threads() < 2) {
    fn(0);
    fn(1);
    return;
  }
  std::exception_ptr err;
  std::thread other([&] {
    try {
      fn(1);
    } catch (...) {
      err = std::current_exception();
    }
  });
  try {
    fn(0);
  } catch (...) {
    other.join();
    throw;
  }
  other.join();
  if (err) std::rethrow_exception(err);
}

std::vector<bool> clean_mask_of(const NoisyLabels& labels) { return labels.clean_mask(); }

}  // namespace

// ---- standard training ----

StandardConfig StandardConfig::defaults() {
  StandardConfig c;
  c.sgd.learning_rate = 0.05;
  c.sgd.momentum = 0.9;
  c.sgd.weight_decay = 5e-4;
  c.sgd.batch_size = 64;
  return c;
}

void StandardConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("train: hidden widths must be positive");
  }
  sgd.validate();
}

StandardResult train_standard(const Dataset& train, const NoisyLabels& labels, const StandardConfig& cfg,
                              const Dataset* test) {
  cfg.validate();
  check_labels_match(labels, train);
  const std::vector<int> noisy = labels.noisy();
  const Matrix targets = one_hot(noisy, train.classes);
  const auto dims = make_dims(train.dim(), cfg.hidden, train.classes);

  StandardResult out{init_mlp(dims, derive_seed(cfg.seed, 10)), {}};
  Sgd opt(out.model, cfg.sgd);
  Rng rng(derive_seed(cfg.seed, 20));
  const double precision = 1.0 - noise_rate(labels);
  for (int e = 0; e < cfg.epochs; ++e) {
    opt.set_epoch(e);
    EpochRecord rec;
    rec.train_loss = train_epoch(out.model, opt, train.features, targets, 0.0, rng);
    if (test) rec.test_accuracy = accuracy(predict(out.model, test->features), test->labels);
    rec.labeled_precision = precision;
    rec.labeled_recall = 1.0;
    out.metrics.add(rec);
  }
  return out;
}

// ---- Robust DivideMix ----

void MixMatchConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("mixmatch: temperature must be > 0");
  if (augmentations < 1) throw ConfigError("mixmatch: augmentations must be >= 1");
  if (!(mixup_alpha > 0.0)) throw ConfigError("mixmatch: mixup alpha must be > 0");
  if (!(lambda_u >= 0.0)) throw ConfigError("mixmatch: lambda_u must be >= 0");
  if (rampup_epochs < 1) throw ConfigError("mixmatch: rampup epochs must be >= 1");
  if (!(jitter_std >= 0.0)) throw ConfigError("mixmatch: jitter std must be >= 0");
}

DivideConfig DivideConfig::defaults() {
  DivideConfig c;
  c.sgd.learning_rate = 0.02;
  c.sgd.momentum = 0.9;
  c.sgd.weight_decay = 5e-4;
  c.sgd.batch_size = 64;
  return c;
}

void DivideConfig::validate() const {
  if (warmup_epochs < 1) throw ConfigError("rdm: warmup epochs must be >= 1");
  if (!(cp_weight >= 0.0)) throw ConfigError("rdm: cp weight must be >= 0");
  if (!(lambda >= 0.0)) throw ConfigError("rdm: lambda must be >= 0");
  if (!(tau_p > 0.0 && tau_p < 1.0) || !(tau_c > 0.0 && tau_c < 1.0))
    throw ConfigError("rdm: selection thresholds must lie in (0,1)");
  if (epochs < 1) throw ConfigError("rdm: epochs must be >= 1");
  if (!(fallback_fraction > 0.0 && fallback_fraction <= 1.0))
    throw ConfigError("rdm: fallback fraction must lie in (0,1]");
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("rdm: hidden widths must be positive");
  }
  gmm.validate();
  mixmatch.validate();
  sgd.validate();
}

PairState PairState::create(std::span<const int> dims, const SgdConfig& sgd, std::uint64_t seed) {
  MlpModel a = init_mlp(dims, derive_seed(seed, 10));
  MlpModel b = init_mlp(dims, derive_seed(seed, 11));
  Sgd oa(a, sgd);
  Sgd ob(b, sgd);
  return PairState{{std::move(a), std::move(b)},
                   {std::move(oa), std::move(ob)},
                   {Rng(derive_seed(seed, 20)), Rng(derive_seed(seed, 21))},
                   0,
                   {}};
}

void warmup(PairState& pair, const Matrix& x, std::span<const int> noisy, int epochs, double cp_weight) {
  if (epochs < 1) throw ConfigError("warmup: epochs must be >= 1");
  const Matrix targets = one_hot(noisy, pair.nets[0].class_count());
  const int start = pair.epoch;
  for_both([&](int k) {
    for (int e = 0; e < epochs; ++e) {
      pair.opts[k].set_epoch(start + e);
      train_epoch(pair.nets[k], pair.opts[k], x, targets, cp_weight, pair.rngs[k]);
    }
  });
  pair.epoch = start + epochs;
}

Matrix perturb_labels(const Matrix& labels, const Matrix& probs, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("perturb_labels: lambda must be >= 0");
  return labels + lambda * label_gradient(labels, probs);
}

std::vector<int> harden(const Matrix& soft) {
  std::vector<int> out(static_cast<std::size_t>(soft.rows()));
  for (Eigen::Index i = 0; i < soft.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(soft.row(i));
  return out;
}

Division divide(const Vector& posterior, double threshold) {
  Division d;
  d.source = posterior;
  d.threshold = threshold;
  for (Eigen::Index i = 0; i < posterior.size(); ++i) {
    if (posterior(i) >= threshold) {
      d.labeled.push_back(static_cast<int>(i));
    } else {
      d.unlabeled.push_back(static_cast<int>(i));
    }
  }
  d.empty_labeled = d.labeled.empty();
  return d;
}

Division fallback_division(const Vector& posterior, double threshold, double fraction) {
  const auto n = static_cast<std::size_t>(posterior.size());
  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n))));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return posterior(a) > posterior(b); });
  std::vector<bool> chosen(n, false);
  for (std::size_t r = 0; r < keep; ++r) chosen[static_cast<std::size_t>(order[r])] = true;
  Division d;
  d.source = posterior;
  d.threshold = threshold;
  for (std::size_t i = 0; i < n; ++i) (chosen[i] ? d.labeled : d.unlabeled).push_back(static_cast<int>(i));
  return d;
}

Matrix sharpen(const Matrix& probs, double temperature) {
  Matrix out = probs.array().pow(1.0 / temperature).matrix();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double s = out.row(i).sum();
    if (s > 0.0) {
      out.row(i) /= s;
    } else {
      out.row(i).setConstant(1.0 / static_cast<double>(out.cols()));
    }
  }
  return out;
}

double mixup_coefficient(double a, Rng& rng) {
  std::gamma_distribution<double> g(a, 1.0);
  const double u = g(rng);
  const double v = g(rng);
  const double b = u + v > 0.0 ? u / (u + v) : 0.5;
  return std::max(b, 1.0 - b);
}

namespace {

Matrix gather_rows(const Matrix& x, std::span<const int> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(idx[r]);
  return out;
}

Matrix jitter(const Matrix& x, double std_dev, Rng& rng) {
  if (std_dev == 0.0) return x;
  std::normal_distribution<double> normal(0.0, std_dev);
  Matrix out = x;
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += normal(rng);
  return out;
}

}  // namespace

double mixmatch_objective(const Matrix& logits, const Matrix& targets, Eigen::Index labeled_rows, double lambda_u,
                          Matrix* dlogits) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
    throw ShapeError("mixmatch_objective: logits and targets differ in shape");
  if (labeled_rows < 1 || labeled_rows > logits.rows())
    throw ShapeError("mixmatch_objective: labeled row count out of range");
  const Eigen::Index total = logits.rows();
  const Eigen::Index n_unl = total - labeled_rows;
  const auto classes = logits.cols();
  const Matrix p = softmax(logits);
  if (dlogits) dlogits->resize(total, classes);

  double lx = 0.0;
  for (Eigen::Index i = 0; i < labeled_rows; ++i) {
    const double mass = targets.row(i).sum();
    for (Eigen::Index j = 0; j < classes; ++j) {
      lx -= targets(i, j) * std::log(std::max(p(i, j), kProbFloor));
      if (dlogits) (*dlogits)(i, j) = (p(i, j) * mass - targets(i, j)) / static_cast<double>(labeled_rows);
    }
  }
  lx /= static_cast<double>(labeled_rows);

  // squared error on probabilities, mean over rows and classes
  double lu = 0.0;
  if (n_unl > 0) {
    const double scale = 1.0 / (static_cast<double>(n_unl) * static_cast<double>(classes));
    RowVector g(classes);
    for (Eigen::Index i = labeled_rows; i < total; ++i) {
      for (Eigen::Index j = 0; j < classes; ++j) {
        const double d = p(i, j) - targets(i, j);
        lu += d * d;
        g(j) = 2.0 * lambda_u * scale * d;
      }
      if (dlogits) {
        const double gp = g.dot(p.row(i));
        for (Eigen::Index j = 0; j < classes; ++j) (*dlogits)(i, j) = p(i, j) * (g(j) - gp);
      }
    }
    lu *= scale;
  }
  return lx + lambda_u * lu;
}

double mixmatch_epoch(MlpModel& student, Sgd& opt, const Division& peer_division, const Matrix& x,
                      std::span<const int> noisy, const DivideConfig& cfg, int mixmatch_epoch, Rng& rng) {
  const auto& mm = cfg.mixmatch;
  if (peer_division.labeled.empty()) throw DataError("mixmatch_epoch: empty labeled set");
  const int classes = student.class_count();
  const int aug = mm.augmentations;

  std::vector<int> labeled = peer_division.labeled;
  std::vector<int> unlabeled = peer_division.unlabeled;
  std::shuffle(labeled.begin(), labeled.end(), rng);
  std::shuffle(unlabeled.begin(), unlabeled.end(), rng);

  const std::size_t bs = static_cast<std::size_t>(opt.config().batch_size);
  const std::size_t batches = (labeled.size() + bs - 1) / bs;
  std::size_t u_cursor = 0;
  double loss_sum = 0.0;

  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t start = b * bs;
    const std::size_t nb = std::min(bs, labeled.size() - start);
    const std::span<const int> lb(labeled.data() + start, nb);

    std::vector<int> ub;
    if (!unlabeled.empty()) {
      for (std::size_t r = 0; r < nb; ++r) {
        if (u_cursor == unlabeled.size()) {
          u_cursor = 0;
          std::shuffle(unlabeled.begin(), unlabeled.end(), rng);
        }
        ub.push_back(unlabeled[u_cursor++]);
      }
    }
    const std::size_t nu = ub.size();

    const Matrix xl = gather_rows(x, lb);
    Matrix yl = Matrix::Zero(static_cast<Eigen::Index>(nb), classes);
    for (std::size_t r = 0; r < nb; ++r) yl(static_cast<Eigen::Index>(r), noisy[static_cast<std::size_t>(lb[r])]) = 1.0;

    // label guessing: average over augmented copies, then sharpen
    std::vector<Matrix> u_views;
    Matrix guess;
    if (nu > 0) {
      const Matrix xu = gather_rows(x, ub);
      Matrix avg = Matrix::Zero(static_cast<Eigen::Index>(nu), classes);
      for (int m = 0; m < aug; ++m) {
        u_views.push_back(jitter(xu, mm.jitter_std, rng));
        avg += softmax(forward(student, u_views.back()));
      }
      guess = sharpen(avg / aug, mm.temperature);
    }

    const Eigen::Index n_lab = static_cast<Eigen::Index>(nb) * aug;
    const Eigen::Index n_unl = static_cast<Eigen::Index>(nu) * aug;
    const Eigen::Index total = n_lab + n_unl;
    Matrix inputs(total, x.cols());
    Matrix targets(total, classes);
    for (int m = 0; m < aug; ++m) {
      inputs.middleRows(m * static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(nb)) = jitter(xl, mm.jitter_std, rng);
      targets.middleRows(m * static_cast<Eigen::Index>(nb), static_cast<Eigen::Index>(nb)) = yl;
    }
    for (int m = 0; m < aug && nu > 0; ++m) {
      inputs.middleRows(n_lab + m * static_cast<Eigen::Index>(nu), static_cast<Eigen::Index>(nu)) = u_views[m];
      targets.middleRows(n_lab + m * static_cast<Eigen::Index>(nu), static_cast<Eigen::Index>(nu)) = guess;
    }

    // mixup every row with a random partner
    const double lam = mixup_coefficient(mm.mixup_alpha, rng);
    std::vector<Eigen::Index> partner(static_cast<std::size_t>(total));
    std::iota(partner.begin(), partner.end(), Eigen::Index{0});
    std::shuffle(partner.begin(), partner.end(), rng);
    Matrix mixed_in(total, x.cols());
    Matrix mixed_t(total, classes);
    for (Eigen::Index i = 0; i < total; ++i) {
      const Eigen::Index j = partner[static_cast<std::size_t>(i)];
      mixed_in.row(i) = lam * inputs.row(i) + (1.0 - lam) * inputs.row(j);
      mixed_t.row(i) = lam * targets.row(i) + (1.0 - lam) * targets.row(j);
    }

    const double progress = (static_cast<double>(mixmatch_epoch) + static_cast<double>(b) / static_cast<double>(batches)) /
                            static_cast<double>(mm.rampup_epochs);
    const double lambda_u = mm.lambda_u * std::clamp(progress, 0.0, 1.0);

    ForwardCache cache;
    const Matrix logits = forward(student, mixed_in, cache);
    Matrix dlogits;
    const double loss = mixmatch_objective(logits, mixed_t, n_lab, lambda_u, &dlogits);
    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "mixmatch: non-finite loss (epoch " << opt.epoch() << ", batch " << b << ")";
      throw NumericError(os.str());
    }
    opt.step(student, backward(student, cache, dlogits));
    loss_sum += loss;
  }
  return batches ? loss_sum / static_cast<double>(batches) : 0.0;
}

Vector perturbed_loss(const MlpModel& net, const Matrix& x, std::span<const int> noisy, double lambda) {
  const Matrix p = softmax(forward(net, x));
  const Matrix y = one_hot(noisy, net.class_count());
  const std::vector<int> hard = harden(perturb_labels(y, p, lambda));
  return cross_entropy_soft(one_hot(hard, net.class_count()), p);
}

MixtureFit fit_mixture(std::span<const double> losses, const DivideConfig& cfg) {
  return cfg.use_bayes_gmm ? fit_vb(losses, cfg.gmm) : fit_em(losses, cfg.gmm);
}

namespace {

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Division divide_or_fallback(const Vector& w, double tau, double fraction) {
  Division d = divide(w, tau);
  if (d.empty_labeled) {
    d = fallback_division(w, tau, fraction);
    d.empty_labeled = true;
  }
  return d;
}

EpochRecord division_record(const std::array<Division, 2>& divs, const std::vector<bool>& mask) {
  EpochRecord rec;
  for (const auto& d : divs) {
    const auto q = division_quality(d.labeled, mask);
    rec.labeled_precision += 0.5 * q.precision;
    rec.labeled_recall += 0.5 * q.recall;
  }
  return rec;
}

}  // namespace

RunResult run(const Dataset& train, const NoisyLabels& labels, const DivideConfig& cfg, const Dataset* test) {
  cfg.validate();
  check_labels_match(labels, train);
  const std::vector<int> noisy = labels.noisy();
  const std::vector<bool> mask = clean_mask_of(labels);
  const Matrix& x = train.features;
  const auto dims = make_dims(train.dim(), cfg.hidden, train.classes);

  RunResult out{PairState::create(dims, cfg.sgd, cfg.seed), {}, {}, {}, {}};
  PairState& pair = out.pair;
  auto joint_accuracy = [&] {
    return test ? accuracy(joint_predict(pair.nets[0], pair.nets[1], test->features), test->labels) : 0.0;
  };

  // Stage I: warm-up, one epoch at a time so every epoch is recorded
  const double noisy_precision = 1.0 - noise_rate(labels);
  for (int e = 0; e < cfg.warmup_epochs; ++e) {
    warmup(pair, x, noisy, 1, cfg.cp_weight);
    EpochRecord rec;
    const Matrix y = one_hot(noisy, train.classes);
    rec.train_loss = 0.5 * (batch_objective(pair.nets[0], x, y, cfg.cp_weight) +
                            batch_objective(pair.nets[1], x, y, cfg.cp_weight));
    rec.test_accuracy = joint_accuracy();
    rec.labeled_precision = noisy_precision;
    rec.labeled_recall = 1.0;
    out.metrics.add(rec);
  }
  out.warmed = pair.nets;

  // perturbed losses of each network feed the division that trains its peer
  const double lambda = cfg.use_perturbation ? cfg.lambda : 0.0;
  std::array<Vector, 2> losses;
  for_both([&](int k) { losses[k] = perturbed_loss(pair.nets[k], x, noisy, lambda); });
  std::array<MixtureFit, 2> fits;
  for_both([&](int k) { fits[k] = fit_mixture(as_span(losses[1 - k]), cfg); });
  std::array<Vector, 2> w_p;
  for (int k = 0; k < 2; ++k) {
    w_p[k] = posterior_low_mean(fits[k], as_span(losses[1 - k]));
    out.stage_one[k] = divide_or_fallback(w_p[k], cfg.tau_p, cfg.fallback_fraction);
  }

  int mm_epoch = 0;
  auto cross_train = [&](const std::array<Division, 2>& divs) {
    std::array<double, 2> loss{};
    const int epoch = pair.epoch;
    for_both([&](int k) {
      pair.opts[k].set_epoch(epoch);
      loss[k] = mixmatch_epoch(pair.nets[k], pair.opts[k], divs[k], x, noisy, cfg, mm_epoch, pair.rngs[k]);
    });
    ++pair.epoch;
    ++mm_epoch;
    return 0.5 * (loss[0] + loss[1]);
  };
  {
    EpochRecord rec = division_record(out.stage_one, mask);
    rec.train_loss = cross_train(out.stage_one);
    rec.test_accuracy = joint_accuracy();
    rec.gmm_converged = fits[0].converged && fits[1].converged;
    rec.gmm_iterations = std::max(fits[0].iterations_used, fits[1].iterations_used);
    out.metrics.add(rec);
  }

  // Stage II
  pair.cached_posteriors = {w_p[1], w_p[0]};
  for (int e = 1; e <= cfg.epochs; ++e) {
    for_both([&](int k) { losses[k] = per_sample_loss(pair.nets[k], x, noisy); });
    for_both([&](int k) { fits[k] = fit_mixture(as_span(losses[1 - k]), cfg); });
    std::array<Division, 2> divs;
    for (int k = 0; k < 2; ++k) {
      if (fits[k].converged || !cfg.use_filtering)
        pair.cached_posteriors[k] = posterior_low_mean(fits[k], as_span(losses[1 - k]));
      divs[k] = divide_or_fallback(pair.cached_posteriors[k], cfg.tau_c, cfg.fallback_fraction);
    }
    EpochRecord rec = division_record(divs, mask);
    rec.train_loss = cross_train(divs);
    rec.test_accuracy = joint_accuracy();
    rec.gmm_converged = fits[0].converged && fits[1].converged;
    rec.gmm_iterations = std::max(fits[0].iterations_used, fits[1].iterations_used);
    out.metrics.add(rec);
    out.stage_two.push_back(std::move(divs));
  }
  return out;
}

std::vector<int> joint_predict(const MlpModel& a, const MlpModel& b, const Matrix& x) {
  const Matrix p = softmax(forward(a, x)) + softmax(forward(b, x));
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(p.row(i));
  return out;
}

}  // namespace badlabel
