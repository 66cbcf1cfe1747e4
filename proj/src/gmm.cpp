#include "gmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace badlabel {

void VbConfig::validate() const {
  if (!(tolerance > 0.0)) throw ConfigError("gmm: tolerance must be > 0");
  if (max_iterations < 1) throw ConfigError("gmm: max iterations must be >= 1");
  if (!(dirichlet_prior > 0.0) || !(mean_precision_prior > 0.0) || !(precision_shape_prior > 0.0))
    throw ConfigError("gmm: priors must be positive");
  if (!(variance_floor > 0.0)) throw ConfigError("gmm: variance floor must be positive");
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
// keeps component masses away from zero, as in common GMM implementations
constexpr double kMassEps = 10.0 * std::numeric_limits<double>::epsilon();

double digamma(double x) {
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv -
            inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
  return result;
}

struct Stats {
  std::array<double, 2> mass{};
  std::array<double, 2> mean{};
  std::array<double, 2> spread{};  // responsibility-weighted variance
};

Stats sufficient_stats(std::span<const double> x, const Matrix& r) {
  Stats s;
  for (int k = 0; k < 2; ++k) {
    double m = kMassEps;
    double sx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      m += r(static_cast<Eigen::Index>(i), k);
      sx += r(static_cast<Eigen::Index>(i), k) * x[i];
    }
    const double mu = sx / m;
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double dx = x[i] - mu;
      ss += r(static_cast<Eigen::Index>(i), k) * dx * dx;
    }
    s.mass[k] = m;
    s.mean[k] = mu;
    s.spread[k] = ss / m;
  }
  return s;
}

// Quantile split: ranks below the median start in component 0, the rest in
// component 1, each with a small seeded share given to the other component.
Matrix initial_responsibilities(std::span<const double> x, std::uint64_t seed) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  Rng rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 0.1);
  Matrix r(static_cast<Eigen::Index>(n), 2);
  for (std::size_t rank = 0; rank < n; ++rank) {
    const auto i = static_cast<Eigen::Index>(order[rank]);
    const double j = jitter(rng);
    const int home = rank < n / 2 ? 0 : 1;
    r(i, home) = 1.0 - j;
    r(i, 1 - home) = j;
  }
  return r;
}

bool degenerate(std::span<const double> x, MixtureFit& fit, MixtureKind kind, const VbConfig& cfg) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (*lo != *hi) return false;
  fit.kind = kind;
  fit.means = {*lo, *lo};
  fit.variances = {cfg.variance_floor, cfg.variance_floor};
  fit.weights = {0.5, 0.5};
  fit.responsibilities = Matrix::Constant(static_cast<Eigen::Index>(x.size()), 2, 0.5);
  fit.converged = true;
  fit.iterations_used = 1;
  return true;
}

void check_input(std::span<const double> x) {
  if (x.size() < 2) throw DataError("mixture fit: need at least two values");
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("mixture fit: non-finite value");
  }
}

// ---- EM ----

void em_maximize(std::span<const double> x, const Matrix& r, const VbConfig& cfg, MixtureFit& fit) {
  const Stats s = sufficient_stats(x, r);
  const double total = s.mass[0] + s.mass[1];
  for (int k = 0; k < 2; ++k) {
    fit.means[k] = s.mean[k];
    fit.variances[k] = std::max(s.spread[k], cfg.variance_floor);
    fit.weights[k] = s.mass[k] / total;
  }
}

// Fills responsibilities; returns the mean log-likelihood.
double em_expect(std::span<const double> x, const MixtureFit& fit, Matrix& r) {
  r.resize(static_cast<Eigen::Index>(x.size()), 2);
  double ll = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::array<double, 2> lp{};
    for (int k = 0; k < 2; ++k) {
      const double d = x[i] - fit.means[k];
      lp[k] = std::log(fit.weights[k]) - 0.5 * (kLog2Pi + std::log(fit.variances[k]) + d * d / fit.variances[k]);
    }
    const double m = std::max(lp[0], lp[1]);
    const double norm = m + std::log(std::exp(lp[0] - m) + std::exp(lp[1] - m));
    r(static_cast<Eigen::Index>(i), 0) = std::exp(lp[0] - norm);
    r(static_cast<Eigen::Index>(i), 1) = std::exp(lp[1] - norm);
    ll += norm;
  }
  return ll / static_cast<double>(x.size());
}

// ---- variational ----

struct Priors {
  double alpha0, beta0, m0, a0, b0;
};

void vb_maximize(std::span<const double> x, const Matrix& r, const Priors& p, MixtureFit& fit) {
  const Stats s = sufficient_stats(x, r);
  for (int k = 0; k < 2; ++k) {
    const double nk = s.mass[k];
    fit.dirichlet[k] = p.alpha0 + nk;
    fit.mean_precision[k] = p.beta0 + nk;
    fit.means[k] = (p.beta0 * p.m0 + nk * s.mean[k]) / fit.mean_precision[k];
    fit.shape[k] = p.a0 + 0.5 * nk;
    const double dm = s.mean[k] - p.m0;
    fit.rate[k] = p.b0 + 0.5 * (nk * s.spread[k] + p.beta0 * nk * dm * dm / fit.mean_precision[k]);
  }
}

std::array<double, 2> vb_log_rho(double v, const MixtureFit& fit) {
  const double psi_sum = digamma(fit.dirichlet[0] + fit.dirichlet[1]);
  std::array<double, 2> out{};
  for (int k = 0; k < 2; ++k) {
    const double e_log_pi = digamma(fit.dirichlet[k]) - psi_sum;
    const double e_log_lambda = digamma(fit.shape[k]) - std::log(fit.rate[k]);
    const double d = v - fit.means[k];
    out[k] = e_log_pi + 0.5 * e_log_lambda - 0.5 * kLog2Pi -
             0.5 * (1.0 / fit.mean_precision[k] + fit.shape[k] / fit.rate[k] * d * d);
  }
  return out;
}

void vb_expect(std::span<const double> x, const MixtureFit& fit, Matrix& r) {
  r.resize(static_cast<Eigen::Index>(x.size()), 2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto lr = vb_log_rho(x[i], fit);
    const double m = std::max(lr[0], lr[1]);
    const double e0 = std::exp(lr[0] - m);
    const double e1 = std::exp(lr[1] - m);
    r(static_cast<Eigen::Index>(i), 0) = e0 / (e0 + e1);
    r(static_cast<Eigen::Index>(i), 1) = e1 / (e0 + e1);
  }
}

// Evidence lower bound of q(Z) = r and the variational parameters in fit,
// which must have been produced by vb_maximize from r.
double vb_elbo(std::span<const double> x, const Matrix& r, const Priors& p, const MixtureFit& fit) {
  const Stats s = sufficient_stats(x, r);
  const double alpha_hat = fit.dirichlet[0] + fit.dirichlet[1];
  const double psi_hat = digamma(alpha_hat);
  double elbo = 0.0;
  double sum_e_log_pi = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double nk = s.mass[k];
    const double e_log_pi = digamma(fit.dirichlet[k]) - psi_hat;
    const double e_log_lambda = digamma(fit.shape[k]) - std::log(fit.rate[k]);
    const double e_lambda = fit.shape[k] / fit.rate[k];
    const double beta = fit.mean_precision[k];
    const double dm = s.mean[k] - fit.means[k];
    sum_e_log_pi += e_log_pi;

    // E[ln p(x | z, mu, lambda)] + E[ln p(z | pi)]
    elbo += 0.5 * nk * (e_log_lambda - 1.0 / beta - e_lambda * (s.spread[k] + dm * dm) - kLog2Pi);
    elbo += nk * e_log_pi;
    // E[ln p(mu, lambda)]
    const double dm0 = fit.means[k] - p.m0;
    elbo += 0.5 * (std::log(p.beta0) - kLog2Pi) + 0.5 * e_log_lambda - 0.5 * p.beta0 / beta -
            0.5 * p.beta0 * e_lambda * dm0 * dm0;
    elbo += p.a0 * std::log(p.b0) - std::lgamma(p.a0) + (p.a0 - 1.0) * e_log_lambda - p.b0 * e_lambda;
    // - E[ln q(mu, lambda)]
    const double gamma_entropy = fit.shape[k] - std::log(fit.rate[k]) + std::lgamma(fit.shape[k]) +
                                 (1.0 - fit.shape[k]) * digamma(fit.shape[k]);
    elbo -= 0.5 * e_log_lambda + 0.5 * (std::log(beta) - kLog2Pi) - 0.5 - gamma_entropy;
    // - E[ln q(pi)] (the per-component part)
    elbo -= (fit.dirichlet[k] - 1.0) * e_log_pi - std::lgamma(fit.dirichlet[k]);
  }
  // E[ln p(pi)]
  elbo += std::lgamma(2.0 * p.alpha0) - 2.0 * std::lgamma(p.alpha0) + (p.alpha0 - 1.0) * sum_e_log_pi;
  elbo -= std::lgamma(alpha_hat);
  // - E[ln q(z)]
  for (Eigen::Index i = 0; i < r.rows(); ++i)
    for (int k = 0; k < 2; ++k)
      if (r(i, k) > 0.0) elbo -= r(i, k) * std::log(r(i, k));
  return elbo;
}

void vb_summarize(MixtureFit& fit, const VbConfig& cfg) {
  const double total = fit.dirichlet[0] + fit.dirichlet[1];
  for (int k = 0; k < 2; ++k) {
    fit.weights[k] = fit.dirichlet[k] / total;
    fit.variances[k] = std::max(fit.rate[k] / fit.shape[k], cfg.variance_floor);
  }
}

}  // namespace

Matrix MixtureFit::evaluate(std::span<const double> values) const {
  Matrix r(static_cast<Eigen::Index>(values.size()), 2);
  if (means[0] == means[1] && variances[0] == variances[1] && weights[0] == weights[1]) {
    r.setConstant(0.5);
    return r;
  }
  if (kind == MixtureKind::Em) {
    em_expect(values, *this, r);
  } else {
    vb_expect(values, *this, r);
  }
  return r;
}

MixtureFit fit_em(std::span<const double> values, const VbConfig& config) {
  config.validate();
  check_input(values);
  MixtureFit fit;
  fit.kind = MixtureKind::Em;
  if (degenerate(values, fit, MixtureKind::Em, config)) return fit;

  Matrix r = initial_responsibilities(values, config.seed);
  em_maximize(values, r, config, fit);
  double prev = em_expect(values, fit, r);
  fit.trace.push_back(prev);
  for (int it = 1; it <= config.max_iterations; ++it) {
    // r already holds the E-step under the current parameters
    em_maximize(values, r, config, fit);
    const double ll = em_expect(values, fit, r);
    fit.trace.push_back(ll);
    fit.iterations_used = it;
    fit.objective = ll;
    if (!std::isfinite(ll)) throw NumericError("fit_em: non-finite log-likelihood");
    if (ll - prev < config.tolerance) {
      fit.converged = true;
      break;
    }
    prev = ll;
  }
  fit.responsibilities = std::move(r);
  return fit;
}

MixtureFit fit_vb(std::span<const double> values, const VbConfig& config) {
  config.validate();
  check_input(values);
  MixtureFit fit;
  fit.kind = MixtureKind::Variational;
  if (degenerate(values, fit, MixtureKind::Variational, config)) return fit;

  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var = std::max(var / n, config.variance_floor);
  const Priors priors{config.dirichlet_prior, config.mean_precision_prior, mean, config.precision_shape_prior, var};

  Matrix r = initial_responsibilities(values, config.seed);
  vb_maximize(values, r, priors, fit);
  double prev = vb_elbo(values, r, priors, fit);
  fit.trace.push_back(prev);
  for (int it = 1; it <= config.max_iterations; ++it) {
    vb_expect(values, fit, r);
    vb_maximize(values, r, priors, fit);
    const double elbo = vb_elbo(values, r, priors, fit);
    fit.trace.push_back(elbo);
    fit.iterations_used = it;
    fit.objective = elbo;
    if (!std::isfinite(elbo)) throw NumericError("fit_vb: non-finite lower bound");
    if (elbo - prev < config.tolerance) {
      fit.converged = true;
      break;
    }
    prev = elbo;
  }
  fit.responsibilities = std::move(r);
  vb_summarize(fit, config);
  return fit;
}

Vector posterior_low_mean(const MixtureFit& fit, std::span<const double> values) {
  const auto n = static_cast<Eigen::Index>(values.size());
  if (std::abs(fit.means[0] - fit.means[1]) <= 1e-12) return Vector::Constant(n, 0.5);
  const int low = fit.means[0] < fit.means[1] ? 0 : 1;
  return fit.evaluate(values).col(low);
}

}  // namespace badlabel
