#include "config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace badlabel {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + what);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  return out;
}

std::vector<int> parse_widths(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& s : split(v, ',')) out.push_back(parse_int<int>(key, s));
  return out;
}

// "epoch:multiplier,epoch:multiplier"
std::vector<std::pair<int, double>> parse_schedule(const std::string& key, const std::string& v) {
  std::vector<std::pair<int, double>> out;
  for (const auto& s : split(v, ',')) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) bad_value(key, v, "epoch:multiplier pairs");
    out.emplace_back(parse_int<int>(key, trim(s.substr(0, colon))), parse_double(key, trim(s.substr(colon + 1))));
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_widths(const std::vector<int>& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? "," : "") + std::to_string(w[i]);
  return out;
}

std::string fmt_schedule(const std::vector<std::pair<int, double>>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i].first) + ":" + fmt_double(s[i].second);
  return out;
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Entry real(std::string key, Access a) {
  return {key, [a, key](RunConfig& c, const std::string& v) { a(c) = parse_double(key, v); },
          [a](const RunConfig& c) { return fmt_double(a(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Entry integer(std::string key, Access a) {
  using T = std::remove_reference_t<decltype(a(std::declval<RunConfig&>()))>;
  return {key, [a, key](RunConfig& c, const std::string& v) { a(c) = parse_int<T>(key, v); },
          [a](const RunConfig& c) { return std::to_string(a(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Entry flag(std::string key, Access a) {
  return {key, [a, key](RunConfig& c, const std::string& v) { a(c) = parse_bool(key, v); },
          [a](const RunConfig& c) { return std::string(a(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Access>
Entry widths(std::string key, Access a) {
  return {key, [a, key](RunConfig& c, const std::string& v) { a(c) = parse_widths(key, v); },
          [a](const RunConfig& c) { return fmt_widths(a(const_cast<RunConfig&>(c))); }};
}

// Five keys per optimizer.
template <typename Access>
void add_sgd(std::vector<Entry>& out, const std::string& prefix, Access sgd) {
  out.push_back(real(prefix + ".lr", [sgd](RunConfig& c) -> double& { return sgd(c).learning_rate; }));
  out.push_back(real(prefix + ".momentum", [sgd](RunConfig& c) -> double& { return sgd(c).momentum; }));
  out.push_back(real(prefix + ".weight_decay", [sgd](RunConfig& c) -> double& { return sgd(c).weight_decay; }));
  out.push_back(integer(prefix + ".batch_size", [sgd](RunConfig& c) -> int& { return sgd(c).batch_size; }));
  const std::string key = prefix + ".schedule";
  out.push_back({key, [sgd, key](RunConfig& c, const std::string& v) { sgd(c).schedule = parse_schedule(key, v); },
                 [sgd](const RunConfig& c) { return fmt_schedule(sgd(const_cast<RunConfig&>(c)).schedule); }});
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back(integer("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));

    // Changing the crafting length rescales the default decay points; an
    // explicit badlabel.schedule given afterwards still wins.
    e.push_back({"badlabel.epochs",
                 [](RunConfig& c, const std::string& v) {
                   c.badlabel.epochs = parse_int<int>("badlabel.epochs", v);
                   c.badlabel.sgd.schedule = BadLabelConfig::defaults(c.badlabel.epochs).sgd.schedule;
                 },
                 [](const RunConfig& c) { return std::to_string(c.badlabel.epochs); }});
    e.push_back(real("badlabel.alpha", [](RunConfig& c) -> double& { return c.badlabel.alpha; }));
    e.push_back(widths("badlabel.hidden", [](RunConfig& c) -> std::vector<int>& { return c.badlabel.hidden; }));
    add_sgd(e, "badlabel", [](RunConfig& c) -> SgdConfig& { return c.badlabel.sgd; });

    e.push_back(real("idn.rate_std", [](RunConfig& c) -> double& { return c.idn.rate_std; }));
    e.push_back(real("idn.widen", [](RunConfig& c) -> double& { return c.idn.widen; }));

    e.push_back(integer("train.epochs", [](RunConfig& c) -> int& { return c.standard.epochs; }));
    e.push_back(widths("train.hidden", [](RunConfig& c) -> std::vector<int>& { return c.standard.hidden; }));
    add_sgd(e, "train", [](RunConfig& c) -> SgdConfig& { return c.standard.sgd; });

    e.push_back(integer("rdm.warmup_epochs", [](RunConfig& c) -> int& { return c.rdm.warmup_epochs; }));
    e.push_back(real("rdm.cp_weight", [](RunConfig& c) -> double& { return c.rdm.cp_weight; }));
    e.push_back(real("rdm.lambda", [](RunConfig& c) -> double& { return c.rdm.lambda; }));
    e.push_back(real("rdm.tau_p", [](RunConfig& c) -> double& { return c.rdm.tau_p; }));
    e.push_back(real("rdm.tau_c", [](RunConfig& c) -> double& { return c.rdm.tau_c; }));
    e.push_back(integer("rdm.epochs", [](RunConfig& c) -> int& { return c.rdm.epochs; }));
    e.push_back(real("rdm.fallback_fraction", [](RunConfig& c) -> double& { return c.rdm.fallback_fraction; }));
    e.push_back(widths("rdm.hidden", [](RunConfig& c) -> std::vector<int>& { return c.rdm.hidden; }));
    e.push_back(flag("rdm.use_bayes_gmm", [](RunConfig& c) -> bool& { return c.rdm.use_bayes_gmm; }));
    e.push_back(flag("rdm.use_perturbation", [](RunConfig& c) -> bool& { return c.rdm.use_perturbation; }));
    e.push_back(flag("rdm.use_filtering", [](RunConfig& c) -> bool& { return c.rdm.use_filtering; }));
    add_sgd(e, "rdm", [](RunConfig& c) -> SgdConfig& { return c.rdm.sgd; });

    e.push_back(real("gmm.tolerance", [](RunConfig& c) -> double& { return c.rdm.gmm.tolerance; }));
    e.push_back(integer("gmm.max_iterations", [](RunConfig& c) -> int& { return c.rdm.gmm.max_iterations; }));
    e.push_back(real("gmm.dirichlet_prior", [](RunConfig& c) -> double& { return c.rdm.gmm.dirichlet_prior; }));
    e.push_back(
        real("gmm.mean_precision_prior", [](RunConfig& c) -> double& { return c.rdm.gmm.mean_precision_prior; }));
    e.push_back(
        real("gmm.precision_shape_prior", [](RunConfig& c) -> double& { return c.rdm.gmm.precision_shape_prior; }));
    e.push_back(real("gmm.variance_floor", [](RunConfig& c) -> double& { return c.rdm.gmm.variance_floor; }));

    e.push_back(real("mixmatch.temperature", [](RunConfig& c) -> double& { return c.rdm.mixmatch.temperature; }));
    e.push_back(integer("mixmatch.augmentations", [](RunConfig& c) -> int& { return c.rdm.mixmatch.augmentations; }));
    e.push_back(real("mixmatch.mixup_alpha", [](RunConfig& c) -> double& { return c.rdm.mixmatch.mixup_alpha; }));
    e.push_back(real("mixmatch.lambda_u", [](RunConfig& c) -> double& { return c.rdm.mixmatch.lambda_u; }));
    e.push_back(integer("mixmatch.rampup_epochs", [](RunConfig& c) -> int& { return c.rdm.mixmatch.rampup_epochs; }));
    e.push_back(real("mixmatch.jitter_std", [](RunConfig& c) -> double& { return c.rdm.mixmatch.jitter_std; }));
    return e;
  }();
  return entries;
}

const Entry& lookup(const std::string& key) {
  for (const auto& e : registry()) {
    if (e.key == key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { lookup(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return lookup(key).get(*this); }

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& e : registry()) out.push_back(e.key);
  return out;
}

void RunConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError(path.string() + ": cannot open");
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

std::string RunConfig::dump() const {
  std::string out = "# resolved configuration\n";
  for (const auto& e : registry()) out += e.key + " = " + e.get(*this) + "\n";
  return out;
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  os << dump();
  if (!os) throw DataError(path.string() + ": write failed");
}

void RunConfig::finalize() {
  badlabel.seed = seed;
  standard.seed = seed;
  rdm.seed = seed;
  rdm.gmm.seed = seed;
  badlabel.validate();
  standard.validate();
  rdm.validate();
  if (!(idn.rate_std >= 0.0) || !(idn.widen > 0.0)) throw ConfigError("idn: rate_std must be >= 0 and widen > 0");
}

}  // namespace badlabel
