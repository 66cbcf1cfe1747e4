#pragma once

#include "dividemix.hpp"
#include "noise.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace badlabel {

// Every tunable knob, addressable by dotted key (badlabel.alpha, rdm.lambda,
// gmm.tolerance, ...). Defaults <- config file <- command-line overrides.
struct RunConfig {
  std::uint64_t seed = 0;
  BadLabelConfig badlabel = BadLabelConfig::defaults();
  IdnOptions idn;
  StandardConfig standard = StandardConfig::defaults();
  DivideConfig rdm = DivideConfig::defaults();

  // Throws ConfigError naming the key when it is unknown or the value does
  // not parse.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  // `key = value` lines, '#' starts a comment.
  void load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string dump() const;

  // Pushes the shared seed into every module config and validates them.
  void finalize();
};

}  // namespace badlabel
