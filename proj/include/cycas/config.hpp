#pragma once

// Flat key=value experiment configuration shared by every CLI subcommand.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cycas/eval.hpp"
#include "cycas/gradcheck.hpp"
#include "cycas/simulator.hpp"

namespace cycas {

inline constexpr const char* kToolVersion = "0.1.0";

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ValueType { count, u64, real, boolean, choice, real_list, text };

struct ConfigKey {
  std::string key;
  std::string flag;  // long option name without the leading dashes
  ValueType type;
  std::string default_value;
  std::vector<std::string> choices;  // ValueType::choice only
  std::string doc;
};

/// Every accepted key, in serialization order.
const std::vector<ConfigKey>& config_schema();

class ExperimentConfig {
 public:
  /// All keys at their documented defaults.
  ExperimentConfig();

  /// Reads `key = value` lines; `#` starts a comment. Unknown keys and
  /// malformed values throw ConfigError naming the line.
  static ExperimentConfig parse(std::istream& in, const std::string& source = "<config>");
  static ExperimentConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  /// Accepts "key=value".
  void set_assignment(const std::string& assignment);
  const std::string& get(const std::string& key) const;

  std::size_t get_count(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_real_list(const std::string& key) const;

  /// Resolved copy, one key per line with a version header.
  void write(std::ostream& out) const;

  IdentityWorld make_world() const;
  ExperimentSettings settings() const;
  GradcheckOptions gradcheck_options() const;
  std::uint64_t seed() const { return get_u64("seed"); }
  std::string out_dir() const { return get("out"); }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace cycas
