#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mixacm {

/// Flat key=value configuration file: one `ns.key = value` pair per line,
/// `#` comments, blank lines ignored. Every key must be consumed by a typed
/// getter; leftover keys are a hard error.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig from_file(const std::string& path);
  static KeyValueConfig from_string(const std::string& text);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key, const std::string& fallback);
  std::int64_t get_int(const std::string& key, std::int64_t fallback);
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback);
  /// Accepts plain decimals and fraction strings like "8/255".
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback);

  /// Throws ConfigError when any key was never consumed.
  void reject_unknown_keys() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

double parse_fraction(const std::string& text);

}  // namespace mixacm
