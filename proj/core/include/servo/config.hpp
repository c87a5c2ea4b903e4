#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace servo {

// Flat key-value run configuration. Every key has a registered default; setting
// an unregistered key is a ConfigError.
//
// File syntax: one `key = value` per line, `#` starts a comment. List values are
// comma separated.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::filesystem::path& path);

  // Applies `key=value` (CLI override syntax).
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  void merge_file(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  const std::string& raw(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;
  const std::string& get_string(const std::string& key) const { return raw(key); }

  // Fully resolved config, sorted by key, in the same syntax `from_file` reads.
  std::string dump() const;
  void write(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  static const std::map<std::string, std::string>& defaults();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace servo
