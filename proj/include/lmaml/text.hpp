#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace lmaml {

/// Shortest decimal that round-trips to the same double.
std::string format_double(double value);
/// Fixed-point with `digits` decimals.
std::string format_fixed(double value, int digits);

double parse_double(std::string_view text);
std::uint64_t parse_uint(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

/// Canonical "key = value" text: one pair per line, keys sorted, `#` comments
/// and blank lines ignored on input.
class KeyValueText {
 public:
  static KeyValueText parse(std::string_view text);

  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string str() const;

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace lmaml
