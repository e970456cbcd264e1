#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sfae {

/// A required key is absent or its value does not parse.
class KeyError : public std::runtime_error {
 public:
  KeyError(std::string key, const std::string& what) : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Flat `key = value` text, one pair per line. `#` starts a comment,
/// surrounding whitespace is ignored, duplicate keys are an error.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& source = "<text>");
  static KeyValues load(const std::string& path);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;

  std::optional<std::string> find(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  std::string to_text() const;

 private:
  std::string source_;
  std::map<std::string, std::string> values_;
};

}  // namespace sfae
