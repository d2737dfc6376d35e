// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace sdflow::data {

// Flat key=value map. Each value remembers where it came from so the
// resolved config can be logged with its precedence.
class KeyValueConfig {
 public:
  enum class Origin { kDefault, kFile, kFlag };

  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value, Origin origin = Origin::kFlag);
  // Sets only if absent.
  void set_default(const std::string& key, const std::string& value);
  // Entries of `other` override ours.
  void merge(const KeyValueConfig& other);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  Origin origin(const std::string& key) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  // Sorted key=value lines; the serialized form parsed back by parse().
  std::string to_text() const;
  std::string describe() const;  // key=value (origin) lines for logging

  bool operator==(const KeyValueConfig& o) const { return values_ == o.values_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, Origin> origins_;
};

std::string format_double(double v);

}  // namespace sdflow::data
