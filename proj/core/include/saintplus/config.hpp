#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace saintplus {

/// Flat `key = value` text with `[section]` headers and `#` comments.
///
/// Entries keep insertion order so that serialization is stable and a
/// parse -> serialize cycle of serializer output is byte-identical.
class KeyValueConfig {
 public:
  struct Entry {
    std::string section;
    std::string key;
    std::string value;
  };

  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  void set(std::string_view section, std::string_view key, std::string value);
  void set(std::string_view section, std::string_view key, std::int64_t value);
  void set(std::string_view section, std::string_view key, double value);
  void set_bool(std::string_view section, std::string_view key, bool value);

  bool contains(std::string_view section, std::string_view key) const;
  std::optional<std::string> get(std::string_view section, std::string_view key) const;

  // Typed accessors throw ConfigError on a malformed value; the fallback is
  // returned when the key is absent.
  std::string get_string(std::string_view section, std::string_view key,
                         std::string_view fallback) const;
  std::int64_t get_int(std::string_view section, std::string_view key, std::int64_t fallback) const;
  /// Full 64-bit unsigned range, for seeds. Signs are rejected.
  std::uint64_t get_u64(std::string_view section, std::string_view key, std::uint64_t fallback) const;
  double get_double(std::string_view section, std::string_view key, double fallback) const;
  bool get_bool(std::string_view section, std::string_view key, bool fallback) const;

  // Required variants throw ConfigError when the key is missing.
  std::string require_string(std::string_view section, std::string_view key) const;
  std::int64_t require_int(std::string_view section, std::string_view key) const;
  double require_double(std::string_view section, std::string_view key) const;

  /// Copies every entry of `other` over this config.
  void merge(const KeyValueConfig& other);

  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  const Entry* find(std::string_view section, std::string_view key) const;

  std::vector<Entry> entries_;
};

/// Shortest round-trippable decimal form of a double.
std::string format_double(double value);

/// 64-bit FNV-1a digest.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace saintplus
