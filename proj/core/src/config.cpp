#include "saintplus/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "saintplus/errors.hpp"

namespace saintplus {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string qualified(std::string_view section, std::string_view key) {
  return std::string(section) + "." + std::string(key);
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig cfg;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    cfg.set(section, key, std::string(trim(line.substr(eq + 1))));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string KeyValueConfig::serialize() const {
  // Group by section in first-appearance order.
  std::vector<std::string> sections;
  for (const auto& e : entries_)
    if (std::find(sections.begin(), sections.end(), e.section) == sections.end())
      sections.push_back(e.section);
  std::ostringstream os;
  bool first = true;
  for (const auto& s : sections) {
    if (!s.empty()) {
      if (!first) os << '\n';
      os << '[' << s << "]\n";
    }
    first = false;
    for (const auto& e : entries_)
      if (e.section == s) os << e.key << " = " << e.value << '\n';
  }
  return os.str();
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << serialize();
}

const KeyValueConfig::Entry* KeyValueConfig::find(std::string_view section,
                                                  std::string_view key) const {
  for (const auto& e : entries_)
    if (e.section == section && e.key == key) return &e;
  return nullptr;
}

void KeyValueConfig::set(std::string_view section, std::string_view key, std::string value) {
  for (auto& e : entries_) {
    if (e.section == section && e.key == key) {
      e.value = std::move(value);
      return;
    }
  }
  entries_.push_back(Entry{std::string(section), std::string(key), std::move(value)});
}

void KeyValueConfig::set(std::string_view section, std::string_view key, std::int64_t value) {
  set(section, key, std::to_string(value));
}

void KeyValueConfig::set(std::string_view section, std::string_view key, double value) {
  set(section, key, format_double(value));
}

void KeyValueConfig::set_bool(std::string_view section, std::string_view key, bool value) {
  set(section, key, std::string(value ? "true" : "false"));
}

bool KeyValueConfig::contains(std::string_view section, std::string_view key) const {
  return find(section, key) != nullptr;
}

std::optional<std::string> KeyValueConfig::get(std::string_view section,
                                               std::string_view key) const {
  if (const auto* e = find(section, key)) return e->value;
  return std::nullopt;
}

std::string KeyValueConfig::get_string(std::string_view section, std::string_view key,
                                       std::string_view fallback) const {
  const auto* e = find(section, key);
  return e ? e->value : std::string(fallback);
}

std::int64_t KeyValueConfig::get_int(std::string_view section, std::string_view key,
                                     std::int64_t fallback) const {
  const auto* e = find(section, key);
  if (!e) return fallback;
  std::int64_t v = 0;
  const auto* end = e->value.data() + e->value.size();
  const auto res = std::from_chars(e->value.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError("config key " + qualified(section, key) + ": expected an integer, got '" +
                      e->value + "'");
  }
  return v;
}

std::uint64_t KeyValueConfig::get_u64(std::string_view section, std::string_view key,
                                      std::uint64_t fallback) const {
  const auto* e = find(section, key);
  if (!e) return fallback;
  std::uint64_t v = 0;
  const auto* end = e->value.data() + e->value.size();
  const auto res = std::from_chars(e->value.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError("config key " + qualified(section, key) +
                      ": expected an unsigned integer, got '" + e->value + "'");
  }
  return v;
}

double KeyValueConfig::get_double(std::string_view section, std::string_view key,
                                  double fallback) const {
  const auto* e = find(section, key);
  if (!e) return fallback;
  double v = 0;
  const auto* end = e->value.data() + e->value.size();
  const auto res = std::from_chars(e->value.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError("config key " + qualified(section, key) + ": expected a number, got '" +
                      e->value + "'");
  }
  return v;
}

bool KeyValueConfig::get_bool(std::string_view section, std::string_view key,
                              bool fallback) const {
  const auto* e = find(section, key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no") return false;
  throw ConfigError("config key " + qualified(section, key) + ": expected a boolean, got '" +
                    e->value + "'");
}

std::string KeyValueConfig::require_string(std::string_view section, std::string_view key) const {
  const auto* e = find(section, key);
  if (!e) throw ConfigError("missing config key " + qualified(section, key));
  return e->value;
}

std::int64_t KeyValueConfig::require_int(std::string_view section, std::string_view key) const {
  if (!find(section, key)) throw ConfigError("missing config key " + qualified(section, key));
  return get_int(section, key, 0);
}

double KeyValueConfig::require_double(std::string_view section, std::string_view key) const {
  if (!find(section, key)) throw ConfigError("missing config key " + qualified(section, key));
  return get_double(section, key, 0.0);
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& e : other.entries_) set(e.section, e.key, e.value);
}

}  // namespace saintplus
