#pragma once

// Ordered key=value text records used for manifests, metric reports and
// config files. One entry per line, '#' starts a comment line.

#include <charconv>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coherent/io.hpp"

namespace coherent {

// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

class KeyValueRecord {
 public:
  void set(std::string key, std::string value) {
    for (auto& [k, v] : entries_) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    entries_.emplace_back(std::move(key), std::move(value));
  }
  void set_number(std::string key, double value) { set(std::move(key), format_number(value)); }

  std::optional<std::string> get(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
      if (k == key) return v;
    }
    return std::nullopt;
  }
  std::optional<double> get_number(std::string_view key) const {
    const auto v = get(key);
    if (!v) return std::nullopt;
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || ptr != v->data() + v->size()) {
      throw FormatError("key '" + std::string(key) + "' is not a number: " + *v);
    }
    return out;
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  void merge(const KeyValueRecord& other) {
    for (const auto& [k, v] : other.entries_) set(k, v);
  }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
  }

  static KeyValueRecord parse(std::string_view text) {
    KeyValueRecord r;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      const auto first = line.find_first_not_of(' ');
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw FormatError("line " + std::to_string(lineno) + ": expected key=value");
      }
      std::string key = line.substr(first, eq - first);
      while (!key.empty() && key.back() == ' ') key.pop_back();
      auto vpos = line.find_first_not_of(' ', eq + 1);
      r.set(std::move(key), vpos == std::string::npos ? std::string() : line.substr(vpos));
    }
    return r;
  }

  static KeyValueRecord read(const std::filesystem::path& path) { return parse(read_file(path)); }
  void write(const std::filesystem::path& path) const { atomic_write(path, to_string()); }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace coherent
