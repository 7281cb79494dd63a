#pragma once

// Plain-text `key = value` configuration files. Blank lines and lines starting
// with '#' are ignored; unknown keys are rejected.

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "affloop/error.hpp"
#include "affloop/text.hpp"

namespace affloop {

struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

inline std::vector<KvEntry> parse_kv(std::string_view bytes) {
  std::vector<KvEntry> out;
  text::for_each_line(bytes, [&](std::size_t lineno, std::string_view line) {
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#') return;
    auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError(lineno, "expected 'key = value'");
    auto key = text::trim(t.substr(0, eq));
    auto value = text::trim(t.substr(eq + 1));
    if (key.empty()) throw ParseError(lineno, "empty key");
    out.push_back({std::string(key), std::string(value), lineno});
  });
  return out;
}

/// Setter table for one configuration struct. Keys with a prefix handler
/// (e.g. "gain.") receive the remainder of the key.
class KvBinder {
 public:
  using Setter = std::function<void(std::string_view)>;
  using PrefixSetter = std::function<void(std::string_view suffix, std::string_view value)>;

  KvBinder& number(std::string key, double& target) {
    setters_[key] = [&target, k = key](std::string_view v) {
      auto d = text::to_double(v);
      if (!d) throw UsageError("config key '" + k + "' expects a number, got '" + std::string(v) + "'");
      target = *d;
    };
    return *this;
  }

  KvBinder& integer(std::string key, long long& target) {
    setters_[key] = [&target, k = key](std::string_view v) {
      auto d = text::to_int(v);
      if (!d) throw UsageError("config key '" + k + "' expects an integer, got '" + std::string(v) + "'");
      target = *d;
    };
    return *this;
  }

  KvBinder& custom(std::string key, Setter fn) {
    setters_[std::move(key)] = std::move(fn);
    return *this;
  }

  KvBinder& prefix(std::string pre, PrefixSetter fn) {
    prefixes_.emplace_back(std::move(pre), std::move(fn));
    return *this;
  }

  [[nodiscard]] bool knows(std::string_view key) const {
    if (setters_.count(std::string(key))) return true;
    for (const auto& [pre, fn] : prefixes_)
      if (key.substr(0, pre.size()) == pre && key.size() > pre.size()) return true;
    return false;
  }

  void apply(std::string_view key, std::string_view value) const {
    if (auto it = setters_.find(std::string(key)); it != setters_.end()) {
      it->second(value);
      return;
    }
    for (const auto& [pre, fn] : prefixes_)
      if (key.substr(0, pre.size()) == pre && key.size() > pre.size()) {
        fn(key.substr(pre.size()), value);
        return;
      }
    throw UsageError("unknown config key '" + std::string(key) + "'");
  }

  void apply_all(const std::vector<KvEntry>& entries) const {
    for (const auto& e : entries) {
      try {
        apply(e.key, e.value);
      } catch (const UsageError& err) {
        throw UsageError("line " + std::to_string(e.line) + ": " + err.what());
      }
    }
  }

 private:
  std::map<std::string, Setter> setters_;
  std::vector<std::pair<std::string, PrefixSetter>> prefixes_;
};

}  // namespace affloop
