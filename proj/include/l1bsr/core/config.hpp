#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "l1bsr/core/errors.hpp"

namespace l1bsr {

/// Reads optional keys from a JSON object and rejects any key not read.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <class T>
  StrictObject& get(const char* key, T& dst) {
    used_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      dst = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(where_ + "." + key + ": invalid value " + j_.at(key).dump());
    }
    return *this;
  }

  bool has(const char* key) const { return j_.contains(key); }
  const nlohmann::json& at(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ConfigError("unknown configuration key: " + where_ + "." + k);
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> used_;
};

}  // namespace l1bsr
