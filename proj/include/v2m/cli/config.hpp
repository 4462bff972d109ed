#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace v2m::cli {

/// Flat key/value run configuration with dotted keys ("adaptor.strategy").
/// Precedence: built-in defaults < config file < command-line flags.
class Config {
 public:
  Config();

  static const nlohmann::json& defaults();

  /// Merges a flat JSON object; unknown keys and type changes are config errors.
  void merge(const nlohmann::json& flat);
  void merge_file(const std::filesystem::path& path);
  /// Parses `value` according to the default's type.
  void set(const std::string& key, const std::string& value);
  template <typename T>
  void set_value(const std::string& key, const T& value) {
    merge(nlohmann::json{{key, value}});
  }

  template <typename T>
  T get(const std::string& key) const {
    return at(key).get<T>();
  }

  const nlohmann::json& json() const noexcept { return values_; }
  void write_resolved(const std::filesystem::path& dir) const;

 private:
  const nlohmann::json& at(const std::string& key) const;
  nlohmann::json values_;
};

}  // namespace v2m::cli
