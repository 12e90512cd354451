#pragma once

// JSON views of the module config structs. Readers apply only the keys that
// are present and reject unknown keys or wrong types with ConfigError, so a
// partial document overrides defaults.

#include <nlohmann/json.hpp>
#include <type_traits>
#include <vector>

#include "trajret/classifiers.hpp"
#include "trajret/encoder.hpp"
#include "trajret/error.hpp"
#include "trajret/oracle.hpp"
#include "trajret/synthdata.hpp"

namespace trajret {

nlohmann::json to_json(const CohortSpec& s);
nlohmann::json to_json(const EncoderConfig& c);
nlohmann::json to_json(const OracleConfig& c);
nlohmann::json to_json(const MlpConfig& c);

void merge_json(const nlohmann::json& j, CohortSpec& s, const std::string& section = "cohort");
void merge_json(const nlohmann::json& j, EncoderConfig& c, const std::string& section = "encoder");
void merge_json(const nlohmann::json& j, OracleConfig& c, const std::string& section = "oracle");
void merge_json(const nlohmann::json& j, MlpConfig& c, const std::string& section = "mlp");

namespace detail {

// nlohmann converts 2.5 to an int and 1 to a bool without complaint.
template <typename T>
bool json_kind_matches(const nlohmann::json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v.is_boolean();
  } else if constexpr (std::is_integral_v<T>) {
    return std::is_unsigned_v<T> ? v.is_number_unsigned() : v.is_number_integer();
  } else if constexpr (std::is_floating_point_v<T>) {
    return v.is_number();
  } else {
    return true;
  }
}

template <typename T>
bool json_kind_matches_all(const nlohmann::json& v, const std::vector<T>*) {
  if (!v.is_array()) return false;
  for (const auto& e : v) {
    if (!json_kind_matches<T>(e)) return false;
  }
  return true;
}

template <typename T>
bool json_kind_matches_all(const nlohmann::json& v, const T*) {
  return json_kind_matches<T>(v);
}

}  // namespace detail

/// Tracks which keys of an object were read; finish() rejects the rest.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string section);

  bool has(const std::string& key) const { return j_.contains(key); }
  const nlohmann::json& raw(const std::string& key);

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.push_back(key);
    if (!detail::json_kind_matches_all(j_.at(key), static_cast<const T*>(nullptr))) {
      throw ConfigError(section_, section_ + "." + key, "has the wrong type");
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(section_, section_ + "." + key, "has the wrong type");
    }
  }

  void finish() const;
  const std::string& section() const { return section_; }

 private:
  const nlohmann::json& j_;
  std::string section_;
  std::vector<std::string> seen_;
};

}  // namespace trajret
