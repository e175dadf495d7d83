#ifndef PREFUSION_JSON_UTIL_HPP
#define PREFUSION_JSON_UTIL_HPP

#include "json.hpp"

#include <Eigen/Dense>

#include <initializer_list>
#include <string>
#include <string_view>

namespace prefusion::json_util {

using nlohmann::json;

// Small typed accessors over nlohmann::json that raise the caller's error type
// (SpecError, ConfigError, ...) with the offending key path.

template <class Err>
void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw Err(where + " must be a JSON object");
}

template <class Err>
void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& where) {
  require_object<Err>(j, where);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (std::string_view k : allowed) known = known || it.key() == k;
    if (!known) throw Err("unknown key '" + it.key() + "' in " + where);
  }
}

template <class Err>
double get_number(const json& j, const char* key, double fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) throw Err(where + "." + key + " must be a number");
  return v.get<double>();
}

template <class Err>
double require_number(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Err("missing " + where + "." + key);
  return get_number<Err>(j, key, 0.0, where);
}

template <class Err>
long long get_integer(const json& j, const char* key, long long fallback,
                      const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer()) throw Err(where + "." + key + " must be an integer");
  return v.get<long long>();
}

template <class Err>
std::string get_string(const json& j, const char* key, const std::string& fallback,
                       const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string()) throw Err(where + "." + key + " must be a string");
  return v.get<std::string>();
}

template <class Err>
bool get_bool(const json& j, const char* key, bool fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_boolean()) throw Err(where + "." + key + " must be a boolean");
  return v.get<bool>();
}

template <class Err>
Eigen::Vector3d get_vec3(const json& j, const char* key, const Eigen::Vector3d& fallback,
                         const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 3)
    throw Err(where + "." + key + " must be an array of 3 numbers");
  Eigen::Vector3d out;
  for (int i = 0; i < 3; ++i) {
    if (!v[i].is_number()) throw Err(where + "." + key + " must be an array of 3 numbers");
    out[i] = v[i].get<double>();
  }
  return out;
}

inline json vec3_to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace prefusion::json_util

#endif  // PREFUSION_JSON_UTIL_HPP
