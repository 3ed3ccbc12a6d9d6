#pragma once

#include <initializer_list>
#include <string>

#include "hiss/errors.hpp"
#include "json.hpp"

namespace hiss::detail {

using Json = nlohmann::json;

inline void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
}

inline void reject_unknown(const Json& j, const std::string& where, std::initializer_list<const char*> keys) {
  require_object(j, where);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
  }
}

template <class T>
T get_req(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("missing key '" + std::string(key) + "' in " + where);
  return get_or<T>(j, key, T{}, where);
}

inline std::size_t get_size(const Json& j, const char* key, std::size_t fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("'" + std::string(key) + "' in " + where + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

inline Json parse_json(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace hiss::detail
