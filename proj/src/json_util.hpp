#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "pucl/errors.hpp"

namespace pucl::detail {

// Reads `doc[key]` as T; a missing key or wrong type raises ConfigError
// naming the dotted field path.
template <typename T>
T require(const nlohmann::json& doc, const std::string& key, const std::string& path) {
  const std::string field = path.empty() ? key : path + "." + key;
  if (!doc.is_object() || !doc.contains(key)) {
    throw ConfigError("missing config field '" + field + "'");
  }
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + field + "' has the wrong type");
  }
}

inline const nlohmann::json& require_object(const nlohmann::json& doc, const std::string& key,
                                            const std::string& path) {
  const std::string field = path.empty() ? key : path + "." + key;
  if (!doc.is_object() || !doc.contains(key)) {
    throw ConfigError("missing config field '" + field + "'");
  }
  if (!doc.at(key).is_object()) throw ConfigError("config field '" + field + "' must be an object");
  return doc.at(key);
}

}  // namespace pucl::detail
