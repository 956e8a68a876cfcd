#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace dtpsr {

using Json = nlohmann::json;

/// Raised for malformed or out-of-range configuration and file contents.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void reject_unknown_keys(const Json& j, std::initializer_list<std::string_view> known,
                                std::string_view section) {
  if (!j.is_object()) throw ValidationError(std::string(section) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ValidationError(std::string(section) + ": unknown key '" + it.key() + "'");
}

/// Reads j[key] into out when present; type errors become ValidationError.
template <typename T>
void read_opt(const Json& j, std::string_view key, T& out, std::string_view section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string(section) + "." + std::string(key) + ": " + e.what());
  }
}

/// Doubles that may be infinite are written as the strings "inf"/"-inf".
inline Json real_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double real_from_json(const Json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ValidationError("expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace dtpsr
