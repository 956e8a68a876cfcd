#pragma once

// One run configuration for every command. Sources are merged key by key
// with precedence: command line > environment > config file > defaults.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dtpsr/ablation.hpp"

extern char** environ;

namespace dtpsr {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kConfigEnvVar = "DTPSR_CONFIG";
inline constexpr const char* kEnvPrefix = "DTPSR_";

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  ScheduleConfig diffusion;
  DenoiserConfig denoiser;
  GuidanceSpec guidance;
  DatasetConfig dataset;
  EvalConfig eval;
  TrainConfig train;

  void validate() const {
    if (schema_version != kConfigSchemaVersion)
      throw ValidationError("unsupported config schema_version " + std::to_string(schema_version));
    diffusion.validate();
    denoiser.validate();
    guidance.validate();
    dataset.validate();
    eval.validate();
    train.validate();
    const auto f = static_cast<int>(dataset.downscale_factor);
    if (denoiser.latent_channels != 3 * f * f)
      throw ValidationError("denoiser.latent_channels must be 3 * dataset.downscale_factor^2");
  }
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline const std::vector<std::string>& config_sections() {
  static const std::vector<std::string> s{"diffusion", "denoiser", "guidance", "dataset", "eval", "train"};
  return s;
}

inline void to_json(Json& j, const RunConfig& c) {
  j = Json{{"schema_version", c.schema_version}, {"diffusion", c.diffusion}, {"denoiser", c.denoiser},
           {"guidance", c.guidance},             {"dataset", c.dataset},     {"eval", c.eval},
           {"train", c.train}};
}

inline void from_json(const Json& j, RunConfig& c) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  reject_unknown_keys(j, {"schema_version", "diffusion", "denoiser", "guidance", "dataset", "eval", "train"},
                      "config");
  read_opt(j, "schema_version", c.schema_version, "config");
  auto section = [&j](const char* name, auto& out) {
    if (auto it = j.find(name); it != j.end()) {
      if (!it->is_object()) throw ValidationError(std::string(name) + " must be an object");
      it->get_to(out);
    }
  };
  section("diffusion", c.diffusion);
  section("denoiser", c.denoiser);
  section("guidance", c.guidance);
  section("dataset", c.dataset);
  section("eval", c.eval);
  section("train", c.train);
  c.validate();
}

/// A single `section.key` assignment from the environment or command line.
struct ConfigOverride {
  std::string section;
  std::string key;
  std::string value;
};

/// Values that parse as JSON keep their type; anything else is a string.
inline Json override_value(const std::string& v) {
  try {
    return Json::parse(v);
  } catch (const Json::exception&) {
    return Json(v);
  }
}

/// Parses "section.key=value".
inline ConfigOverride parse_override(const std::string& s) {
  const auto eq = s.find('='), dot = s.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 || dot + 1 == eq)
    throw ValidationError("override '" + s + "' is not of the form section.key=value");
  return {s.substr(0, dot), s.substr(dot + 1, eq - dot - 1), s.substr(eq + 1)};
}

/// DTPSR_<SECTION>_<KEY>=value for every variable with the prefix, except
/// DTPSR_CONFIG.
inline std::vector<ConfigOverride> environment_overrides(const std::map<std::string, std::string>& env) {
  std::vector<ConfigOverride> out;
  const std::string prefix = kEnvPrefix;
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0 || name == kConfigEnvVar) continue;
    std::string rest = name.substr(prefix.size());
    std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char c) { return std::tolower(c); });
    const auto us = rest.find('_');
    if (us == std::string::npos || us + 1 == rest.size())
      throw ValidationError("environment variable " + name + " does not name a config field");
    out.push_back({rest.substr(0, us), rest.substr(us + 1), value});
  }
  return out;
}

inline std::map<std::string, std::string> process_environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv = *e;
    const auto eq = kv.find('=');
    if (eq != std::string::npos) env[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return env;
}

inline Json read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config file " + path.string());
  try {
    return Json::parse(f);
  } catch (const Json::exception& e) {
    throw ValidationError("config file " + path.string() + ": " + e.what());
  }
}

inline void apply_override(Json& j, const ConfigOverride& o) {
  if (o.section == "schema_version" || std::find(config_sections().begin(), config_sections().end(), o.section) ==
                                           config_sections().end())
    throw ValidationError("unknown config section '" + o.section + "'");
  j[o.section][o.key] = override_value(o.value);
}

/// Merges defaults, an optional file, environment and command-line
/// overrides, then validates the result.
inline RunConfig load_run_config(const std::filesystem::path& file, const std::map<std::string, std::string>& env,
                                 const std::vector<ConfigOverride>& cli) {
  Json j = RunConfig{};
  std::filesystem::path path = file;
  if (path.empty())
    if (auto it = env.find(kConfigEnvVar); it != env.end()) path = it->second;
  if (!path.empty()) {
    const Json f = read_config_file(path);
    if (!f.is_object()) throw ValidationError("config file must hold a JSON object");
    for (const auto& [k, v] : f.items()) {
      if (v.is_object() && j.contains(k) && j[k].is_object()) j[k].update(v);
      else j[k] = v;
    }
  }
  for (const auto& o : environment_overrides(env)) apply_override(j, o);
  for (const auto& o : cli) apply_override(j, o);
  return j.get<RunConfig>();
}

inline std::string serialize_config(const RunConfig& c) { return Json(c).dump(2); }

inline RunConfig parse_config(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return j.get<RunConfig>();
}

}  // namespace dtpsr
