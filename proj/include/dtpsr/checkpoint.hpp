#pragma once

// Checkpoint files: JSON with the schedule, denoiser configuration, every
// named parameter, optimizer moments and the training iteration reached.

#include <filesystem>
#include <fstream>
#include <string>

#include "dtpsr/denoiser.hpp"
#include "dtpsr/diffusion.hpp"
#include "dtpsr/json_util.hpp"
#include "dtpsr/optim.hpp"

namespace dtpsr {

inline constexpr int kCheckpointFormatVersion = 1;

struct ScheduleConfig {
  int num_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int sampling_steps = 50;

  void validate() const {
    if (num_steps < 1) throw ValidationError("diffusion.num_steps must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
      throw ValidationError("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
    if (sampling_steps < 1 || sampling_steps > num_steps)
      throw ValidationError("diffusion.sampling_steps must lie in [1, num_steps]");
  }
  NoiseSchedule schedule() const { return make_schedule(num_steps, beta_start, beta_end); }
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

inline void to_json(Json& j, const ScheduleConfig& s) {
  j = Json{{"num_steps", s.num_steps},
           {"beta_start", s.beta_start},
           {"beta_end", s.beta_end},
           {"sampling_steps", s.sampling_steps}};
}

inline void from_json(const Json& j, ScheduleConfig& s) {
  constexpr std::string_view sec = "diffusion";
  reject_unknown_keys(j, {"num_steps", "beta_start", "beta_end", "sampling_steps"}, sec);
  read_opt(j, "num_steps", s.num_steps, sec);
  read_opt(j, "beta_start", s.beta_start, sec);
  read_opt(j, "beta_end", s.beta_end, sec);
  read_opt(j, "sampling_steps", s.sampling_steps, sec);
  s.validate();
}

struct Checkpoint {
  ScheduleConfig diffusion;
  DenoiserConfig denoiser;
  std::vector<std::pair<std::string, Tensor>> parameters;
  std::vector<Tensor> adam_m, adam_v;
  std::uint64_t adam_steps = 0;
  std::uint64_t iteration = 0;
};

namespace detail {
inline Json tensor_json(const Tensor& t) { return Json{{"shape", t.shape()}, {"data", t.vec()}}; }
inline Tensor tensor_from_json(const Json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}
}  // namespace detail

inline Checkpoint capture_checkpoint(const ScheduleConfig& diffusion, const Denoiser& model, const AdamW* opt,
                                     std::uint64_t iteration) {
  Checkpoint c{diffusion, model.config(), {}, {}, {}, 0, iteration};
  for (const auto& e : model.parameters().entries()) c.parameters.emplace_back(e.name, e.var->value);
  if (opt) {
    c.adam_m = opt->first_moments();
    c.adam_v = opt->second_moments();
    c.adam_steps = opt->steps();
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  Json params = Json::object();
  for (const auto& [name, t] : c.parameters) params[name] = detail::tensor_json(t);
  Json m = Json::array(), v = Json::array();
  for (const auto& t : c.adam_m) m.push_back(detail::tensor_json(t));
  for (const auto& t : c.adam_v) v.push_back(detail::tensor_json(t));
  const Json j{{"format_version", kCheckpointFormatVersion},
               {"diffusion", c.diffusion},
               {"denoiser", c.denoiser},
               {"iteration", c.iteration},
               {"parameters", params},
               {"optimizer", {{"steps", c.adam_steps}, {"m", m}, {"v", v}}}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    f << j.dump();
    if (!f.flush()) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  Checkpoint c;
  try {
    const Json j = Json::parse(f);
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw ValidationError("unsupported checkpoint format_version");
    c.diffusion = j.at("diffusion").get<ScheduleConfig>();
    c.denoiser = j.at("denoiser").get<DenoiserConfig>();
    c.iteration = j.at("iteration").get<std::uint64_t>();
    for (const auto& [name, t] : j.at("parameters").items())
      c.parameters.emplace_back(name, detail::tensor_from_json(t));
    const Json& opt = j.at("optimizer");
    c.adam_steps = opt.at("steps").get<std::uint64_t>();
    for (const auto& t : opt.at("m")) c.adam_m.push_back(detail::tensor_from_json(t));
    for (const auto& t : opt.at("v")) c.adam_v.push_back(detail::tensor_from_json(t));
  } catch (const Json::exception& e) {
    throw ValidationError("checkpoint " + path.string() + ": " + e.what());
  }
  return c;
}

/// Copies checkpoint tensors into `model` (and `opt` when given), by name.
inline void restore_checkpoint(const Checkpoint& c, Denoiser& model, AdamW* opt = nullptr) {
  auto& params = model.parameters();
  if (c.parameters.size() != params.entries().size())
    throw ValidationError("checkpoint parameter count does not match the model");
  for (const auto& [name, t] : c.parameters) {
    if (!params.contains(name)) throw ValidationError("checkpoint has unknown parameter " + name);
    Tensor& dst = params.get(name)->value;
    if (dst.shape() != t.shape()) throw ValidationError("checkpoint shape mismatch for " + name);
    dst = t;
  }
  if (!opt) return;
  if (c.adam_m.empty()) return;
  if (c.adam_m.size() != params.entries().size() || c.adam_v.size() != c.adam_m.size())
    throw ValidationError("checkpoint optimizer state does not match the model");
  for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
    if (c.adam_m[i].shape() != params.entries()[i].var->value.shape() ||
        c.adam_v[i].shape() != c.adam_m[i].shape())
      throw ValidationError("checkpoint optimizer moment shape mismatch");
    opt->first_moments()[i] = c.adam_m[i];
    opt->second_moments()[i] = c.adam_v[i];
  }
  opt->set_steps(c.adam_steps);
}

inline Denoiser model_from_checkpoint(const Checkpoint& c) {
  Denoiser model(c.denoiser);
  restore_checkpoint(c, model);
  return model;
}

}  // namespace dtpsr
