#pragma once

// Noise-prediction training over manifest records.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "dtpsr/checkpoint.hpp"
#include "dtpsr/dataset.hpp"
#include "dtpsr/denoiser.hpp"
#include "dtpsr/optim.hpp"
#include "dtpsr/prior_encoding.hpp"

namespace dtpsr {

/// One record in model space.
struct TrainingExample {
  std::string record_id;
  LatentTensor z0;
  LatentTensor z_lr;
  PriorBundle priors;
  LrFeatureTokens lr_tokens;
  Image hr;
  Image lr;
};

struct Encoders {
  const TextEncoder& text;
  const ImageFeatureEncoder& image;
  LatentCodec codec{4};
  TextPooling pooling = TextPooling::kPooled;
};

inline TrainingExample make_example(std::string id, Image hr, Image lr, const CaptionSet& captions,
                                    const Encoders& enc) {
  if (hr.width != lr.width * enc.codec.factor() || hr.height != lr.height * enc.codec.factor())
    throw ShapeError(id + ": HR size must be " + std::to_string(enc.codec.factor()) + "x the LR size");
  TrainingExample ex;
  ex.record_id = std::move(id);
  ex.z0 = enc.codec.encode(hr);
  ex.z_lr = enc.codec.encode_lr(lr, enc.codec.factor());
  ex.priors = encode_priors(captions, enc.text, enc.pooling);
  ex.lr_tokens = encode_lr_features(lr, enc.image);
  ex.hr = std::move(hr);
  ex.lr = std::move(lr);
  return ex;
}

inline std::vector<TrainingExample> load_examples(const Manifest& m, const Encoders& enc,
                                                  std::size_t limit = 0) {
  std::vector<TrainingExample> out;
  for (const auto& r : m.records) {
    if (limit && out.size() == limit) break;
    out.push_back(make_example(r.record_id, read_ppm(m.resolve(r.hr_path)), read_ppm(m.resolve(r.lr_path)),
                               r.captions, enc));
  }
  return out;
}

struct TrainConfig {
  std::size_t batch_size = 4;
  double learning_rate = 2e-3;
  std::uint64_t iterations = 2000;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  std::uint64_t checkpoint_every = 500;  // 0: only at the end

  void validate() const {
    if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw ValidationError("train.learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ValidationError("train.weight_decay must be >= 0");
    if (!(grad_clip >= 0.0)) throw ValidationError("train.grad_clip must be >= 0");
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(Json& j, const TrainConfig& t) {
  j = Json{{"batch_size", t.batch_size},         {"learning_rate", t.learning_rate},
           {"iterations", t.iterations},         {"seed", t.seed},
           {"weight_decay", t.weight_decay},     {"grad_clip", t.grad_clip},
           {"checkpoint_every", t.checkpoint_every}};
}

inline void from_json(const Json& j, TrainConfig& t) {
  constexpr std::string_view s = "train";
  reject_unknown_keys(
      j, {"batch_size", "learning_rate", "iterations", "seed", "weight_decay", "grad_clip", "checkpoint_every"}, s);
  read_opt(j, "batch_size", t.batch_size, s);
  read_opt(j, "learning_rate", t.learning_rate, s);
  read_opt(j, "iterations", t.iterations, s);
  read_opt(j, "seed", t.seed, s);
  read_opt(j, "weight_decay", t.weight_decay, s);
  read_opt(j, "grad_clip", t.grad_clip, s);
  read_opt(j, "checkpoint_every", t.checkpoint_every, s);
  t.validate();
}

/// The (example, timestep, noise) triple used at position `slot` of the
/// batch drawn for iteration `iter`; a pure function of the seed.
struct Draw {
  std::size_t example;
  int t;
  LatentTensor eps;
};

inline Draw training_draw(std::uint64_t seed, std::uint64_t iter, std::size_t slot, std::size_t batch,
                          std::size_t n_examples, int num_steps, const Shape& latent_shape) {
  const std::uint64_t i = iter * batch + slot;
  const CounterRng pick(seed, "train.example"), time(seed, "train.timestep");
  return {static_cast<std::size_t>(pick.below(i, n_examples)),
          static_cast<int>(time.below(i, static_cast<std::uint64_t>(num_steps))),
          normal_tensor(latent_shape, seed, fnv1a64("train.eps") + i)};
}

struct LossPoint {
  std::uint64_t iteration;
  double loss;
  double grad_norm;
};

inline std::string loss_record(const LossPoint& p) {
  return Json{{"iteration", p.iteration}, {"loss", p.loss}, {"grad_norm", p.grad_norm}}.dump();
}

class Trainer {
 public:
  Trainer(Denoiser& model, const ScheduleConfig& diffusion, TrainConfig cfg)
      : model_(model),
        diffusion_(diffusion),
        schedule_(diffusion.schedule()),
        cfg_(cfg),
        opt_(model.parameters(), AdamWConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay, cfg.grad_clip}) {
    cfg_.validate();
  }

  AdamW& optimizer() { return opt_; }
  std::uint64_t iteration() const { return iteration_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  void resume(const Checkpoint& c) {
    restore_checkpoint(c, model_, &opt_);
    iteration_ = c.iteration;
  }
  Checkpoint checkpoint() const { return capture_checkpoint(diffusion_, model_, &opt_, iteration_); }

  /// One optimizer update on the batch for the current iteration.
  LossPoint step(const std::vector<TrainingExample>& data) {
    if (data.empty()) throw ValidationError("training set is empty");
    model_.parameters().zero_grad();
    double total = 0.0;
    const double w = 1.0 / static_cast<double>(cfg_.batch_size);
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
      const Draw d = training_draw(cfg_.seed, iteration_, b, cfg_.batch_size, data.size(), schedule_.num_steps,
                                   data.front().z0.shape());
      const TrainingExample& ex = data[d.example];
      ad::Graph g(true);
      const ad::Var loss = model_.loss(g, ex.z0, ex.z_lr, d.t, d.eps, schedule_, ex.priors, ex.lr_tokens);
      const double v = loss->value[0];
      if (!std::isfinite(v))
        throw NumericalError("non-finite loss at iteration " + std::to_string(iteration_) + " (record " +
                             ex.record_id + ", t=" + std::to_string(d.t) + ")");
      total += v;
      g.backward(loss, w);
    }
    const double norm = opt_.step();
    return {iteration_++, total * w, norm};
  }

  /// Runs until `cfg.iterations` total iterations, appending one loss record
  /// per iteration to `log_path` (if non-empty) and writing periodic
  /// checkpoints to `ckpt_path` (if non-empty).
  std::vector<LossPoint> run(const std::vector<TrainingExample>& data, const std::filesystem::path& log_path = {},
                             const std::filesystem::path& ckpt_path = {},
                             const std::function<void(const LossPoint&)>& on_step = {}) {
    std::vector<LossPoint> curve;
    std::ofstream log;
    if (!log_path.empty()) {
      if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
      log.open(log_path, std::ios::app);
      if (!log) throw std::runtime_error("cannot open loss log " + log_path.string());
    }
    while (iteration_ < cfg_.iterations) {
      const LossPoint p = step(data);
      curve.push_back(p);
      if (log) log << loss_record(p) << '\n' << std::flush;
      if (on_step) on_step(p);
      if (!ckpt_path.empty() && cfg_.checkpoint_every && iteration_ % cfg_.checkpoint_every == 0)
        save_checkpoint(ckpt_path, checkpoint());
    }
    if (!ckpt_path.empty()) save_checkpoint(ckpt_path, checkpoint());
    return curve;
  }

 private:
  Denoiser& model_;
  ScheduleConfig diffusion_;
  NoiseSchedule schedule_;
  TrainConfig cfg_;
  AdamW opt_;
  std::uint64_t iteration_ = 0;
};

/// Mean loss over a fixed set of draws (independent of the training stream).
inline double evaluation_loss(const Denoiser& model, const NoiseSchedule& schedule,
                              const std::vector<TrainingExample>& data, std::size_t draws_per_example,
                              std::uint64_t seed) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t e = 0; e < data.size(); ++e)
    for (std::size_t k = 0; k < draws_per_example; ++k) {
      const Draw d = training_draw(seed ^ 0x5eedULL, e, k, draws_per_example, 1, schedule.num_steps,
                                   data[e].z0.shape());
      ad::Graph g(false);
      total += model.loss(g, data[e].z0, data[e].z_lr, d.t, d.eps, schedule, data[e].priors, data[e].lr_tokens)
                   ->value[0];
      ++n;
    }
  return total / static_cast<double>(n);
}

}  // namespace dtpsr
