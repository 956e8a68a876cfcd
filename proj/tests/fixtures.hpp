#pragma once

// Small models and conditioning shared by the unit and acceptance tests.

#include <string>

#include "dtpsr/checkpoint.hpp"
#include "dtpsr/denoiser.hpp"
#include "dtpsr/diffusion.hpp"
#include "test_util.hpp"

namespace dtpsr::test {

/// About 1.5k parameters: two levels, every branch present.
inline DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.latent_channels = 2;
  c.cond_channels = 2;
  c.base_channels = 3;
  c.depth = 2;
  c.embed_dim = 4;
  c.attention_heads = 2;
  c.text_dim = 4;
  c.lr_token_dim = 3;
  c.time_embed_dim = 4;
  c.init_seed = 11;
  return c;
}

/// Smallest model that works on 4x codec latents (48 channels).
inline DenoiserConfig codec_config() {
  DenoiserConfig c;
  c.base_channels = 4;
  c.depth = 1;
  c.embed_dim = 8;
  c.attention_heads = 2;
  c.time_embed_dim = 8;
  c.lr_token_dim = 8;
  return c;
}

/// Gates (zero at initialisation) set to random non-zero values so that
/// every branch contributes and receives gradient.
inline void randomize_gates(Denoiser& m, std::uint64_t seed) {
  const CounterRng rng(seed, "test.gates");
  std::uint64_t i = 0;
  for (auto& e : m.parameters().entries())
    if (e.name.ends_with(".gate") || e.name.starts_with("denoiser.out_gain"))
      for (double& v : e.var->value.vec()) v = 0.3 + 0.5 * rng.uniform(i++);
}

/// Saves an untrained model with randomized gates as a checkpoint.
inline void write_random_checkpoint(const std::filesystem::path& path, const DenoiserConfig& cfg,
                                    std::uint64_t seed, const ScheduleConfig& diffusion = {}) {
  Denoiser m(cfg);
  randomize_gates(m, seed);
  save_checkpoint(path, capture_checkpoint(diffusion, m, nullptr, 0));
}

inline PriorBundle random_priors(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  PriorBundle p;
  p.global = random_tensor({dim}, seed);
  p.lf = random_tensor({rows, dim}, seed + 1);
  p.hf = random_tensor({rows, dim}, seed + 2);
  p.lf_mask.assign(rows, true);
  p.hf_mask.assign(rows, true);
  return p;
}

inline LrFeatureTokens random_lr_tokens(std::size_t m, std::size_t dim, std::uint64_t seed) {
  return {random_tensor({m, dim}, seed)};
}

/// Finite-difference check of the training loss against every parameter of
/// a gated model built from `cfg`, at timestep `t`.
inline GradCheckResult check_training_loss_gradient(const DenoiserConfig& cfg, int t) {
  Denoiser m(cfg);
  randomize_gates(m, 77);
  const NoiseSchedule sched = make_schedule(1000, 1e-4, 0.02);
  const std::size_t s = std::size_t{1} << (cfg.depth - 1);
  const auto cz = static_cast<std::size_t>(cfg.latent_channels);
  const LatentTensor z0 = random_tensor({cz, 2 * s, 2 * s}, 70, 0.5);
  const LatentTensor zl = random_tensor({static_cast<std::size_t>(cfg.cond_channels), 2 * s, 2 * s}, 71, 0.5);
  const LatentTensor eps = random_tensor({cz, 2 * s, 2 * s}, 72);
  const auto p = random_priors(2, static_cast<std::size_t>(cfg.text_dim), 73);
  const auto lr = random_lr_tokens(3, static_cast<std::size_t>(cfg.lr_token_dim), 74);
  std::vector<std::pair<std::string, ad::Var>> leaves;
  for (const auto& e : m.parameters().entries()) leaves.emplace_back(e.name, e.var);
  return grad_check([&](ad::Graph& g) { return m.loss(g, z0, zl, t, eps, sched, p, lr); }, leaves);
}

}  // namespace dtpsr::test
