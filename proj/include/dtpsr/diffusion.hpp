#pragma once

// Noise schedule, closed-form forward diffusion, the ancestral DDPM
// reverse step and the noise-prediction objective. Nothing here knows
// about the denoiser architecture: predictors are plain callables.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtpsr/rng.hpp"
#include "dtpsr/tensor.hpp"

namespace dtpsr {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NoiseSchedule {
  int num_steps = 0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  /// Builds the schedule from a strictly decreasing alpha-bar sequence;
  /// betas follow as 1 - abar[t] / abar[t-1] with abar[-1] = 1.
  static NoiseSchedule from_alpha_bars(std::vector<double> abar) {
    if (abar.empty()) throw std::invalid_argument("schedule needs at least one step");
    NoiseSchedule s;
    s.num_steps = static_cast<int>(abar.size());
    double prev = 1.0;
    for (double a : abar) {
      if (!(a > 0.0 && a < prev))
        throw std::invalid_argument("alpha_bars must be strictly decreasing in (0,1)");
      s.alphas.push_back(a / prev);
      s.betas.push_back(1.0 - a / prev);
      prev = a;
    }
    s.alpha_bars = std::move(abar);
    return s;
  }

  double alpha_bar_prev(int t) const { return t > 0 ? alpha_bars[static_cast<std::size_t>(t) - 1] : 1.0; }

  void check_timestep(int t) const {
    if (t < 0 || t >= num_steps)
      throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                              std::to_string(num_steps) + ")");
  }
};

/// Linear betas from beta_start to beta_end over num_steps, running-product alpha bars.
inline NoiseSchedule make_schedule(int num_steps, double beta_start, double beta_end) {
  if (num_steps < 1) throw std::invalid_argument("num_steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("betas must satisfy 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.num_steps = num_steps;
  s.betas.resize(static_cast<std::size_t>(num_steps));
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double running = 1.0;
  for (int t = 0; t < num_steps; ++t) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(t) / (num_steps - 1);
    const auto i = static_cast<std::size_t>(t);
    s.betas[i] = beta_start + (beta_end - beta_start) * frac;
    s.alphas[i] = 1.0 - s.betas[i];
    running *= s.alphas[i];
    s.alpha_bars[i] = running;
  }
  return s;
}

/// A shortened schedule for sampling together with the training timestep
/// each of its steps corresponds to.
struct SamplingPlan {
  NoiseSchedule schedule;
  std::vector<int> timesteps;
};

/// Uniform-stride respacing that always ends at the last training step:
/// timesteps[i] = offset + i * (T / K), offset = (T - 1) - (K - 1) * (T / K).
inline SamplingPlan respace(const NoiseSchedule& base, int steps) {
  if (steps < 1 || steps > base.num_steps)
    throw std::invalid_argument("sampling steps must lie in [1, num_steps]");
  const int stride = base.num_steps / steps;
  const int offset = (base.num_steps - 1) - (steps - 1) * stride;
  SamplingPlan plan;
  std::vector<double> abar;
  for (int i = 0; i < steps; ++i) {
    const int t = offset + i * stride;
    plan.timesteps.push_back(t);
    abar.push_back(base.alpha_bars[static_cast<std::size_t>(t)]);
  }
  plan.schedule = NoiseSchedule::from_alpha_bars(std::move(abar));
  return plan;
}

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
inline LatentTensor forward_diffuse(const LatentTensor& z0, int t, const LatentTensor& eps,
                                    const NoiseSchedule& schedule) {
  schedule.check_timestep(t);
  require_same_shape(z0, eps, "forward_diffuse");
  const double ab = schedule.alpha_bars[static_cast<std::size_t>(t)];
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  LatentTensor out(z0.shape());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

enum class PosteriorVariance { kPosterior, kBeta };

/// Posterior coefficients of one ancestral step:
///   z_{t-1} = mean_z * z_t + mean_eps * eps_hat + sigma * noise
struct StepCoefficients {
  double mean_z;
  double mean_eps;
  double sigma;
};

inline StepCoefficients ddpm_coefficients(int t, const NoiseSchedule& s,
                                          PosteriorVariance var = PosteriorVariance::kPosterior) {
  s.check_timestep(t);
  const auto i = static_cast<std::size_t>(t);
  const double alpha = s.alphas[i], beta = s.betas[i], ab = s.alpha_bars[i];
  const double ab_prev = s.alpha_bar_prev(t);
  StepCoefficients c{};
  c.mean_z = 1.0 / std::sqrt(alpha);
  c.mean_eps = -beta / (std::sqrt(alpha) * std::sqrt(1.0 - ab));
  if (t == 0) {
    c.sigma = 0.0;
  } else if (var == PosteriorVariance::kPosterior) {
    c.sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
  } else {
    c.sigma = std::sqrt(beta);
  }
  return c;
}

/// One reverse step. `noise` may be empty (treated as zero); at t == 0 any
/// supplied noise must be zero.
inline LatentTensor ddpm_step(const LatentTensor& z_t, const LatentTensor& eps_hat, int t,
                              const NoiseSchedule& schedule, const LatentTensor& noise = {},
                              PosteriorVariance var = PosteriorVariance::kPosterior) {
  require_same_shape(z_t, eps_hat, "ddpm_step");
  if (!noise.empty()) require_same_shape(z_t, noise, "ddpm_step noise");
  const StepCoefficients c = ddpm_coefficients(t, schedule, var);
  if (!z_t.all_finite() || !eps_hat.all_finite() || (!noise.empty() && !noise.all_finite()))
    throw NumericalError("ddpm_step: non-finite input");
  if (t == 0 && !noise.empty())
    for (double v : noise.data())
      if (v != 0.0) throw std::invalid_argument("ddpm_step: noise must be zero at t = 0");
  LatentTensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    out[i] = c.mean_z * z_t[i] + c.mean_eps * eps_hat[i];
    if (!noise.empty()) out[i] += c.sigma * noise[i];
  }
  return out;
}

/// Standard-normal tensor drawn from the (seed, stream) counter generator.
inline Tensor normal_tensor(const Shape& shape, std::uint64_t seed, std::uint64_t stream) {
  const CounterRng rng(seed, stream);
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.normal(i);
  return out;
}

inline Tensor initial_noise(const Shape& shape, std::uint64_t seed) {
  return normal_tensor(shape, seed, fnv1a64("sample.init"));
}

/// Per-step sampling noise keyed by (seed, step).
inline Tensor step_noise(const Shape& shape, std::uint64_t seed, int step) {
  return normal_tensor(shape, seed, fnv1a64("sample.noise") + static_cast<std::uint64_t>(step));
}

/// Mean over elements of (eps - predict(z_t, t))^2 with z_t from forward_diffuse.
template <typename Predictor>
double training_loss(Predictor&& predict, const LatentTensor& z0, int t, const LatentTensor& eps,
                     const NoiseSchedule& schedule) {
  const LatentTensor z_t = forward_diffuse(z0, t, eps, schedule);
  const LatentTensor eps_hat = predict(z_t, t);
  require_same_shape(eps_hat, eps, "training_loss");
  if (!eps_hat.all_finite()) throw NumericalError("training_loss: non-finite prediction");
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = eps[i] - eps_hat[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.size());
}

/// Full ancestral reverse loop over a sampling plan. `eps_fn(z, timestep)`
/// returns the (possibly guided) noise prediction at a training timestep.
template <typename EpsFn>
LatentTensor reverse_diffusion(EpsFn&& eps_fn, const Shape& latent_shape, const SamplingPlan& plan,
                               std::uint64_t seed,
                               PosteriorVariance var = PosteriorVariance::kPosterior) {
  LatentTensor z = initial_noise(latent_shape, seed);
  for (int i = plan.schedule.num_steps - 1; i >= 0; --i) {
    const LatentTensor eps = eps_fn(z, plan.timesteps[static_cast<std::size_t>(i)]);
    LatentTensor noise = i > 0 ? step_noise(latent_shape, seed, i) : LatentTensor{};
    z = ddpm_step(z, eps, i, plan.schedule, noise, var);
  }
  return z;
}

}  // namespace dtpsr
