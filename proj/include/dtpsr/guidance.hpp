#pragma once

// Classifier-free guidance with one joint negative pass:
//   eps_tilde = eps_hat + lambda_s * (eps_hat - eps_neg)
// where eps_neg re-evaluates the denoiser with the negative priors in the
// global, low- and high-frequency slots (LR conditioning is shared).

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dtpsr/denoiser.hpp"
#include "dtpsr/diffusion.hpp"
#include "dtpsr/json_util.hpp"
#include "dtpsr/prior_encoding.hpp"

namespace dtpsr {

enum class GuidanceMode { kNone, kSingle, kMulti };

inline const char* guidance_mode_name(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::kNone: return "none";
    case GuidanceMode::kSingle: return "single";
    case GuidanceMode::kMulti: return "multi";
  }
  return "?";
}

inline GuidanceMode guidance_mode_from_name(std::string_view s) {
  if (s == "none") return GuidanceMode::kNone;
  if (s == "single") return GuidanceMode::kSingle;
  if (s == "multi") return GuidanceMode::kMulti;
  throw ValidationError("unknown guidance mode '" + std::string(s) + "'");
}

// Placeholder negatives; not taken from any published prompt list.
inline constexpr const char* kDefaultNegGlobal = "wrong layout, duplicated objects";
inline constexpr const char* kDefaultNegLf = "distorted shape, wrong proportions";
inline constexpr const char* kDefaultNegHf = "oversmoothed, noisy texture, ringing artifacts";

struct GuidanceSpec {
  GuidanceMode mode = GuidanceMode::kMulti;
  double lambda_s = 7.0;
  std::string neg_global = kDefaultNegGlobal;
  std::vector<std::string> neg_lf{kDefaultNegLf};
  std::vector<std::string> neg_hf{kDefaultNegHf};

  void validate() const {
    if (!std::isfinite(lambda_s) || lambda_s < 0.0)
      throw ValidationError("guidance.lambda_s must be finite and >= 0");
  }
  friend bool operator==(const GuidanceSpec&, const GuidanceSpec&) = default;
};

inline void to_json(Json& j, const GuidanceSpec& g) {
  j = Json{{"mode", guidance_mode_name(g.mode)},
           {"lambda_s", g.lambda_s},
           {"neg_global", g.neg_global},
           {"neg_lf", g.neg_lf},
           {"neg_hf", g.neg_hf}};
}

inline void from_json(const Json& j, GuidanceSpec& g) {
  constexpr std::string_view s = "guidance";
  reject_unknown_keys(j, {"mode", "lambda_s", "neg_global", "neg_lf", "neg_hf"}, s);
  if (auto it = j.find("mode"); it != j.end()) g.mode = guidance_mode_from_name(it->get<std::string>());
  read_opt(j, "lambda_s", g.lambda_s, s);
  read_opt(j, "neg_global", g.neg_global, s);
  read_opt(j, "neg_lf", g.neg_lf, s);
  read_opt(j, "neg_hf", g.neg_hf, s);
  g.validate();
}

/// Captions for the negative pass. Single mode puts neg_global in every slot.
inline CaptionSet negative_captions(const GuidanceSpec& spec) {
  CaptionSet c;
  c.global_caption = spec.neg_global;
  if (spec.mode == GuidanceMode::kSingle) {
    c.lf_captions = {spec.neg_global};
    c.hf_captions = {spec.neg_global};
  } else {
    c.lf_captions = spec.neg_lf;
    c.hf_captions = spec.neg_hf;
  }
  const std::size_t n = std::max(c.lf_captions.size(), c.hf_captions.size());
  c.lf_captions.resize(n);
  c.hf_captions.resize(n);
  return c;
}

inline PriorBundle negative_priors(const GuidanceSpec& spec, const TextEncoder& enc,
                                   TextPooling pooling = TextPooling::kPooled) {
  return encode_priors(negative_captions(spec), enc, pooling);
}

/// `predict(z_t, t, priors)` returns the conditional noise prediction.
template <typename Predictor>
LatentTensor guided_noise(Predictor&& predict, const LatentTensor& z_t, int t, const PriorBundle& pos,
                          const PriorBundle& neg, const GuidanceSpec& spec) {
  spec.validate();
  LatentTensor eps = predict(z_t, t, pos);
  if (!eps.all_finite()) throw NumericalError("guided_noise: non-finite denoiser output");
  if (spec.mode == GuidanceMode::kNone) return eps;
  const LatentTensor eps_neg = predict(z_t, t, neg);
  require_same_shape(eps, eps_neg, "guided_noise");
  if (!eps_neg.all_finite()) throw NumericalError("guided_noise: non-finite negative output");
  const double l = spec.lambda_s;
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = eps[i] + l * (eps[i] - eps_neg[i]);
  return eps;
}

/// Reverse diffusion with guidance for any predictor.
template <typename Predictor>
LatentTensor sample(Predictor&& predict, const Shape& latent_shape, const PriorBundle& pos,
                    const PriorBundle& neg, const GuidanceSpec& spec, const SamplingPlan& plan,
                    std::uint64_t seed, PosteriorVariance var = PosteriorVariance::kPosterior) {
  return reverse_diffusion(
      [&](const LatentTensor& z, int t) { return guided_noise(predict, z, t, pos, neg, spec); },
      latent_shape, plan, seed, var);
}

/// Reverse diffusion with the denoiser conditioned on an LR latent and tokens.
inline LatentTensor sample(const Denoiser& denoiser, const LatentTensor& lr_latent, const LrFeatureTokens& lr,
                           const PriorBundle& pos, const PriorBundle& neg, const GuidanceSpec& spec,
                           const SamplingPlan& plan, std::uint64_t seed,
                           PosteriorVariance var = PosteriorVariance::kPosterior,
                           std::size_t* call_counter = nullptr) {
  Shape shape{static_cast<std::size_t>(denoiser.config().latent_channels), lr_latent.dim(1),
              lr_latent.dim(2)};
  auto predict = [&](const LatentTensor& z, int t, const PriorBundle& p) {
    if (call_counter) ++*call_counter;
    return denoiser.predict(z, lr_latent, t, p, lr);
  };
  return sample(predict, shape, pos, neg, spec, plan, seed, var);
}

}  // namespace dtpsr
