#pragma once

// Inference: LR image + captions -> restored HR image, and the automated
// segment -> caption -> restore demo on a fresh synthetic scene.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dtpsr/checkpoint.hpp"
#include "dtpsr/dataset.hpp"
#include "dtpsr/guidance.hpp"
#include "dtpsr/metrics.hpp"
#include "dtpsr/train.hpp"

namespace dtpsr {

/// Reference text and LR-feature encoders sized for a denoiser config.
class EncoderSuite {
 public:
  EncoderSuite(const DenoiserConfig& cfg, std::size_t lr_size, std::size_t patch = 4)
      : text_(static_cast<std::size_t>(cfg.text_dim)),
        image_(lr_size, patch, static_cast<std::size_t>(cfg.lr_token_dim)) {}
  EncoderSuite(const EncoderSuite&) = delete;
  EncoderSuite& operator=(const EncoderSuite&) = delete;

  Encoders view(std::size_t codec_factor = 4) const { return Encoders{text_, image_, LatentCodec(codec_factor)}; }

 private:
  HashTextEncoder text_;
  PatchFeatureEncoder image_;
};

inline std::string file_id(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return hash_hex(fnv1a64(ss.str()));
}

inline void check_sampling_steps(const NoiseSchedule& base, int steps) {
  if (steps < 1 || steps > base.num_steps)
    throw ValidationError("sampling steps must be in [1, " + std::to_string(base.num_steps) + "]");
}

/// Restores `lr` to codec-factor resolution.
inline Image restore(const Denoiser& model, const SamplingPlan& plan, const Encoders& enc, const Image& lr,
                     const CaptionSet& captions, const GuidanceSpec& guidance, std::uint64_t seed,
                     std::size_t* calls = nullptr) {
  guidance.validate();
  const auto& cfg = model.config();
  if (static_cast<std::size_t>(cfg.latent_channels) != enc.codec.channels())
    throw ShapeError("denoiser latent channels do not match the codec");
  const LatentTensor z_lr = enc.codec.encode_lr(lr, enc.codec.factor());
  const LrFeatureTokens tokens = encode_lr_features(lr, enc.image);
  const PriorBundle pos = encode_priors(captions, enc.text, enc.pooling);
  const PriorBundle neg = negative_priors(guidance, enc.text, enc.pooling);
  const LatentTensor z = sample(model, z_lr, tokens, pos, neg, guidance, plan, seed,
                                PosteriorVariance::kPosterior, calls);
  return enc.codec.decode(z);
}

inline Json captions_json(const CaptionSet& c) {
  return Json{{"global", c.global_caption}, {"lf", c.lf_captions}, {"hf", c.hf_captions}};
}

inline CaptionSet captions_from_json(const Json& j) {
  reject_unknown_keys(j, {"global", "lf", "hf"}, "captions");
  CaptionSet c;
  try {
    c.global_caption = j.at("global").get<std::string>();
    c.lf_captions = j.at("lf").get<std::vector<std::string>>();
    c.hf_captions = j.at("hf").get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("captions: ") + e.what());
  }
  c.validate();
  return c;
}

struct DemoReport {
  std::uint64_t seed = 0;
  std::string checkpoint_id;
  GuidanceSpec guidance;
  std::size_t segments_found = 0;
  std::vector<std::size_t> areas;  // of the captioned segments
  CaptionSet captions;
  std::string lr_path, sr_path, hr_path;
  std::size_t lr_width = 0, lr_height = 0, sr_width = 0, sr_height = 0;
  ImageMetrics metrics;

  friend bool operator==(const DemoReport&, const DemoReport&) = default;
};

inline void to_json(Json& j, const DemoReport& r) {
  j = Json{{"seed", r.seed},
           {"checkpoint_id", r.checkpoint_id},
           {"guidance", r.guidance},
           {"segments_found", r.segments_found},
           {"areas", r.areas},
           {"captions", captions_json(r.captions)},
           {"lr", {{"path", r.lr_path}, {"width", r.lr_width}, {"height", r.lr_height}}},
           {"sr", {{"path", r.sr_path}, {"width", r.sr_width}, {"height", r.sr_height}}},
           {"hr", r.hr_path},
           {"metrics", r.metrics}};
}

inline void from_json(const Json& j, DemoReport& r) {
  reject_unknown_keys(j, {"seed", "checkpoint_id", "guidance", "segments_found", "areas", "captions", "lr", "sr",
                          "hr", "metrics"},
                      "demo report");
  try {
    r.seed = j.at("seed").get<std::uint64_t>();
    r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    r.guidance = j.at("guidance").get<GuidanceSpec>();
    r.segments_found = j.at("segments_found").get<std::size_t>();
    r.areas = j.at("areas").get<std::vector<std::size_t>>();
    r.captions = captions_from_json(j.at("captions"));
    r.lr_path = j.at("lr").at("path").get<std::string>();
    r.lr_width = j.at("lr").at("width").get<std::size_t>();
    r.lr_height = j.at("lr").at("height").get<std::size_t>();
    r.sr_path = j.at("sr").at("path").get<std::string>();
    r.sr_width = j.at("sr").at("width").get<std::size_t>();
    r.sr_height = j.at("sr").at("height").get<std::size_t>();
    r.hr_path = j.at("hr").get<std::string>();
    r.metrics = j.at("metrics").get<ImageMetrics>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("demo report: ") + e.what());
  }
}

/// Synthesizes a scene, degrades it, segments and captions it with the
/// synthetic segmenter/captioner, restores the LR image and scores it.
/// Artifacts go to `out_dir`: lr.ppm, sr.ppm, hr.ppm, report.json.
inline DemoReport run_demo(const Denoiser& model, const SamplingPlan& plan, const Encoders& enc,
                           const DatasetConfig& data_cfg, const GuidanceSpec& guidance, std::uint64_t seed,
                           const std::filesystem::path& out_dir, std::string checkpoint_id = {}) {
  data_cfg.validate();
  const SyntheticSample s = synthesize(CounterRng(seed, "demo.scene").bits(0), data_cfg);
  DemoReport r;
  r.seed = seed;
  r.checkpoint_id = std::move(checkpoint_id);
  r.guidance = guidance;
  r.segments_found = s.scene.regions.size();
  for (const auto& reg : s.top) r.areas.push_back(reg.area);
  r.captions = s.captions;
  const Image sr = restore(model, plan, enc, s.lr, s.captions, guidance, CounterRng(seed, "demo.sample").bits(0));
  std::filesystem::create_directories(out_dir);
  write_ppm(out_dir / "lr.ppm", s.lr);
  write_ppm(out_dir / "sr.ppm", sr);
  write_ppm(out_dir / "hr.ppm", s.scene.hr);
  r.lr_path = "lr.ppm";
  r.sr_path = "sr.ppm";
  r.hr_path = "hr.ppm";
  r.lr_width = s.lr.width;
  r.lr_height = s.lr.height;
  r.sr_width = sr.width;
  r.sr_height = sr.height;
  r.metrics = evaluate_pair("demo", sr, s.scene.hr);
  std::ofstream f(out_dir / "report.json", std::ios::binary);
  f << Json(r).dump(2) << '\n';
  if (!f) throw std::runtime_error("failed writing demo report");
  return r;
}

}  // namespace dtpsr
