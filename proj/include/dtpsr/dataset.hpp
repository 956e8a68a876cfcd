#pragma once

// Synthetic training records: procedurally rendered scenes with exact
// segment masks, rule-based global / low-frequency / high-frequency
// captions, a parametric degradation chain, top-k segment selection and the
// word-corruption operator used for robustness runs.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtpsr/image.hpp"
#include "dtpsr/json_util.hpp"
#include "dtpsr/prior_encoding.hpp"
#include "dtpsr/rng.hpp"

namespace dtpsr {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr const char* kGeneratorVersion = "dtpsr-synth-1";

enum class ShapeKind { kCircle, kRectangle, kTriangle, kStripeBand };
enum class TextureKind { kSolid, kStripes, kDots, kChecker, kNoiseGrain };

struct NamedColor {
  const char* name;
  std::array<std::uint8_t, 3> rgb;
};

inline constexpr std::array<NamedColor, 10> kPalette{{
    {"red", {200, 40, 40}},
    {"green", {40, 160, 60}},
    {"blue", {40, 70, 200}},
    {"yellow", {230, 200, 40}},
    {"purple", {130, 60, 170}},
    {"orange", {235, 130, 30}},
    {"white", {235, 235, 235}},
    {"gray", {128, 128, 128}},
    {"black", {25, 25, 25}},
    {"teal", {30, 150, 150}},
}};

inline int color_index(std::string_view name) {
  for (std::size_t i = 0; i < kPalette.size(); ++i)
    if (name == kPalette[i].name) return static_cast<int>(i);
  throw ValidationError("unknown colour '" + std::string(name) + "'");
}

inline const char* shape_word(ShapeKind s) {
  switch (s) {
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kRectangle: return "rectangle";
    case ShapeKind::kTriangle: return "triangle";
    case ShapeKind::kStripeBand: return "band";
  }
  return "?";
}

struct SceneObject {
  ShapeKind shape = ShapeKind::kCircle;
  double cx = 0, cy = 0;
  double size = 8;  // bounding radius; bands use it as half-thickness / 0.4
  int color = 0;    // palette index
  TextureKind texture = TextureKind::kSolid;
  int orientation_deg = 0;  // 0, 45, 90 or 135
};

struct SceneSpec {
  std::size_t width = 64;
  std::size_t height = 64;
  int background = 6;
  std::vector<SceneObject> objects;
  std::uint64_t texture_seed = 0;  // noise-grain texture
};

struct SegmentRegion {
  std::size_t segment_id = 0;  // == index of the object in the spec
  std::vector<std::uint8_t> mask;
  std::size_t area = 0;
  std::size_t object = 0;
};

struct RenderedScene {
  Image hr;
  std::vector<SegmentRegion> regions;
};

namespace detail {

inline constexpr double kTextureAmplitude = 30.0;

// Point in object-local coordinates (rotated by -orientation around the centre).
inline std::pair<double, double> to_local(const SceneObject& o, double px, double py) {
  const double a = o.orientation_deg * std::numbers::pi / 180.0;
  const double dx = px - o.cx, dy = py - o.cy;
  return {std::cos(a) * dx + std::sin(a) * dy, -std::sin(a) * dx + std::cos(a) * dy};
}

inline bool covers(const SceneObject& o, double px, double py) {
  const auto [u, v] = to_local(o, px, py);
  switch (o.shape) {
    case ShapeKind::kCircle:
      return u * u + v * v <= o.size * o.size;
    case ShapeKind::kRectangle:
      return std::abs(u) <= 0.85 * o.size && std::abs(v) <= 0.5 * o.size;
    case ShapeKind::kTriangle: {
      // equilateral, apex (0, -s), base vertices (+-0.866 s, 0.5 s)
      const double s = o.size;
      if (v > 0.5 * s) return false;
      const double half_width = 0.866 * s * (v + s) / (1.5 * s);
      return v >= -s && std::abs(u) <= half_width;
    }
    case ShapeKind::kStripeBand:
      return std::abs(v) <= 0.4 * o.size;
  }
  return false;
}

inline double texture_offset(const SceneObject& o, std::size_t obj_index, double px, double py,
                             std::size_t pixel, std::uint64_t seed) {
  const auto [u, v] = to_local(o, px, py);
  const double a = kTextureAmplitude;
  switch (o.texture) {
    case TextureKind::kSolid:
      return 0.0;
    case TextureKind::kStripes:
      return (static_cast<long>(std::floor(v / 3.0)) % 2 == 0) ? a : -a;
    case TextureKind::kDots: {
      const double gu = u - 6.0 * std::round(u / 6.0), gv = v - 6.0 * std::round(v / 6.0);
      return gu * gu + gv * gv <= 2.25 ? 1.5 * a : -0.5 * a;
    }
    case TextureKind::kChecker: {
      const long cu = static_cast<long>(std::floor(u / 4.0)), cv = static_cast<long>(std::floor(v / 4.0));
      return ((cu + cv) % 2 == 0) ? a : -a;
    }
    case TextureKind::kNoiseGrain: {
      const CounterRng rng(seed, fnv1a64("texture.grain") + obj_index);
      return a * (2.0 * rng.uniform(pixel) - 1.0);
    }
  }
  return 0.0;
}

}  // namespace detail

inline void validate_scene(const SceneSpec& spec) {
  if (spec.width == 0 || spec.height == 0) throw ValidationError("scene canvas must be non-empty");
  if (spec.background < 0 || spec.background >= static_cast<int>(kPalette.size()))
    throw ValidationError("scene background colour out of range");
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const auto& o = spec.objects[i];
    const std::string id = "object " + std::to_string(i);
    if (o.color < 0 || o.color >= static_cast<int>(kPalette.size()))
      throw ValidationError(id + ": colour out of range");
    if (!(o.size > 0)) throw ValidationError(id + ": size must be positive");
    if (o.orientation_deg % 45 != 0 || o.orientation_deg < 0 || o.orientation_deg >= 180)
      throw ValidationError(id + ": orientation must be 0, 45, 90 or 135");
    const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
    const bool inside = o.shape == ShapeKind::kStripeBand
                            ? (o.cx >= 0 && o.cx <= w && o.cy >= 0 && o.cy <= h)
                            : (o.cx - o.size >= 0 && o.cx + o.size <= w && o.cy - o.size >= 0 &&
                               o.cy + o.size <= h);
    if (!inside) throw ValidationError(id + ": outside the canvas");
  }
}

/// Renders objects in declaration order (later objects occlude earlier ones)
/// and returns one region per object holding exactly its visible pixels.
inline RenderedScene generate_scene(const SceneSpec& spec) {
  validate_scene(spec);
  RenderedScene out{Image(spec.width, spec.height), {}};
  std::vector<int> owner(spec.width * spec.height, -1);
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      for (std::size_t i = spec.objects.size(); i-- > 0;)
        if (detail::covers(spec.objects[i], px, py)) {
          owner[y * spec.width + x] = static_cast<int>(i);
          break;
        }
    }
  for (std::size_t i = 0; i < spec.objects.size(); ++i)
    out.regions.push_back({i, std::vector<std::uint8_t>(owner.size(), 0), 0, i});
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x) {
      const std::size_t p = y * spec.width + x;
      const int o = owner[p];
      const auto& base = kPalette[static_cast<std::size_t>(o < 0 ? spec.background : spec.objects[static_cast<std::size_t>(o)].color)].rgb;
      double offset = 0.0;
      if (o >= 0) {
        const auto oi = static_cast<std::size_t>(o);
        offset = detail::texture_offset(spec.objects[oi], oi, static_cast<double>(x) + 0.5,
                                        static_cast<double>(y) + 0.5, p, spec.texture_seed);
        out.regions[oi].mask[p] = 1;
        ++out.regions[oi].area;
      }
      for (std::size_t c = 0; c < 3; ++c) out.hr.at(x, y, c) = to_u8(base[c] + offset);
    }
  return out;
}

/// Random scene with 1..max_objects objects, each at least min_area pixels visible.
inline SceneSpec random_scene_spec(std::uint64_t seed, std::size_t canvas = 64, int max_objects = 4,
                                   std::size_t min_area = 24) {
  RngStream rng(seed, "scene");
  SceneSpec spec;
  spec.width = spec.height = canvas;
  spec.texture_seed = seed;
  spec.background = static_cast<int>(rng.below(kPalette.size()));
  const int n = rng.range(1, max_objects);
  const double c = static_cast<double>(canvas);
  for (int i = 0; i < n; ++i) {
    SceneObject o;
    o.shape = static_cast<ShapeKind>(rng.below(4));
    o.size = rng.uniform(0.12 * c, 0.3 * c);
    o.cx = rng.uniform(o.size, c - o.size);
    o.cy = rng.uniform(o.size, c - o.size);
    do {
      o.color = static_cast<int>(rng.below(kPalette.size()));
    } while (o.color == spec.background);
    o.texture = static_cast<TextureKind>(rng.below(5));
    o.orientation_deg = 45 * static_cast<int>(rng.below(4));
    spec.objects.push_back(o);
  }
  // Drop objects that end up (nearly) hidden, last-declared first.
  for (;;) {
    const auto scene = generate_scene(spec);
    auto it = std::find_if(scene.regions.begin(), scene.regions.end(),
                           [&](const SegmentRegion& r) { return r.area < min_area; });
    if (it == scene.regions.end()) break;
    spec.objects.erase(spec.objects.begin() + static_cast<std::ptrdiff_t>(it->object));
  }
  return spec;
}

// ---- captions ---------------------------------------------------------------

inline const char* size_word(std::size_t area, std::size_t canvas_area) {
  const double f = static_cast<double>(area) / static_cast<double>(canvas_area);
  if (f < 0.05) return "small";
  if (f < 0.15) return "medium";
  return "large";
}

inline std::string position_phrase(const SegmentRegion& r, std::size_t width, std::size_t height) {
  double sx = 0, sy = 0;
  for (std::size_t p = 0; p < r.mask.size(); ++p)
    if (r.mask[p]) sx += static_cast<double>(p % width) + 0.5, sy += static_cast<double>(p / width) + 0.5;
  const double n = std::max<double>(1.0, static_cast<double>(r.area));
  const double fx = sx / n / static_cast<double>(width), fy = sy / n / static_cast<double>(height);
  const char* v = fy < 1.0 / 3 ? "top" : (fy > 2.0 / 3 ? "bottom" : "middle");
  const char* h = fx < 1.0 / 3 ? "left" : (fx > 2.0 / 3 ? "right" : "center");
  if (std::string_view(v) == "middle" && std::string_view(h) == "center") return "center";
  return std::string(v) + " " + h;
}

/// Empty for circles, otherwise a word for the object's orientation.
inline std::string orientation_word(const SceneObject& o) {
  const bool diagonal = o.orientation_deg == 45 || o.orientation_deg == 135;
  switch (o.shape) {
    case ShapeKind::kCircle: return "";
    case ShapeKind::kTriangle: return diagonal ? "tilted" : (o.orientation_deg == 0 ? "upright" : "sideways");
    case ShapeKind::kRectangle:
    case ShapeKind::kStripeBand: return diagonal ? "diagonal" : (o.orientation_deg == 0 ? "horizontal" : "vertical");
  }
  return "";
}

inline const char* texture_phrase(TextureKind t) {
  switch (t) {
    case TextureKind::kSolid: return "smooth solid surface with crisp clean edges";
    case TextureKind::kStripes: return "fine striped texture with sharp alternating edges";
    case TextureKind::kDots: return "dotted speckled texture with soft scattered highlights";
    case TextureKind::kChecker: return "checkered tiled texture with hard blocky edges";
    case TextureKind::kNoiseGrain: return "grainy noisy surface with rough irregular edges";
  }
  return "";
}

/// "<size> <colour> <shape>[, <orientation>], <position>"
inline std::string lf_caption(const SceneSpec& spec, const SegmentRegion& r) {
  const SceneObject& o = spec.objects.at(r.object);
  std::string s = std::string(size_word(r.area, spec.width * spec.height)) + " " +
                  kPalette[static_cast<std::size_t>(o.color)].name + " " + shape_word(o.shape);
  if (auto w = orientation_word(o); !w.empty()) s += ", " + w;
  return s + ", " + position_phrase(r, spec.width, spec.height);
}

inline std::string hf_caption(const SceneSpec& spec, const SegmentRegion& r) {
  return texture_phrase(spec.objects.at(r.object).texture);
}

/// Global caption covers every object; LF/HF captions follow `regions` order.
inline CaptionSet caption_scene(const SceneSpec& spec, const std::vector<SegmentRegion>& regions,
                                const std::vector<SegmentRegion>& all_regions) {
  CaptionSet c;
  const std::size_t n = spec.objects.size();
  c.global_caption = std::string("a plain ") + kPalette[static_cast<std::size_t>(spec.background)].name +
                     " background with " + std::to_string(n) + (n == 1 ? " object" : " objects");
  for (std::size_t i = 0; i < all_regions.size(); ++i) {
    const auto& r = all_regions[i];
    const auto& o = spec.objects.at(r.object);
    c.global_caption += (i == 0 ? ": " : (i + 1 == all_regions.size() ? " and " : ", "));
    c.global_caption += std::string("a ") + kPalette[static_cast<std::size_t>(o.color)].name + " " +
                        shape_word(o.shape) + " at the " + position_phrase(r, spec.width, spec.height);
  }
  for (const auto& r : regions) {
    c.lf_captions.push_back(lf_caption(spec, r));
    c.hf_captions.push_back(hf_caption(spec, r));
  }
  return c;
}

inline CaptionSet caption_scene(const SceneSpec& spec, const std::vector<SegmentRegion>& regions) {
  return caption_scene(spec, regions, regions);
}

/// One sentence per object holding both its LF and HF description; used as
/// both the LF and HF captions for frequency-mixed conditioning.
inline CaptionSet mixed_captions(const CaptionSet& c) {
  c.validate();
  CaptionSet m;
  m.global_caption = c.global_caption;
  for (std::size_t i = 0; i < c.lf_captions.size(); ++i) {
    const std::string s = c.lf_captions[i] + ". " + c.hf_captions[i];
    m.lf_captions.push_back(s);
    m.hf_captions.push_back(s);
  }
  return m;
}

/// The k largest regions by area, ties broken by lower segment_id.
inline std::vector<SegmentRegion> select_top_segments(std::vector<SegmentRegion> regions, std::size_t k = 3) {
  if (k == 0) throw std::invalid_argument("select_top_segments: k must be >= 1");
  std::stable_sort(regions.begin(), regions.end(), [](const SegmentRegion& a, const SegmentRegion& b) {
    return a.area != b.area ? a.area > b.area : a.segment_id < b.segment_id;
  });
  if (regions.size() > k) regions.resize(k);
  return regions;
}

// ---- degradation ------------------------------------------------------------

struct DegradationParams {
  double blur_sigma = 1.0;
  int downscale_factor = 4;
  double noise_sigma = 2.0;  // on the 0..255 scale
  int quantization_levels = 256;

  void validate() const {
    if (!(blur_sigma >= 0.0) || !std::isfinite(blur_sigma)) throw ValidationError("blur_sigma must be >= 0");
    if (downscale_factor < 1) throw ValidationError("downscale_factor must be >= 1");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ValidationError("noise_sigma must be >= 0");
    if (quantization_levels < 2) throw ValidationError("quantization_levels must be >= 2");
  }
  friend bool operator==(const DegradationParams&, const DegradationParams&) = default;
};

inline void to_json(Json& j, const DegradationParams& d) {
  j = Json{{"blur_sigma", d.blur_sigma},
           {"downscale_factor", d.downscale_factor},
           {"noise_sigma", d.noise_sigma},
           {"quantization_levels", d.quantization_levels}};
}

inline void from_json(const Json& j, DegradationParams& d) {
  constexpr std::string_view s = "degradation";
  reject_unknown_keys(j, {"blur_sigma", "downscale_factor", "noise_sigma", "quantization_levels"}, s);
  read_opt(j, "blur_sigma", d.blur_sigma, s);
  read_opt(j, "downscale_factor", d.downscale_factor, s);
  read_opt(j, "noise_sigma", d.noise_sigma, s);
  read_opt(j, "quantization_levels", d.quantization_levels, s);
  d.validate();
}

/// Gaussian blur -> bicubic downscale -> additive Gaussian noise -> uniform
/// quantisation to `quantization_levels` levels over 0..255.
inline Image degrade(const Image& hr, const DegradationParams& p, std::uint64_t seed) {
  p.validate();
  const auto f = static_cast<std::size_t>(p.downscale_factor);
  if (hr.width % f != 0 || hr.height % f != 0)
    throw ValidationError("image " + std::to_string(hr.width) + "x" + std::to_string(hr.height) +
                          " not divisible by downscale factor " + std::to_string(f));
  Tensor planes = gaussian_blur(to_planes(hr), p.blur_sigma);
  if (f != 1) planes = bicubic_resize(planes, hr.height / f, hr.width / f);
  if (p.noise_sigma > 0.0) {
    const CounterRng rng(seed, "degrade.noise");
    for (std::size_t i = 0; i < planes.size(); ++i) planes[i] += p.noise_sigma * rng.normal(i);
  }
  const double step = 255.0 / (p.quantization_levels - 1);
  for (double& v : planes.vec()) v = std::clamp(std::round(v / step) * step, 0.0, 255.0);
  return from_planes(planes);
}

// ---- caption corruption -------------------------------------------------------

/// Replaces each whitespace-separated word with "None" with probability p.
/// Draw i of CounterRng(seed, "captions.corrupt") decides the i-th word,
/// counting words through the global caption, then the LF captions, then
/// the HF captions. Whitespace is preserved.
inline CaptionSet corrupt_captions(const CaptionSet& captions, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("corruption probability must lie in [0, 1]");
  const CounterRng rng(seed, "captions.corrupt");
  std::uint64_t counter = 0;
  auto corrupt = [&](const std::string& s) {
    std::string out;
    std::size_t i = 0;
    while (i < s.size()) {
      if (std::isspace(static_cast<unsigned char>(s[i]))) {
        out.push_back(s[i++]);
        continue;
      }
      std::size_t j = i;
      while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      out += rng.uniform(counter++) < p ? std::string("None") : s.substr(i, j - i);
      i = j;
    }
    return out;
  };
  CaptionSet c;
  c.global_caption = corrupt(captions.global_caption);
  for (const auto& s : captions.lf_captions) c.lf_captions.push_back(corrupt(s));
  for (const auto& s : captions.hf_captions) c.hf_captions.push_back(corrupt(s));
  return c;
}

// ---- records and manifest -------------------------------------------------------

struct AnnotationRecord {
  std::string record_id;
  std::string hr_path;  // relative to the manifest directory
  std::string lr_path;
  CaptionSet captions;
  std::vector<std::size_t> areas;
  DegradationParams degradation;
  std::uint64_t seed = 0;
  double corrupt_p = 0.0;
  std::string generator_version = kGeneratorVersion;
  int schema_version = kManifestSchemaVersion;

  void validate() const {
    if (record_id.empty()) throw ValidationError("record_id must be non-empty");
    if (hr_path.empty() || lr_path.empty()) throw ValidationError(record_id + ": image paths must be non-empty");
    if (schema_version != kManifestSchemaVersion)
      throw ValidationError(record_id + ": unsupported schema_version " + std::to_string(schema_version));
    if (captions.lf_captions.size() != captions.hf_captions.size() ||
        captions.lf_captions.size() != areas.size())
      throw ValidationError(record_id + ": lf, hf and areas must have equal length");
    if (areas.size() > 3) throw ValidationError(record_id + ": more than 3 segments");
    if (!(corrupt_p >= 0.0 && corrupt_p <= 1.0)) throw ValidationError(record_id + ": corrupt_p outside [0,1]");
    degradation.validate();
  }
  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

inline void to_json(Json& j, const AnnotationRecord& r) {
  j = Json{{"schema_version", r.schema_version},
           {"record_id", r.record_id},
           {"hr_path", r.hr_path},
           {"lr_path", r.lr_path},
           {"global", r.captions.global_caption},
           {"lf", r.captions.lf_captions},
           {"hf", r.captions.hf_captions},
           {"areas", r.areas},
           {"degradation", r.degradation},
           {"seed", r.seed},
           {"corrupt_p", r.corrupt_p},
           {"generator_version", r.generator_version}};
}

inline void from_json(const Json& j, AnnotationRecord& r) {
  constexpr std::string_view s = "record";
  reject_unknown_keys(j,
                      {"schema_version", "record_id", "hr_path", "lr_path", "global", "lf", "hf", "areas",
                       "degradation", "seed", "corrupt_p", "generator_version"},
                      s);
  for (const char* k : {"schema_version", "record_id", "hr_path", "lr_path", "global", "lf", "hf", "areas",
                        "degradation", "seed"})
    if (!j.contains(k)) throw ValidationError(std::string("record: missing field '") + k + "'");
  try {
    r.schema_version = j.at("schema_version").get<int>();
    r.record_id = j.at("record_id").get<std::string>();
    r.hr_path = j.at("hr_path").get<std::string>();
    r.lr_path = j.at("lr_path").get<std::string>();
    r.captions.global_caption = j.at("global").get<std::string>();
    r.captions.lf_captions = j.at("lf").get<std::vector<std::string>>();
    r.captions.hf_captions = j.at("hf").get<std::vector<std::string>>();
    r.areas = j.at("areas").get<std::vector<std::size_t>>();
    r.degradation = j.at("degradation").get<DegradationParams>();
    r.seed = j.at("seed").get<std::uint64_t>();
    read_opt(j, "corrupt_p", r.corrupt_p, s);
    read_opt(j, "generator_version", r.generator_version, s);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("record: ") + e.what());
  }
  r.validate();
}

inline std::string serialize_record(const AnnotationRecord& r) { return Json(r).dump(); }
inline AnnotationRecord parse_record(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("record: ") + e.what());
  }
  return j.get<AnnotationRecord>();
}

struct Manifest {
  std::filesystem::path path;
  std::vector<AnnotationRecord> records;

  std::filesystem::path dir() const { return path.parent_path(); }
  std::filesystem::path resolve(const std::string& rel) const { return dir() / rel; }

  static Manifest load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open manifest " + path.string());
    Manifest m{path, {}};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        m.records.push_back(parse_record(line));
      } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return m;
  }
};

struct DatasetConfig {
  std::size_t hr_size = 64;
  int max_objects = 4;
  std::size_t top_k = 3;
  double blur_sigma_min = 0.8;
  double blur_sigma_max = 1.6;
  double noise_sigma_min = 0.0;
  double noise_sigma_max = 3.0;
  int downscale_factor = 4;
  int quantization_levels = 256;
  std::size_t count = 200;  // records written by build-dataset
  std::uint64_t seed = 0;

  void validate() const {
    if (hr_size == 0 || downscale_factor < 1 || hr_size % static_cast<std::size_t>(downscale_factor) != 0)
      throw ValidationError("dataset.hr_size must be a positive multiple of downscale_factor");
    if (max_objects < 1) throw ValidationError("dataset.max_objects must be >= 1");
    if (top_k < 1 || top_k > 3) throw ValidationError("dataset.top_k must lie in [1, 3]");
    if (!(blur_sigma_min >= 0 && blur_sigma_min <= blur_sigma_max))
      throw ValidationError("dataset blur sigma range invalid");
    if (!(noise_sigma_min >= 0 && noise_sigma_min <= noise_sigma_max))
      throw ValidationError("dataset noise sigma range invalid");
    if (quantization_levels < 2) throw ValidationError("dataset.quantization_levels must be >= 2");
  }
  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

inline void to_json(Json& j, const DatasetConfig& d) {
  j = Json{{"hr_size", d.hr_size},
           {"max_objects", d.max_objects},
           {"top_k", d.top_k},
           {"blur_sigma_min", d.blur_sigma_min},
           {"blur_sigma_max", d.blur_sigma_max},
           {"noise_sigma_min", d.noise_sigma_min},
           {"noise_sigma_max", d.noise_sigma_max},
           {"downscale_factor", d.downscale_factor},
           {"quantization_levels", d.quantization_levels},
           {"count", d.count},
           {"seed", d.seed}};
}

inline void from_json(const Json& j, DatasetConfig& d) {
  constexpr std::string_view s = "dataset";
  reject_unknown_keys(j,
                      {"hr_size", "max_objects", "top_k", "blur_sigma_min", "blur_sigma_max", "noise_sigma_min",
                       "noise_sigma_max", "downscale_factor", "quantization_levels", "count", "seed"},
                      s);
  read_opt(j, "hr_size", d.hr_size, s);
  read_opt(j, "max_objects", d.max_objects, s);
  read_opt(j, "top_k", d.top_k, s);
  read_opt(j, "blur_sigma_min", d.blur_sigma_min, s);
  read_opt(j, "blur_sigma_max", d.blur_sigma_max, s);
  read_opt(j, "noise_sigma_min", d.noise_sigma_min, s);
  read_opt(j, "noise_sigma_max", d.noise_sigma_max, s);
  read_opt(j, "downscale_factor", d.downscale_factor, s);
  read_opt(j, "quantization_levels", d.quantization_levels, s);
  read_opt(j, "count", d.count, s);
  read_opt(j, "seed", d.seed, s);
  d.validate();
}

/// Everything derived from one record seed; shared by dataset building and
/// the demo pipeline.
struct SyntheticSample {
  SceneSpec spec;
  RenderedScene scene;
  std::vector<SegmentRegion> top;
  CaptionSet captions;
  DegradationParams degradation;
  Image lr;
};

inline SyntheticSample synthesize(std::uint64_t record_seed, const DatasetConfig& cfg) {
  SyntheticSample s;
  s.spec = random_scene_spec(record_seed, cfg.hr_size, cfg.max_objects);
  s.scene = generate_scene(s.spec);
  s.top = select_top_segments(s.scene.regions, cfg.top_k);
  s.captions = caption_scene(s.spec, s.top, s.scene.regions);
  RngStream rng(record_seed, "degrade.params");
  s.degradation.blur_sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
  s.degradation.noise_sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);
  s.degradation.downscale_factor = cfg.downscale_factor;
  s.degradation.quantization_levels = cfg.quantization_levels;
  s.lr = degrade(s.scene.hr, s.degradation, record_seed);
  return s;
}

inline std::uint64_t record_seed(std::uint64_t seed, std::size_t index) {
  return CounterRng(seed, "dataset.record").bits(index);
}

struct BuildSummary {
  std::filesystem::path manifest;
  std::size_t written = 0;
  std::size_t rejected = 0;
};

/// Writes hr/ and lr/ PPM images plus manifest.jsonl under `out_dir`.
/// Records failing validation are skipped and counted.
inline BuildSummary build_dataset(std::size_t count, const std::filesystem::path& out_dir, std::uint64_t seed,
                                  const DatasetConfig& cfg, double corrupt_p = 0.0) {
  cfg.validate();
  if (!(corrupt_p >= 0.0 && corrupt_p <= 1.0)) throw ValidationError("corrupt_p must lie in [0, 1]");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "hr");
  fs::create_directories(out_dir / "lr");
  BuildSummary summary{out_dir / "manifest.jsonl", 0, 0};
  std::ofstream manifest(summary.manifest, std::ios::binary | std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + summary.manifest.string());
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t rs = record_seed(seed, i);
    SyntheticSample s = synthesize(rs, cfg);
    AnnotationRecord r;
    std::ostringstream id;
    id << "rec_" << std::setw(6) << std::setfill('0') << i;
    r.record_id = id.str();
    r.hr_path = "hr/" + r.record_id + ".ppm";
    r.lr_path = "lr/" + r.record_id + ".ppm";
    r.captions = corrupt_p > 0.0 ? corrupt_captions(s.captions, corrupt_p, rs) : s.captions;
    for (const auto& reg : s.top) r.areas.push_back(reg.area);
    r.degradation = s.degradation;
    r.seed = rs;
    r.corrupt_p = corrupt_p;
    try {
      r.validate();
    } catch (const ValidationError&) {
      ++summary.rejected;
      continue;
    }
    write_ppm(out_dir / r.hr_path, s.scene.hr);
    write_ppm(out_dir / r.lr_path, s.lr);
    manifest << serialize_record(r) << '\n';
    ++summary.written;
  }
  if (!manifest.flush()) throw std::runtime_error("failed writing " + summary.manifest.string());
  return summary;
}

}  // namespace dtpsr
