#pragma once

// Full-reference image quality on BT.601 luma: PSNR and SSIM (uniform 8x8
// window, stride 1), plus an optional learned perceptual metric slot.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtpsr/image.hpp"
#include "dtpsr/json_util.hpp"

namespace dtpsr {

inline void require_same_size(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw ShapeError("image sizes differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                     std::to_string(b.width) + "x" + std::to_string(b.height));
  if (a.width == 0 || a.height == 0) throw ShapeError("empty image");
}

/// +inf for identical images.
inline double psnr(const Image& x, const Image& y) {
  require_same_size(x, y);
  const auto a = luma_plane(x), b = luma_plane(y);
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

inline constexpr std::size_t kSsimWindow = 8;

/// Mean SSIM over all 8x8 windows (population statistics), computed with
/// summed-area tables.
inline double ssim(const Image& x, const Image& y) {
  require_same_size(x, y);
  const std::size_t w = x.width, h = x.height, k = kSsimWindow;
  if (w < k || h < k) throw ShapeError("ssim needs images of at least 8x8");
  const auto a = luma_plane(x), b = luma_plane(y);
  const std::size_t sw = w + 1;
  std::vector<double> sa(sw * (h + 1)), sb(sa.size()), saa(sa.size()), sbb(sa.size()), sab(sa.size());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double u = a[r * w + c], v = b[r * w + c];
      const std::size_t o = (r + 1) * sw + c + 1, up = r * sw + c + 1, left = (r + 1) * sw + c, diag = r * sw + c;
      sa[o] = u + sa[up] + sa[left] - sa[diag];
      sb[o] = v + sb[up] + sb[left] - sb[diag];
      saa[o] = u * u + saa[up] + saa[left] - saa[diag];
      sbb[o] = v * v + sbb[up] + sbb[left] - sbb[diag];
      sab[o] = u * v + sab[up] + sab[left] - sab[diag];
    }
  auto box = [&](const std::vector<double>& s, std::size_t r, std::size_t c) {
    return s[(r + k) * sw + c + k] - s[r * sw + c + k] - s[(r + k) * sw + c] + s[r * sw + c];
  };
  const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  const double n = static_cast<double>(k * k);
  double total = 0.0;
  for (std::size_t r = 0; r + k <= h; ++r)
    for (std::size_t c = 0; c + k <= w; ++c) {
      const double mx = box(sa, r, c) / n, my = box(sb, r, c) / n;
      const double vx = std::max(0.0, box(saa, r, c) / n - mx * mx);
      const double vy = std::max(0.0, box(sbb, r, c) / n - my * my);
      const double cov = box(sab, r, c) / n - mx * my;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return total / static_cast<double>((h - k + 1) * (w - k + 1));
}

/// Learned perceptual distance; absent unless a backend is registered.
using PerceptualMetric = std::function<double(const Image&, const Image&)>;

/// Scores for one restored image against its reference.
struct ImageMetrics {
  std::string record_id;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> perceptual;  // serialized as "unavailable" when absent

  friend bool operator==(const ImageMetrics&, const ImageMetrics&) = default;
};

inline ImageMetrics evaluate_pair(std::string record_id, const Image& sr, const Image& hr,
                                  const PerceptualMetric& perceptual = {}) {
  ImageMetrics r{std::move(record_id), psnr(sr, hr), ssim(sr, hr), std::nullopt};
  if (perceptual) r.perceptual = perceptual(sr, hr);
  return r;
}

inline void to_json(Json& j, const ImageMetrics& r) {
  j = Json{{"record_id", r.record_id},
           {"psnr_db", real_to_json(r.psnr)},
           {"ssim", r.ssim},
           {"perceptual", r.perceptual ? Json(*r.perceptual) : Json("unavailable")}};
}

inline void from_json(const Json& j, ImageMetrics& r) {
  reject_unknown_keys(j, {"record_id", "psnr_db", "ssim", "perceptual"}, "metrics");
  try {
    r.record_id = j.at("record_id").get<std::string>();
    r.psnr = real_from_json(j.at("psnr_db"));
    r.ssim = j.at("ssim").get<double>();
    const Json& p = j.at("perceptual");
    if (p.is_string()) {
      if (p.get<std::string>() != "unavailable") throw ValidationError("metrics: bad perceptual value");
      r.perceptual.reset();
    } else {
      r.perceptual = p.get<double>();
    }
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("metrics: ") + e.what());
  }
}

/// Mean over images; a perceptual mean is only kept if every image had one.
/// An infinite PSNR makes the mean infinite.
inline ImageMetrics mean_metrics(const std::vector<ImageMetrics>& reports) {
  if (reports.empty()) throw std::invalid_argument("mean_metrics: no images");
  ImageMetrics m;
  m.record_id = "mean";
  double p = 0.0;
  bool all_p = true;
  for (const auto& r : reports) {
    m.psnr += r.psnr;
    m.ssim += r.ssim;
    if (r.perceptual) p += *r.perceptual;
    else all_p = false;
  }
  const double n = static_cast<double>(reports.size());
  m.psnr /= n;
  m.ssim /= n;
  if (all_p) m.perceptual = p / n;
  return m;
}

}  // namespace dtpsr
