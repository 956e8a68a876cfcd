#pragma once

// Brute-force PSNR/SSIM references (direct loops over every window, no
// shared code with the library) and image helpers for metric tests.

#include <cmath>

#include "dtpsr/image.hpp"
#include "dtpsr/rng.hpp"

namespace dtpsr::test {

inline Image random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  const CounterRng rng(seed, "test.image");
  Image img(w, h);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(rng.below(i, 256));
  return img;
}

inline Image perturbed(const Image& src, std::uint64_t seed, double sigma) {
  const CounterRng rng(seed, "test.perturb");
  Image out = src;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = to_u8(src.pixels[i] + sigma * rng.normal(i));
  return out;
}

inline double brute_luma(const Image& img, std::size_t x, std::size_t y) {
  return 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
}

inline double brute_psnr(const Image& a, const Image& b) {
  double se = 0.0;
  for (std::size_t y = 0; y < a.height; ++y)
    for (std::size_t x = 0; x < a.width; ++x) {
      const double d = brute_luma(a, x, y) - brute_luma(b, x, y);
      se += d * d;
    }
  return 10.0 * std::log10(255.0 * 255.0 * static_cast<double>(a.width * a.height) / se);
}

inline double brute_ssim(const Image& a, const Image& b) {
  const double c1 = 6.5025, c2 = 58.5225;
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t r = 0; r + 8 <= a.height; ++r)
    for (std::size_t c = 0; c + 8 <= a.width; ++c) {
      double mu = 0, mv = 0;
      for (std::size_t y = r; y < r + 8; ++y)
        for (std::size_t x = c; x < c + 8; ++x) mu += brute_luma(a, x, y), mv += brute_luma(b, x, y);
      mu /= 64, mv /= 64;
      double vu = 0, vv = 0, cov = 0;
      for (std::size_t y = r; y < r + 8; ++y)
        for (std::size_t x = c; x < c + 8; ++x) {
          const double du = brute_luma(a, x, y) - mu, dv = brute_luma(b, x, y) - mv;
          vu += du * du, vv += dv * dv, cov += du * dv;
        }
      vu /= 64, vv /= 64, cov /= 64;
      total += (2 * mu * mv + c1) * (2 * cov + c2) / ((mu * mu + mv * mv + c1) * (vu + vv + c2));
      ++windows;
    }
  return total / static_cast<double>(windows);
}

inline Image two_block() {
  Image img(16, 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      const std::uint8_t left[3] = {40, 90, 200}, right[3] = {220, 180, 30};
      for (std::size_t c = 0; c < 3; ++c) img.pixels[(y * 16 + x) * 3 + c] = x < 8 ? left[c] : right[c];
    }
  return img;
}

inline Image inverted(const Image& src) {
  Image out = src;
  for (auto& p : out.pixels) p = static_cast<std::uint8_t>(255 - p);
  return out;
}

}  // namespace dtpsr::test
