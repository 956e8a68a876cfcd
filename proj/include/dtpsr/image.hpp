#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtpsr/rng.hpp"
#include "dtpsr/tensor.hpp"

namespace dtpsr {

/// 8-bit interleaved RGB image.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // size width*height*3

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

inline std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// ---- PPM (binary P6) --------------------------------------------------------

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  auto next_token = [&f]() {
    std::string tok;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    return tok;
  };
  if (next_token() != "P6") throw std::runtime_error(path.string() + ": not a binary PPM");
  const std::size_t w = std::stoul(next_token());
  const std::size_t h = std::stoul(next_token());
  if (std::stoul(next_token()) != 255) throw std::runtime_error(path.string() + ": maxval must be 255");
  Image img(w, h);
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error(path.string() + ": truncated pixel data");
  return img;
}

/// Hash of dimensions and pixel bytes; keys replayed image embeddings.
inline std::uint64_t image_hash(const Image& img) {
  std::string buf = std::to_string(img.width) + "x" + std::to_string(img.height) + ":";
  buf.append(img.pixels.begin(), img.pixels.end());
  return fnv1a64(buf);
}

// ---- colour -----------------------------------------------------------------

/// BT.601 full-range luma, on the 0..255 scale.
inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline std::vector<double> luma_plane(const Image& img) {
  std::vector<double> y(img.width * img.height);
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = luma(img.pixels[3 * i], img.pixels[3 * i + 1], img.pixels[3 * i + 2]);
  return y;
}

// ---- float planes and resampling ------------------------------------------

/// Planar float image (3, H, W) on the 0..255 scale.
inline Tensor to_planes(const Image& img) {
  Tensor t({3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) t.at(c, y, x) = img.at(x, y, c);
  return t;
}

inline Image from_planes(const Tensor& t) {
  require_latent(t, "from_planes");
  if (t.dim(0) != 3) throw ShapeError("from_planes: expected 3 channels");
  Image img(t.dim(2), t.dim(1));
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = to_u8(t.at(c, y, x));
  return img;
}

/// Separable Gaussian blur with clamped borders; sigma == 0 is the identity.
inline Tensor gaussian_blur(const Tensor& planes, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("blur sigma must be >= 0");
  if (sigma == 0.0) return planes;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double z = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    z += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= z;
  const std::size_t c = planes.dim(0), h = planes.dim(1), w = planes.dim(2);
  auto clampi = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(n) - 1));
  };
  Tensor tmp(planes.shape()), out(planes.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 planes.at(ch, y, clampi(static_cast<long>(x) + i, w));
        tmp.at(ch, y, x) = acc;
      }
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] *
                 tmp.at(ch, clampi(static_cast<long>(y) + i, h), x);
        out.at(ch, y, x) = acc;
      }
  return out;
}

/// Keys cubic convolution kernel, a = -0.5.
inline double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

/// Bicubic resampling with pixel-centre alignment and clamped borders.
/// Output sample (x, y) reads source coordinate (x + 0.5) * sw / dw - 0.5.
inline Tensor bicubic_resize(const Tensor& planes, std::size_t out_h, std::size_t out_w) {
  require_latent(planes, "bicubic_resize");
  const std::size_t c = planes.dim(0), h = planes.dim(1), w = planes.dim(2);
  struct Taps {
    long base;
    double w[4];
  };
  auto taps = [](std::size_t n_out, std::size_t n_in) {
    std::vector<Taps> t(n_out);
    const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      const double fl = std::floor(src);
      t[o].base = static_cast<long>(fl) - 1;
      const double frac = src - fl;
      for (int i = 0; i < 4; ++i) t[o].w[i] = cubic_weight(frac - (i - 1));
    }
    return t;
  };
  const auto tx = taps(out_w, w), ty = taps(out_h, h);
  auto clampi = [](long v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(n) - 1));
  };
  Tensor tmp({c, h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < 4; ++i) acc += tx[x].w[i] * planes.at(ch, y, clampi(tx[x].base + i, w));
        tmp.at(ch, y, x) = acc;
      }
  Tensor out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < 4; ++i) acc += ty[y].w[i] * tmp.at(ch, clampi(ty[y].base + i, h), x);
        out.at(ch, y, x) = acc;
      }
  return out;
}

// ---- latent codec -----------------------------------------------------------

/// Fixed, lossless stand-in for a VAE: maps an RGB image to [-1, 1] and
/// folds each factor x factor block into channels (space-to-depth), i.e. a
/// stride-`factor` convolution with one-hot kernels. Channel index is
/// (c * factor + dy) * factor + dx.
class LatentCodec {
 public:
  explicit LatentCodec(std::size_t factor = 4) : factor_(factor) {
    if (factor == 0) throw std::invalid_argument("codec factor must be positive");
  }
  std::size_t factor() const { return factor_; }
  std::size_t channels() const { return 3 * factor_ * factor_; }

  LatentTensor encode_planes(const Tensor& planes) const {
    require_latent(planes, "LatentCodec::encode");
    const std::size_t h = planes.dim(1), w = planes.dim(2), f = factor_;
    if (planes.dim(0) != 3 || h % f != 0 || w % f != 0)
      throw ShapeError("LatentCodec: image " + shape_str(planes.shape()) +
                       " not divisible by factor " + std::to_string(f));
    LatentTensor z({channels(), h / f, w / f});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          z.at((c * f + y % f) * f + x % f, y / f, x / f) = planes.at(c, y, x) / 127.5 - 1.0;
    return z;
  }
  LatentTensor encode(const Image& img) const { return encode_planes(to_planes(img)); }

  Tensor decode_planes(const LatentTensor& z) const {
    require_latent(z, "LatentCodec::decode");
    const std::size_t f = factor_;
    if (z.dim(0) != channels()) throw ShapeError("LatentCodec: wrong latent channel count");
    const std::size_t h = z.dim(1) * f, w = z.dim(2) * f;
    Tensor planes({3, h, w});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          planes.at(c, y, x) = (z.at((c * f + y % f) * f + x % f, y / f, x / f) + 1.0) * 127.5;
    return planes;
  }
  Image decode(const LatentTensor& z) const { return from_planes(decode_planes(z)); }

  /// Conditioning latent for an LR input: bicubic upsampling to HR size, then encode.
  LatentTensor encode_lr(const Image& lr, std::size_t scale) const {
    return encode_planes(bicubic_resize(to_planes(lr), lr.height * scale, lr.width * scale));
  }

 private:
  std::size_t factor_;
};

}  // namespace dtpsr
