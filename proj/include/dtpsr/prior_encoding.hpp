#pragma once

// Caption and LR-image encoders behind small interfaces. The reference
// encoders are deterministic toys; the replay encoders serve precomputed
// vectors from a line-delimited JSON file so real CLIP- or DAPE-like
// models can be plugged in without network access from the tests.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dtpsr/image.hpp"
#include "dtpsr/rng.hpp"
#include "dtpsr/tensor.hpp"

namespace dtpsr {

struct CaptionSet {
  std::string global_caption;
  std::vector<std::string> lf_captions;
  std::vector<std::string> hf_captions;

  std::size_t segments() const { return lf_captions.size(); }
  void validate() const {
    if (lf_captions.size() != hf_captions.size())
      throw std::invalid_argument("caption set: LF and HF caption counts differ");
  }
  friend bool operator==(const CaptionSet&, const CaptionSet&) = default;
};

enum class PriorKind { kGlobal, kLowFrequency, kHighFrequency, kImage };

inline std::string_view to_string(PriorKind k) {
  switch (k) {
    case PriorKind::kGlobal: return "global";
    case PriorKind::kLowFrequency: return "lf";
    case PriorKind::kHighFrequency: return "hf";
    case PriorKind::kImage: return "image";
  }
  return "?";
}

inline PriorKind prior_kind_from_string(std::string_view s) {
  if (s == "global") return PriorKind::kGlobal;
  if (s == "lf") return PriorKind::kLowFrequency;
  if (s == "hf") return PriorKind::kHighFrequency;
  if (s == "image") return PriorKind::kImage;
  throw std::invalid_argument("unknown prior kind '" + std::string(s) + "'");
}

/// Whether each caption contributes one pooled vector or one row per token.
enum class TextPooling { kPooled, kTokens };

/// Encoded conditioning: e_g (d), E_lf (n,d), E_hf (n,d). Rows whose mask
/// entry is false are padding and are all-zero.
struct PriorBundle {
  Tensor global;
  Tensor lf;
  Tensor hf;
  std::vector<bool> lf_mask;
  std::vector<bool> hf_mask;

  std::size_t dim() const { return global.size(); }
  std::size_t rows() const { return lf.dim(0); }
  friend bool operator==(const PriorBundle&, const PriorBundle&) = default;
};

struct LrFeatureTokens {
  Tensor tokens;  // (m, d_f)
  friend bool operator==(const LrFeatureTokens&, const LrFeatureTokens&) = default;
};

// ---- text -------------------------------------------------------------------

/// Lower-cased maximal runs of ASCII letters/digits; every other
/// non-space character is a token of its own.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    if (!std::isspace(c)) out.emplace_back(1, ch);
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::size_t dim() const = 0;
  /// Pooled embedding of a whole caption.
  virtual Tensor encode(std::string_view text, PriorKind kind) const = 0;
  /// One row per token, shape (k, dim). Empty text gives (0, dim).
  virtual Tensor encode_tokens(std::string_view text, PriorKind kind) const = 0;
};

/// Bag-of-tokens hashing encoder. Token w gets the sign vector
///   s_j(w) = +1 if bit 63 of splitmix64(fnv1a64(w) + j) is clear, else -1,
/// a caption is the sum of its tokens' sign vectors scaled to unit L2 norm,
/// and the empty caption is the zero vector.
class HashTextEncoder final : public TextEncoder {
 public:
  explicit HashTextEncoder(std::size_t dim = 64) : dim_(dim) {
    if (dim == 0) throw std::invalid_argument("encoder dim must be positive");
  }
  std::size_t dim() const override { return dim_; }

  Tensor encode(std::string_view text, PriorKind) const override {
    Tensor v({dim_});
    for (const auto& tok : tokenize(text)) add_signs(tok, v.data());
    const double n = l2_norm(v);
    if (n > 0.0)
      for (double& x : v.vec()) x /= n;
    return v;
  }

  Tensor encode_tokens(std::string_view text, PriorKind) const override {
    const auto toks = tokenize(text);
    Tensor m({toks.size(), dim_});
    const double s = 1.0 / std::sqrt(static_cast<double>(dim_));
    for (std::size_t i = 0; i < toks.size(); ++i) {
      auto row = m.data().subspan(i * dim_, dim_);
      add_signs(toks[i], row);
      for (double& x : row) x *= s;
    }
    return m;
  }

 private:
  void add_signs(const std::string& tok, std::span<double> out) const {
    const std::uint64_t h = fnv1a64(tok);
    for (std::size_t j = 0; j < dim_; ++j) out[j] += (splitmix64(h + j) >> 63) ? -1.0 : 1.0;
  }
  std::size_t dim_;
};

inline std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

/// Precomputed vectors keyed by (kind, key_hash). Records are JSON lines
/// {"key_hash": "<16 hex>", "kind": "global|lf|hf|image", "vector": [...]},
/// where key_hash is fnv1a64 of the caption text or image_hash() of the image.
class ReplayStore {
 public:
  ReplayStore() = default;

  static ReplayStore load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open replay file " + path.string());
    ReplayStore store;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const auto key = j.at("key_hash").get<std::string>();
        if (key.size() != 16 || key.find_first_not_of("0123456789abcdef") != std::string::npos)
          throw std::invalid_argument("key_hash must be 16 lower-case hex digits");
        store.insert(prior_kind_from_string(j.at("kind").get<std::string>()), std::stoull(key, nullptr, 16),
                     j.at("vector").get<std::vector<double>>());
      } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return store;
  }

  /// Text kinds share one dimension; image vectors have their own.
  void insert(PriorKind kind, std::uint64_t key, std::vector<double> v) {
    std::size_t& d = kind == PriorKind::kImage ? image_dim_ : text_dim_;
    if (d == 0) d = v.size();
    if (v.size() != d) throw std::invalid_argument("replay vectors of one modality must share one dimension");
    for (double x : v)
      if (!std::isfinite(x)) throw std::invalid_argument("replay vector is not finite");
    entries_[{kind, key}] = std::move(v);
  }

  static std::string record(PriorKind kind, std::uint64_t key, const std::vector<double>& v) {
    nlohmann::json j;
    j["key_hash"] = hash_hex(key);
    j["kind"] = std::string(to_string(kind));
    j["vector"] = v;
    return j.dump();
  }

  const std::vector<double>& lookup(PriorKind kind, std::uint64_t key) const {
    auto it = entries_.find({kind, key});
    if (it == entries_.end())
      throw std::out_of_range("replay store has no " + std::string(to_string(kind)) +
                              " entry for key " + hash_hex(key));
    return it->second;
  }
  std::size_t text_dim() const { return text_dim_; }
  std::size_t image_dim() const { return image_dim_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::pair<PriorKind, std::uint64_t>, std::vector<double>> entries_;
  std::size_t text_dim_ = 0, image_dim_ = 0;
};

class ReplayTextEncoder final : public TextEncoder {
 public:
  explicit ReplayTextEncoder(std::shared_ptr<const ReplayStore> store) : store_(std::move(store)) {}
  std::size_t dim() const override { return store_->text_dim(); }

  Tensor encode(std::string_view text, PriorKind kind) const override {
    if (text.empty()) return Tensor({dim()});
    return Tensor({dim()}, store_->lookup(kind, fnv1a64(text)));
  }
  // Replay files hold pooled vectors only; each caption is a single row.
  Tensor encode_tokens(std::string_view text, PriorKind kind) const override {
    if (text.empty()) return Tensor({0, dim()});
    return Tensor({1, dim()}, store_->lookup(kind, fnv1a64(text)));
  }

 private:
  std::shared_ptr<const ReplayStore> store_;
};

inline Tensor encode_global(std::string_view caption, const TextEncoder& enc) {
  return enc.encode(caption, PriorKind::kGlobal);
}

namespace detail {
inline Tensor encode_rows(const std::vector<std::string>& captions, const TextEncoder& enc,
                          PriorKind kind, TextPooling pooling) {
  const std::size_t d = enc.dim();
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto& c : captions) {
    const Tensor t = pooling == TextPooling::kPooled ? enc.encode(c, kind) : enc.encode_tokens(c, kind);
    data.insert(data.end(), t.vec().begin(), t.vec().end());
    rows += t.size() / d;
  }
  return Tensor({rows, d}, std::move(data));
}
}  // namespace detail

inline Tensor encode_lf(const std::vector<std::string>& captions, const TextEncoder& enc,
                        TextPooling pooling = TextPooling::kPooled) {
  return detail::encode_rows(captions, enc, PriorKind::kLowFrequency, pooling);
}

inline Tensor encode_hf(const std::vector<std::string>& captions, const TextEncoder& enc,
                        TextPooling pooling = TextPooling::kPooled) {
  return detail::encode_rows(captions, enc, PriorKind::kHighFrequency, pooling);
}

/// Appends masked all-zero rows so both matrices have `rows` rows.
inline PriorBundle pad_bundle(PriorBundle b, std::size_t rows) {
  auto pad = [rows](Tensor& m, std::vector<bool>& mask) {
    const std::size_t n = m.dim(0), d = m.dim(1);
    if (n > rows) throw std::invalid_argument("pad_bundle: cannot shrink");
    m.vec().resize(rows * d, 0.0);
    m = Tensor({rows, d}, std::move(m.vec()));
    mask.resize(rows, false);
  };
  pad(b.lf, b.lf_mask);
  pad(b.hf, b.hf_mask);
  return b;
}

/// In pooled mode, rows of blank captions are masked out (their embedding
/// is the zero vector either way).
inline PriorBundle encode_priors(const CaptionSet& captions, const TextEncoder& enc,
                                 TextPooling pooling = TextPooling::kPooled) {
  captions.validate();
  PriorBundle b;
  b.global = encode_global(captions.global_caption, enc);
  b.lf = encode_lf(captions.lf_captions, enc, pooling);
  b.hf = encode_hf(captions.hf_captions, enc, pooling);
  auto mask = [pooling](const std::vector<std::string>& caps, std::size_t rows) {
    std::vector<bool> m(rows, true);
    if (pooling == TextPooling::kPooled)
      for (std::size_t i = 0; i < caps.size(); ++i)
        m[i] = caps[i].find_first_not_of(" \t\r\n") != std::string::npos;
    return m;
  };
  b.lf_mask = mask(captions.lf_captions, b.lf.dim(0));
  b.hf_mask = mask(captions.hf_captions, b.hf.dim(0));
  return pad_bundle(std::move(b), std::max(b.lf.dim(0), b.hf.dim(0)));
}

// ---- LR image features ---------------------------------------------------------

class ImageFeatureEncoder {
 public:
  virtual ~ImageFeatureEncoder() = default;
  virtual std::size_t token_dim() const = 0;
  virtual std::size_t token_count() const = 0;
  virtual LrFeatureTokens encode(const Image& lr) const = 0;
};

/// Non-overlapping patch tokenizer with fixed pseudo-random weights:
/// token = W * patch + b where patch holds the patch's pixels scaled by
/// 1/127.5 in (c, dy, dx) order and W ~ N(0, 1/fan_in) from `seed`.
class PatchFeatureEncoder final : public ImageFeatureEncoder {
 public:
  PatchFeatureEncoder(std::size_t image_size = 16, std::size_t patch = 4, std::size_t dim = 32,
                      std::uint64_t seed = 7, double bias = 0.0)
      : image_size_(image_size), patch_(patch), dim_(dim) {
    if (patch == 0 || image_size % patch != 0)
      throw std::invalid_argument("patch size must divide the image size");
    const std::size_t fan_in = 3 * patch * patch;
    weights_ = Tensor({dim, fan_in});
    const CounterRng rng(seed, "lr_encoder.weights");
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < weights_.size(); ++i) weights_[i] = s * rng.normal(i);
    bias_ = Tensor({dim}, bias);
  }

  std::size_t token_dim() const override { return dim_; }
  std::size_t token_count() const override {
    return (image_size_ / patch_) * (image_size_ / patch_);
  }

  LrFeatureTokens encode(const Image& lr) const override {
    if (lr.width != image_size_ || lr.height != image_size_)
      throw ShapeError("LR encoder expects " + std::to_string(image_size_) + "x" +
                       std::to_string(image_size_) + " input, got " + std::to_string(lr.width) +
                       "x" + std::to_string(lr.height));
    const std::size_t g = image_size_ / patch_, fan_in = 3 * patch_ * patch_;
    Tensor tokens({g * g, dim_});
    std::vector<double> patch(fan_in);
    for (std::size_t py = 0; py < g; ++py)
      for (std::size_t px = 0; px < g; ++px) {
        std::size_t k = 0;
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t dy = 0; dy < patch_; ++dy)
            for (std::size_t dx = 0; dx < patch_; ++dx)
              patch[k++] = lr.at(px * patch_ + dx, py * patch_ + dy, c) / 127.5;
        const std::size_t row = py * g + px;
        for (std::size_t o = 0; o < dim_; ++o) {
          double acc = bias_[o];
          for (std::size_t i = 0; i < fan_in; ++i) acc += weights_[o * fan_in + i] * patch[i];
          tokens.at(row, o) = acc;
        }
      }
    return {std::move(tokens)};
  }

 private:
  std::size_t image_size_, patch_, dim_;
  Tensor weights_, bias_;
};

class ReplayImageEncoder final : public ImageFeatureEncoder {
 public:
  ReplayImageEncoder(std::shared_ptr<const ReplayStore> store, std::size_t token_dim)
      : store_(std::move(store)), token_dim_(token_dim) {
    if (token_dim == 0 || store_->image_dim() % token_dim != 0)
      throw std::invalid_argument("replay image vectors must be a whole number of tokens");
  }
  std::size_t token_dim() const override { return token_dim_; }
  std::size_t token_count() const override { return store_->image_dim() / token_dim_; }
  LrFeatureTokens encode(const Image& lr) const override {
    return {Tensor({token_count(), token_dim_}, store_->lookup(PriorKind::kImage, image_hash(lr)))};
  }

 private:
  std::shared_ptr<const ReplayStore> store_;
  std::size_t token_dim_;
};

inline LrFeatureTokens encode_lr_features(const Image& lr, const ImageFeatureEncoder& enc) {
  return enc.encode(lr);
}

}  // namespace dtpsr
