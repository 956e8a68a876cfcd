#pragma once

// Conditional noise predictor. A small convolutional encoder-decoder with a
// sinusoidal time embedding; every resolution level ends in an attention
// site that applies the four conditioning branches in sequence:
//
//   features -> GTCA(e_g) -> LFCA(E_lf) -> HFCA(E_hf) -> LRCA(f_lr)
//
// Each branch is a pre-normalised cross-attention whose output is added to
// its input through a learnable scalar gate (initialised to zero).
//
// Output head: conv_out(h) + skip_out([z_t; z_lr]), plus in "time_skip" mode
// g_z(t) z_t + g_lr(t) z_lr with scalar gains read linearly off the time
// embedding (zero-initialised).

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dtpsr/autodiff.hpp"
#include "dtpsr/diffusion.hpp"
#include "dtpsr/json_util.hpp"
#include "dtpsr/prior_encoding.hpp"
#include "dtpsr/rng.hpp"
#include "dtpsr/tensor.hpp"

namespace dtpsr {

enum class Branch { kGlobal, kLowFrequency, kHighFrequency, kLowResolution };

inline constexpr std::array<Branch, 4> kDefaultBranchOrder{
    Branch::kGlobal, Branch::kLowFrequency, Branch::kHighFrequency, Branch::kLowResolution};

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::kGlobal: return "gtca";
    case Branch::kLowFrequency: return "lfca";
    case Branch::kHighFrequency: return "hfca";
    case Branch::kLowResolution: return "lrca";
  }
  return "?";
}

inline Branch branch_from_name(std::string_view s) {
  for (Branch b : kDefaultBranchOrder)
    if (s == branch_name(b)) return b;
  throw ValidationError("unknown branch '" + std::string(s) + "'");
}

enum class OutputMode { kEpsilon, kTimeSkip };

inline const char* output_mode_name(OutputMode m) {
  switch (m) {
    case OutputMode::kEpsilon: return "epsilon";
    case OutputMode::kTimeSkip: return "time_skip";
  }
  return "?";
}

inline OutputMode output_mode_from_name(std::string_view s) {
  if (s == "epsilon") return OutputMode::kEpsilon;
  if (s == "time_skip") return OutputMode::kTimeSkip;
  throw ValidationError("unknown denoiser.output_mode '" + std::string(s) + "'");
}

struct DenoiserConfig {
  int latent_channels = 48;
  int cond_channels = 48;
  int base_channels = 16;
  int depth = 2;  // resolution levels, one attention site each
  int embed_dim = 32;
  int attention_heads = 4;
  int text_dim = 64;
  int lr_token_dim = 32;
  int time_embed_dim = 32;
  bool enable_gtca = true;
  bool enable_lfca = true;
  bool enable_hfca = true;
  bool enable_lrca = true;
  bool mixed_frequency_mode = false;
  bool lrca_final_only = false;
  std::array<Branch, 4> branch_order = kDefaultBranchOrder;
  std::uint64_t init_seed = 0;
  OutputMode output_mode = OutputMode::kTimeSkip;

  bool enabled(Branch b) const {
    switch (b) {
      case Branch::kGlobal: return enable_gtca;
      case Branch::kLowFrequency: return enable_lfca;
      case Branch::kHighFrequency: return enable_hfca;
      case Branch::kLowResolution: return enable_lrca;
    }
    return false;
  }

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw ValidationError(std::string("denoiser.") + name + " must be positive");
    };
    positive(latent_channels, "latent_channels");
    positive(cond_channels, "cond_channels");
    positive(base_channels, "base_channels");
    positive(depth, "depth");
    positive(embed_dim, "embed_dim");
    positive(attention_heads, "attention_heads");
    positive(text_dim, "text_dim");
    positive(lr_token_dim, "lr_token_dim");
    positive(time_embed_dim, "time_embed_dim");
    if (depth > 4) throw ValidationError("denoiser.depth must be <= 4");
    if (embed_dim % attention_heads != 0)
      throw ValidationError("denoiser.embed_dim must be divisible by attention_heads");
    if (time_embed_dim % 2 != 0) throw ValidationError("denoiser.time_embed_dim must be even");
    if (mixed_frequency_mode && !(enable_lfca && enable_hfca))
      throw ValidationError("denoiser.mixed_frequency_mode requires enable_lfca and enable_hfca");
    if (output_mode != OutputMode::kEpsilon && cond_channels != latent_channels)
      throw ValidationError("denoiser.output_mode " + std::string(output_mode_name(output_mode)) +
                            " requires cond_channels == latent_channels");
    std::array<int, 4> seen{};
    for (Branch b : branch_order) ++seen[static_cast<std::size_t>(b)];
    for (int s : seen)
      if (s != 1) throw ValidationError("denoiser.branch_order must be a permutation of the four branches");
  }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

inline void to_json(Json& j, const DenoiserConfig& c) {
  j = Json{{"latent_channels", c.latent_channels},
           {"cond_channels", c.cond_channels},
           {"base_channels", c.base_channels},
           {"depth", c.depth},
           {"embed_dim", c.embed_dim},
           {"attention_heads", c.attention_heads},
           {"text_dim", c.text_dim},
           {"lr_token_dim", c.lr_token_dim},
           {"time_embed_dim", c.time_embed_dim},
           {"enable_gtca", c.enable_gtca},
           {"enable_lfca", c.enable_lfca},
           {"enable_hfca", c.enable_hfca},
           {"enable_lrca", c.enable_lrca},
           {"mixed_frequency_mode", c.mixed_frequency_mode},
           {"lrca_final_only", c.lrca_final_only},
           {"init_seed", c.init_seed},
           {"output_mode", output_mode_name(c.output_mode)}};
  Json order = Json::array();
  for (Branch b : c.branch_order) order.push_back(branch_name(b));
  j["branch_order"] = order;
}

inline void from_json(const Json& j, DenoiserConfig& c) {
  constexpr std::string_view s = "denoiser";
  reject_unknown_keys(j,
                      {"latent_channels", "cond_channels", "base_channels", "depth", "embed_dim",
                       "attention_heads", "text_dim", "lr_token_dim", "time_embed_dim",
                       "enable_gtca", "enable_lfca", "enable_hfca", "enable_lrca",
                       "mixed_frequency_mode", "lrca_final_only", "branch_order", "init_seed",
                       "output_mode"},
                      s);
  read_opt(j, "latent_channels", c.latent_channels, s);
  read_opt(j, "cond_channels", c.cond_channels, s);
  read_opt(j, "base_channels", c.base_channels, s);
  read_opt(j, "depth", c.depth, s);
  read_opt(j, "embed_dim", c.embed_dim, s);
  read_opt(j, "attention_heads", c.attention_heads, s);
  read_opt(j, "text_dim", c.text_dim, s);
  read_opt(j, "lr_token_dim", c.lr_token_dim, s);
  read_opt(j, "time_embed_dim", c.time_embed_dim, s);
  read_opt(j, "enable_gtca", c.enable_gtca, s);
  read_opt(j, "enable_lfca", c.enable_lfca, s);
  read_opt(j, "enable_hfca", c.enable_hfca, s);
  read_opt(j, "enable_lrca", c.enable_lrca, s);
  read_opt(j, "mixed_frequency_mode", c.mixed_frequency_mode, s);
  read_opt(j, "lrca_final_only", c.lrca_final_only, s);
  read_opt(j, "init_seed", c.init_seed, s);
  if (auto it = j.find("output_mode"); it != j.end()) {
    if (!it->is_string()) throw ValidationError("denoiser.output_mode must be a string");
    c.output_mode = output_mode_from_name(it->get<std::string>());
  }
  if (auto it = j.find("branch_order"); it != j.end()) {
    if (!it->is_array() || it->size() != 4)
      throw ValidationError("denoiser.branch_order must list four branches");
    for (std::size_t i = 0; i < 4; ++i) c.branch_order[i] = branch_from_name((*it)[i].get<std::string>());
  }
}

/// Named trainable tensors in registration order.
class ParameterSet {
 public:
  ad::Var add(std::string name, Tensor init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    auto v = ad::make_leaf(std::move(init), true);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), v});
    return v;
  }

  struct Entry {
    std::string name;
    ad::Var var;
  };
  const std::vector<Entry>& entries() const { return entries_; }
  ad::Var get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].var;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var->value.size();
    return n;
  }
  void zero_grad() {
    for (auto& e : entries_) e.var->grad = Tensor(e.var->value.shape());
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Residual cross-attention: x + gate * (softmax(LN(x)Wq (cWk)^T / sqrt(dh)) (cWv + bv)) Wo
/// with x the (N, C) feature tokens and c the (M, ctx) conditioning rows.
struct CrossAttention {
  ad::Var norm_gamma, norm_beta, wq, wk, wv, bv, wo, gate;
  std::size_t heads = 1;

  static CrossAttention create(ParameterSet& params, const std::string& prefix, std::size_t channels,
                               std::size_t ctx_dim, std::size_t embed_dim, std::size_t heads,
                               std::uint64_t seed) {
    auto init = [&](const std::string& name, Shape shape, std::size_t fan_in) {
      const std::string full = prefix + "." + name;
      const CounterRng rng(seed, full);
      Tensor t(std::move(shape));
      const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = s * rng.normal(i);
      return params.add(full, std::move(t));
    };
    CrossAttention a;
    a.heads = heads;
    a.norm_gamma = params.add(prefix + ".norm.gamma", Tensor({channels}, 1.0));
    a.norm_beta = params.add(prefix + ".norm.beta", Tensor({channels}));
    a.wq = init("q.weight", {channels, embed_dim}, channels);
    a.wk = init("k.weight", {ctx_dim, embed_dim}, ctx_dim);
    a.wv = init("v.weight", {ctx_dim, embed_dim}, ctx_dim);
    a.bv = params.add(prefix + ".v.bias", Tensor({embed_dim}));
    a.wo = init("out.weight", {embed_dim, channels}, embed_dim);
    a.gate = params.add(prefix + ".gate", Tensor({1}));
    return a;
  }

  /// tokens: (N, C); context: (M, ctx). Empty or fully masked context
  /// returns `tokens` itself.
  ad::Var apply(ad::Graph& g, const ad::Var& tokens, const Tensor& context,
                const std::vector<bool>& mask = {}) const {
    if (context.rank() != 2) throw ShapeError("cross-attention context must be a matrix");
    if (context.dim(0) == 0) return tokens;
    if (!mask.empty() && std::none_of(mask.begin(), mask.end(), [](bool v) { return v; })) return tokens;
    if (context.dim(1) != wk->value.dim(0))
      throw ShapeError("cross-attention context dim " + std::to_string(context.dim(1)) +
                       " != expected " + std::to_string(wk->value.dim(0)));
    const ad::Var ctx = g.constant(context);
    const ad::Var xn = g.layer_norm_rows(tokens, norm_gamma, norm_beta);
    const ad::Var q = g.matmul(xn, wq);
    const ad::Var k = g.matmul(ctx, wk);
    const ad::Var v = g.add_row_bias(g.matmul(ctx, wv), bv);
    const ad::Var o = g.matmul(g.attention(q, k, v, heads, mask), wo);
    return g.add(tokens, g.scale_by(o, gate));
  }
};

/// Intermediate feature maps of one attention site.
struct SiteTaps {
  Tensor input, after_global, after_lf, after_hf, after_lr;
};

inline Tensor sinusoidal_embedding(double t, std::size_t dim) {
  Tensor e({1, dim});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

class Denoiser {
 public:
  explicit Denoiser(DenoiserConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
  }

  const DenoiserConfig& config() const { return cfg_; }
  /// Branch flags and order may change between evaluations; the parameter
  /// layout is fixed by the remaining fields.
  void set_branch_flags(const DenoiserConfig& flags) {
    DenoiserConfig next = cfg_;
    next.enable_gtca = flags.enable_gtca;
    next.enable_lfca = flags.enable_lfca;
    next.enable_hfca = flags.enable_hfca;
    next.enable_lrca = flags.enable_lrca;
    next.mixed_frequency_mode = flags.mixed_frequency_mode;
    next.lrca_final_only = flags.lrca_final_only;
    next.branch_order = flags.branch_order;
    next.validate();
    cfg_ = next;
  }

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  std::size_t sites() const { return static_cast<std::size_t>(cfg_.depth); }

  /// Applies one branch of attention site `site` to a (C,H,W) feature map.
  /// Disabled branches and empty/fully-masked conditioning return `features`.
  ad::Var apply_branch(ad::Graph& g, std::size_t site, Branch b, const ad::Var& features,
                       const PriorBundle& priors, const LrFeatureTokens& lr) const {
    if (!cfg_.enabled(b)) return features;
    if (b == Branch::kLowResolution && cfg_.lrca_final_only && site + 1 != sites()) return features;
    const CrossAttention& attn = sites_.at(site)[static_cast<std::size_t>(b)];
    const std::size_t h = features->value.dim(1), w = features->value.dim(2);
    const ad::Var tokens = g.to_tokens(features);
    ad::Var out;
    switch (b) {
      case Branch::kGlobal:
        if (priors.global.size() != static_cast<std::size_t>(cfg_.text_dim))
          throw ShapeError("global embedding has dim " + std::to_string(priors.global.size()));
        out = attn.apply(g, tokens, priors.global.reshaped({1, priors.global.size()}));
        break;
      case Branch::kLowFrequency:
      case Branch::kHighFrequency: {
        const bool lf = b == Branch::kLowFrequency;
        if (cfg_.mixed_frequency_mode) {
          auto [ctx, mask] = mixed_context(priors);
          out = attn.apply(g, tokens, ctx, mask);
        } else {
          out = attn.apply(g, tokens, lf ? priors.lf : priors.hf, lf ? priors.lf_mask : priors.hf_mask);
        }
        break;
      }
      case Branch::kLowResolution:
        out = attn.apply(g, tokens, lr.tokens);
        break;
    }
    if (out == tokens) return features;
    return g.from_tokens(out, h, w);
  }

  /// Predicted noise for (z_t, z_lr) at training timestep t.
  ad::Var forward(ad::Graph& g, const LatentTensor& z_t, const LatentTensor& z_lr, int t,
                  const PriorBundle& priors, const LrFeatureTokens& lr,
                  std::vector<SiteTaps>* taps = nullptr) const {
    require_latent(z_t, "denoiser z_t");
    require_latent(z_lr, "denoiser z_lr");
    if (z_t.dim(0) != static_cast<std::size_t>(cfg_.latent_channels) ||
        z_lr.dim(0) != static_cast<std::size_t>(cfg_.cond_channels) || z_t.dim(1) != z_lr.dim(1) ||
        z_t.dim(2) != z_lr.dim(2))
      throw ShapeError("denoiser inputs " + shape_str(z_t.shape()) + " / " + shape_str(z_lr.shape()) +
                       " do not match the configuration");
    const std::size_t down = std::size_t{1} << (sites() - 1);
    if (z_t.dim(1) % down != 0 || z_t.dim(2) % down != 0)
      throw ShapeError("latent size must be divisible by 2^(depth-1)");
    if (priors.lf.dim(0) != priors.hf.dim(0))
      throw ShapeError("E_lf and E_hf must have the same number of rows");
    if (!lr.tokens.empty() && lr.tokens.dim(1) != static_cast<std::size_t>(cfg_.lr_token_dim))
      throw ShapeError("LR token dim mismatch");
    if (taps) taps->assign(sites(), {});

    const ad::Var x = g.concat0(g.constant(z_t), g.constant(z_lr));
    ad::Var temb = g.constant(sinusoidal_embedding(static_cast<double>(t),
                                                   static_cast<std::size_t>(cfg_.time_embed_dim)));
    temb = g.silu(linear(g, temb, "denoiser.time.fc1"));
    temb = linear(g, temb, "denoiser.time.fc2");

    ad::Var h = conv(g, x, "denoiser.conv_in", 1, 1);
    std::vector<ad::Var> skips;
    for (std::size_t l = 0; l < sites(); ++l) {
      const std::string lv = "denoiser.level" + std::to_string(l);
      if (l > 0) h = conv(g, h, lv + ".down", 2, 1);
      h = g.silu(g.add_channel(h, linear(g, temb, lv + ".time_proj")));
      h = g.silu(conv(g, h, lv + ".conv", 1, 1));
      h = attention_site(g, l, h, priors, lr, taps ? &(*taps)[l] : nullptr);
      skips.push_back(h);
    }
    for (std::size_t l = sites() - 1; l > 0; --l) {
      const std::string up = "denoiser.up" + std::to_string(l);
      h = g.silu(conv(g, g.upsample_nearest2(h), up + ".conv", 1, 1));
      h = g.silu(conv(g, g.concat0(h, skips[l - 1]), up + ".merge", 1, 1));
    }
    const ad::Var net = g.add(conv(g, h, "denoiser.conv_out", 1, 1), conv(g, x, "denoiser.skip_out", 1, 0));
    if (cfg_.output_mode == OutputMode::kEpsilon) return net;
    const ad::Var gains = linear(g, temb, "denoiser.out_gain");  // (1, 2)
    return g.add(net, g.add(g.scale_by(g.constant(z_t), gains, 0), g.scale_by(g.constant(z_lr), gains, 1)));
  }

  LatentTensor predict(const LatentTensor& z_t, const LatentTensor& z_lr, int t, const PriorBundle& priors,
                       const LrFeatureTokens& lr) const {
    ad::Graph g(false);
    return forward(g, z_t, z_lr, t, priors, lr)->value;
  }

  /// Noise-prediction objective as a graph node, for training.
  ad::Var loss(ad::Graph& g, const LatentTensor& z0, const LatentTensor& z_lr, int t,
               const LatentTensor& eps, const NoiseSchedule& schedule, const PriorBundle& priors,
               const LrFeatureTokens& lr) const {
    const LatentTensor z_t = forward_diffuse(z0, t, eps, schedule);
    const ad::Var eps_hat = forward(g, z_t, z_lr, t, priors, lr);
    if (!eps_hat->value.all_finite()) throw NumericalError("denoiser produced non-finite output");
    return g.mse(eps_hat, eps);
  }

 private:
  static std::pair<Tensor, std::vector<bool>> mixed_context(const PriorBundle& p) {
    const std::size_t d = p.lf.dim(1);
    std::vector<double> data(p.lf.vec());
    data.insert(data.end(), p.hf.vec().begin(), p.hf.vec().end());
    std::vector<bool> mask(p.lf_mask);
    mask.insert(mask.end(), p.hf_mask.begin(), p.hf_mask.end());
    return {Tensor({p.lf.dim(0) + p.hf.dim(0), d}, std::move(data)), std::move(mask)};
  }

  ad::Var attention_site(ad::Graph& g, std::size_t site, ad::Var h, const PriorBundle& priors,
                         const LrFeatureTokens& lr, SiteTaps* tap) const {
    if (tap) tap->input = h->value;
    for (Branch b : cfg_.branch_order) {
      h = apply_branch(g, site, b, h, priors, lr);
      if (!tap) continue;
      switch (b) {
        case Branch::kGlobal: tap->after_global = h->value; break;
        case Branch::kLowFrequency: tap->after_lf = h->value; break;
        case Branch::kHighFrequency: tap->after_hf = h->value; break;
        case Branch::kLowResolution: tap->after_lr = h->value; break;
      }
    }
    return h;
  }

  ad::Var conv(ad::Graph& g, const ad::Var& x, const std::string& name, std::size_t stride,
               std::size_t pad) const {
    const std::string bias = name + ".bias";
    return g.conv2d(x, params_.get(name + ".weight"), params_.contains(bias) ? params_.get(bias) : nullptr,
                    stride, pad);
  }

  ad::Var linear(ad::Graph& g, const ad::Var& x, const std::string& name) const {
    return g.add_row_bias(g.matmul(x, params_.get(name + ".weight")), params_.get(name + ".bias"));
  }

  void build() {
    const auto cz = static_cast<std::size_t>(cfg_.latent_channels);
    const auto cin = cz + static_cast<std::size_t>(cfg_.cond_channels);
    const auto c0 = static_cast<std::size_t>(cfg_.base_channels);
    const auto e = static_cast<std::size_t>(cfg_.time_embed_dim);
    const auto d = static_cast<std::size_t>(cfg_.embed_dim);

    auto normal = [this](const std::string& name, Shape shape, std::size_t fan_in) {
      const CounterRng rng(cfg_.init_seed, name);
      Tensor t(std::move(shape));
      const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = s * rng.normal(i);
      params_.add(name, std::move(t));
    };
    auto add_conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t k, bool bias) {
      normal(name + ".weight", {out, in, k, k}, in * k * k);
      if (bias) params_.add(name + ".bias", Tensor({out}));
    };
    auto add_linear = [&](const std::string& name, std::size_t in, std::size_t out) {
      normal(name + ".weight", {in, out}, in);
      params_.add(name + ".bias", Tensor({out}));
    };

    add_linear("denoiser.time.fc1", e, e);
    add_linear("denoiser.time.fc2", e, e);
    add_conv("denoiser.conv_in", c0, cin, 3, true);
    for (std::size_t l = 0; l < sites(); ++l) {
      const std::string lv = "denoiser.level" + std::to_string(l);
      const std::size_t ch = c0 << l;
      if (l > 0) add_conv(lv + ".down", ch, ch / 2, 3, true);
      add_linear(lv + ".time_proj", e, ch);
      add_conv(lv + ".conv", ch, ch, 3, true);
      std::array<CrossAttention, 4> site;
      for (Branch b : kDefaultBranchOrder) {
        const std::size_t ctx = b == Branch::kLowResolution ? static_cast<std::size_t>(cfg_.lr_token_dim)
                                                            : static_cast<std::size_t>(cfg_.text_dim);
        site[static_cast<std::size_t>(b)] =
            CrossAttention::create(params_, lv + "." + branch_name(b), ch, ctx, d,
                                   static_cast<std::size_t>(cfg_.attention_heads), cfg_.init_seed);
      }
      sites_.push_back(site);
    }
    for (std::size_t l = sites() - 1; l > 0; --l) {
      const std::string up = "denoiser.up" + std::to_string(l);
      const std::size_t ch = c0 << l;
      add_conv(up + ".conv", ch / 2, ch, 3, true);
      add_conv(up + ".merge", ch / 2, ch, 3, true);
    }
    add_conv("denoiser.conv_out", cz, c0, 3, true);
    add_conv("denoiser.skip_out", cz, cin, 1, false);
    if (cfg_.output_mode == OutputMode::kTimeSkip) {
      params_.add("denoiser.out_gain.weight", Tensor({e, 2}));
      params_.add("denoiser.out_gain.bias", Tensor({2}));
    }
  }

  DenoiserConfig cfg_;
  ParameterSet params_;
  std::vector<std::array<CrossAttention, 4>> sites_;
};

}  // namespace dtpsr
