#include <gtest/gtest.h>

#include "dtpsr/denoiser.hpp"
#include "fixtures.hpp"
#include "test_util.hpp"

using namespace dtpsr;
using namespace dtpsr::test;

namespace {

// Hand-set block matching tests/oracles/attention_oracle.py.
struct ScalarBlock {
  ParameterSet params;
  CrossAttention attn = CrossAttention::create(params, "t", 2, 2, 2, 1, 0);
  ScalarBlock() {
    attn.wq->value = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    attn.wk->value = Tensor({2, 2}, {0.5, -1.0, 2.0, 0.25});
    attn.wv->value = Tensor({2, 2}, {1.0, 2.0, -1.0, 0.5});
    attn.bv->value = Tensor({2}, {0.1, -0.2});
    attn.wo->value = Tensor({2, 2}, {1.0, 0.5, 0.0, -1.0});
    attn.gate->value = Tensor({1}, {0.7});
  }
  Tensor run(const Tensor& ctx, const std::vector<bool>& mask = {}) const {
    ad::Graph g(false);
    return attn.apply(g, g.constant(Tensor({1, 2}, {1.0, 3.0})), ctx, mask)->value;
  }
};

LatentTensor features(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  return random_tensor({c, h, w}, seed);
}

Tensor apply(const Denoiser& m, Branch b, const Tensor& x, const PriorBundle& p, const LrFeatureTokens& lr,
             std::size_t site = 0) {
  ad::Graph g(false);
  return m.apply_branch(g, site, b, g.constant(x), p, lr)->value;
}

Denoiser gated_tiny(std::uint64_t seed = 5) {
  Denoiser m(tiny_config());
  randomize_gates(m, seed);
  return m;
}

}  // namespace

TEST(CrossAttention, SingleKeyMatchesScalarOracle) {
  ScalarBlock b;
  const Tensor out = b.run(Tensor({1, 2}, {0.5, -1.0}));
  EXPECT_NEAR(out[0], 2.1200000000000001, 1e-12);
  EXPECT_NEAR(out[1], 3.3500000000000001, 1e-12);
}

TEST(CrossAttention, TwoKeysMatchScalarOracle) {
  ScalarBlock b;
  const Tensor out = b.run(Tensor({2, 2}, {0.5, -1.0, 2.0, 1.0}));
  EXPECT_NEAR(out[0], 2.114099209338371, 1e-12);
  EXPECT_NEAR(out[1], 3.2998432793761556, 1e-12);
}

TEST(CrossAttention, DuplicatedKeyShiftsWeights) {
  ScalarBlock b;
  const Tensor two = b.run(Tensor({2, 2}, {0.5, -1.0, 2.0, 1.0}));
  const Tensor dup = b.run(Tensor({3, 2}, {0.5, -1.0, 0.5, -1.0, 2.0, 1.0}));
  EXPECT_NEAR(dup[0], 2.1170245222818522, 1e-12);
  EXPECT_NEAR(dup[1], 3.3247084393957471, 1e-12);
  EXPECT_GT(std::abs(dup[0] - two[0]), 1e-4);
}

TEST(CrossAttention, MaskedPaddingIsInvisible) {
  ScalarBlock b;
  const Tensor two = b.run(Tensor({2, 2}, {0.5, -1.0, 2.0, 1.0}));
  const Tensor padded = b.run(Tensor({4, 2}, {0.5, -1.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0}), {true, false, true, false});
  EXPECT_LE(max_abs_diff(two, padded), 1e-12);
}

TEST(CrossAttention, EmptyOrFullyMaskedContextIsIdentity) {
  ScalarBlock b;
  const Tensor x({1, 2}, {1.0, 3.0});
  EXPECT_EQ(b.run(Tensor({0, 2})), x);
  EXPECT_EQ(b.run(Tensor({2, 2}, {0.5, -1.0, 2.0, 1.0}), {false, false}), x);
}

TEST(DenoiserConfig, Validation) {
  DenoiserConfig c = tiny_config();
  c.embed_dim = 5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.mixed_frequency_mode = true;
  c.enable_hfca = false;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_config();
  c.branch_order = {Branch::kGlobal, Branch::kGlobal, Branch::kHighFrequency, Branch::kLowResolution};
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_NO_THROW(tiny_config().validate());
}

TEST(DenoiserConfig, JsonRoundTripAndUnknownKeys) {
  DenoiserConfig c = tiny_config();
  c.enable_hfca = false;
  c.lrca_final_only = true;
  c.branch_order = {Branch::kLowResolution, Branch::kHighFrequency, Branch::kLowFrequency, Branch::kGlobal};
  c.output_mode = OutputMode::kEpsilon;
  EXPECT_EQ(Json(c).get<DenoiserConfig>(), c);
  Json j = c;
  j["surprise"] = 1;
  EXPECT_THROW(j.get<DenoiserConfig>(), ValidationError);
}

TEST(BranchIdentity, DisabledBranchesPassThroughExactly) {
  const auto p = random_priors(2, 4, 30);
  const auto lr = random_lr_tokens(5, 3, 31);
  const Tensor x = features(3, 4, 4, 32);
  for (Branch b : kDefaultBranchOrder) {
    Denoiser m = gated_tiny();
    DenoiserConfig flags = m.config();
    flags.enable_gtca = b != Branch::kGlobal;
    flags.enable_lfca = b != Branch::kLowFrequency;
    flags.enable_hfca = b != Branch::kHighFrequency;
    flags.enable_lrca = b != Branch::kLowResolution;
    m.set_branch_flags(flags);
    EXPECT_EQ(max_abs_diff(apply(m, b, x, p, lr), x), 0.0) << branch_name(b);
    EXPECT_GT(max_abs_diff(apply(gated_tiny(), b, x, p, lr), x), 1e-6) << branch_name(b);
  }
}

TEST(BranchIdentity, ZeroOrEmptyConditioningPassesThrough) {
  const Denoiser m = gated_tiny();
  const Tensor x = features(3, 4, 4, 33);
  PriorBundle p = random_priors(2, 4, 34);
  p.global.fill(0.0);
  EXPECT_EQ(max_abs_diff(apply(m, Branch::kGlobal, x, p, {}), x), 0.0);

  PriorBundle empty = random_priors(0, 4, 35);
  EXPECT_EQ(max_abs_diff(apply(m, Branch::kLowFrequency, x, empty, {}), x), 0.0);
  EXPECT_EQ(max_abs_diff(apply(m, Branch::kHighFrequency, x, empty, {}), x), 0.0);

  PriorBundle masked = random_priors(3, 4, 36);
  masked.lf_mask.assign(3, false);
  masked.hf_mask.assign(3, false);
  EXPECT_EQ(max_abs_diff(apply(m, Branch::kLowFrequency, x, masked, {}), x), 0.0);
  EXPECT_EQ(max_abs_diff(apply(m, Branch::kHighFrequency, x, masked, {}), x), 0.0);

  LrFeatureTokens zeros{Tensor({5, 3})};
  EXPECT_EQ(max_abs_diff(apply(m, Branch::kLowResolution, x, p, zeros), x), 0.0);
  EXPECT_EQ(max_abs_diff(apply(m, Branch::kLowResolution, x, p, LrFeatureTokens{Tensor({0, 3})}), x), 0.0);
}

TEST(BranchIdentity, LrcaFinalOnlySkipsEarlierSites) {
  Denoiser m = gated_tiny();
  DenoiserConfig flags = m.config();
  flags.lrca_final_only = true;
  m.set_branch_flags(flags);
  const auto lr = random_lr_tokens(5, 3, 37);
  const Tensor x0 = features(3, 4, 4, 38), x1 = features(6, 2, 2, 39);
  EXPECT_EQ(max_abs_diff(apply(m, Branch::kLowResolution, x0, {}, lr, 0), x0), 0.0);
  EXPECT_GT(max_abs_diff(apply(m, Branch::kLowResolution, x1, {}, lr, 1), x1), 1e-6);
}

TEST(Denoiser, PaddingInvarianceEndToEnd) {
  const Denoiser m = gated_tiny();
  const auto p = random_priors(2, 4, 40);
  const auto lr = random_lr_tokens(5, 3, 41);
  const LatentTensor z = features(2, 4, 4, 42), zl = features(2, 4, 4, 43);
  const Tensor a = m.predict(z, zl, 17, p, lr);
  const Tensor b = m.predict(z, zl, 17, pad_bundle(p, 6), lr);
  EXPECT_LE(max_abs_diff(a, b), 1e-12);
}

TEST(Denoiser, AllBranchesDisabledEqualsBackbone) {
  Denoiser off = gated_tiny();
  DenoiserConfig flags = off.config();
  flags.enable_gtca = flags.enable_lfca = flags.enable_hfca = flags.enable_lrca = false;
  off.set_branch_flags(flags);
  // Backbone reference: same weights, all branch gates at zero.
  Denoiser ref = gated_tiny();
  for (auto& e : ref.parameters().entries())
    if (e.name.ends_with(".gate")) e.var->value.fill(0.0);
  const auto p = random_priors(2, 4, 44);
  const auto lr = random_lr_tokens(5, 3, 45);
  const LatentTensor z = features(2, 4, 4, 46), zl = features(2, 4, 4, 47);
  EXPECT_EQ(max_abs_diff(off.predict(z, zl, 300, p, lr), ref.predict(z, zl, 300, p, lr)), 0.0);
  EXPECT_EQ(max_abs_diff(off.predict(z, zl, 300, p, lr), off.predict(z, zl, 300, random_priors(1, 4, 9), {})),
            0.0);
}

TEST(Denoiser, MixedModeDiffersFromDisentangled) {
  Denoiser m = gated_tiny();
  const auto p = random_priors(2, 4, 48);
  const auto lr = random_lr_tokens(5, 3, 49);
  const LatentTensor z = features(2, 4, 4, 50), zl = features(2, 4, 4, 51);
  const Tensor dis = m.predict(z, zl, 100, p, lr);
  DenoiserConfig flags = m.config();
  flags.mixed_frequency_mode = true;
  m.set_branch_flags(flags);
  const Tensor mixed = m.predict(z, zl, 100, p, lr);
  EXPECT_EQ(mixed.shape(), dis.shape());
  EXPECT_GT(max_abs_diff(mixed, dis), 1e-9);
}

TEST(Denoiser, BranchOrderMatters) {
  Denoiser m = gated_tiny();
  const auto p = random_priors(2, 4, 52);
  const auto lr = random_lr_tokens(5, 3, 53);
  const LatentTensor z = features(2, 4, 4, 54), zl = features(2, 4, 4, 55);
  const Tensor base = m.predict(z, zl, 100, p, lr);
  DenoiserConfig flags = m.config();
  flags.branch_order = {Branch::kLowFrequency, Branch::kHighFrequency, Branch::kLowResolution, Branch::kGlobal};
  m.set_branch_flags(flags);
  EXPECT_GT(max_abs_diff(m.predict(z, zl, 100, p, lr), base), 1e-9);
}

TEST(Denoiser, TapsFollowBranchOrder) {
  const Denoiser m = gated_tiny();
  const auto p = random_priors(2, 4, 56);
  const auto lr = random_lr_tokens(5, 3, 57);
  const LatentTensor z = features(2, 4, 4, 58), zl = features(2, 4, 4, 59);
  std::vector<SiteTaps> taps;
  ad::Graph g(false);
  const Tensor out = m.forward(g, z, zl, 10, p, lr, &taps)->value;
  EXPECT_EQ(out.shape(), z.shape());
  ASSERT_EQ(taps.size(), 2u);
  const Shape s0{3, 4, 4}, s1{6, 2, 2};
  for (std::size_t l = 0; l < 2; ++l) {
    const Shape& s = l == 0 ? s0 : s1;
    for (const Tensor* t : {&taps[l].input, &taps[l].after_global, &taps[l].after_lf, &taps[l].after_hf,
                            &taps[l].after_lr})
      EXPECT_EQ(t->shape(), s);
    // Each tap is the previous one transformed by a single branch.
    ad::Graph h(false);
    const Tensor g1 = m.apply_branch(h, l, Branch::kGlobal, h.constant(taps[l].input), p, lr)->value;
    EXPECT_EQ(g1, taps[l].after_global);
    const Tensor lf = m.apply_branch(h, l, Branch::kLowFrequency, h.constant(g1), p, lr)->value;
    EXPECT_EQ(lf, taps[l].after_lf);
  }
}

TEST(Denoiser, ShapeErrors) {
  const Denoiser m(tiny_config());
  const auto p = random_priors(2, 4, 60);
  EXPECT_THROW(m.predict(features(3, 4, 4, 1), features(2, 4, 4, 2), 0, p, {}), ShapeError);
  EXPECT_THROW(m.predict(features(2, 3, 3, 1), features(2, 3, 3, 2), 0, p, {}), ShapeError);
  EXPECT_THROW(m.predict(features(2, 4, 4, 1), features(2, 4, 4, 2), 0, random_priors(2, 5, 3), {}), ShapeError);
}

namespace {

// Closed form of the parameter count, written out independently of build().
std::size_t expected_parameter_count(const DenoiserConfig& c) {
  const auto cz = static_cast<std::size_t>(c.latent_channels), cc = static_cast<std::size_t>(c.cond_channels);
  const auto c0 = static_cast<std::size_t>(c.base_channels), e = static_cast<std::size_t>(c.time_embed_dim);
  const auto d = static_cast<std::size_t>(c.embed_dim), tx = static_cast<std::size_t>(c.text_dim);
  const auto fl = static_cast<std::size_t>(c.lr_token_dim);
  std::size_t n = 2 * (e * e + e);            // time MLP
  n += c0 * (cz + cc) * 9 + c0;               // conv_in
  for (int l = 0; l < c.depth; ++l) {
    const std::size_t ch = c0 << l;
    if (l > 0) n += ch * (ch / 2) * 9 + ch;   // down
    n += e * ch + ch;                         // time_proj
    n += ch * ch * 9 + ch;                    // conv
    for (std::size_t ctx : {tx, tx, tx, fl})  // gtca, lfca, hfca, lrca
      n += 2 * ch + ch * d + 2 * ctx * d + d + d * ch + 1;
  }
  for (int l = c.depth - 1; l > 0; --l) {
    const std::size_t ch = c0 << l;
    n += 2 * ((ch / 2) * ch * 9 + ch / 2);    // up conv + merge
  }
  n += cz * c0 * 9 + cz;                      // conv_out
  n += cz * (cz + cc);                        // skip_out
  if (c.output_mode == OutputMode::kTimeSkip) n += 2 * e + 2;
  return n;
}

}  // namespace

TEST(Denoiser, ParameterCountClosedForm) {
  std::vector<DenoiserConfig> configs{tiny_config(), DenoiserConfig{}};
  DenoiserConfig a;
  a.base_channels = 8;
  a.depth = 3;
  a.output_mode = OutputMode::kEpsilon;
  configs.push_back(a);
  DenoiserConfig b = tiny_config();
  b.depth = 1;
  b.enable_gtca = false;  // flags do not change the layout
  configs.push_back(b);
  for (const auto& c : configs) EXPECT_EQ(Denoiser(c).parameters().count(), expected_parameter_count(c));
  EXPECT_EQ(Denoiser(DenoiserConfig{}).parameters().count(), 96234u);
}

TEST(Denoiser, InitialisationIsSeeded) {
  const Denoiser a(tiny_config()), b(tiny_config());
  DenoiserConfig c = tiny_config();
  c.init_seed = 12;
  const Denoiser d(c);
  const auto& ea = a.parameters().entries();
  bool differs = false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    EXPECT_EQ(ea[i].var->value, b.parameters().entries()[i].var->value);
    differs |= ea[i].var->value != d.parameters().entries()[i].var->value;
  }
  EXPECT_TRUE(differs);
  for (const auto& e : ea) {
    if (e.name.ends_with(".gate")) {
      EXPECT_EQ(e.var->value[0], 0.0);
    }
  }
}

TEST(GradientCheck, TinyTwoLevelDenoiser) {
  const DenoiserConfig c = tiny_config();
  ASSERT_LE(Denoiser(c).parameters().count(), 2000u);
  const auto r = check_training_loss_gradient(c, 420);
  EXPECT_EQ(r.checked, Denoiser(c).parameters().count());
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(GradientCheck, BaseEightSingleLevel) {
  DenoiserConfig c = tiny_config();
  c.base_channels = 8;
  c.depth = 1;
  const auto r = check_training_loss_gradient(c, 37);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}
