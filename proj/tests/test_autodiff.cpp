#include <gtest/gtest.h>

#include "dtpsr/autodiff.hpp"
#include "test_util.hpp"

using namespace dtpsr;
using dtpsr::test::grad_check;
using dtpsr::test::random_tensor;

namespace {

ad::Var leaf(Shape s, std::uint64_t seed, double scale = 1.0) {
  return ad::make_leaf(random_tensor(std::move(s), seed, scale), true);
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(Autodiff, ElementwiseOps) {
  auto a = leaf({2, 3, 3}, 1), b = leaf({2, 3, 3}, 2);
  Tensor target = random_tensor({2, 3, 3}, 3);
  auto r = grad_check(
      [&](ad::Graph& g) {
        auto x = g.silu(g.mul(g.add(a, b), g.sub(a, g.scale(b, 0.5))));
        return g.mse(x, target);
      },
      {{"a", a}, {"b", b}});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Autodiff, Conv2dStrideAndPadding) {
  auto x = leaf({3, 6, 6}, 4), w = leaf({4, 3, 3, 3}, 5, 0.3), b = leaf({4}, 6);
  auto w1 = leaf({2, 3, 1, 1}, 7);
  for (std::size_t stride : {1u, 2u}) {
    Tensor target = random_tensor({4, stride == 1 ? 6u : 3u, stride == 1 ? 6u : 3u}, 8);
    auto r = grad_check([&](ad::Graph& g) { return g.mse(g.conv2d(x, w, b, stride, 1), target); },
                        {{"x", x}, {"w", w}, {"b", b}});
    EXPECT_LT(r.max_rel_error, kTol) << "stride " << stride << ": " << r.worst;
  }
  Tensor t1 = random_tensor({2, 6, 6}, 9);
  auto r = grad_check([&](ad::Graph& g) { return g.mse(g.conv2d(x, w1, nullptr, 1, 0), t1); },
                      {{"x", x}, {"w1", w1}});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Autodiff, Conv2dMatchesDirectSum) {
  Tensor x = random_tensor({2, 4, 5}, 10), w = random_tensor({3, 2, 3, 3}, 11), b = random_tensor({3}, 12);
  ad::Graph g(false);
  auto y = g.conv2d(g.constant(x), g.constant(w), g.constant(b), 2, 1)->value;
  ASSERT_EQ(y.shape(), (Shape{3, 2, 3}));
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t oy = 0; oy < 2; ++oy)
      for (std::size_t ox = 0; ox < 3; ++ox) {
        double acc = b[o];
        for (std::size_t c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = static_cast<int>(oy) * 2 + ky - 1, ix = static_cast<int>(ox) * 2 + kx - 1;
              if (iy < 0 || iy >= 4 || ix < 0 || ix >= 5) continue;
              acc += w[((o * 2 + c) * 3 + static_cast<std::size_t>(ky)) * 3 + static_cast<std::size_t>(kx)] *
                     x.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
        EXPECT_NEAR(y.at(o, oy, ox), acc, 1e-12);
      }
}

TEST(Autodiff, MatmulBiasLayerNorm) {
  auto x = leaf({5, 4}, 13), w = leaf({4, 3}, 14), bias = leaf({3}, 15);
  auto gamma = leaf({4}, 16), beta = leaf({4}, 17);
  Tensor target = random_tensor({5, 3}, 18);
  auto r = grad_check(
      [&](ad::Graph& g) {
        auto n = g.layer_norm_rows(x, gamma, beta);
        return g.mse(g.add_row_bias(g.matmul(n, w), bias), target);
      },
      {{"x", x}, {"w", w}, {"bias", bias}, {"gamma", gamma}, {"beta", beta}});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Autodiff, AttentionWithMaskAndHeads) {
  auto q = leaf({6, 4}, 19), k = leaf({5, 4}, 20), v = leaf({5, 4}, 21);
  Tensor target = random_tensor({6, 4}, 22);
  const std::vector<bool> mask{true, false, true, true, false};
  for (std::size_t heads : {1u, 2u}) {
    auto r = grad_check([&](ad::Graph& g) { return g.mse(g.attention(q, k, v, heads, mask), target); },
                        {{"q", q}, {"k", k}, {"v", v}});
    EXPECT_LT(r.max_rel_error, kTol) << "heads " << heads << ": " << r.worst;
  }
}

TEST(Autodiff, AttentionMaskedRowsHaveNoInfluence) {
  Tensor q = random_tensor({3, 2}, 23), k = random_tensor({2, 2}, 24), v = random_tensor({2, 2}, 25);
  Tensor kp({4, 2}), vp({4, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    kp[i] = k[i];
    vp[i] = v[i];
  }
  for (std::size_t i = 4; i < 8; ++i) {  // junk in masked rows
    kp[i] = 100.0 + static_cast<double>(i);
    vp[i] = -50.0;
  }
  ad::Graph g(false);
  auto a = g.attention(g.constant(q), g.constant(k), g.constant(v), 1)->value;
  auto b = g.attention(g.constant(q), g.constant(kp), g.constant(vp), 1, {true, true, false, false})->value;
  EXPECT_EQ(a, b);
}

TEST(Autodiff, ShapeOpsAndGates) {
  auto x = leaf({2, 2, 3}, 26), y = leaf({1, 2, 3}, 27), gate = leaf({1}, 28), cv = leaf({3}, 29);
  Tensor target = random_tensor({3, 4, 6}, 30);
  auto r = grad_check(
      [&](ad::Graph& g) {
        auto c = g.concat0(x, y);
        auto t = g.scale_by(g.to_tokens(c), gate);
        auto back = g.from_tokens(t, 2, 3);
        auto shifted = g.from_tokens(g.to_tokens(g.add_channel(back, cv)), 2, 3);
        return g.mse(g.upsample_nearest2(shifted), target);
      },
      {{"x", x}, {"y", y}, {"gate", gate}, {"cv", cv}});
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Autodiff, GradientsAccumulateAcrossPasses) {
  auto w = ad::make_leaf(Tensor({1}, std::vector<double>{3.0}), true);
  Tensor target({1}, std::vector<double>{0.0});
  for (int i = 0; i < 2; ++i) {
    ad::Graph g;
    g.backward(g.mse(w, target));
  }
  EXPECT_DOUBLE_EQ(w->grad[0], 12.0);  // 2 * (2 * 3)
}

TEST(Autodiff, NonRecordingGraphKeepsNoTape) {
  auto w = ad::make_leaf(Tensor({2}, 1.0), true);
  ad::Graph g(false);
  auto y = g.silu(w);
  EXPECT_FALSE(y->requires_grad);
  EXPECT_TRUE(y->parents.empty());
}
