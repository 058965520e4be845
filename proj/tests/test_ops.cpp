#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "lmcg/ops.hpp"
#include "lmcg/rng.hpp"

using namespace lmcg;

TEST(Conv2d, SpecShapeExample) {
  // 1x3x128x128, k=3, s=2, pad=1, 64 filters -> 1x64x64x64
  Rng rng(1);
  auto x = Tensor<float>::randn({1, 3, 128, 128}, rng);
  auto w = Tensor<float>::randn({64, 3, 3, 3}, rng, 0.1f);
  auto y = conv2d(x, w, Tensor<float>(), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 64, 64, 64}));
}

TEST(Conv2d, ShapeMismatchReported) {
  auto x = Tensor<float>::zeros({1, 3, 8, 8});
  auto w = Tensor<float>::zeros({4, 5, 3, 3});
  try {
    conv2d(x, w, Tensor<float>(), 1, 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,3,8,8]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,5,3,3]"), std::string::npos) << msg;
  }
}

TEST(Conv2d, MatchesDirectConvolutionOracle) {
  // Brute-force nested-loop convolution on a small case.
  Rng rng(7);
  const int Ci = 2, Co = 3, H = 5, W = 6, k = 3, s = 2, p = 1;
  auto x = Tensor<double>::randn({1, Ci, H, W}, rng);
  auto w = Tensor<double>::randn({Co, Ci, k, k}, rng);
  auto b = Tensor<double>::randn({Co}, rng);
  auto y = conv2d(x, w, b, s, p);
  const int Ho = (H + 2 * p - k) / s + 1, Wo = (W + 2 * p - k) / s + 1;
  ASSERT_EQ(y.shape(), (Shape{1, Co, Ho, Wo}));
  for (int co = 0; co < Co; ++co)
    for (int oh = 0; oh < Ho; ++oh)
      for (int ow = 0; ow < Wo; ++ow) {
        double acc = b.data()[co];
        for (int ci = 0; ci < Ci; ++ci)
          for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
              const int ih = oh * s - p + ki, iw = ow * s - p + kj;
              if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                acc += x.at(0, ci, ih, iw) * w.at(co, ci, ki, kj);
            }
        EXPECT_NEAR(y.at(0, co, oh, ow), acc, 1e-12);
      }
}

TEST(ConvTranspose, AdjointOfConv) {
  // <conv(u), v> == <u, conv_transpose(v)> for matching kernel/stride/pad.
  Rng rng(11);
  for (int trial = 0; trial < 6; ++trial) {
    const int Ci = 1 + int(rng.uniform_int(1, 3));
    const int Co = 1 + int(rng.uniform_int(0, 2));
    const int H = int(rng.uniform_int(5, 9)), W = H;
    const int k = int(rng.uniform_int(2, 4)), s = int(rng.uniform_int(1, 2));
    const int p = int(rng.uniform_int(0, k / 2));
    auto u = Tensor<double>::randn({1, Ci, H, W}, rng);
    auto w = Tensor<double>::randn({Co, Ci, k, k}, rng);
    auto cu = conv2d(u, w, Tensor<double>(), s, p);
    auto v = Tensor<double>::randn(cu.shape(), rng);
    const int op_h = H - ((cu.dim(2) - 1) * s - 2 * p + k);
    ASSERT_GE(op_h, 0);
    ASSERT_LT(op_h, s);
    auto ctv = conv_transpose2d(v, w, Tensor<double>(), s, p, op_h);
    ASSERT_EQ(ctv.shape(), u.shape());
    double lhs = 0, rhs = 0;
    for (std::int64_t i = 0; i < cu.numel(); ++i)
      lhs += cu.data()[i] * v.data()[i];
    for (std::int64_t i = 0; i < u.numel(); ++i)
      rhs += u.data()[i] * ctv.data()[i];
    EXPECT_NEAR(lhs, rhs, 1e-4 * std::max({1.0, std::abs(lhs), std::abs(rhs)}));
  }
}

TEST(ConvTranspose, UpsamplesBy2WithOutputPad) {
  auto x = Tensor<float>::zeros({1, 4, 16, 16});
  auto w = Tensor<float>::zeros({4, 2, 3, 3});
  auto y = conv_transpose2d(x, w, Tensor<float>(), 2, 1, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 32, 32}));
}

TEST(Crop, SpecRectExample) {
  // rect x in [24,56), y in [34,66) of a 128 image -> 32x32
  auto x = Tensor<float>::zeros({1, 3, 128, 128});
  auto y = crop(x, Rect{24, 34, 32, 32});
  EXPECT_EQ(y.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_THROW(crop(x, Rect{120, 0, 32, 32}), ShapeError);
}

TEST(Crop, GradientIsIndicatorOfRect) {
  Rng rng(3);
  auto x = Tensor<double>::randn({1, 1, 6, 7}, rng);
  x.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto patch = crop(x, Rect{2, 1, 3, 4});
    // sum of patch via l1 on a strictly positive shifted patch is messy;
    // use mean and rescale: d(mean)/dx = 1/n inside the rect.
    auto m = mul_scalar(global_avg_pool(patch), double(3 * 4));
    tape.backward(reshape(m, {}));
  }
  auto g = tape.grad(x);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 7; ++j) {
      const bool inside = i >= 1 && i < 5 && j >= 2 && j < 5;
      EXPECT_DOUBLE_EQ(g.at(0, 0, i, j), inside ? 1.0 : 0.0);
    }
}

TEST(ConcatChannels, OrderAndSplit) {
  auto a = Tensor<float>::full({1, 2, 2, 2}, 1.f);
  auto b = Tensor<float>::full({1, 3, 2, 2}, 2.f);
  auto y = concat_channels<float>({a, b});
  ASSERT_EQ(y.shape(), (Shape{1, 5, 2, 2}));
  EXPECT_EQ(y.at(0, 0, 0, 0), 1.f);
  EXPECT_EQ(y.at(0, 1, 1, 1), 1.f);
  EXPECT_EQ(y.at(0, 2, 0, 0), 2.f);
  EXPECT_EQ(y.at(0, 4, 1, 1), 2.f);
  auto c = Tensor<float>::zeros({1, 1, 3, 2});
  EXPECT_THROW(concat_channels<float>({a, c}), ShapeError);
}

TEST(InstanceNorm, NormalizedStatsBeforeAffine) {
  Rng rng(21);
  auto x = Tensor<float>::randn({2, 3, 12, 12}, rng, 2.5f);
  auto y = instance_norm(x, Tensor<float>(), Tensor<float>());
  const int m = 12 * 12;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double mu = 0, var = 0;
      for (int i = 0; i < m; ++i) mu += y.data()[std::size_t(n * 3 + c) * m + i];
      mu /= m;
      for (int i = 0; i < m; ++i) {
        const double d = y.data()[std::size_t(n * 3 + c) * m + i] - mu;
        var += d * d;
      }
      var /= m;
      EXPECT_LT(std::abs(mu), 1e-5);
      EXPECT_NEAR(var, 1.0, 1e-4);
    }
}

TEST(ResizeBilinear, IdentityAndAverage) {
  auto x = Tensor<float>::from({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto same = resize_bilinear(x, 2, 2);
  for (int i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(same.data()[i], x.data()[i]);
  auto down = resize_bilinear(x, 1, 1);
  EXPECT_FLOAT_EQ(down.data()[0], 2.5f);  // all four pixels blend equally
}

TEST(GlobalAvgPool, MeanOverPlane) {
  auto x = Tensor<float>::from({1, 2, 1, 2}, {1.f, 3.f, 10.f, 20.f});
  auto y = global_avg_pool(x);
  ASSERT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_FLOAT_EQ(y.data()[0], 2.f);
  EXPECT_FLOAT_EQ(y.data()[1], 15.f);
}

TEST(Reductions, ClosedForms) {
  auto a = Tensor<float>::from({4}, {1.f, -2.f, 3.f, -4.f});
  EXPECT_FLOAT_EQ(l1_mean(a).item(), 2.5f);
  EXPECT_FLOAT_EQ(l2_mean(a).item(), 7.5f);
  auto b = Tensor<float>::from({4}, {0.f, 0.f, 0.f, 0.f});
  EXPECT_FLOAT_EQ(mse_mean(a, b).item(), 7.5f);
  EXPECT_FLOAT_EQ(l1_mean(a, b).item(), 2.5f);
  // sigma(0) = 0.5 -> BCE = -ln 0.5 for either target
  auto z = Tensor<float>::zeros({8});
  EXPECT_NEAR(bce_with_logits_mean(z, 1.f).item(), std::log(2.f), 1e-6f);
  EXPECT_NEAR(bce_with_logits_mean(z, 0.f).item(), std::log(2.f), 1e-6f);
  EXPECT_THROW(bce_with_logits_mean(Tensor<float>::zeros({0}), 1.f),
               ShapeError);
}

TEST(Determinism, SameSeedSameOpSequenceBitIdentical) {
  auto run = [] {
    Rng rng(99);
    auto x = Tensor<float>::randn({2, 3, 17, 13}, rng);
    auto w = Tensor<float>::randn({4, 3, 3, 3}, rng, 0.2f);
    auto g = Tensor<float>::full({4}, 1.f);
    auto bb = Tensor<float>::zeros({4});
    auto y = conv2d(x, w, Tensor<float>(), 2, 1);
    y = instance_norm(y, g, bb);
    y = leaky_relu(y, 0.2f);
    y = resize_bilinear(y, 11, 11);
    return l2_mean(y).item();
  };
  const float a = run(), b = run();
  EXPECT_EQ(std::memcmp(&a, &b, sizeof(float)), 0);
}
