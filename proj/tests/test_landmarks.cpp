#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "lmcg/landmarks.hpp"

using namespace lmcg;

namespace {
LandmarkSet make_lm(std::initializer_list<std::pair<float, float>> pts) {
  LandmarkSet lm;
  int i = 0;
  for (auto [x, y] : pts) lm.pts[std::size_t(i++)] = {x, y};
  return lm;
}

LandmarkSet typical_lm64() {
  return make_lm({{20, 26}, {42, 26}, {32, 36}, {24, 46}, {40, 46}});
}
}  // namespace

TEST(Heatmaps, PeakAndGaussianValues) {
  auto lm = make_lm({{10, 10}, {30, 10}, {20, 20}, {15, 30}, {25, 30}});
  auto hm = encode_heatmaps(lm, 64, 2.f);
  // peak 1.0 at the keypoint
  EXPECT_FLOAT_EQ(hm.t.data()[10 * 64 + 10], 1.f);
  // two pixels below the peak on channel 0: exp(-4/8) = exp(-0.5)
  EXPECT_NEAR(hm.t.data()[12 * 64 + 10], std::exp(-0.5f), 1e-6f);
  // far from every landmark the channel sum vanishes
  double far_sum = 0;
  for (int k = 0; k < 5; ++k) far_sum += hm.t.data()[std::size_t(k) * 64 * 64 + 63 * 64 + 63];
  EXPECT_LT(far_sum, 1e-6);
}

TEST(Heatmaps, OutsideLandmarkRejected) {
  auto lm = make_lm({{10, 10}, {70, 10}, {20, 20}, {15, 30}, {25, 30}});
  EXPECT_THROW(encode_heatmaps(lm, 64, 2.f), ShapeError);
  EXPECT_THROW(encode_heatmaps(typical_lm64(), 64, 0.f), ShapeError);
}

TEST(Heatmaps, DecodeRoundTripAndTieBreak) {
  auto lm = typical_lm64();
  auto dec = decode_landmarks(encode_heatmaps(lm, 64, 2.f).t);
  for (int k = 0; k < 5; ++k) {
    EXPECT_LE(std::abs(dec.pts[std::size_t(k)].x - lm.pts[std::size_t(k)].x), 0.5f);
    EXPECT_LE(std::abs(dec.pts[std::size_t(k)].y - lm.pts[std::size_t(k)].y), 0.5f);
  }
  // constant channels decode to (0,0) by the row-major tie-break
  auto dec0 = decode_landmarks(Tensor<float>::full({5, 8, 8}, 0.25f));
  for (const auto& p : dec0.pts) {
    EXPECT_EQ(p.x, 0.f);
    EXPECT_EQ(p.y, 0.f);
  }
}

TEST(Heatmaps, FractionalPeakDecodesToNearestPixel) {
  auto lm = make_lm({{31.6f, 12.2f}, {40, 12}, {32, 30}, {26, 44}, {38, 44}});
  auto dec = decode_landmarks(encode_heatmaps(lm, 64, 2.f).t);
  EXPECT_EQ(dec.left_eye().x, 32.f);
  EXPECT_EQ(dec.left_eye().y, 12.f);
}

TEST(Heatmaps, ExactRoundTripForIntegerLandmarks) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int S = 64;
    LandmarkSet lm;
    lm.pts[0] = {float(rng.uniform_int(0, 30)), float(rng.uniform_int(0, S - 1))};
    lm.pts[1] = {float(rng.uniform_int(31, S - 1)), float(rng.uniform_int(0, S - 1))};
    lm.pts[2] = {float(rng.uniform_int(0, S - 1)), float(rng.uniform_int(0, S - 1))};
    lm.pts[3] = {float(rng.uniform_int(0, 30)), float(rng.uniform_int(0, S - 1))};
    lm.pts[4] = {float(rng.uniform_int(31, S - 1)), float(rng.uniform_int(0, S - 1))};
    const float sigma = float(rng.uniform(1.0, S / 8.0));
    auto dec = decode_landmarks(encode_heatmaps(lm, S, sigma).t);
    for (int k = 0; k < 5; ++k) {
      EXPECT_EQ(dec.pts[std::size_t(k)].x, lm.pts[std::size_t(k)].x);
      EXPECT_EQ(dec.pts[std::size_t(k)].y, lm.pts[std::size_t(k)].y);
    }
  }
}

TEST(Patches, CenteredRectAndClamp) {
  const auto ps = PatchSizes{};  // 128-scale reference sizes
  auto lm = make_lm({{40, 50}, {88, 50}, {64, 70}, {50, 100}, {80, 100}});
  auto img = Tensor<float>::zeros({3, 128, 128});
  auto set = extract_patches(img, lm, ps);
  EXPECT_EQ(set.left_eye_rect.x0, 24);
  EXPECT_EQ(set.left_eye_rect.y0, 34);
  EXPECT_EQ(set.left_eye_rect.w, 32);
  EXPECT_EQ(set.left_eye_rect.h, 32);
  // eye at (5,5) clamps by shifting, not shrinking
  auto lm2 = make_lm({{5, 5}, {88, 50}, {64, 70}, {50, 100}, {80, 100}});
  auto set2 = extract_patches(img, lm2, ps);
  EXPECT_EQ(set2.left_eye_rect.x0, 0);
  EXPECT_EQ(set2.left_eye_rect.y0, 0);
  EXPECT_EQ(set2.left_eye_rect.w, 32);
  EXPECT_EQ(set2.left_eye_rect.h, 32);
  // mouth span 30 plus a sixth per side: x in [45, 85)
  EXPECT_EQ(set.mouth_rect.x0, 45);
  EXPECT_EQ(set.mouth_rect.w, 40);
  EXPECT_EQ(set.mouth.shape(), (Shape{3, ps.mouth_h, ps.mouth_w}));
  EXPECT_EQ(set.eyes.shape(), (Shape{6, 32, 32}));
  EXPECT_EQ(set.nose.shape(), (Shape{3, ps.nose_h, ps.nose_w}));
}

TEST(Patches, DegenerateMouthRejected) {
  auto lm = make_lm({{40, 50}, {88, 50}, {64, 70}, {65, 100}, {65, 100}});
  auto img = Tensor<float>::zeros({3, 128, 128});
  // mouth_left == mouth_right also violates the LandmarkSet ordering,
  // so the degenerate-span rejection fires either way.
  EXPECT_THROW(extract_patches(img, lm, PatchSizes{}), ShapeError);
}

TEST(Patches, DeskScaleSizes) {
  const auto ps = PatchSizes::for_size(64);
  EXPECT_EQ(ps.eye_w, 16);
  EXPECT_EQ(ps.eye_h, 16);
  EXPECT_EQ(ps.nose_w, 14);
  EXPECT_EQ(ps.nose_h, 12);
  EXPECT_EQ(ps.mouth_w, 12);
  EXPECT_EQ(ps.mouth_h, 20);
}

TEST(Patches, EyeConcatenationOrderLeftThenRight) {
  Rng rng(9);
  auto img = Tensor<float>::randn({3, 64, 64}, rng);
  auto lm = typical_lm64();
  const auto ps = PatchSizes::for_size(64);
  auto set = extract_patches(img, lm, ps);
  auto left_block = crop(detail::as_nchw(img), set.left_eye_rect);
  auto right_block = crop(detail::as_nchw(img), set.right_eye_rect);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < ps.eye_h; ++i)
      for (int j = 0; j < ps.eye_w; ++j) {
        EXPECT_EQ(set.eyes.data()[std::size_t((c * ps.eye_h + i) * ps.eye_w + j)],
                  left_block.at(0, c, i, j));
        EXPECT_EQ(set.eyes.data()[std::size_t(((c + 3) * ps.eye_h + i) * ps.eye_w + j)],
                  right_block.at(0, c, i, j));
      }
}

TEST(Patches, GradientFlowsIntoSourcePixels) {
  Rng rng(11);
  auto img = Tensor<float>::randn({3, 64, 64}, rng);
  img.set_requires_grad(true);
  const auto ps = PatchSizes::for_size(64);
  auto lm = typical_lm64();
  Tape<float> tape;
  {
    TapeScope<float> scope(tape);
    auto set = extract_patches(img, lm, ps);
    // mean over the nose patch; every nose-rect pixel gets 1/n gradient,
    // all other pixels stay at 0.
    auto m = l1_mean(add(set.nose, Tensor<float>::full(set.nose.shape(), 10.f)));
    tape.backward(m);
  }
  auto g = tape.grad(img);
  auto set = extract_patches(img, lm, ps);
  const Rect r = set.nose_rect;
  int nonzero = 0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) {
        const float v = g.data()[std::size_t((c * 64 + i) * 64 + j)];
        const bool inside =
            i >= r.y0 && i < r.y0 + r.h && j >= r.x0 && j < r.x0 + r.w;
        if (inside) {
          EXPECT_GT(v, 0.f);
          ++nonzero;
        } else {
          EXPECT_EQ(v, 0.f);
        }
      }
  EXPECT_EQ(nonzero, 3 * r.w * r.h);
}

TEST(UnmatchedPair, OffsetSemanticsAndFloor) {
  Rng rng(13);
  auto img = Tensor<float>::randn({3, 64, 64}, rng);
  auto lm = typical_lm64();
  const int max_shift = 8, floor = 4;
  for (int t = 0; t < 50; ++t) {
    auto [shifted, hm] = make_unmatched_pair(img, lm, rng, max_shift, floor,
                                             default_sigma(64));
    // the shift is recoverable by matching rows/cols; here just assert
    // the mismatch floor via difference from the original
    bool identical = true;
    for (std::int64_t i = 0; i < img.numel() && identical; ++i)
      identical = shifted.data()[i] == img.data()[i];
    EXPECT_FALSE(identical);
    // returned heatmaps are bit-identical to encoding the original set
    auto ref = encode_heatmaps(lm, 64, default_sigma(64));
    ASSERT_EQ(hm.t.numel(), ref.t.numel());
    EXPECT_EQ(std::memcmp(hm.t.data(), ref.t.data(),
                          std::size_t(ref.t.numel()) * sizeof(float)),
              0);
  }
  EXPECT_THROW(make_unmatched_pair(img, lm, rng, 2, 4, 2.f), ShapeError);
}

TEST(UnmatchedPair, TranslationMatchesPixelIndexing) {
  // offset (8,0): output pixel (x,y) equals input (x-8,y) for x >= 8
  const int S = 64, dx = 8;
  Rng rng(17);
  auto img = Tensor<float>::randn({3, S, S}, rng);
  auto shifted = translate_replicate(img, dx, 0);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < S; ++y) {
      for (int x = dx; x < S; ++x)
        EXPECT_EQ(shifted.data()[std::size_t((c * S + y) * S + x)],
                  img.data()[std::size_t((c * S + y) * S + x - dx)]);
      // replicated left border
      for (int x = 0; x < dx; ++x)
        EXPECT_EQ(shifted.data()[std::size_t((c * S + y) * S + x)],
                  img.data()[std::size_t((c * S + y) * S + 0)]);
    }
}

TEST(UnmatchedPair, DecodeShiftOracle) {
  // The ground-truth heatmap of the shifted image decodes to the
  // returned (original-landmark) heatmap's decode plus the offset.
  const int S = 64;
  auto lm = typical_lm64();
  const int dx = 6, dy = -3;
  LandmarkSet moved = lm;
  for (auto& p : moved.pts) {
    p.x += float(dx);
    p.y += float(dy);
  }
  auto dec_moved = decode_landmarks(encode_heatmaps(moved, S, 2.f).t);
  auto dec_orig = decode_landmarks(encode_heatmaps(lm, S, 2.f).t);
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(dec_moved.pts[std::size_t(k)].x - dec_orig.pts[std::size_t(k)].x, dx);
    EXPECT_EQ(dec_moved.pts[std::size_t(k)].y - dec_orig.pts[std::size_t(k)].y, dy);
  }
}
