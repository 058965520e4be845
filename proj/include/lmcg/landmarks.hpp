#pragma once

#include <array>
#include <cmath>
#include <utility>

#include "lmcg/ops.hpp"
#include "lmcg/rng.hpp"
#include "lmcg/tensor.hpp"

// Landmark <-> heatmap encoding, landmark-centered patch extraction and
// the unmatched-pair construction used by the conditional discriminator.

namespace lmcg {

enum class Domain { X, Y };
enum class Direction { XtoY, YtoX };
enum class Part { Eyes, Nose, Mouth };

inline Domain target_domain(Direction d) {
  return d == Direction::XtoY ? Domain::Y : Domain::X;
}
inline Domain source_domain(Direction d) {
  return d == Direction::XtoY ? Domain::X : Domain::Y;
}
inline const char* domain_tag(Domain d) { return d == Domain::X ? "x" : "y"; }
inline const char* part_tag(Part p) {
  switch (p) {
    case Part::Eyes: return "eyes";
    case Part::Nose: return "nose";
    case Part::Mouth: return "mouth";
  }
  return "";
}

struct Landmark {
  float x = 0.f, y = 0.f;
};

/// Five keypoints in canonical order: left eye, right eye, nose,
/// mouth-left, mouth-right. Coordinates are pixels, origin top-left.
struct LandmarkSet {
  std::array<Landmark, 5> pts{};

  Landmark& left_eye() { return pts[0]; }
  Landmark& right_eye() { return pts[1]; }
  Landmark& nose() { return pts[2]; }
  Landmark& mouth_left() { return pts[3]; }
  Landmark& mouth_right() { return pts[4]; }
  const Landmark& left_eye() const { return pts[0]; }
  const Landmark& right_eye() const { return pts[1]; }
  const Landmark& nose() const { return pts[2]; }
  const Landmark& mouth_left() const { return pts[3]; }
  const Landmark& mouth_right() const { return pts[4]; }

  void validate(int size) const {
    for (const auto& p : pts)
      require(p.x >= 0.f && p.x < float(size) && p.y >= 0.f &&
                  p.y < float(size),
              "landmark (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                  ") outside image of size " + std::to_string(size));
    require(left_eye().x < right_eye().x,
            "landmarks: left eye must lie left of right eye");
    require(mouth_left().x < mouth_right().x,
            "landmarks: mouth-left must lie left of mouth-right");
  }
};

/// 5-channel Gaussian heatmap stack, one blob per landmark, values in
/// [0,1] with peak 1 at the keypoint pixel.
struct HeatmapStack {
  Tensor<float> t;  // [5,S,S]
  float sigma = 0.f;
};

inline float default_sigma(int size) { return float(size) / 32.f; }

/// channel k at (i,j) = exp(-((i-y_k)^2 + (j-x_k)^2) / (2 sigma^2))
inline HeatmapStack encode_heatmaps(const LandmarkSet& lm, int size,
                                    float sigma) {
  require(sigma > 0.f, "encode_heatmaps: sigma must be positive");
  lm.validate(size);
  HeatmapStack hm;
  hm.sigma = sigma;
  hm.t = Tensor<float>::zeros({5, size, size});
  const float denom = 2.f * sigma * sigma;
  for (int k = 0; k < 5; ++k) {
    float* ch = hm.t.data() + std::size_t(k) * size * size;
    const float cx = lm.pts[std::size_t(k)].x, cy = lm.pts[std::size_t(k)].y;
    for (int i = 0; i < size; ++i) {
      const float dy = float(i) - cy;
      for (int j = 0; j < size; ++j) {
        const float dx = float(j) - cx;
        ch[i * size + j] = std::exp(-(dy * dy + dx * dx) / denom);
      }
    }
  }
  return hm;
}

/// Per-channel argmax; ties break at the smallest row-major index.
/// Accepts [5,S,S] or [1,5,S,S].
inline LandmarkSet decode_landmarks(const Tensor<float>& heatmaps) {
  require(heatmaps.defined() &&
              ((heatmaps.rank() == 3 && heatmaps.dim(0) == 5) ||
               (heatmaps.rank() == 4 && heatmaps.dim(0) == 1 &&
                heatmaps.dim(1) == 5)),
          "decode_landmarks: expected [5,S,S] or [1,5,S,S], got " +
              (heatmaps.defined() ? shape_str(heatmaps.shape())
                                  : std::string("<null>")));
  const int H = heatmaps.dim(heatmaps.rank() - 2);
  const int W = heatmaps.dim(heatmaps.rank() - 1);
  LandmarkSet lm;
  for (int k = 0; k < 5; ++k) {
    const float* ch = heatmaps.data() + std::size_t(k) * H * W;
    int best = 0;
    for (int i = 1; i < H * W; ++i)
      if (ch[i] > ch[best]) best = i;
    lm.pts[std::size_t(k)] = {float(best % W), float(best / W)};
  }
  return lm;
}

/// Fixed crop sizes per part, stored as (w,h). The 128-scale values are
/// the reference; other sizes scale proportionally, rounded to even.
struct PatchSizes {
  int eye_w = 32, eye_h = 32;
  int nose_w = 28, nose_h = 24;
  int mouth_w = 23, mouth_h = 40;

  static PatchSizes for_size(int size) {
    PatchSizes ps;
    if (size == 128) return ps;
    auto scale_even = [&](int ref) {
      const double v = double(ref) * size / 128.0;
      return std::max(2, 2 * int(std::lround(v / 2.0)));
    };
    ps.eye_w = scale_even(ps.eye_w);
    ps.eye_h = scale_even(ps.eye_h);
    ps.nose_w = scale_even(ps.nose_w);
    ps.nose_h = scale_even(ps.nose_h);
    ps.mouth_w = scale_even(ps.mouth_w);
    ps.mouth_h = scale_even(ps.mouth_h);
    return ps;
  }
};

/// Landmark-anchored crops. Eyes are the two per-eye crops concatenated
/// channel-wise, left first. Rects record where each crop came from.
struct PatchSet {
  Tensor<float> eyes;   // [6,eh,ew]
  Tensor<float> nose;   // [3,nh,nw]
  Tensor<float> mouth;  // [3,mh,mw]
  Rect left_eye_rect, right_eye_rect, nose_rect, mouth_rect;
};

namespace detail {
/// Shift-clamps a center-anchored rect fully inside [0,size)^2 without
/// shrinking, so every patch keeps its configured shape.
inline Rect centered_rect(float cx, float cy, int w, int h, int size) {
  int x0 = int(std::lround(cx)) - w / 2;
  int y0 = int(std::lround(cy)) - h / 2;
  x0 = std::max(0, std::min(x0, size - w));
  y0 = std::max(0, std::min(y0, size - h));
  return Rect{x0, y0, w, h};
}

template <typename T>
Tensor<T> as_nchw(const Tensor<T>& t) {
  if (t.rank() == 4) return t;
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return reshape(t, s);
}
}  // namespace detail

/// Extracts eye/nose/mouth patches. Eye and nose rects are centered on
/// their landmark; the mouth source spans the two mouth landmarks with a
/// one-sixth margin per side, takes its height from the target aspect
/// around the mean landmark y, and is resized to the fixed mouth size.
/// All crops are tape ops, so patch gradients reach the source pixels.
inline PatchSet extract_patches(const Tensor<float>& image,
                                const LandmarkSet& lm, const PatchSizes& ps) {
  require(image.defined() && (image.rank() == 3 ||
                              (image.rank() == 4 && image.dim(0) == 1)),
          "extract_patches: expected [3,S,S] or [1,3,S,S]");
  Tensor<float> img = detail::as_nchw(image);
  const int S = img.dim(3);
  require(img.dim(2) == S, "extract_patches: image must be square");
  require(ps.eye_w < S && ps.nose_w < S && ps.mouth_w < S && ps.eye_h < S &&
              ps.nose_h < S && ps.mouth_h < S,
          "extract_patches: patch sizes must be smaller than the image");

  PatchSet out;
  out.left_eye_rect =
      detail::centered_rect(lm.left_eye().x, lm.left_eye().y, ps.eye_w,
                            ps.eye_h, S);
  out.right_eye_rect =
      detail::centered_rect(lm.right_eye().x, lm.right_eye().y, ps.eye_w,
                            ps.eye_h, S);
  out.nose_rect = detail::centered_rect(lm.nose().x, lm.nose().y, ps.nose_w,
                                        ps.nose_h, S);

  Tensor<float> left = crop(img, out.left_eye_rect);
  Tensor<float> right = crop(img, out.right_eye_rect);
  Tensor<float> eyes = concat_channels<float>({left, right});
  out.eyes = reshape(eyes, {6, ps.eye_h, ps.eye_w});
  Tensor<float> nose = crop(img, out.nose_rect);
  out.nose = reshape(nose, {3, ps.nose_h, ps.nose_w});

  // Mouth: horizontal span from the two landmarks plus margin, vertical
  // extent from the target aspect ratio, then bilinear resize.
  const float span = lm.mouth_right().x - lm.mouth_left().x;
  require(span > 1e-6f,
          "extract_patches: degenerate mouth landmarks (left == right)");
  const float margin = span / 6.f;
  int mx0 = int(std::lround(lm.mouth_left().x - margin));
  int mx1 = int(std::lround(lm.mouth_right().x + margin));
  int src_w = std::max(2, mx1 - mx0);
  int src_h =
      std::max(2, int(std::lround(double(src_w) * ps.mouth_h / ps.mouth_w)));
  require(src_w <= S && src_h <= S,
          "extract_patches: mouth span too large for the image");
  const float mcy = 0.5f * (lm.mouth_left().y + lm.mouth_right().y);
  int my0 = int(std::lround(mcy)) - src_h / 2;
  mx0 = std::max(0, std::min(mx0, S - src_w));
  my0 = std::max(0, std::min(my0, S - src_h));
  out.mouth_rect = Rect{mx0, my0, src_w, src_h};
  Tensor<float> mouth_src = crop(img, out.mouth_rect);
  Tensor<float> mouth = resize_bilinear(mouth_src, ps.mouth_h, ps.mouth_w);
  out.mouth = reshape(mouth, {3, ps.mouth_h, ps.mouth_w});
  return out;
}

/// Shifts image content by (dx,dy) — output pixel (x,y) reads input
/// (x-dx, y-dy) — with edge replication for exposed borders.
inline Tensor<float> translate_replicate(const Tensor<float>& image, int dx,
                                         int dy) {
  require(image.defined() && image.rank() == 3,
          "translate_replicate: expected [C,S,S] image");
  const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor<float> shifted = Tensor<float>::zeros(image.shape());
  for (int c = 0; c < C; ++c) {
    const float* src = image.data() + std::size_t(c) * H * W;
    float* dst = shifted.data() + std::size_t(c) * H * W;
    for (int y = 0; y < H; ++y) {
      const int sy = std::min(H - 1, std::max(0, y - dy));
      for (int x = 0; x < W; ++x) {
        const int sx = std::min(W - 1, std::max(0, x - dx));
        dst[y * W + x] = src[sy * W + sx];
      }
    }
  }
  return shifted;
}

/// Translates the image content by a random offset with L1 norm at least
/// `min_shift`, padding exposed borders by edge replication, and returns
/// it with heatmaps of the ORIGINAL landmarks: a deliberately mismatched
/// (image, landmark) pair. Not a tape op; it only ever feeds the
/// discriminator's fake side.
inline std::pair<Tensor<float>, HeatmapStack> make_unmatched_pair(
    const Tensor<float>& image, const LandmarkSet& lm, Rng& rng, int max_shift,
    int min_shift, float sigma) {
  require(image.defined() && image.rank() == 3 && image.dim(0) == 3,
          "make_unmatched_pair: expected [3,S,S] image");
  const int S = image.dim(2);
  require(image.dim(1) == S, "make_unmatched_pair: image must be square");
  require(min_shift >= 1, "make_unmatched_pair: displacement floor must be >= 1");
  require(max_shift >= min_shift,
          "make_unmatched_pair: max_shift " + std::to_string(max_shift) +
              " below displacement floor " + std::to_string(min_shift));

  int dx = 0, dy = 0;
  do {
    dx = int(rng.uniform_int(-max_shift, max_shift));
    dy = int(rng.uniform_int(-max_shift, max_shift));
  } while (std::abs(dx) + std::abs(dy) < min_shift);

  return {translate_replicate(image, dx, dy), encode_heatmaps(lm, S, sigma)};
}

}  // namespace lmcg
