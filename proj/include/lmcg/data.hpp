#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lmcg/image.hpp"
#include "lmcg/landmarks.hpp"
#include "lmcg/rng.hpp"

// Dataset ingestion (images + landmark manifests), the procedural
// two-domain face generator with exact ground-truth landmarks, flip
// augmentation, and a deterministic shuffled sample stream.

namespace lmcg {

struct Sample {
  Tensor<float> image;  // [3,S,S] in [-1,1]
  LandmarkSet lm;
  Domain domain = Domain::X;
  std::string id;
};

// ---------------------------------------------------------------------
// Manifest: one record per line, tab-separated, path then x1 y1 .. x5 y5
// ---------------------------------------------------------------------

struct ManifestRecord {
  std::string path;
  LandmarkSet lm;
};

struct Manifest {
  std::vector<ManifestRecord> records;
};

namespace detail {
inline std::string format_coord(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", double(v));
  return buf;
}
}  // namespace detail

inline std::string format_manifest(const Manifest& m) {
  std::ostringstream os;
  for (const auto& r : m.records) {
    os << r.path;
    for (const auto& p : r.lm.pts)
      os << '\t' << detail::format_coord(p.x) << '\t'
         << detail::format_coord(p.y);
    os << '\n';
  }
  return os.str();
}

inline Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 11)
      throw DataError("manifest line " + std::to_string(lineno) + ": want "
                      "path + 10 coordinates, got " +
                      std::to_string(fields.size()) + " fields");
    ManifestRecord rec;
    rec.path = fields[0];
    for (int k = 0; k < 5; ++k) {
      try {
        rec.lm.pts[std::size_t(k)].x = std::stof(fields[std::size_t(1 + 2 * k)]);
        rec.lm.pts[std::size_t(k)].y = std::stof(fields[std::size_t(2 + 2 * k)]);
      } catch (const std::exception&) {
        throw DataError("manifest line " + std::to_string(lineno) +
                        ": bad coordinate");
      }
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_manifest(ss.str());
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write manifest: " + path);
  f << format_manifest(m);
}

// ---------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------

/// Decodes and resizes one record to S, rescaling landmarks by the same
/// factors and normalizing pixels to [-1,1].
inline Sample load_record(const std::string& image_path,
                          const ManifestRecord& rec, Domain domain, int S,
                          const std::string& id) {
  ImageU8 img = read_image(image_path);
  Tensor<float> t = image_to_tensor(img);
  Sample s;
  if (img.w != S || img.h != S) {
    Tensor<float> batched = reshape(t, {1, 3, img.h, img.w});
    s.image = reshape(resize_bilinear(batched, S, S), {3, S, S});
  } else {
    s.image = t;
  }
  const float fx = float(S) / float(img.w), fy = float(S) / float(img.h);
  s.lm = rec.lm;
  for (auto& p : s.lm.pts) {
    p.x *= fx;
    p.y *= fy;
  }
  s.lm.validate(S);
  s.domain = domain;
  s.id = id;
  return s;
}

/// Reads `<root>/<X|Y>/manifest.tsv` and its images. Per-record failures
/// are tolerated up to 1% of the manifest, then the load aborts with
/// every bad id listed.
inline std::vector<Sample> load_dataset(const std::string& root, Domain domain,
                                        int S) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(root) / (domain == Domain::X ? "X" : "Y");
  const Manifest manifest = read_manifest((base / "manifest.tsv").string());
  if (manifest.records.empty())
    throw DataError("empty manifest under " + base.string());
  std::vector<Sample> out;
  std::vector<std::string> bad;
  for (const auto& rec : manifest.records) {
    const std::string id = fs::path(rec.path).stem().string();
    try {
      out.push_back(load_record((base / rec.path).string(), rec, domain, S, id));
    } catch (const Error& e) {
      bad.push_back(id + " (" + e.what() + ")");
    }
  }
  if (!bad.empty() &&
      double(bad.size()) > 0.01 * double(manifest.records.size())) {
    std::string msg = "dataset under " + base.string() + ": " +
                      std::to_string(bad.size()) + " bad records:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw DataError(msg);
  }
  return out;
}

// ---------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------

/// Horizontal flip: x -> S-1-x, eyes swapped, mouth endpoints swapped.
inline Sample flip_sample(const Sample& s) {
  const int S = s.image.dim(2);
  Sample out;
  out.domain = s.domain;
  out.id = s.id;
  out.image = Tensor<float>::zeros(s.image.shape());
  const int C = s.image.dim(0), W = s.image.dim(2);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < s.image.dim(1); ++y) {
      const float* src = s.image.data() + std::size_t(c * s.image.dim(1) + y) * W;
      float* dst = out.image.data() + std::size_t(c * s.image.dim(1) + y) * W;
      for (int x = 0; x < W; ++x) dst[x] = src[W - 1 - x];
    }
  out.lm = s.lm;
  for (auto& p : out.lm.pts) p.x = float(S - 1) - p.x;
  std::swap(out.lm.pts[0], out.lm.pts[1]);  // eyes
  std::swap(out.lm.pts[3], out.lm.pts[4]);  // mouth endpoints
  return out;
}

/// Flip with p = 0.5; the only augmentation.
inline Sample augment(const Sample& s, Rng& rng) {
  return rng.bernoulli(0.5) ? flip_sample(s) : s;
}

// ---------------------------------------------------------------------
// Synthetic two-domain faces
// ---------------------------------------------------------------------

/// Geometry and palette ranges in units of the image size. Domain Y
/// applies fixed style constants (bigger eyes, wider mouth, flat
/// quantized palette) to the same jitter draws.
struct SynthParams {
  float head_cx = 0.50f, head_cy = 0.52f, head_center_jitter = 0.02f;
  float head_ax = 0.33f, head_ay = 0.40f, head_axis_jitter = 0.025f;
  float eye_dx = 0.15f, eye_dx_jitter = 0.02f;
  float eye_dy = -0.10f, eye_dy_jitter = 0.015f;
  float eye_radius = 0.035f, eye_radius_jitter = 0.008f;
  float nose_dy = 0.055f, nose_jitter = 0.01f;
  float nose_half_w = 0.035f, nose_half_h = 0.045f;
  float mouth_dy = 0.20f, mouth_dy_jitter = 0.015f;
  float mouth_half_w = 0.10f, mouth_half_w_jitter = 0.018f;
  float mouth_half_h = 0.022f;
  float y_eye_radius_scale = 1.8f;
  float y_mouth_width_scale = 1.3f;
  std::uint64_t seed = 1;

  /// Rejects ranges whose extremes push any part off-canvas.
  void validate(int S) const {
    const float margin = 2.f / float(S);
    const float cx_max = head_cx + head_center_jitter;
    const float eye_r_max =
        (eye_radius + eye_radius_jitter) * std::max(1.f, y_eye_radius_scale);
    const float right_eye_max =
        cx_max + eye_dx + eye_dx_jitter + eye_r_max;
    const float mouth_right_max = cx_max + (mouth_half_w + mouth_half_w_jitter) *
                                               std::max(1.f, y_mouth_width_scale);
    const float mouth_y_max =
        head_cy + head_center_jitter + mouth_dy + mouth_dy_jitter + mouth_half_h;
    const float head_bottom =
        head_cy + head_center_jitter + head_ay + head_axis_jitter;
    require(right_eye_max < 1.f - margin && mouth_right_max < 1.f - margin &&
                mouth_y_max < 1.f - margin && head_bottom < 1.f + 0.25f &&
                head_cx - head_center_jitter - eye_dx - eye_dx_jitter -
                        eye_r_max > margin,
            "synth params push face parts off-canvas");
  }
};

struct FaceGeometry {
  // all in pixels
  float cx, cy, ax, ay;
  float eye_lx, eye_rx, eye_y, eye_r;
  float nose_x, nose_y, nose_half_w, nose_half_h;
  float mouth_cx, mouth_y, mouth_half_w, mouth_half_h;
  std::array<float, 3> bg, skin, eye_c, nose_c, mouth_c;
  bool shaded = true;
};

namespace detail {
inline float quantize_flat(float v) {
  // five-level flat palette
  const float q = std::round(v * 5.f - 0.5f);
  return (std::min(4.f, std::max(0.f, q)) + 0.5f) / 5.f;
}
}  // namespace detail

/// Draws one face's jittered geometry and palette. The draw sequence is
/// domain-independent; domain styling is a pure transform on top.
inline FaceGeometry sample_face_geometry(const SynthParams& p, int S,
                                         Rng& rng) {
  const float s = float(S);
  FaceGeometry g{};
  g.cx = (p.head_cx + float(rng.uniform(-p.head_center_jitter,
                                        p.head_center_jitter))) * s;
  g.cy = (p.head_cy + float(rng.uniform(-p.head_center_jitter,
                                        p.head_center_jitter))) * s;
  g.ax = (p.head_ax + float(rng.uniform(-p.head_axis_jitter,
                                        p.head_axis_jitter))) * s;
  g.ay = (p.head_ay + float(rng.uniform(-p.head_axis_jitter,
                                        p.head_axis_jitter))) * s;
  const float dx =
      (p.eye_dx + float(rng.uniform(-p.eye_dx_jitter, p.eye_dx_jitter))) * s;
  g.eye_lx = g.cx - dx;
  g.eye_rx = g.cx + dx;
  g.eye_y = g.cy + (p.eye_dy + float(rng.uniform(-p.eye_dy_jitter,
                                                 p.eye_dy_jitter))) * s;
  g.eye_r = (p.eye_radius + float(rng.uniform(-p.eye_radius_jitter,
                                              p.eye_radius_jitter))) * s;
  g.nose_x = g.cx + float(rng.uniform(-p.nose_jitter, p.nose_jitter)) * s;
  g.nose_y = g.cy + (p.nose_dy + float(rng.uniform(-p.nose_jitter,
                                                   p.nose_jitter))) * s;
  g.nose_half_w = p.nose_half_w * s;
  g.nose_half_h = p.nose_half_h * s;
  g.mouth_cx = g.cx + float(rng.uniform(-p.nose_jitter, p.nose_jitter)) * s;
  g.mouth_y = g.cy + (p.mouth_dy + float(rng.uniform(-p.mouth_dy_jitter,
                                                     p.mouth_dy_jitter))) * s;
  g.mouth_half_w =
      (p.mouth_half_w + float(rng.uniform(-p.mouth_half_w_jitter,
                                          p.mouth_half_w_jitter))) * s;
  g.mouth_half_h = p.mouth_half_h * s;

  g.bg = {float(rng.uniform(0.25, 0.55)), float(rng.uniform(0.3, 0.6)),
          float(rng.uniform(0.45, 0.75))};
  g.skin = {float(rng.uniform(0.72, 0.9)), float(rng.uniform(0.54, 0.72)),
            float(rng.uniform(0.42, 0.6))};
  g.eye_c = {float(rng.uniform(0.05, 0.3)), float(rng.uniform(0.1, 0.35)),
             float(rng.uniform(0.15, 0.45))};
  g.nose_c = {g.skin[0] * 0.82f, g.skin[1] * 0.78f, g.skin[2] * 0.75f};
  g.mouth_c = {float(rng.uniform(0.6, 0.85)), float(rng.uniform(0.08, 0.22)),
               float(rng.uniform(0.15, 0.35))};
  g.shaded = true;
  return g;
}

inline FaceGeometry apply_domain_style(FaceGeometry g, Domain domain,
                                       const SynthParams& p) {
  if (domain == Domain::X) return g;
  g.eye_r *= p.y_eye_radius_scale;
  g.mouth_half_w *= p.y_mouth_width_scale;
  for (auto* c : {&g.bg, &g.skin, &g.eye_c, &g.nose_c, &g.mouth_c})
    for (auto& v : *c) v = detail::quantize_flat(v);
  g.shaded = false;
  return g;
}

inline LandmarkSet geometry_landmarks(const FaceGeometry& g) {
  LandmarkSet lm;
  lm.pts[0] = {g.eye_lx, g.eye_y};
  lm.pts[1] = {g.eye_rx, g.eye_y};
  lm.pts[2] = {g.nose_x, g.nose_y};
  lm.pts[3] = {g.mouth_cx - g.mouth_half_w, g.mouth_y};
  lm.pts[4] = {g.mouth_cx + g.mouth_half_w, g.mouth_y};
  return lm;
}

/// Anti-aliased rendering via 4x4 subpixel coverage, painter's order:
/// background, head ellipse (shaded in domain X), eyes, nose triangle,
/// mouth capsule.
inline ImageU8 render_face(const FaceGeometry& g, int S) {
  ImageU8 img;
  img.w = img.h = S;
  img.px.resize(std::size_t(S) * S * 3);
  const int sub = 4;
  auto inside_ellipse = [&](float x, float y) {
    const float u = (x - g.cx) / g.ax, v = (y - g.cy) / g.ay;
    return u * u + v * v <= 1.f;
  };
  auto inside_disc = [](float x, float y, float cx, float cy, float r) {
    const float dx = x - cx, dy = y - cy;
    return dx * dx + dy * dy <= r * r;
  };
  auto inside_tri = [&](float x, float y) {
    // apex up at (nose_x, nose_y - h), base corners at (nose_x +- w,
    // nose_y + h)
    const float ax = g.nose_x, ay = g.nose_y - g.nose_half_h;
    const float bx = g.nose_x - g.nose_half_w, by = g.nose_y + g.nose_half_h;
    const float cx2 = g.nose_x + g.nose_half_w, cy2 = g.nose_y + g.nose_half_h;
    auto edge = [](float x0, float y0, float x1, float y1, float px,
                   float py) {
      return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0);
    };
    const float e0 = edge(ax, ay, bx, by, x, y);
    const float e1 = edge(bx, by, cx2, cy2, x, y);
    const float e2 = edge(cx2, cy2, ax, ay, x, y);
    return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
  };
  auto inside_capsule = [&](float x, float y) {
    const float x0 = g.mouth_cx - g.mouth_half_w,
                x1 = g.mouth_cx + g.mouth_half_w;
    const float px = std::min(x1, std::max(x0, x));
    const float dx = x - px, dy = y - g.mouth_y;
    return dx * dx + dy * dy <= g.mouth_half_h * g.mouth_half_h;
  };

  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      float cover_head = 0, cover_le = 0, cover_re = 0, cover_nose = 0,
            cover_mouth = 0;
      for (int sy = 0; sy < sub; ++sy)
        for (int sx = 0; sx < sub; ++sx) {
          const float fx = float(x) + (float(sx) + 0.5f) / sub - 0.5f;
          const float fy = float(y) + (float(sy) + 0.5f) / sub - 0.5f;
          if (inside_ellipse(fx, fy)) cover_head += 1;
          if (inside_disc(fx, fy, g.eye_lx, g.eye_y, g.eye_r)) cover_le += 1;
          if (inside_disc(fx, fy, g.eye_rx, g.eye_y, g.eye_r)) cover_re += 1;
          if (inside_tri(fx, fy)) cover_nose += 1;
          if (inside_capsule(fx, fy)) cover_mouth += 1;
        }
      const float inv = 1.f / (sub * sub);
      cover_head *= inv;
      cover_le *= inv;
      cover_re *= inv;
      cover_nose *= inv;
      cover_mouth *= inv;

      std::array<float, 3> c = g.bg;
      std::array<float, 3> skin = g.skin;
      if (g.shaded) {
        const float shade = 1.f - 0.18f * (float(y) - g.cy) / g.ay;
        for (auto& v : skin) v = std::min(1.f, std::max(0.f, v * shade));
      }
      auto blend = [&](const std::array<float, 3>& col, float a) {
        for (int k = 0; k < 3; ++k) c[std::size_t(k)] =
            c[std::size_t(k)] * (1.f - a) + col[std::size_t(k)] * a;
      };
      blend(skin, cover_head);
      blend(g.eye_c, cover_le);
      blend(g.eye_c, cover_re);
      blend(g.nose_c, cover_nose);
      blend(g.mouth_c, cover_mouth);
      for (int k = 0; k < 3; ++k)
        img.px[(std::size_t(y) * S + x) * 3 + std::size_t(k)] = std::uint8_t(
            std::min(255.f, std::max(0.f, std::round(c[std::size_t(k)] * 255.f))));
    }
  return img;
}

/// One synthetic sample; the per-sample stream derives from (seed,
/// index) only, so domains X and Y share jitter draws at equal index.
inline Sample synth_sample(const SynthParams& p, Domain domain, int S,
                           int index) {
  Rng rng(Rng::mix(p.seed, std::uint64_t(index)));
  FaceGeometry g = apply_domain_style(sample_face_geometry(p, S, rng), domain, p);
  Sample s;
  s.image = image_to_tensor(render_face(g, S));
  s.lm = geometry_landmarks(g);
  s.lm.validate(S);
  s.domain = domain;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d", domain == Domain::X ? "x" : "y",
                index);
  s.id = buf;
  return s;
}

inline std::vector<Sample> synth_generate(const SynthParams& p, Domain domain,
                                          int n, int S) {
  require(n >= 1, "synth_generate: need n >= 1");
  p.validate(S);
  std::vector<Sample> out;
  out.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) out.push_back(synth_sample(p, domain, S, i));
  return out;
}

/// Writes `<root>/{X,Y}/images/*.ppm` plus manifests, the same layout
/// load_dataset reads.
inline void synth_write_dataset(const std::string& root, const SynthParams& p,
                                int n_per_domain, int S) {
  namespace fs = std::filesystem;
  p.validate(S);
  for (Domain d : {Domain::X, Domain::Y}) {
    const fs::path base = fs::path(root) / (d == Domain::X ? "X" : "Y");
    fs::create_directories(base / "images");
    Manifest manifest;
    for (int i = 0; i < n_per_domain; ++i) {
      Sample s = synth_sample(p, d, S, i);
      const std::string rel = "images/" + s.id + ".ppm";
      write_ppm((base / rel).string(), tensor_to_image(s.image));
      manifest.records.push_back({rel, s.lm});
    }
    write_manifest((base / "manifest.tsv").string(), manifest);
  }
}

// ---------------------------------------------------------------------
// Deterministic shuffled stream
// ---------------------------------------------------------------------

/// Infinite sample stream: a fresh Fisher-Yates permutation per epoch
/// drawn from its own rng stream. State is (epoch-start rng state,
/// cursor); restoring replays the shuffle, so a resumed run continues
/// exactly where the uninterrupted one would be.
class SampleStream {
 public:
  struct State {
    std::array<std::uint64_t, 4> epoch_start{};
    std::uint64_t cursor = 0;
  };

  SampleStream() = default;
  SampleStream(std::vector<Sample> samples, std::uint64_t seed)
      : samples_(std::move(samples)), rng_(seed) {
    require(!samples_.empty(), "SampleStream: empty dataset");
    begin_epoch();
  }

  const Sample& next() {
    if (cursor_ >= perm_.size()) begin_epoch();
    return samples_[perm_[cursor_++]];
  }

  std::size_t size() const { return samples_.size(); }
  const std::vector<Sample>& samples() const { return samples_; }

  State state() const { return State{epoch_start_, cursor_}; }

  void restore(const State& st) {
    rng_.set_state(st.epoch_start);
    begin_epoch();
    require(st.cursor <= perm_.size(), "SampleStream: cursor out of range");
    cursor_ = std::size_t(st.cursor);
  }

 private:
  void begin_epoch() {
    epoch_start_ = rng_.state();
    perm_.resize(samples_.size());
    for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = i;
    rng_.shuffle(perm_);
    cursor_ = 0;
  }

  std::vector<Sample> samples_;
  Rng rng_;
  std::array<std::uint64_t, 4> epoch_start_{};
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
};

}  // namespace lmcg
