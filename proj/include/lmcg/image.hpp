#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lmcg/errors.hpp"
#include "lmcg/ops.hpp"
#include "lmcg/tensor.hpp"

// 8-bit RGB image I/O. Binary PPM (P6) is the native format; 8-bit PNG
// (gray/RGB/RGBA, non-interlaced) is accepted through zlib.

namespace lmcg {

struct ImageU8 {
  int w = 0, h = 0;
  std::vector<std::uint8_t> px;  // RGB, row-major

  std::uint8_t* at(int x, int y) { return px.data() + std::size_t(y * w + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return px.data() + std::size_t(y * w + x) * 3;
  }
};

namespace detail {
inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const auto len = f.tellg();
  f.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  f.read(reinterpret_cast<char*>(buf.data()), len);
  if (!f) throw DataError("short read: " + path);
  return buf;
}

inline void write_file_bytes(const std::string& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open file for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          std::streamsize(bytes.size()));
  if (!f) throw DataError("short write: " + path);
}

inline std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void push_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(std::uint8_t(x >> 24));
  v.push_back(std::uint8_t(x >> 16));
  v.push_back(std::uint8_t(x >> 8));
  v.push_back(std::uint8_t(x));
}
}  // namespace detail

// ---------------------------------------------------------------------
// PPM (P6, maxval 255)
// ---------------------------------------------------------------------

inline void write_ppm(const std::string& path, const ImageU8& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open file for writing: " + path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.px.data()),
          std::streamsize(img.px.size()));
  if (!f) throw DataError("short write: " + path);
}

inline ImageU8 read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw DataError("not a binary PPM (P6): " + path);
  auto next_int = [&]() {
    // skip whitespace and '#' comments
    int c = f.peek();
    while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
      if (c == '#') f.ignore(1 << 20, '\n');
      else f.get();
      c = f.peek();
    }
    int v = -1;
    f >> v;
    if (!f) throw DataError("malformed PPM header: " + path);
    return v;
  };
  ImageU8 img;
  img.w = next_int();
  img.h = next_int();
  const int maxval = next_int();
  if (img.w <= 0 || img.h <= 0 || maxval != 255)
    throw DataError("unsupported PPM (need maxval 255): " + path);
  f.get();  // single whitespace after maxval
  img.px.resize(std::size_t(img.w) * img.h * 3);
  f.read(reinterpret_cast<char*>(img.px.data()),
         std::streamsize(img.px.size()));
  if (!f) throw DataError("truncated PPM payload: " + path);
  return img;
}

// ---------------------------------------------------------------------
// PNG (8-bit, non-interlaced; gray / gray+alpha / RGB / RGBA)
// ---------------------------------------------------------------------

inline ImageU8 read_png(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw DataError("not a PNG file: " + path);

  int w = 0, h = 0, bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= bytes.size() && !saw_iend) {
    const std::uint32_t len = detail::be32(&bytes[pos]);
    if (pos + 12 + len > bytes.size())
      throw DataError("truncated PNG chunk: " + path);
    const std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
    const std::uint8_t* data = &bytes[pos + 8];
    if (type == "IHDR") {
      w = int(detail::be32(data));
      h = int(detail::be32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
      interlace = data[12];
      saw_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      saw_iend = true;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || idat.empty()) throw DataError("malformed PNG: " + path);
  if (bit_depth != 8 || interlace != 0 ||
      (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6))
    throw DataError("unsupported PNG variant (need 8-bit non-interlaced "
                    "gray/RGB/RGBA): " + path);
  const int ch = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;

  const std::size_t stride = std::size_t(w) * ch;
  std::vector<std::uint8_t> raw((stride + 1) * std::size_t(h));
  uLongf dst_len = uLongf(raw.size());
  if (uncompress(raw.data(), &dst_len, idat.data(), uLong(idat.size())) != Z_OK ||
      dst_len != raw.size())
    throw DataError("PNG inflate failed: " + path);

  // Undo per-scanline filters in place.
  std::vector<std::uint8_t> out(stride * std::size_t(h));
  auto paeth = [](int a, int b, int c) {
    const int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b),
              pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
  };
  for (int y = 0; y < h; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * std::size_t(y)];
    const std::uint8_t* src = &raw[(stride + 1) * std::size_t(y) + 1];
    std::uint8_t* dst = &out[stride * std::size_t(y)];
    const std::uint8_t* up = y > 0 ? &out[stride * std::size_t(y - 1)] : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= std::size_t(ch) ? dst[i - std::size_t(ch)] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= std::size_t(ch)) ? up[i - std::size_t(ch)] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw DataError("bad PNG filter byte: " + path);
      }
      dst[i] = std::uint8_t(v & 0xff);
    }
  }

  ImageU8 img;
  img.w = w;
  img.h = h;
  img.px.resize(std::size_t(w) * h * 3);
  for (std::size_t i = 0; i < std::size_t(w) * h; ++i) {
    const std::uint8_t* s = &out[i * std::size_t(ch)];
    std::uint8_t* d = &img.px[i * 3];
    if (ch >= 3) {
      d[0] = s[0];
      d[1] = s[1];
      d[2] = s[2];
    } else {
      d[0] = d[1] = d[2] = s[0];
    }
  }
  return img;
}

inline void write_png(const std::string& path, const ImageU8& img) {
  std::vector<std::uint8_t> out;
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.insert(out.end(), sig, sig + 8);
  auto chunk = [&](const char* type, const std::vector<std::uint8_t>& data) {
    detail::push_be32(out, std::uint32_t(data.size()));
    const std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc =
        crc32(0, out.data() + start, uInt(out.size() - start));
    detail::push_be32(out, std::uint32_t(crc));
  };
  std::vector<std::uint8_t> ihdr;
  detail::push_be32(ihdr, std::uint32_t(img.w));
  detail::push_be32(ihdr, std::uint32_t(img.h));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB
  chunk("IHDR", ihdr);

  const std::size_t stride = std::size_t(img.w) * 3;
  std::vector<std::uint8_t> raw((stride + 1) * std::size_t(img.h));
  for (int y = 0; y < img.h; ++y) {
    raw[(stride + 1) * std::size_t(y)] = 0;  // filter: none
    std::memcpy(&raw[(stride + 1) * std::size_t(y) + 1],
                &img.px[stride * std::size_t(y)], stride);
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<std::uint8_t> comp(bound);
  if (compress2(comp.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
    throw DataError("PNG deflate failed: " + path);
  comp.resize(bound);
  chunk("IDAT", comp);
  chunk("IEND", {});
  detail::write_file_bytes(path, out);
}

inline ImageU8 read_image(const std::string& path) {
  const auto ext = std::filesystem::path(path).extension().string();
  if (ext == ".ppm" || ext == ".PPM") return read_ppm(path);
  if (ext == ".png" || ext == ".PNG") return read_png(path);
  throw DataError("unsupported image extension '" + ext + "': " + path);
}

// ---------------------------------------------------------------------
// Conversions
// ---------------------------------------------------------------------

/// [0,255] -> [-1,1], channel-first [3,H,W] (R,G,B order).
inline Tensor<float> image_to_tensor(const ImageU8& img) {
  Tensor<float> t = Tensor<float>::zeros({3, img.h, img.w});
  const std::size_t plane = std::size_t(img.h) * img.w;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      t.data()[std::size_t(c) * plane + i] =
          float(img.px[i * 3 + std::size_t(c)]) / 127.5f - 1.f;
  return t;
}

inline ImageU8 tensor_to_image(const Tensor<float>& t) {
  require(t.defined() && ((t.rank() == 3 && t.dim(0) == 3) ||
                          (t.rank() == 4 && t.dim(0) == 1 && t.dim(1) == 3)),
          "tensor_to_image: expected [3,H,W] or [1,3,H,W]");
  const int H = t.dim(t.rank() - 2), W = t.dim(t.rank() - 1);
  ImageU8 img;
  img.w = W;
  img.h = H;
  img.px.resize(std::size_t(W) * H * 3);
  const std::size_t plane = std::size_t(H) * W;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = (t.data()[std::size_t(c) * plane + i] + 1.f) * 127.5f;
      img.px[i * 3 + std::size_t(c)] =
          std::uint8_t(std::min(255.f, std::max(0.f, std::round(v))));
    }
  return img;
}

/// Side-by-side grid of equally sized images, black 2-px separators.
inline ImageU8 make_mosaic(const std::vector<ImageU8>& tiles, int columns) {
  require(!tiles.empty() && columns >= 1, "make_mosaic: nothing to lay out");
  const int tw = tiles[0].w, th = tiles[0].h, gap = 2;
  for (const auto& t : tiles)
    require(t.w == tw && t.h == th, "make_mosaic: tiles must share one size");
  const int rows = int((tiles.size() + std::size_t(columns) - 1) / std::size_t(columns));
  ImageU8 out;
  out.w = columns * tw + (columns - 1) * gap;
  out.h = rows * th + (rows - 1) * gap;
  out.px.assign(std::size_t(out.w) * out.h * 3, 0);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const int gx = int(i) % columns, gy = int(i) / columns;
    for (int y = 0; y < th; ++y)
      std::memcpy(out.at(gx * (tw + gap), gy * (th + gap) + y),
                  tiles[i].at(0, y), std::size_t(tw) * 3);
  }
  return out;
}

}  // namespace lmcg
