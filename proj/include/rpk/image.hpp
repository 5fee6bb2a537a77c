#pragma once

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rpk/errors.hpp"

// Float images in [0,1], planar channel-major storage, plus a small PNG codec
// (8-bit gray/RGB, non-interlaced) over zlib. Dataset images are quantized to
// multiples of 1/255 before writing, so disk round trips are exact.

namespace rpk {

struct Image {
  int h = 0, w = 0, c = 0;
  std::vector<float> data;  // c planes of h*w

  Image() = default;
  Image(int h_, int w_, int c_) : h(h_), w(w_), c(c_) {
    data.assign(static_cast<std::size_t>(h) * w * c, 0.0f);
  }

  float* plane(int ch) { return data.data() + static_cast<std::size_t>(ch) * h * w; }
  const float* plane(int ch) const {
    return data.data() + static_cast<std::size_t>(ch) * h * w;
  }
  float& at(int ch, int y, int x) {
    return plane(ch)[static_cast<std::size_t>(y) * w + x];
  }
  float at(int ch, int y, int x) const {
    return plane(ch)[static_cast<std::size_t>(y) * w + x];
  }

  // Snap every value to the 8-bit grid; keeps PNG round trips lossless.
  void quantize() {
    for (auto& v : data) {
      float q = std::nearbyint(std::min(std::max(v, 0.0f), 1.0f) * 255.0f);
      v = q / 255.0f;
    }
  }
};

struct Mask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> data;  // 0 or 1

  Mask() = default;
  Mask(int h_, int w_) : h(h_), w(w_) {
    data.assign(static_cast<std::size_t>(h) * w, 0);
  }
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * w + x];
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v;
    return n;
  }
};

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::uint8_t* data, std::uint32_t len) {
  put_be32(out, len);
  const std::size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data, data + len);
  std::uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_at, len + 4);
  put_be32(out, crc);
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

inline void write_png(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw IoError("write_png: expected 1 or 3 channels");
  const int bpp = img.c;
  const std::size_t stride = static_cast<std::size_t>(img.w) * bpp;
  std::vector<std::uint8_t> raw((stride + 1) * img.h);
  for (int y = 0; y < img.h; ++y) {
    std::uint8_t* row = raw.data() + y * (stride + 1);
    row[0] = 0;  // filter: none
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        float v = std::min(std::max(img.at(ch, y, x), 0.0f), 1.0f);
        row[1 + x * bpp + ch] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw IoError("write_png: deflate failed for " + path);

  std::vector<std::uint8_t> out;
  const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.insert(out.end(), sig, sig + 8);
  std::uint8_t ihdr[13];
  ihdr[0] = static_cast<std::uint8_t>(img.w >> 24);
  ihdr[1] = static_cast<std::uint8_t>(img.w >> 16);
  ihdr[2] = static_cast<std::uint8_t>(img.w >> 8);
  ihdr[3] = static_cast<std::uint8_t>(img.w);
  ihdr[4] = static_cast<std::uint8_t>(img.h >> 24);
  ihdr[5] = static_cast<std::uint8_t>(img.h >> 16);
  ihdr[6] = static_cast<std::uint8_t>(img.h >> 8);
  ihdr[7] = static_cast<std::uint8_t>(img.h);
  ihdr[8] = 8;                                  // bit depth
  ihdr[9] = img.c == 3 ? 2 : 0;                 // color type
  ihdr[10] = ihdr[11] = ihdr[12] = 0;           // deflate, adaptive, no interlace
  detail::png_chunk(out, "IHDR", ihdr, 13);
  detail::png_chunk(out, "IDAT", comp.data(), static_cast<std::uint32_t>(comp_len));
  detail::png_chunk(out, "IEND", nullptr, 0);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write_png: short write to " + path);
}

inline Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_png: cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
    throw IoError("read_png: not a PNG file: " + path);

  int W = 0, H = 0, color = -1;
  std::vector<std::uint8_t> idat;
  std::size_t p = 8;
  bool saw_end = false;
  while (p + 12 <= buf.size()) {
    const std::uint32_t len = detail::get_be32(buf.data() + p);
    if (p + 12 + len > buf.size()) throw IoError("read_png: truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(buf.data() + p + 4);
    const std::uint8_t* data = buf.data() + p + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("read_png: bad IHDR in " + path);
      W = static_cast<int>(detail::get_be32(data));
      H = static_cast<int>(detail::get_be32(data + 4));
      const int depth = data[8];
      color = data[9];
      if (depth != 8 || (color != 0 && color != 2) || data[12] != 0)
        throw IoError("read_png: unsupported PNG variant in " + path);
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_end = true;
      break;
    }
    p += 12 + len;
  }
  if (W <= 0 || H <= 0 || color < 0 || idat.empty() || !saw_end)
    throw IoError("read_png: malformed PNG: " + path);

  const int bpp = color == 2 ? 3 : 1;
  const std::size_t stride = static_cast<std::size_t>(W) * bpp;
  std::vector<std::uint8_t> raw((stride + 1) * H);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) !=
          Z_OK ||
      raw_len != raw.size())
    throw IoError("read_png: inflate failed for " + path);

  // Undo scanline filters in place.
  std::vector<std::uint8_t> prev(stride, 0);
  for (int y = 0; y < H; ++y) {
    std::uint8_t* row = raw.data() + y * (stride + 1);
    const int filter = row[0];
    std::uint8_t* cur = row + 1;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? cur[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
      int v = cur[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw IoError("read_png: bad filter byte in " + path);
      }
      cur[i] = static_cast<std::uint8_t>(v & 0xff);
    }
    std::memcpy(prev.data(), cur, stride);
  }

  Image img(H, W, bpp);
  for (int y = 0; y < H; ++y) {
    const std::uint8_t* cur = raw.data() + y * (stride + 1) + 1;
    for (int x = 0; x < W; ++x)
      for (int ch = 0; ch < bpp; ++ch)
        img.at(ch, y, x) = cur[x * bpp + ch] / 255.0f;
  }
  return img;
}

inline void write_mask_png(const std::string& path, const Mask& m) {
  Image img(m.h, m.w, 1);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    img.data[i] = m.data[i] ? 1.0f : 0.0f;
  write_png(path, img);
}

inline Mask read_mask_png(const std::string& path) {
  Image img = read_png(path);
  if (img.c != 1) throw IoError("read_mask_png: expected grayscale: " + path);
  Mask m(img.h, img.w);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = img.data[i] > 0.5f ? 1 : 0;
  return m;
}

inline Image resize_bilinear(const Image& src, int H, int W) {
  Image dst(H, W, src.c);
  const double sy = static_cast<double>(src.h) / H;
  const double sx = static_cast<double>(src.w) / W;
  for (int ch = 0; ch < src.c; ++ch)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double fy = (y + 0.5) * sy - 0.5;
        const double fx = (x + 0.5) * sx - 0.5;
        const int y0 = std::max(0, std::min(src.h - 1, static_cast<int>(std::floor(fy))));
        const int x0 = std::max(0, std::min(src.w - 1, static_cast<int>(std::floor(fx))));
        const int y1 = std::min(src.h - 1, y0 + 1);
        const int x1 = std::min(src.w - 1, x0 + 1);
        const double wy = std::min(1.0, std::max(0.0, fy - y0));
        const double wx = std::min(1.0, std::max(0.0, fx - x0));
        const double v = (1 - wy) * ((1 - wx) * src.at(ch, y0, x0) + wx * src.at(ch, y0, x1)) +
                         wy * ((1 - wx) * src.at(ch, y1, x0) + wx * src.at(ch, y1, x1));
        dst.at(ch, y, x) = static_cast<float>(v);
      }
  return dst;
}

// Horizontal strip with a 1px white separator; all tiles must share h/c.
inline Image hstack(const std::vector<Image>& tiles) {
  if (tiles.empty()) return {};
  int W = -1;
  for (const auto& t : tiles) W += t.w + 1;
  Image out(tiles[0].h, W, tiles[0].c);
  for (auto& v : out.data) v = 1.0f;
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int ch = 0; ch < out.c; ++ch)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < t.w; ++x) out.at(ch, y, x0 + x) = t.at(ch, y, x);
    x0 += t.w + 1;
  }
  return out;
}

// Vertical stack with a 1px white separator; all rows must share w/c.
inline Image vstack(const std::vector<Image>& rows) {
  if (rows.empty()) return {};
  int H = -1;
  for (const auto& r : rows) H += r.h + 1;
  Image out(H, rows[0].w, rows[0].c);
  for (auto& v : out.data) v = 1.0f;
  int y0 = 0;
  for (const auto& r : rows) {
    for (int ch = 0; ch < out.c; ++ch)
      for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) out.at(ch, y0 + y, x) = r.at(ch, y, x);
    y0 += r.h + 1;
  }
  return out;
}

}  // namespace rpk
