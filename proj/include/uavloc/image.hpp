#pragma once

// Raster containers and the plain binary raster formats (PGM, depth maps).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "uavloc/error.hpp"

namespace uavloc {

template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  bool empty() const { return width <= 0 || height <= 0 || data.empty(); }

  T& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Raster& a, const Raster& b) {
    return a.width == b.width && a.height == b.height && a.data == b.data;
  }
};

using GrayImage = Raster<std::uint8_t>;
using FloatImage = Raster<float>;
/// Metric optical-axis depth; 0.0 marks pixels without a surface hit.
using DepthMap = Raster<float>;

inline FloatImage to_float(const GrayImage& img) {
  FloatImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) out.data[i] = img.data[i] * (1.0f / 255.0f);
  return out;
}

/// Separable Gaussian blur with clamped borders.
inline FloatImage gaussian_blur(const FloatImage& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k = static_cast<float>(k / sum);

  FloatImage tmp(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      float acc = 0.0f;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, in.width - 1);
        acc += kernel[i + radius] * in(xx, y);
      }
      tmp(x, y) = acc;
    }
  }
  FloatImage out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      float acc = 0.0f;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, in.height - 1);
        acc += kernel[i + radius] * tmp(x, yy);
      }
      out(x, y) = acc;
    }
  }
  return out;
}

/// Area-weighted resampling to an arbitrary size (box filter over the
/// source footprint of each destination pixel).
inline FloatImage resize_area(const FloatImage& in, int out_w, int out_h) {
  FloatImage out(out_w, out_h);
  const double sx = static_cast<double>(in.width) / out_w;
  const double sy = static_cast<double>(in.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double y0 = y * sy, y1 = (y + 1) * sy;
    for (int x = 0; x < out_w; ++x) {
      const double x0 = x * sx, x1 = (x + 1) * sx;
      double acc = 0.0, wsum = 0.0;
      for (int yy = static_cast<int>(y0); yy < std::min(in.height, static_cast<int>(std::ceil(y1))); ++yy) {
        const double wy = std::min<double>(yy + 1, y1) - std::max<double>(yy, y0);
        if (wy <= 0.0) continue;
        for (int xx = static_cast<int>(x0); xx < std::min(in.width, static_cast<int>(std::ceil(x1))); ++xx) {
          const double wx = std::min<double>(xx + 1, x1) - std::max<double>(xx, x0);
          if (wx <= 0.0) continue;
          acc += wx * wy * in(xx, yy);
          wsum += wx * wy;
        }
      }
      out(x, y) = static_cast<float>(wsum > 0.0 ? acc / wsum : 0.0);
    }
  }
  return out;
}

/// Bilinear sample with pixel centers at integer coordinates; coordinates are
/// clamped to the image.
inline float sample_bilinear(const FloatImage& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = std::min(static_cast<int>(x), img.width - 2 < 0 ? 0 : img.width - 2);
  const int y0 = std::min(static_cast<int>(y), img.height - 2 < 0 ? 0 : img.height - 2);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  return static_cast<float>((1 - fy) * ((1 - fx) * img(x0, y0) + fx * img(x1, y0)) +
                            fy * ((1 - fx) * img(x0, y1) + fx * img(x1, y1)));
}

/// Bilinear depth interpolation restricted to valid (> 0) neighbors. Returns
/// 0 when the point is outside the raster or all four neighbors are invalid.
inline double sample_depth(const DepthMap& depth, double x, double y) {
  if (!(x >= 0.0 && y >= 0.0 && x <= depth.width - 1 && y <= depth.height - 1)) return 0.0;
  const int x0 = std::min(static_cast<int>(x), std::max(0, depth.width - 2));
  const int y0 = std::min(static_cast<int>(y), std::max(0, depth.height - 2));
  const int x1 = std::min(x0 + 1, depth.width - 1);
  const int y1 = std::min(y0 + 1, depth.height - 1);
  const double fx = x - x0, fy = y - y0;
  const std::array<double, 4> w = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  const std::array<float, 4> d = {depth(x0, y0), depth(x1, y0), depth(x0, y1), depth(x1, y1)};
  double acc = 0.0, wsum = 0.0, plain = 0.0;
  int valid = 0;
  for (int i = 0; i < 4; ++i) {
    if (d[i] > 0.0f) {
      acc += w[i] * d[i];
      wsum += w[i];
      plain += d[i];
      ++valid;
    }
  }
  if (valid == 0) return 0.0;
  // Zero total weight on the valid corners: the point sits on an invalid
  // node, so use the plain mean of the valid neighbors.
  if (wsum <= 1e-12) return plain / valid;
  return acc / wsum;
}

// ---------------------------------------------------------------------------
// File formats

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw Error(Errc::kParseError, "truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t read_u64(std::istream& is) {
  const std::uint64_t lo = read_u32(is);
  const std::uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline float read_f32(std::istream& is) {
  const std::uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

inline double read_f64(std::istream& is) {
  const std::uint64_t bits = read_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& path) {
  char buf[4];
  is.read(buf, 4);
  if (!is || std::memcmp(buf, magic, 4) != 0) {
    throw Error(Errc::kParseError, path + ": bad magic, expected " + std::string(magic, 4));
  }
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Errc::kIoError, "cannot open " + path.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::kIoError, "cannot open " + path.string());
  return is;
}

}  // namespace detail

/// Binary 8-bit PGM (P5).
inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  auto os = detail::open_out(path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!os) throw Error(Errc::kIoError, "write failed: " + path.string());
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  auto next_token = [&]() {
    std::string tok;
    while (is) {
      const int c = is.peek();
      if (c == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (std::isspace(c)) {
        is.get();
      } else {
        break;
      }
    }
    is >> tok;
    return tok;
  };
  const std::string magic = next_token();
  if (magic != "P5" && magic != "P2") throw Error(Errc::kParseError, path.string() + ": not a PGM file");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw Error(Errc::kParseError, path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw Error(Errc::kParseError, path.string() + ": unsupported PGM dimensions or depth");
  }
  GrayImage img(w, h);
  if (magic == "P5") {
    is.get();
    is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (!is) throw Error(Errc::kParseError, path.string() + ": truncated raster");
  } else {
    for (auto& px : img.data) px = static_cast<std::uint8_t>(std::stoi(next_token()));
  }
  return img;
}

/// Depth file: "UAVD", u32 width, u32 height, width*height little-endian f32.
inline void write_depth(const std::filesystem::path& path, const DepthMap& depth) {
  auto os = detail::open_out(path);
  os.write("UAVD", 4);
  detail::write_u32(os, static_cast<std::uint32_t>(depth.width));
  detail::write_u32(os, static_cast<std::uint32_t>(depth.height));
  for (float v : depth.data) detail::write_f32(os, v);
  if (!os) throw Error(Errc::kIoError, "write failed: " + path.string());
}

inline DepthMap read_depth(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  detail::expect_magic(is, "UAVD", path.string());
  const int w = static_cast<int>(detail::read_u32(is));
  const int h = static_cast<int>(detail::read_u32(is));
  if (w <= 0 || h <= 0 || static_cast<long long>(w) * h > (1LL << 28)) {
    throw Error(Errc::kParseError, path.string() + ": bad depth dimensions");
  }
  DepthMap depth(w, h);
  for (auto& v : depth.data) v = detail::read_f32(is);
  return depth;
}

}  // namespace uavloc
