#pragma once

// Local features (Harris corners + oriented binary patch descriptors),
// mutual-nearest-neighbor Hamming matching, lifting of 2D-2D matches to
// 2D-3D correspondences through reference depth, and the external match file.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "uavloc/error.hpp"
#include "uavloc/geom.hpp"
#include "uavloc/image.hpp"
#include "uavloc/rng.hpp"
#include "uavloc/scene.hpp"

namespace uavloc {

using BinaryDescriptor = std::array<std::uint64_t, 4>;

inline int hamming(const BinaryDescriptor& a, const BinaryDescriptor& b) {
  return std::popcount(a[0] ^ b[0]) + std::popcount(a[1] ^ b[1]) + std::popcount(a[2] ^ b[2]) +
         std::popcount(a[3] ^ b[3]);
}

struct Keypoint {
  Vec2 position = Vec2::Zero();  ///< full-resolution pixels
  double score = 0.0;
  double angle = 0.0;  ///< patch orientation, radians
  int level = 0;       ///< pyramid level the corner was found on
  BinaryDescriptor descriptor{};
};

struct DetectorOptions {
  int max_keypoints = 2048;
  int levels = 6;
  double scale_factor = 1.2;
  double harris_k = 0.04;
  double min_response = 1e-7;
};

namespace detail {

inline constexpr int kPatchRadius = 15;
inline constexpr int kPatternClamp = 13;
inline constexpr int kFeatureBorder = 20;

struct PatternPair {
  int x1, y1, x2, y2;
};

/// 256 pixel pairs drawn from an isotropic Gaussian over the 31 x 31 patch.
inline const std::array<PatternPair, 256>& binary_pattern() {
  static const std::array<PatternPair, 256> pattern = [] {
    std::array<PatternPair, 256> p{};
    Rng rng(0xb1e5ULL);
    const double sigma = 31.0 / 5.0;
    auto draw = [&]() {
      return static_cast<int>(std::clamp(std::lround(rng.normal(0.0, sigma)), -static_cast<long>(kPatternClamp),
                                         static_cast<long>(kPatternClamp)));
    };
    for (auto& pair : p) {
      do {
        pair = {draw(), draw(), draw(), draw()};
      } while (pair.x1 == pair.x2 && pair.y1 == pair.y2);
    }
    return p;
  }();
  return pattern;
}

struct Candidate {
  double x, y;  // level pixels, subpixel
  int ix, iy;   // integer peak
  double score;
  int level;
};

inline void harris_candidates(const FloatImage& img, int level, const DetectorOptions& opt,
                              std::vector<Candidate>& out) {
  const int w = img.width, h = img.height;
  if (w < 2 * kFeatureBorder + 3 || h < 2 * kFeatureBorder + 3) return;
  const FloatImage smooth = gaussian_blur(img, 1.0);
  FloatImage ixx(w, h), iyy(w, h), ixy(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float gx = 0.5f * (smooth(std::min(x + 1, w - 1), y) - smooth(std::max(x - 1, 0), y));
      const float gy = 0.5f * (smooth(x, std::min(y + 1, h - 1)) - smooth(x, std::max(y - 1, 0)));
      ixx(x, y) = gx * gx;
      iyy(x, y) = gy * gy;
      ixy(x, y) = gx * gy;
    }
  }
  const FloatImage sxx = gaussian_blur(ixx, 1.5), syy = gaussian_blur(iyy, 1.5), sxy = gaussian_blur(ixy, 1.5);
  FloatImage resp(w, h);
  for (std::size_t i = 0; i < resp.data.size(); ++i) {
    const double a = sxx.data[i], b = syy.data[i], c = sxy.data[i];
    resp.data[i] = static_cast<float>(a * b - c * c - opt.harris_k * (a + b) * (a + b));
  }
  const int b = kFeatureBorder;
  for (int y = b; y < h - b; ++y) {
    for (int x = b; x < w - b; ++x) {
      const float r = resp(x, y);
      if (!(r > opt.min_response)) continue;
      // Strict maximum against earlier neighbors, non-strict against later
      // ones, so plateaus keep exactly one sample.
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const float n = resp(x + dx, y + dy);
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          if (earlier ? n >= r : n > r) {
            is_max = false;
            break;
          }
        }
      }
      if (!is_max) continue;
      auto offset = [](double m, double c0, double p) {
        const double denom = m - 2.0 * c0 + p;
        if (std::abs(denom) < 1e-20) return 0.0;
        return std::clamp(0.5 * (m - p) / denom, -0.5, 0.5);
      };
      const double ox = offset(resp(x - 1, y), r, resp(x + 1, y));
      const double oy = offset(resp(x, y - 1), r, resp(x, y + 1));
      out.push_back({x + ox, y + oy, x, y, r, level});
    }
  }
}

inline double patch_orientation(const FloatImage& img, int cx, int cy) {
  double m10 = 0.0, m01 = 0.0;
  const int r = kPatchRadius;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy > r * r) continue;
      const double v = img(cx + dx, cy + dy);
      m10 += dx * v;
      m01 += dy * v;
    }
  }
  return std::atan2(m01, m10);
}

inline BinaryDescriptor describe(const FloatImage& img, int cx, int cy, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  BinaryDescriptor d{};
  const auto& pattern = binary_pattern();
  auto at = [&](int px, int py) {
    const int x = cx + static_cast<int>(std::lround(c * px - s * py));
    const int y = cy + static_cast<int>(std::lround(s * px + c * py));
    return img(std::clamp(x, 0, img.width - 1), std::clamp(y, 0, img.height - 1));
  };
  for (int i = 0; i < 256; ++i) {
    const auto& p = pattern[static_cast<std::size_t>(i)];
    if (at(p.x1, p.y1) < at(p.x2, p.y2)) d[static_cast<std::size_t>(i / 64)] |= (std::uint64_t{1} << (i % 64));
  }
  return d;
}

}  // namespace detail

/// Harris corners over a scale pyramid (3 x 3 non-maximum suppression,
/// quadratic subpixel refinement), the strongest `max_keypoints` kept, each
/// described by 256 pixel-pair comparisons on a smoothed 31 x 31 patch
/// rotated to the intensity-centroid orientation.
inline std::vector<Keypoint> detect_and_describe(const GrayImage& rgb, const DetectorOptions& opt) {
  if (rgb.width < 32 || rgb.height < 32) throw Error(Errc::kImageTooSmall, "feature detection needs at least 32x32");
  if (opt.levels < 1 || !(opt.scale_factor >= 1.0)) throw Error(Errc::kInvalidArgument, "bad pyramid options");
  const FloatImage base = to_float(rgb);

  std::vector<FloatImage> pyramid;
  std::vector<std::pair<double, double>> scales;  // level -> (sx, sy) to full resolution
  for (int l = 0; l < opt.levels; ++l) {
    const double s = std::pow(opt.scale_factor, l);
    const int w = static_cast<int>(std::lround(base.width / s));
    const int h = static_cast<int>(std::lround(base.height / s));
    if (w < 2 * detail::kFeatureBorder + 3 || h < 2 * detail::kFeatureBorder + 3) break;
    pyramid.push_back(l == 0 ? base : resize_area(base, w, h));
    scales.emplace_back(static_cast<double>(base.width) / w, static_cast<double>(base.height) / h);
  }

  std::vector<detail::Candidate> cands;
  for (std::size_t l = 0; l < pyramid.size(); ++l) detail::harris_candidates(pyramid[l], static_cast<int>(l), opt, cands);
  std::sort(cands.begin(), cands.end(), [](const detail::Candidate& a, const detail::Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.level != b.level) return a.level < b.level;
    if (a.iy != b.iy) return a.iy < b.iy;
    return a.ix < b.ix;
  });
  if (cands.size() > static_cast<std::size_t>(std::max(0, opt.max_keypoints))) {
    cands.resize(static_cast<std::size_t>(std::max(0, opt.max_keypoints)));
  }

  std::vector<FloatImage> smoothed(pyramid.size());
  std::vector<Keypoint> out;
  out.reserve(cands.size());
  for (const auto& c : cands) {
    auto& sm = smoothed[static_cast<std::size_t>(c.level)];
    if (sm.empty()) sm = gaussian_blur(pyramid[static_cast<std::size_t>(c.level)], 2.0);
    Keypoint kp;
    const auto [sx, sy] = scales[static_cast<std::size_t>(c.level)];
    kp.position = Vec2((c.x + 0.5) * sx - 0.5, (c.y + 0.5) * sy - 0.5);
    kp.score = c.score;
    kp.level = c.level;
    kp.angle = detail::patch_orientation(sm, c.ix, c.iy);
    kp.descriptor = detail::describe(sm, c.ix, c.iy, kp.angle);
    out.push_back(kp);
  }
  return out;
}

inline std::vector<Keypoint> detect_and_describe(const GrayImage& rgb, int max_kp) {
  DetectorOptions opt;
  opt.max_keypoints = max_kp;
  return detect_and_describe(rgb, opt);
}

struct Match {
  Vec2 query_pixel = Vec2::Zero();
  Vec2 ref_pixel = Vec2::Zero();
  std::string ref_name;
  double score = 0.0;  ///< 1 - hamming / 256
};

inline constexpr double kDefaultBinaryRatio = 0.9;

/// Mutual nearest neighbors under Hamming distance with the ratio test
/// applied from both sides (so swapping the arguments swaps the pairs). When
/// a side has a single keypoint, its second-best distance is undefined and
/// the ratio test passes.
inline std::vector<Match> match_features(const std::vector<Keypoint>& qk, const std::vector<Keypoint>& rk,
                                         double ratio = kDefaultBinaryRatio, const std::string& ref_name = {}) {
  constexpr int kNone = std::numeric_limits<int>::max();
  struct Best {
    int d1 = kNone, d2 = kNone, idx = -1;
    void offer(int d, int i) {
      if (d < d1) {
        d2 = d1;
        d1 = d;
        idx = i;
      } else if (d < d2) {
        d2 = d;
      }
    }
  };
  std::vector<Best> row(qk.size()), col(rk.size());
  for (std::size_t i = 0; i < qk.size(); ++i) {
    for (std::size_t j = 0; j < rk.size(); ++j) {
      const int d = hamming(qk[i].descriptor, rk[j].descriptor);
      row[i].offer(d, static_cast<int>(j));
      col[j].offer(d, static_cast<int>(i));
    }
  }
  auto passes = [&](const Best& b) { return b.d2 == kNone || b.d1 <= ratio * b.d2; };
  std::vector<Match> out;
  for (std::size_t i = 0; i < qk.size(); ++i) {
    const int j = row[i].idx;
    if (j < 0 || col[static_cast<std::size_t>(j)].idx != static_cast<int>(i)) continue;
    if (!passes(row[i]) || !passes(col[static_cast<std::size_t>(j)])) continue;
    Match m;
    m.query_pixel = qk[i].position;
    m.ref_pixel = rk[static_cast<std::size_t>(j)].position;
    m.ref_name = ref_name;
    m.score = 1.0 - row[i].d1 / 256.0;
    out.push_back(std::move(m));
  }
  return out;
}

struct Correspondence2D3D {
  Vec2 query_pixel = Vec2::Zero();
  Vec3 world_point = Vec3::Zero();
  std::string ref_name;
};

using ReferenceLookup = std::function<const RenderedView*(const std::string&)>;

/// Back-projects each match's reference pixel with the reference depth
/// (bilinear over valid neighbors). Matches with no valid depth around the
/// reference pixel are dropped.
inline std::vector<Correspondence2D3D> lift_matches(const std::vector<Match>& matches, const ReferenceLookup& refs) {
  std::vector<Correspondence2D3D> out;
  out.reserve(matches.size());
  for (const auto& m : matches) {
    const RenderedView* ref = refs(m.ref_name);
    if (ref == nullptr) throw Error(Errc::kUnknownReference, "no reference view named " + m.ref_name);
    const double d = sample_depth(ref->depth, m.ref_pixel.x(), m.ref_pixel.y());
    if (!(d > 0.0)) continue;
    Correspondence2D3D c;
    c.query_pixel = m.query_pixel;
    c.world_point = unproject(ref->pose, ref->intrinsics, m.ref_pixel, d);
    c.ref_name = m.ref_name;
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<Correspondence2D3D> lift_matches(
    const std::vector<Match>& matches, const std::unordered_map<std::string, const RenderedView*>& refs) {
  return lift_matches(matches, [&](const std::string& name) -> const RenderedView* {
    auto it = refs.find(name);
    return it == refs.end() ? nullptr : it->second;
  });
}

// ---------------------------------------------------------------------------
// Match file: "qx qy rx ry ref_name score" per line, '#' comments.

/// Optional image sizes used to reject out-of-range pixels on load.
struct MatchFileBounds {
  std::optional<std::pair<int, int>> query_size;
  std::unordered_map<std::string, std::pair<int, int>> ref_sizes;
};

inline std::vector<Match> load_external_matches(const std::filesystem::path& path, const MatchFileBounds& bounds = {}) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::kIoError, "cannot open " + path.string());
  std::vector<Match> out;
  std::string line;
  int lineno = 0;
  auto inside = [](const Vec2& p, const std::pair<int, int>& size) {
    return p.x() <= size.first - 1 && p.y() <= size.second - 1;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto p = line.find('#'); p != std::string::npos) line.resize(p);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (tok.size() != 6) throw Error(Errc::kParseError, where + ": expected 6 fields, got " + std::to_string(tok.size()));
    auto num = [&](const std::string& t) {
      try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size() || !std::isfinite(v)) throw std::invalid_argument(t);
        return v;
      } catch (const std::exception&) {
        throw Error(Errc::kParseError, where + ": expected a number, got '" + t + "'");
      }
    };
    Match m;
    m.query_pixel = Vec2(num(tok[0]), num(tok[1]));
    m.ref_pixel = Vec2(num(tok[2]), num(tok[3]));
    m.ref_name = tok[4];
    m.score = num(tok[5]);
    if ((m.query_pixel.array() < 0.0).any() || (m.ref_pixel.array() < 0.0).any()) {
      throw Error(Errc::kParseError, where + ": negative pixel coordinate");
    }
    if (bounds.query_size && !inside(m.query_pixel, *bounds.query_size)) {
      throw Error(Errc::kParseError, where + ": query pixel outside the image");
    }
    if (auto it = bounds.ref_sizes.find(m.ref_name); it != bounds.ref_sizes.end() && !inside(m.ref_pixel, it->second)) {
      throw Error(Errc::kParseError, where + ": reference pixel outside the image");
    }
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_matches(const std::filesystem::path& path, const std::vector<Match>& matches) {
  auto os = detail::open_out(path);
  os << "# qx qy rx ry ref_name score\n";
  char buf[160];
  for (const auto& m : matches) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g ", m.query_pixel.x(), m.query_pixel.y(), m.ref_pixel.x(),
                  m.ref_pixel.y());
    os << buf << m.ref_name;
    std::snprintf(buf, sizeof(buf), " %.17g\n", m.score);
    os << buf;
  }
}

}  // namespace uavloc
