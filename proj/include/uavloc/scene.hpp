#pragma once

// Heightfield surface model, procedural scene synthesis, ray casting and a
// software renderer producing shaded grayscale plus metric depth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "uavloc/error.hpp"
#include "uavloc/geom.hpp"
#include "uavloc/image.hpp"
#include "uavloc/parallel.hpp"
#include "uavloc/rng.hpp"

namespace uavloc {

/// Gridded digital surface model. Node (i, j) sits at
/// (x0 + i * cell, y0 + j * cell); storage is row-major with j as the row.
class Heightfield {
 public:
  static constexpr int kBlock = 8;

  Heightfield() = default;

  Heightfield(int nx, int ny, double x0, double y0, double cell, std::vector<float> heights,
              std::vector<float> albedo)
      : nx_(nx), ny_(ny), x0_(x0), y0_(y0), cell_(cell), heights_(std::move(heights)), albedo_(std::move(albedo)) {
    if (nx_ < 2 || ny_ < 2) throw Error(Errc::kInvalidSpec, "heightfield needs at least 2x2 nodes");
    if (!(cell_ > 0.0) || !std::isfinite(cell_)) throw Error(Errc::kInvalidSpec, "cell size must be positive");
    if (!std::isfinite(x0_) || !std::isfinite(y0_)) throw Error(Errc::kInvalidSpec, "origin must be finite");
    const std::size_t n = static_cast<std::size_t>(nx_) * ny_;
    if (heights_.size() != n || albedo_.size() != n) {
      throw Error(Errc::kInvalidSpec, "grid size does not match nx * ny");
    }
    min_h_ = std::numeric_limits<double>::infinity();
    max_h_ = -std::numeric_limits<double>::infinity();
    for (float h : heights_) {
      if (!std::isfinite(h)) throw Error(Errc::kInvalidSpec, "non-finite height");
      min_h_ = std::min<double>(min_h_, h);
      max_h_ = std::max<double>(max_h_, h);
    }
    build_blocks();
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double x0() const { return x0_; }
  double y0() const { return y0_; }
  double cell() const { return cell_; }
  double x1() const { return x0_ + (nx_ - 1) * cell_; }
  double y1() const { return y0_ + (ny_ - 1) * cell_; }
  double min_height() const { return min_h_; }
  double max_height() const { return max_h_; }
  const std::vector<float>& heights() const { return heights_; }
  const std::vector<float>& albedo() const { return albedo_; }

  float node_height(int i, int j) const { return heights_[static_cast<std::size_t>(j) * nx_ + i]; }
  float node_albedo(int i, int j) const { return albedo_[static_cast<std::size_t>(j) * nx_ + i]; }

  bool contains(double x, double y) const {
    constexpr double eps = 1e-9;
    return x >= x0_ - eps && y >= y0_ - eps && x <= x1() + eps && y <= y1() + eps;
  }

  /// Bilinear height; throws OutOfBounds outside the grid.
  double height_at(double x, double y) const {
    if (!contains(x, y)) throw Error(Errc::kOutOfBounds, "query outside heightfield");
    return interpolate(heights_, x, y);
  }

  /// Bilinear height with coordinates clamped into the grid.
  double height_clamped(double x, double y) const { return interpolate(heights_, x, y); }

  double albedo_at(double x, double y) const { return interpolate(albedo_, x, y); }

  /// Surface normal from central differences one cell apart.
  Vec3 normal_at(double x, double y) const {
    const double c = cell_;
    const double dzdx = (height_clamped(x + c, y) - height_clamped(x - c, y)) / (2.0 * c);
    const double dzdy = (height_clamped(x, y + c) - height_clamped(x, y - c)) / (2.0 * c);
    return Vec3(-dzdx, -dzdy, 1.0).normalized();
  }

  /// Maximum node height over an axis-aligned region (clamped to the grid).
  double max_height_in(double xmin, double ymin, double xmax, double ymax) const {
    const int i0 = std::clamp(static_cast<int>(std::floor((xmin - x0_) / cell_)), 0, nx_ - 1);
    const int i1 = std::clamp(static_cast<int>(std::ceil((xmax - x0_) / cell_)), 0, nx_ - 1);
    const int j0 = std::clamp(static_cast<int>(std::floor((ymin - y0_) / cell_)), 0, ny_ - 1);
    const int j1 = std::clamp(static_cast<int>(std::ceil((ymax - y0_) / cell_)), 0, ny_ - 1);
    double m = -std::numeric_limits<double>::infinity();
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) m = std::max<double>(m, node_height(i, j));
    return m;
  }

  /// First intersection of a ray with the interpolated surface: fixed-step
  /// marching (cell / 2) then 40 bisection steps. Blocks whose maximum
  /// height lies below the ray segment are skipped; the skipped lattice
  /// samples would all have been above the surface, so the result equals
  /// that of plain marching.
  std::optional<Vec3> cast_ray(const Vec3& o, const Vec3& d) const {
    double t0 = 0.0;
    double t1 = std::numeric_limits<double>::infinity();
    auto slab = [&](double oc, double dc, double lo, double hi) {
      if (std::abs(dc) < 1e-15) return oc >= lo && oc <= hi;
      double ta = (lo - oc) / dc;
      double tb = (hi - oc) / dc;
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      return t0 <= t1;
    };
    if (!slab(o.x(), d.x(), x0_, x1()) || !slab(o.y(), d.y(), y0_, y1())) return std::nullopt;

    if (d.z() >= 0.0) {
      if (o.z() + d.z() * t0 > max_h_) return std::nullopt;
      if (d.z() > 0.0) t1 = std::min(t1, (max_h_ - o.z()) / d.z());
    } else {
      t0 = std::max(t0, (max_h_ - o.z()) / d.z());
      t1 = std::min(t1, (min_h_ - o.z()) / d.z());
    }
    if (t0 > t1) return std::nullopt;

    auto point = [&](double t) { return Vec3(o.x() + d.x() * t, o.y() + d.y() * t, o.z() + d.z() * t); };
    auto residual = [&](double t) {
      const Vec3 p = point(t);
      return p.z() - height_clamped(p.x(), p.y());
    };

    const double f0 = residual(t0);
    if (f0 < 0.0) return std::nullopt;  // starts inside the surface
    if (f0 == 0.0) return point(t0);

    const double step = 0.5 * cell_;
    const double block_w = kBlock * cell_;
    double t_prev = t0;
    long long k = 0;
    while (true) {
      {
        const double px = o.x() + d.x() * t_prev;
        const double py = o.y() + d.y() * t_prev;
        const int bi = std::clamp(static_cast<int>((px - x0_) / block_w), 0, nbx_ - 1);
        const int bj = std::clamp(static_cast<int>((py - y0_) / block_w), 0, nby_ - 1);
        double te = t1;
        if (d.x() > 0.0) te = std::min(te, (x0_ + std::min((bi + 1) * kBlock, nx_ - 1) * cell_ - o.x()) / d.x());
        if (d.x() < 0.0) te = std::min(te, (x0_ + bi * kBlock * cell_ - o.x()) / d.x());
        if (d.y() > 0.0) te = std::min(te, (y0_ + std::min((bj + 1) * kBlock, ny_ - 1) * cell_ - o.y()) / d.y());
        if (d.y() < 0.0) te = std::min(te, (y0_ + bj * kBlock * cell_ - o.y()) / d.y());
        const double zseg = std::min(o.z() + d.z() * t_prev, o.z() + d.z() * te);
        if (zseg > block_max_[static_cast<std::size_t>(bj) * nbx_ + bi] + 1e-6) {
          if (te >= t1) return std::nullopt;
          const auto kk = static_cast<long long>(std::floor((te - t0) / step));
          if (kk > k) {
            k = kk;
            t_prev = t0 + static_cast<double>(k) * step;
            continue;
          }
        }
      }
      ++k;
      double t = t0 + static_cast<double>(k) * step;
      const bool last = t >= t1;
      if (last) t = t1;
      if (residual(t) <= 0.0) {
        double lo = t_prev, hi = t;
        for (int it = 0; it < 40; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (residual(mid) > 0.0) {
            lo = mid;
          } else {
            hi = mid;
          }
        }
        return point(0.5 * (lo + hi));
      }
      if (last) return std::nullopt;
      t_prev = t;
    }
  }

 private:
  double interpolate(const std::vector<float>& grid, double x, double y) const {
    double gx = std::clamp((x - x0_) / cell_, 0.0, static_cast<double>(nx_ - 1));
    double gy = std::clamp((y - y0_) / cell_, 0.0, static_cast<double>(ny_ - 1));
    const int i = std::min(static_cast<int>(gx), nx_ - 2);
    const int j = std::min(static_cast<int>(gy), ny_ - 2);
    const double fx = gx - i, fy = gy - j;
    const std::size_t idx = static_cast<std::size_t>(j) * nx_ + i;
    const double h00 = grid[idx], h10 = grid[idx + 1];
    const double h01 = grid[idx + nx_], h11 = grid[idx + nx_ + 1];
    return (1.0 - fy) * ((1.0 - fx) * h00 + fx * h10) + fy * ((1.0 - fx) * h01 + fx * h11);
  }

  void build_blocks() {
    nbx_ = (nx_ - 1 + kBlock - 1) / kBlock;
    nby_ = (ny_ - 1 + kBlock - 1) / kBlock;
    block_max_.assign(static_cast<std::size_t>(nbx_) * nby_, -std::numeric_limits<float>::infinity());
    for (int bj = 0; bj < nby_; ++bj) {
      for (int bi = 0; bi < nbx_; ++bi) {
        float m = -std::numeric_limits<float>::infinity();
        for (int j = bj * kBlock; j <= std::min((bj + 1) * kBlock, ny_ - 1); ++j)
          for (int i = bi * kBlock; i <= std::min((bi + 1) * kBlock, nx_ - 1); ++i) m = std::max(m, node_height(i, j));
        block_max_[static_cast<std::size_t>(bj) * nbx_ + bi] = m;
      }
    }
  }

  int nx_ = 0;
  int ny_ = 0;
  double x0_ = 0.0;
  double y0_ = 0.0;
  double cell_ = 1.0;
  std::vector<float> heights_;
  std::vector<float> albedo_;
  double min_h_ = 0.0;
  double max_h_ = 0.0;
  int nbx_ = 0;
  int nby_ = 0;
  std::vector<float> block_max_;
};

inline double height_at(const Heightfield& h, double x, double y) { return h.height_at(x, y); }

inline std::optional<Vec3> raycast(const Heightfield& h, const Vec3& origin, const Vec3& dir) {
  if (std::abs(dir.norm() - 1.0) > 1e-6) throw Error(Errc::kInvalidArgument, "ray direction must be unit length");
  if (!origin.allFinite()) throw Error(Errc::kInvalidArgument, "ray origin must be finite");
  return h.cast_ray(origin, dir);
}

// ---------------------------------------------------------------------------
// Procedural scenes

enum class SceneLayout {
  kRandom,  ///< buildings and ground patches scattered at random
  kGrid,    ///< identical buildings on a square lattice with periodic texture
};

struct SceneSpec {
  double extent = 500.0;  ///< meters per side, centered on the origin
  double cell = 1.0;
  double terrain_amplitude = 8.0;
  double terrain_wavelength = 250.0;
  int building_count = 120;
  double footprint_min = 8.0;
  double footprint_max = 30.0;
  double height_min = 10.0;
  double height_max = 40.0;
  int patch_count = 600;  ///< flat ground patches (fields, lots) for texture
  double road_spacing = 90.0;  ///< mean street-grid period; 0 disables streets
  int tree_count = 0;
  int max_roof_structures = 3;  ///< per building
  SceneLayout layout = SceneLayout::kRandom;
  double block_spacing = 48.0;  ///< lattice period for kGrid
  std::uint64_t seed = 1;
};

namespace detail {

inline double lattice_value(std::uint64_t seed, long long i, long long j) {
  const std::uint64_t h = hash_combine(hash_combine(seed, static_cast<std::uint64_t>(i)), static_cast<std::uint64_t>(j));
  return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

/// Smooth value noise in [-1, 1]. With `period` > 0 (in lattice units) the
/// pattern repeats.
inline double value_noise(std::uint64_t seed, double x, double y, double scale, long long period = 0) {
  const double gx = x / scale, gy = y / scale;
  const double fx0 = std::floor(gx), fy0 = std::floor(gy);
  long long i = static_cast<long long>(fx0), j = static_cast<long long>(fy0);
  const double fx = gx - fx0, fy = gy - fy0;
  const double sx = fx * fx * (3.0 - 2.0 * fx);
  const double sy = fy * fy * (3.0 - 2.0 * fy);
  auto wrap = [&](long long v) { return period > 0 ? ((v % period) + period) % period : v; };
  const double v00 = lattice_value(seed, wrap(i), wrap(j));
  const double v10 = lattice_value(seed, wrap(i + 1), wrap(j));
  const double v01 = lattice_value(seed, wrap(i), wrap(j + 1));
  const double v11 = lattice_value(seed, wrap(i + 1), wrap(j + 1));
  return (1 - sy) * ((1 - sx) * v00 + sx * v10) + sy * ((1 - sx) * v01 + sx * v11);
}

struct Rect {
  double x0, y0, x1, y1;
};

template <typename F>
void for_nodes_in(int nx, int ny, double ox, double oy, double cell, const Rect& r, F&& f) {
  const int i0 = std::max(0, static_cast<int>(std::ceil((r.x0 - ox) / cell)));
  const int i1 = std::min(nx - 1, static_cast<int>(std::floor((r.x1 - ox) / cell)));
  const int j0 = std::max(0, static_cast<int>(std::ceil((r.y0 - oy) / cell)));
  const int j1 = std::min(ny - 1, static_cast<int>(std::floor((r.y1 - oy) / cell)));
  for (int j = j0; j <= j1; ++j)
    for (int i = i0; i <= i1; ++i) f(i, j, i == i0 || i == i1 || j == j0 || j == j1);
}

}  // namespace detail

inline void validate(const SceneSpec& spec) {
  if (!(spec.extent > 0.0) || !std::isfinite(spec.extent)) throw Error(Errc::kInvalidSpec, "extent must be positive");
  if (!(spec.cell > 0.0) || spec.cell > spec.extent) throw Error(Errc::kInvalidSpec, "cell must be in (0, extent]");
  if (spec.terrain_amplitude < 0.0 || spec.terrain_wavelength <= 0.0 || spec.building_count < 0 ||
      spec.patch_count < 0 || spec.tree_count < 0 || spec.max_roof_structures < 0 || spec.road_spacing < 0.0 ||
      spec.footprint_min < 0.0 || spec.footprint_max < spec.footprint_min ||
      spec.height_min < 0.0 || spec.height_max < spec.height_min || spec.block_spacing <= 0.0) {
    throw Error(Errc::kInvalidSpec, "scene ranges must be non-negative and ordered");
  }
}

/// Deterministic procedural city: smooth terrain in [0, amplitude], flat
/// topped buildings whose roofs sit `height` above the highest terrain node
/// under their footprint, and a grayscale albedo made of multi-scale value
/// noise, ground patches, and roofs with a dark rim. Random layouts also get
/// a painted street grid, small rooftop boxes and optional dome-shaped trees.
inline Heightfield generate_scene(const SceneSpec& spec) {
  validate(spec);
  const int n = static_cast<int>(std::floor(spec.extent / spec.cell + 1e-9)) + 1;
  const double origin = -0.5 * (n - 1) * spec.cell;
  const std::size_t count = static_cast<std::size_t>(n) * n;
  std::vector<float> heights(count), albedo(count);
  const bool periodic = spec.layout == SceneLayout::kGrid;
  const std::uint64_t tex_seed = hash_combine(spec.seed, 0x7e47);
  const std::uint64_t terrain_seed = hash_combine(spec.seed, 0x7e22);

  // Noise periods in lattice units so that the texture repeats with the
  // building lattice in grid layouts.
  auto period_for = [&](double scale) -> long long {
    if (!periodic) return 0;
    return std::max<long long>(1, std::llround(spec.block_spacing / scale));
  };
  auto tex_scale = [&](double nominal) {
    if (!periodic) return nominal;
    return spec.block_spacing / static_cast<double>(std::max<long long>(1, std::llround(spec.block_spacing / nominal)));
  };
  const double s1 = tex_scale(24.0), s2 = tex_scale(8.0), s3 = tex_scale(3.0), s4 = tex_scale(2.0);

  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double x = origin + i * spec.cell;
      const double y = origin + j * spec.cell;
      const std::size_t idx = static_cast<std::size_t>(j) * n + i;
      const double wl = spec.terrain_wavelength;
      const double t = 0.6 * detail::value_noise(terrain_seed, x, y, wl) +
                       0.3 * detail::value_noise(terrain_seed + 1, x, y, wl / 2) +
                       0.1 * detail::value_noise(terrain_seed + 2, x, y, wl / 4);
      heights[idx] = static_cast<float>(spec.terrain_amplitude * (0.5 + 0.5 * t));
      double a = 0.45 + 0.18 * detail::value_noise(tex_seed, x, y, s1, period_for(s1)) +
                 0.12 * detail::value_noise(tex_seed + 1, x, y, s2, period_for(s2)) +
                 0.07 * detail::value_noise(tex_seed + 2, x, y, s3, period_for(s3));
      albedo[idx] = static_cast<float>(a);
    }
  }

  Rng rng(hash_combine(spec.seed, 0xb111d));
  const double lo = origin, hi = origin + (n - 1) * spec.cell;
  auto paint = [&](const detail::Rect& r, double value, double keep) {
    detail::for_nodes_in(n, n, origin, origin, spec.cell, r, [&](int i, int j, bool) {
      float& a = albedo[static_cast<std::size_t>(j) * n + i];
      a = static_cast<float>(keep * a + (1.0 - keep) * value);
    });
  };

  struct Building {
    detail::Rect rect;
    double height;
    double roof_albedo;
  };
  std::vector<Building> buildings;
  std::vector<Building> roof_structures;  // height is relative to the parent roof
  std::vector<std::size_t> roof_parent;

  if (!periodic) {
    // Street grid with jittered spacing, dashed center markings.
    if (spec.road_spacing > 0.0) {
      constexpr double kRoadWidth = 8.0;
      for (int axis = 0; axis < 2; ++axis) {
        for (double c = lo + rng.uniform(0.2, 0.8) * spec.road_spacing; c < hi;
             c += spec.road_spacing * rng.uniform(0.7, 1.3)) {
          const detail::Rect road = axis == 0 ? detail::Rect{c - kRoadWidth / 2, lo, c + kRoadWidth / 2, hi}
                                              : detail::Rect{lo, c - kRoadWidth / 2, hi, c + kRoadWidth / 2};
          paint(road, 0.12, 0.15);
          for (double d = lo + rng.uniform(0.0, 6.0); d < hi; d += 6.0) {
            paint(axis == 0 ? detail::Rect{c - 0.5, d, c + 0.5, d + 3.0} : detail::Rect{d, c - 0.5, d + 3.0, c + 0.5},
                  0.9, 0.0);
          }
        }
      }
    }
    for (int p = 0; p < spec.patch_count; ++p) {
      const double w = rng.uniform(4.0, 24.0), d = rng.uniform(4.0, 24.0);
      const double cx = rng.uniform(lo, hi), cy = rng.uniform(lo, hi);
      paint({cx - w / 2, cy - d / 2, cx + w / 2, cy + d / 2}, rng.uniform(0.1, 0.9), 0.3);
    }
    for (int b = 0; b < spec.building_count; ++b) {
      const double w = rng.uniform(spec.footprint_min, spec.footprint_max);
      const double d = rng.uniform(spec.footprint_min, spec.footprint_max);
      const double margin = 0.5 * spec.footprint_max + spec.cell;
      const double cx = lo + margin < hi - margin ? rng.uniform(lo + margin, hi - margin) : 0.5 * (lo + hi);
      const double cy = lo + margin < hi - margin ? rng.uniform(lo + margin, hi - margin) : 0.5 * (lo + hi);
      const double h = rng.uniform(spec.height_min, spec.height_max);
      const double roof = rng.uniform(0.35, 0.95);
      buildings.push_back({{cx - w / 2, cy - d / 2, cx + w / 2, cy + d / 2}, h, roof});
      // Small rooftop structures (stair towers, plant rooms) on top.
      const int extras = spec.max_roof_structures > 0 ? static_cast<int>(rng.index(spec.max_roof_structures + 1)) : 0;
      for (int k = 0; k < extras; ++k) {
        const double sw = std::min(w - 2.0, rng.uniform(2.0, 6.0)), sd = std::min(d - 2.0, rng.uniform(2.0, 6.0));
        if (sw < 1.0 || sd < 1.0) continue;
        const double sx = cx + rng.uniform(-(w - sw) / 2 + 1.0, (w - sw) / 2 - 1.0 + 1e-9);
        const double sy = cy + rng.uniform(-(d - sd) / 2 + 1.0, (d - sd) / 2 - 1.0 + 1e-9);
        roof_structures.push_back({{sx - sw / 2, sy - sd / 2, sx + sw / 2, sy + sd / 2}, rng.uniform(1.5, 4.0),
                                   std::clamp(roof + rng.uniform(-0.3, 0.3), 0.1, 1.0)});
        roof_parent.push_back(buildings.size() - 1);
      }
    }
  } else {
    // Identical blocks on a lattice: one building per lattice cell (any
    // positive building_count enables them) plus a paved square next to it.
    const double sp = spec.block_spacing;
    const double w = spec.footprint_min > 0.0 ? spec.footprint_min : 0.4 * sp;
    const double roof = rng.uniform(0.5, 0.9);
    const double pave = rng.uniform(0.1, 0.3);
    const long long kmin = static_cast<long long>(std::ceil(lo / sp));
    const long long kmax = static_cast<long long>(std::floor(hi / sp));
    for (long long by = kmin; by <= kmax; ++by) {
      for (long long bx = kmin; bx <= kmax; ++bx) {
        const double cx = bx * sp, cy = by * sp;
        paint({cx + 0.1 * sp, cy - 0.45 * sp, cx + 0.45 * sp, cy - 0.1 * sp}, pave, 0.3);
        if (spec.building_count > 0) {
          buildings.push_back({{cx - w / 2, cy - w / 2, cx + w / 2, cy + w / 2}, spec.height_min, roof});
        }
      }
    }
  }

  const std::vector<float> terrain = heights;
  for (const auto& b : buildings) {
    double base = -std::numeric_limits<double>::infinity();
    detail::for_nodes_in(n, n, origin, origin, spec.cell, b.rect, [&](int i, int j, bool) {
      base = std::max<double>(base, terrain[static_cast<std::size_t>(j) * n + i]);
    });
    if (!std::isfinite(base)) continue;
    const double roof = base + b.height;
    detail::for_nodes_in(n, n, origin, origin, spec.cell, b.rect, [&](int i, int j, bool rim) {
      const std::size_t idx = static_cast<std::size_t>(j) * n + i;
      if (roof >= heights[idx]) {
        heights[idx] = static_cast<float>(roof);
        const double tex = 0.08 * detail::value_noise(tex_seed + 9, origin + i * spec.cell, origin + j * spec.cell, s4, period_for(s4));
        albedo[idx] = static_cast<float>(rim ? 0.5 * b.roof_albedo : b.roof_albedo + tex);
      }
    });
  }

  for (std::size_t k = 0; k < roof_structures.size(); ++k) {
    const auto& s = roof_structures[k];
    const auto& parent = buildings[roof_parent[k]];
    double roof = -std::numeric_limits<double>::infinity();
    detail::for_nodes_in(n, n, origin, origin, spec.cell, parent.rect, [&](int i, int j, bool) {
      roof = std::max<double>(roof, heights[static_cast<std::size_t>(j) * n + i]);
    });
    if (!std::isfinite(roof)) continue;
    detail::for_nodes_in(n, n, origin, origin, spec.cell, s.rect, [&](int i, int j, bool) {
      const std::size_t idx = static_cast<std::size_t>(j) * n + i;
      if (roof + s.height >= heights[idx]) {
        heights[idx] = static_cast<float>(roof + s.height);
        albedo[idx] = static_cast<float>(s.roof_albedo);
      }
    });
  }

  // Trees: dark domes on the ground, hidden by anything taller.
  if (!periodic) {
    for (int t = 0; t < spec.tree_count; ++t) {
      const double r = rng.uniform(2.0, 4.5), th = rng.uniform(4.0, 10.0);
      const double cx = rng.uniform(lo, hi), cy = rng.uniform(lo, hi);
      const double shade = rng.uniform(0.12, 0.3);
      detail::for_nodes_in(n, n, origin, origin, spec.cell, {cx - r, cy - r, cx + r, cy + r}, [&](int i, int j, bool) {
        const double dx = origin + i * spec.cell - cx, dy = origin + j * spec.cell - cy;
        const double q = 1.0 - (dx * dx + dy * dy) / (r * r);
        if (q <= 0.0) return;
        const std::size_t idx = static_cast<std::size_t>(j) * n + i;
        const double z = terrain[idx] + th * std::sqrt(q);
        if (z > heights[idx]) {
          heights[idx] = static_cast<float>(z);
          albedo[idx] = static_cast<float>(shade + 0.1 * q);
        }
      });
    }
  }

  for (auto& a : albedo) a = std::clamp(a, 0.02f, 1.0f);
  return Heightfield(n, n, origin, origin, spec.cell, std::move(heights), std::move(albedo));
}

// ---------------------------------------------------------------------------
// Rendering

struct RenderedView {
  GrayImage rgb;
  DepthMap depth;
  Pose pose;
  Intrinsics intrinsics;
};

inline constexpr double kNearDepth = 1e-3;

inline Vec3 default_sun_direction() { return Vec3(0.35, 0.25, 1.0).normalized(); }

/// World-frame unit ray direction through a pixel.
inline Vec3 pixel_ray_world(const Pose& pose, const Intrinsics& K, const Vec2& px) {
  return (pose.rotation.transpose() * K.ray(px)).normalized();
}

/// Casts one ray through every pixel center. Gray value is the Lambertian
/// term albedo * max(0, n . sun) quantized to 8 bit; depth is optical-axis
/// depth of the hit, 0 where nothing is hit.
inline RenderedView render_view(const Heightfield& h, const Pose& pose, const Intrinsics& K,
                                const Vec3& sun_dir = default_sun_direction(), int jobs = 1) {
  require_valid(K);
  if (!pose.is_valid(1e-6)) throw Error(Errc::kInvalidArgument, "render pose is not a rigid transform");
  RenderedView view;
  view.rgb = GrayImage(K.width, K.height, 0);
  view.depth = DepthMap(K.width, K.height, 0.0f);
  view.pose = pose;
  view.intrinsics = K;
  const Vec3 center = pose.center();
  const Vec3 sun = sun_dir.normalized();
  const Mat3 Rt = pose.rotation.transpose();
  parallel_for(static_cast<std::size_t>(K.height), jobs, [&](std::size_t row) {
    const int v = static_cast<int>(row);
    for (int u = 0; u < K.width; ++u) {
      const Vec3 dir = (Rt * K.ray(Vec2(u, v))).normalized();
      const auto hit = h.cast_ray(center, dir);
      if (!hit) continue;
      const double z = pose.transform(*hit).z();
      if (!(z >= kNearDepth)) continue;
      view.depth(u, v) = static_cast<float>(z);
      const double shade = h.albedo_at(hit->x(), hit->y()) * std::max(0.0, h.normal_at(hit->x(), hit->y()).dot(sun));
      view.rgb(u, v) = static_cast<std::uint8_t>(std::clamp(std::lround(255.0 * shade), 0L, 255L));
    }
  });
  return view;
}

// ---------------------------------------------------------------------------
// Heightfield file: "UAVH", u32 nx, u32 ny, f64 x0, f64 y0, f64 cell,
// nx*ny f32 heights, nx*ny f32 albedo (little-endian, row-major).

inline void write_heightfield(const std::filesystem::path& path, const Heightfield& h) {
  auto os = detail::open_out(path);
  os.write("UAVH", 4);
  detail::write_u32(os, static_cast<std::uint32_t>(h.nx()));
  detail::write_u32(os, static_cast<std::uint32_t>(h.ny()));
  detail::write_f64(os, h.x0());
  detail::write_f64(os, h.y0());
  detail::write_f64(os, h.cell());
  for (float v : h.heights()) detail::write_f32(os, v);
  for (float v : h.albedo()) detail::write_f32(os, v);
  if (!os) throw Error(Errc::kIoError, "write failed: " + path.string());
}

inline Heightfield read_heightfield(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  detail::expect_magic(is, "UAVH", path.string());
  const auto nx = detail::read_u32(is);
  const auto ny = detail::read_u32(is);
  if (nx < 2 || ny < 2 || static_cast<std::uint64_t>(nx) * ny > (1ULL << 28)) {
    throw Error(Errc::kParseError, path.string() + ": bad heightfield dimensions");
  }
  const double x0 = detail::read_f64(is);
  const double y0 = detail::read_f64(is);
  const double cell = detail::read_f64(is);
  const std::size_t n = static_cast<std::size_t>(nx) * ny;
  std::vector<float> heights(n), albedo(n);
  for (auto& v : heights) v = detail::read_f32(is);
  for (auto& v : albedo) v = detail::read_f32(is);
  try {
    return Heightfield(static_cast<int>(nx), static_cast<int>(ny), x0, y0, cell, std::move(heights), std::move(albedo));
  } catch (const Error& e) {
    throw Error(Errc::kParseError, path.string() + ": " + e.what());
  }
}

}  // namespace uavloc
