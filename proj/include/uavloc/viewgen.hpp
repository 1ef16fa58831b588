#pragma once

// Offline database generation: the virtual viewpoint grid, rendering of RGB
// and depth per viewpoint, the database manifest, and query sampling.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "uavloc/error.hpp"
#include "uavloc/geom.hpp"
#include "uavloc/image.hpp"
#include "uavloc/parallel.hpp"
#include "uavloc/rng.hpp"
#include "uavloc/scene.hpp"

namespace uavloc {

struct Bounds {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  bool empty() const { return !(xmax > xmin) || !(ymax > ymin); }
};

/// One render altitude H with its horizontal grid spacing alpha_t.
struct AltitudeLevel {
  double altitude = 0.0;
  double spacing = 0.0;
};

struct ViewGridSpec {
  std::vector<AltitudeLevel> levels;
  std::vector<double> pitches;  ///< off-nadir angle: 0 = straight down, 90 = level
  double yaw_interval_deg = 45.0;
  Bounds bounds;
  /// Altitude measured above the local surface instead of as world z.
  bool height_above_ground = false;

  /// H = 100 m / 150 m with alpha_t = 50 m / 75 m, pitches {0, 45}, 45 deg yaw steps.
  static ViewGridSpec standard(const Bounds& b) {
    ViewGridSpec s;
    s.levels = {{100.0, 50.0}, {150.0, 75.0}};
    s.pitches = {0.0, 45.0};
    s.yaw_interval_deg = 45.0;
    s.bounds = b;
    return s;
  }
};

struct Viewpoint {
  std::string name;
  Pose pose;
  RotationAngles angles;  ///< attitude angles of the pose rotation
  int level = 0;
  int row = 0;
  int col = 0;
  double pitch_label = 0.0;  ///< grid off-nadir label
  double yaw_label = 0.0;    ///< grid heading label
};

inline int grid_count(double extent, double spacing) {
  return static_cast<int>(std::floor(extent / spacing + 1e-9)) + 1;
}

inline int yaw_steps(double yaw_interval_deg) {
  return static_cast<int>(std::llround(360.0 / yaw_interval_deg));
}

inline void validate(const ViewGridSpec& spec) {
  if (spec.bounds.empty()) throw Error(Errc::kInvalidSpec, "view grid bounds are empty");
  if (spec.levels.empty()) throw Error(Errc::kInvalidSpec, "view grid needs at least one level");
  if (spec.pitches.empty()) throw Error(Errc::kInvalidSpec, "view grid needs at least one pitch");
  for (const auto& l : spec.levels) {
    if (!(l.spacing > 0.0)) throw Error(Errc::kInvalidSpec, "horizontal interval must be positive");
    if (!std::isfinite(l.altitude)) throw Error(Errc::kInvalidSpec, "altitude must be finite");
  }
  for (double p : spec.pitches) {
    if (!(p >= 0.0 && p <= 90.0)) throw Error(Errc::kInvalidSpec, "pitch must lie in [0, 90]");
  }
  const double a = spec.yaw_interval_deg;
  if (!(a > 0.0 && a <= 360.0)) throw Error(Errc::kInvalidSpec, "yaw interval must be in (0, 360]");
  if (std::abs(yaw_steps(a) * a - 360.0) > 1e-9) throw Error(Errc::kInvalidSpec, "yaw interval must divide 360");
}

/// Checks that every absolute level clears the highest surface point inside
/// the bounds.
inline void validate(const ViewGridSpec& spec, const Heightfield& h) {
  validate(spec);
  if (spec.height_above_ground) return;
  const auto& b = spec.bounds;
  const double peak = h.max_height_in(b.xmin, b.ymin, b.xmax, b.ymax);
  for (const auto& l : spec.levels) {
    if (!(l.altitude > peak)) {
      throw Error(Errc::kInvalidSpec, "render altitude " + std::to_string(l.altitude) +
                                          " m is not above the terrain peak " + std::to_string(peak) + " m");
    }
  }
}

inline std::string viewpoint_name(int level, int row, int col, double pitch, double yaw) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "L%d_r%03d_c%03d_p%02d_y%03d", level, row, col, static_cast<int>(std::lround(pitch)),
                static_cast<int>(std::lround(yaw)));
  return buf;
}

/// Enumerates viewpoints in (level, row, col, pitch, yaw) order. Grid
/// positions include both bounds edges. The surface is only needed for
/// height-above-ground levels.
inline std::vector<Viewpoint> generate_viewpoints(const ViewGridSpec& spec, const Heightfield* surface = nullptr) {
  validate(spec);
  if (spec.height_above_ground && surface == nullptr) {
    throw Error(Errc::kInvalidSpec, "height-above-ground levels need a surface");
  }
  std::vector<Viewpoint> out;
  const int nyaw = yaw_steps(spec.yaw_interval_deg);
  for (std::size_t li = 0; li < spec.levels.size(); ++li) {
    const auto& level = spec.levels[li];
    const int ncol = grid_count(spec.bounds.xmax - spec.bounds.xmin, level.spacing);
    const int nrow = grid_count(spec.bounds.ymax - spec.bounds.ymin, level.spacing);
    for (int r = 0; r < nrow; ++r) {
      for (int c = 0; c < ncol; ++c) {
        const double x = spec.bounds.xmin + c * level.spacing;
        const double y = spec.bounds.ymin + r * level.spacing;
        const double z = spec.height_above_ground ? surface->height_clamped(x, y) + level.altitude : level.altitude;
        for (double pitch : spec.pitches) {
          for (int k = 0; k < nyaw; ++k) {
            const double yaw = k * spec.yaw_interval_deg;
            Viewpoint vp;
            vp.pose = Pose::from_center(look_rotation(yaw, 90.0 - pitch), Vec3(x, y, z));
            vp.angles = attitude_angles(vp.pose.rotation);
            vp.level = static_cast<int>(li);
            vp.row = r;
            vp.col = c;
            vp.pitch_label = pitch;
            vp.yaw_label = yaw;
            vp.name = viewpoint_name(vp.level, r, c, pitch, yaw);
            out.push_back(std::move(vp));
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Database manifest: one line per image,
// name qw qx qy qz tx ty tz roll yaw pitch fx fy cx cy width height rgb_path depth_path

struct DatabaseEntry {
  std::string name;
  Pose pose;
  RotationAngles angles;
  Intrinsics intrinsics;
  std::string rgb_path;    ///< as written in the manifest (relative to it)
  std::string depth_path;  ///< as written in the manifest (relative to it)
};

struct DatabaseManifest {
  std::filesystem::path base_dir;  ///< directory relative paths resolve against
  std::vector<DatabaseEntry> entries;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_pose(const Pose& pose) {
  const auto q = pose.quaternion();
  std::ostringstream os;
  os << format_double(q.w()) << ' ' << format_double(q.x()) << ' ' << format_double(q.y()) << ' '
     << format_double(q.z()) << ' ' << format_double(pose.translation.x()) << ' '
     << format_double(pose.translation.y()) << ' ' << format_double(pose.translation.z());
  return os.str();
}

inline std::string format_manifest_line(const DatabaseEntry& e) {
  std::ostringstream os;
  os << e.name << ' ' << format_pose(e.pose) << ' ' << format_double(e.angles.roll) << ' '
     << format_double(e.angles.yaw) << ' ' << format_double(e.angles.pitch) << ' ' << format_double(e.intrinsics.fx)
     << ' ' << format_double(e.intrinsics.fy) << ' ' << format_double(e.intrinsics.cx) << ' '
     << format_double(e.intrinsics.cy) << ' ' << e.intrinsics.width << ' ' << e.intrinsics.height << ' '
     << e.rgb_path << ' ' << e.depth_path;
  return os.str();
}

inline void write_manifest(const std::filesystem::path& path, const DatabaseManifest& m) {
  auto os = detail::open_out(path);
  os << "# name qw qx qy qz tx ty tz roll yaw pitch fx fy cx cy width height rgb_path depth_path\n";
  for (const auto& e : m.entries) os << format_manifest_line(e) << '\n';
  if (!os) throw Error(Errc::kIoError, "write failed: " + path.string());
}

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

inline double parse_double(const std::string& tok, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size() || !std::isfinite(v)) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw Error(Errc::kParseError, where + ": expected a number, got '" + tok + "'");
  }
}

inline int parse_int(const std::string& tok, const std::string& where) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw Error(Errc::kParseError, where + ": expected an integer, got '" + tok + "'");
  }
}

/// Parses "qw qx qy qz tx ty tz" starting at tokens[i]; warns when the
/// quaternion norm is off by more than 1e-3 and normalizes it.
inline Pose parse_pose(const std::vector<std::string>& tok, std::size_t i, const std::string& where,
                       std::vector<std::string>* warnings = nullptr) {
  const double qw = parse_double(tok[i], where), qx = parse_double(tok[i + 1], where);
  const double qy = parse_double(tok[i + 2], where), qz = parse_double(tok[i + 3], where);
  const double norm = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
  if (!(norm > 1e-12)) throw Error(Errc::kParseError, where + ": zero quaternion");
  if (std::abs(norm - 1.0) > 1e-3 && warnings) {
    warnings->push_back(where + ": quaternion norm " + std::to_string(norm) + " normalized");
  }
  const Vec3 t(parse_double(tok[i + 4], where), parse_double(tok[i + 5], where), parse_double(tok[i + 6], where));
  return Pose::from_quaternion(qw, qx, qy, qz, t);
}

}  // namespace detail

inline DatabaseManifest read_manifest(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  auto is = detail::open_in(path);
  DatabaseManifest m;
  m.base_dir = path.parent_path();
  std::unordered_set<std::string> names;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (tok.size() != 19) {
      throw Error(Errc::kParseError, where + ": expected 19 fields, got " + std::to_string(tok.size()));
    }
    DatabaseEntry e;
    e.name = tok[0];
    if (!names.insert(e.name).second) throw Error(Errc::kParseError, where + ": duplicate image name " + e.name);
    e.pose = detail::parse_pose(tok, 1, where, warnings);
    e.angles = {detail::parse_double(tok[8], where), detail::parse_double(tok[9], where),
                detail::parse_double(tok[10], where)};
    e.intrinsics = {detail::parse_double(tok[11], where), detail::parse_double(tok[12], where),
                    detail::parse_double(tok[13], where), detail::parse_double(tok[14], where),
                    detail::parse_int(tok[15], where), detail::parse_int(tok[16], where)};
    if (!e.intrinsics.is_valid()) throw Error(Errc::kParseError, where + ": invalid intrinsics");
    e.rgb_path = tok[17];
    e.depth_path = tok[18];
    m.entries.push_back(std::move(e));
  }
  return m;
}

/// Renders every viewpoint and writes rgb/<name>.pgm, depth/<name>.uavd and
/// manifest.txt under `out_dir`. Views are rendered in parallel but the
/// manifest keeps viewpoint order.
inline DatabaseManifest render_database(const Heightfield& h, const ViewGridSpec& spec, const Intrinsics& K,
                                        const std::filesystem::path& out_dir, int jobs = 1,
                                        const Vec3& sun = default_sun_direction()) {
  validate(spec, h);
  require_valid(K);
  const auto viewpoints = generate_viewpoints(spec, &h);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "rgb", ec);
  std::filesystem::create_directories(out_dir / "depth", ec);
  if (ec) throw Error(Errc::kIoError, "cannot create " + out_dir.string() + ": " + ec.message());

  DatabaseManifest m;
  m.base_dir = out_dir;
  m.entries.resize(viewpoints.size());
  parallel_for(viewpoints.size(), jobs, [&](std::size_t i) {
    const auto& vp = viewpoints[i];
    const RenderedView view = render_view(h, vp.pose, K, sun);
    DatabaseEntry& e = m.entries[i];
    e.name = vp.name;
    e.pose = vp.pose;
    e.angles = vp.angles;
    e.intrinsics = K;
    e.rgb_path = "rgb/" + vp.name + ".pgm";
    e.depth_path = "depth/" + vp.name + ".uavd";
    write_pgm(out_dir / e.rgb_path, view.rgb);
    write_depth(out_dir / e.depth_path, view.depth);
  });
  write_manifest(out_dir / "manifest.txt", m);
  return m;
}

// ---------------------------------------------------------------------------
// Query sampling

struct QuerySetSpec {
  std::size_t count = 50;
  std::uint64_t seed = 1;
  Bounds bounds;
  double altitude_min = 50.0;  ///< absolute camera z, meters
  double altitude_max = 200.0;
  double pitch_min = 15.0;  ///< off-nadir angle, degrees
  double pitch_max = 70.0;
  double prior_sigma_deg = 2.0;  ///< per-angle Gaussian noise on the prior
  double min_clearance = 10.0;   ///< meters above the surface near the camera
};

struct QuerySample {
  std::string name;
  Pose pose;
  SensorPrior prior;
  double heading = 0.0;
  double pitch = 0.0;  ///< off-nadir angle
};

/// Attitude angles perturbed by independent zero-mean Gaussian noise.
inline SensorPrior make_noisy_prior(const Mat3& camera_from_world, double sigma_deg, Rng& rng) {
  RotationAngles a = attitude_angles(camera_from_world);
  a.roll += rng.normal(0.0, sigma_deg);
  a.yaw += rng.normal(0.0, sigma_deg);
  a.pitch += rng.normal(0.0, sigma_deg);
  a = {wrap_deg(a.roll), wrap_deg(a.yaw), wrap_deg(a.pitch)};
  SensorPrior prior;
  prior.rotation = rotation_from_attitude(a);
  prior.angles = a;
  return prior;
}

/// Random query poses: position uniform in bounds, absolute altitude and
/// off-nadir angle uniform in their ranges, heading uniform, zero roll. Positions that
/// would put the camera closer than `min_clearance` to the surface within a
/// 20 m radius are redrawn.
inline std::vector<QuerySample> generate_queries(const Heightfield& h, const QuerySetSpec& spec) {
  if (spec.bounds.empty()) throw Error(Errc::kInvalidSpec, "query bounds are empty");
  if (spec.altitude_max < spec.altitude_min || spec.pitch_max < spec.pitch_min || spec.prior_sigma_deg < 0.0) {
    throw Error(Errc::kInvalidSpec, "query ranges must be ordered");
  }
  Rng rng(hash_combine(spec.seed, 0x9e77));
  std::vector<QuerySample> out;
  out.reserve(spec.count);
  for (std::size_t q = 0; q < spec.count; ++q) {
    QuerySample s;
    Vec3 center;
    int attempts = 0;
    while (true) {
      center = Vec3(rng.uniform(spec.bounds.xmin, spec.bounds.xmax), rng.uniform(spec.bounds.ymin, spec.bounds.ymax),
                    rng.uniform(spec.altitude_min, spec.altitude_max));
      const double local = h.max_height_in(center.x() - 20, center.y() - 20, center.x() + 20, center.y() + 20);
      if (center.z() - local >= spec.min_clearance) break;
      if (++attempts > 1000) throw Error(Errc::kInvalidSpec, "cannot place query above the surface");
    }
    s.heading = rng.uniform(0.0, 360.0);
    s.pitch = rng.uniform(spec.pitch_min, spec.pitch_max);
    s.pose = Pose::from_center(look_rotation(s.heading, 90.0 - s.pitch), center);
    s.prior = make_noisy_prior(s.pose.rotation, spec.prior_sigma_deg, rng);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "q%05zu", q);
    s.name = buf;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace uavloc
