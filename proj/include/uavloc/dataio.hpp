#pragma once

// Flat key = value configuration, the dataset manifest tying a scene, a
// reference database and query images together, and pose lists.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "uavloc/error.hpp"
#include "uavloc/eval.hpp"
#include "uavloc/geom.hpp"
#include "uavloc/pipeline.hpp"
#include "uavloc/scene.hpp"
#include "uavloc/tracking.hpp"
#include "uavloc/viewgen.hpp"

namespace uavloc {

// ---------------------------------------------------------------------------
// Config: "key = value" lines, '#' comments, dotted keys for nesting.

class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<config>") {
    Config c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      line = trim(detail::strip_comment(line));
      if (line.empty()) continue;
      const std::string where = origin + ":" + std::to_string(lineno);
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(Errc::kParseError, where + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty() || key.find_first_of(" \t") != std::string::npos) {
        throw Error(Errc::kParseError, where + ": bad key '" + key + "'");
      }
      if (c.has(key)) throw Error(Errc::kParseError, where + ": duplicate key " + key);
      c.set(key, value);
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    auto is = detail::open_in(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.string());
  }

  /// Inserts or overwrites; new keys keep insertion order.
  void set(const std::string& key, const std::string& value) {
    for (auto& kv : items_) {
      if (kv.first == key) {
        kv.second = value;
        return;
      }
    }
    items_.emplace_back(key, value);
  }

  bool has(const std::string& key) const { return find(key) != nullptr; }

  std::optional<std::string> get(const std::string& key) const {
    const auto* v = find(key);
    return v ? std::optional<std::string>(*v) : std::nullopt;
  }

  std::string get_string(const std::string& key, const std::string& def) const { return get(key).value_or(def); }

  double get_double(const std::string& key, double def) const {
    const auto v = get(key);
    return v ? detail::parse_double(*v, "config key " + key) : def;
  }

  int get_int(const std::string& key, int def) const {
    const auto v = get(key);
    return v ? detail::parse_int(*v, "config key " + key) : def;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const {
    const auto v = get(key);
    if (!v) return def;
    try {
      // stoull accepts a leading minus and wraps it around.
      if (v->find('-') != std::string::npos) throw std::invalid_argument(*v);
      std::size_t used = 0;
      const auto r = std::stoull(*v, &used, 0);
      if (used != v->size()) throw std::invalid_argument(*v);
      return r;
    } catch (const std::exception&) {
      throw Error(Errc::kParseError, "config key " + key + ": expected an unsigned integer, got '" + *v + "'");
    }
  }

  bool get_bool(const std::string& key, bool def) const {
    const auto v = get(key);
    if (!v) return def;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw Error(Errc::kParseError, "config key " + key + ": expected a boolean, got '" + *v + "'");
  }

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

  /// Keys under `prefix` in order of appearance.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& kv : items_) {
      if (kv.first.rfind(prefix, 0) == 0) out.push_back(kv.first);
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  const std::string* find(const std::string& key) const {
    for (const auto& kv : items_) {
      if (kv.first == key) return &kv.second;
    }
    return nullptr;
  }

  std::vector<std::pair<std::string, std::string>> items_;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',' || ch == ' ' || ch == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace detail

inline std::vector<double> parse_double_list(const std::string& s, const std::string& where) {
  std::vector<double> out;
  for (const auto& tok : detail::split_list(s)) out.push_back(detail::parse_double(tok, where));
  return out;
}

/// "100:50,150:75" -> altitude:spacing pairs.
inline std::vector<AltitudeLevel> parse_levels(const std::string& s, const std::string& where) {
  std::vector<AltitudeLevel> out;
  for (const auto& tok : detail::split_list(s)) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos) throw Error(Errc::kParseError, where + ": level '" + tok + "' is not altitude:spacing");
    out.push_back({detail::parse_double(tok.substr(0, colon), where), detail::parse_double(tok.substr(colon + 1), where)});
  }
  return out;
}

inline std::string format_levels(const std::vector<AltitudeLevel>& levels) {
  std::string out;
  for (const auto& l : levels) {
    if (!out.empty()) out += ',';
    out += format_double(l.altitude) + ":" + format_double(l.spacing);
  }
  return out;
}

inline Bounds parse_bounds(const std::string& s, const std::string& where) {
  const auto v = parse_double_list(s, where);
  if (v.size() != 4) throw Error(Errc::kParseError, where + ": bounds need xmin,ymin,xmax,ymax");
  return {v[0], v[1], v[2], v[3]};
}

inline PipelineConfig pipeline_config_from(const Config& c) {
  PipelineConfig p;
  const int topk = c.get_int("retrieval.topk", static_cast<int>(p.topk));
  if (topk < 1) throw Error(Errc::kInvalidSpec, "retrieval.topk must be at least 1");
  p.topk = static_cast<std::size_t>(topk);
  p.gamma_o_deg = c.get_double("retrieval.gamma_o_deg", p.gamma_o_deg);
  p.use_prior = c.get_bool("retrieval.use_prior", p.use_prior);
  p.detector.max_keypoints = c.get_int("matching.max_keypoints", p.detector.max_keypoints);
  p.detector.levels = c.get_int("matching.pyramid_levels", p.detector.levels);
  p.detector.scale_factor = c.get_double("matching.pyramid_scale", p.detector.scale_factor);
  p.match_ratio = c.get_double("matching.ratio", p.match_ratio);
  p.ransac.max_iters = c.get_int("ransac.max_iters", p.ransac.max_iters);
  p.ransac.reproj_thresh = c.get_double("ransac.reproj_thresh", p.ransac.reproj_thresh);
  p.ransac.confidence = c.get_double("ransac.confidence", p.ransac.confidence);
  p.ransac.gamma_eps_deg = c.get_double("ransac.gamma_eps_deg", p.ransac.gamma_eps_deg);
  p.ransac.min_inlier_ratio_for_early_stop =
      c.get_double("ransac.min_inlier_ratio", p.ransac.min_inlier_ratio_for_early_stop);
  p.ransac.seed = c.get_u64("ransac.seed", p.ransac.seed);
  if (c.has("ransac.reject_gravity_deg")) p.ransac.reject_gravity_deg = c.get_double("ransac.reject_gravity_deg", 0.0);
  p.ransac.refine = c.get_bool("ransac.refine", p.ransac.refine);
  validate(p.ransac);
  if (!(p.gamma_o_deg >= 0.0) || p.detector.max_keypoints < 0) throw Error(Errc::kInvalidSpec, "bad pipeline settings");
  return p;
}

inline Intrinsics camera_from(const Config& c, const std::string& prefix = "camera.") {
  const int w = c.get_int(prefix + "width", 320);
  const int h = c.get_int(prefix + "height", 240);
  const double f = c.get_double(prefix + "focal", 260.0);
  Intrinsics K = Intrinsics::centered(w, h, f);
  K.fx = c.get_double(prefix + "fx", K.fx);
  K.fy = c.get_double(prefix + "fy", K.fy);
  K.cx = c.get_double(prefix + "cx", K.cx);
  K.cy = c.get_double(prefix + "cy", K.cy);
  if (!K.is_valid()) throw Error(Errc::kInvalidSpec, "invalid camera settings under " + prefix);
  return K;
}

inline SceneSpec scene_spec_from(const Config& c) {
  SceneSpec s;
  s.extent = c.get_double("scene.extent", s.extent);
  s.cell = c.get_double("scene.cell", s.cell);
  s.terrain_amplitude = c.get_double("scene.terrain_amplitude", s.terrain_amplitude);
  s.terrain_wavelength = c.get_double("scene.terrain_wavelength", s.terrain_wavelength);
  s.building_count = c.get_int("scene.buildings", s.building_count);
  s.footprint_min = c.get_double("scene.footprint_min", s.footprint_min);
  s.footprint_max = c.get_double("scene.footprint_max", s.footprint_max);
  s.height_min = c.get_double("scene.height_min", s.height_min);
  s.height_max = c.get_double("scene.height_max", s.height_max);
  s.patch_count = c.get_int("scene.patches", s.patch_count);
  s.road_spacing = c.get_double("scene.road_spacing", s.road_spacing);
  s.tree_count = c.get_int("scene.trees", s.tree_count);
  s.max_roof_structures = c.get_int("scene.max_roof_structures", s.max_roof_structures);
  s.block_spacing = c.get_double("scene.block_spacing", s.block_spacing);
  s.seed = c.get_u64("scene.seed", s.seed);
  const std::string layout = c.get_string("scene.layout", "random");
  if (layout == "random") {
    s.layout = SceneLayout::kRandom;
  } else if (layout == "grid") {
    s.layout = SceneLayout::kGrid;
  } else {
    throw Error(Errc::kInvalidSpec, "scene.layout must be 'random' or 'grid'");
  }
  validate(s);
  return s;
}

/// Defaults to the standard grid (100 m / 150 m, pitches 0 and 45, 45 deg
/// yaw) over `default_bounds` unless overridden.
inline ViewGridSpec view_grid_from(const Config& c, const Bounds& default_bounds) {
  ViewGridSpec s = ViewGridSpec::standard(default_bounds);
  if (auto v = c.get("views.levels")) s.levels = parse_levels(*v, "views.levels");
  if (auto v = c.get("views.pitches")) s.pitches = parse_double_list(*v, "views.pitches");
  s.yaw_interval_deg = c.get_double("views.yaw_interval_deg", s.yaw_interval_deg);
  if (auto v = c.get("views.bounds")) s.bounds = parse_bounds(*v, "views.bounds");
  s.height_above_ground = c.get_bool("views.height_above_ground", s.height_above_ground);
  validate(s);
  return s;
}

inline QuerySetSpec query_spec_from(const Config& c, const Bounds& default_bounds) {
  QuerySetSpec q;
  q.bounds = default_bounds;
  q.count = static_cast<std::size_t>(std::max(0, c.get_int("queries.count", static_cast<int>(q.count))));
  q.seed = c.get_u64("queries.seed", q.seed);
  if (auto v = c.get("queries.bounds")) q.bounds = parse_bounds(*v, "queries.bounds");
  q.altitude_min = c.get_double("queries.altitude_min", q.altitude_min);
  q.altitude_max = c.get_double("queries.altitude_max", q.altitude_max);
  q.pitch_min = c.get_double("queries.pitch_min", q.pitch_min);
  q.pitch_max = c.get_double("queries.pitch_max", q.pitch_max);
  q.prior_sigma_deg = c.get_double("queries.prior_sigma_deg", q.prior_sigma_deg);
  q.min_clearance = c.get_double("queries.min_clearance", q.min_clearance);
  return q;
}

/// wide.* and zoom.* camera blocks plus zoom_from_wide.rotation (qw,qx,qy,qz)
/// and zoom_from_wide.translation (x,y,z).
inline CameraRig rig_from(const Config& c) {
  CameraRig rig;
  rig.wide = camera_from(c, "wide.");
  rig.zoom = camera_from(c, "zoom.");
  const auto q = parse_double_list(c.get_string("zoom_from_wide.rotation", "1,0,0,0"), "zoom_from_wide.rotation");
  const auto t = parse_double_list(c.get_string("zoom_from_wide.translation", "0,0,0"), "zoom_from_wide.translation");
  if (q.size() != 4 || t.size() != 3) throw Error(Errc::kParseError, "rig transform needs 4 quaternion and 3 translation values");
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (!(n > 1e-12)) throw Error(Errc::kParseError, "rig quaternion is zero");
  rig.zoom_from_wide = Pose::from_quaternion(q[0], q[1], q[2], q[3], Vec3(t[0], t[1], t[2]));
  validate(rig);
  return rig;
}

// ---------------------------------------------------------------------------
// Pose lists: "name qw qx qy qz tx ty tz".

using NamedPoses = std::vector<std::pair<std::string, Pose>>;

inline void write_poses(const std::filesystem::path& path, const NamedPoses& poses) {
  auto os = detail::open_out(path);
  os << "# name qw qx qy qz tx ty tz\n";
  for (const auto& [name, pose] : poses) os << name << ' ' << format_pose(pose) << '\n';
}

inline NamedPoses read_poses(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  auto is = detail::open_in(path);
  NamedPoses out;
  std::unordered_set<std::string> names;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (tok.size() != 8) throw Error(Errc::kParseError, where + ": expected 'name qw qx qy qz tx ty tz'");
    if (!names.insert(tok[0]).second) throw Error(Errc::kParseError, where + ": duplicate name " + tok[0]);
    out.emplace_back(tok[0], detail::parse_pose(tok, 1, where, warnings));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest:
//   scene <heightfield path>
//   database <database manifest path>
//   query <name> <rgb> <fx> <fy> <cx> <cy> <w> <h> [depth <path>]
//         [gt qw qx qy qz tx ty tz] [prior qw qx qy qz]
// Relative paths resolve against the manifest's directory.

struct QueryEntry {
  std::string name;
  std::string rgb_path;
  std::optional<std::string> depth_path;
  Intrinsics intrinsics;
  std::optional<Pose> gt;
  std::optional<SensorPrior> prior;
};

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::string scene_path;
  std::string database_path;
  DatabaseManifest database;
  std::vector<QueryEntry> queries;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
};

inline DatasetManifest load_manifest(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  auto is = detail::open_in(path);
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  int lineno = 0;
  std::map<std::string, std::string> seen;  // name -> where first defined
  while (std::getline(is, line)) {
    ++lineno;
    const auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (tok[0] == "scene" || tok[0] == "database") {
      if (tok.size() != 2) throw Error(Errc::kParseError, where + ": expected '" + tok[0] + " <path>'");
      std::string& dst = tok[0] == "scene" ? m.scene_path : m.database_path;
      if (!dst.empty()) throw Error(Errc::kParseError, where + ": " + tok[0] + " given twice");
      dst = tok[1];
    } else if (tok[0] == "query") {
      if (tok.size() < 9) throw Error(Errc::kParseError, where + ": query needs name, rgb path and 6 intrinsics fields");
      QueryEntry q;
      q.name = tok[1];
      q.rgb_path = tok[2];
      q.intrinsics = {detail::parse_double(tok[3], where), detail::parse_double(tok[4], where),
                      detail::parse_double(tok[5], where), detail::parse_double(tok[6], where),
                      detail::parse_int(tok[7], where), detail::parse_int(tok[8], where)};
      if (!q.intrinsics.is_valid()) throw Error(Errc::kParseError, where + ": invalid intrinsics");
      std::size_t i = 9;
      while (i < tok.size()) {
        const std::string& kw = tok[i];
        auto need = [&](std::size_t n) {
          if (i + n >= tok.size()) {
            throw Error(Errc::kParseError, where + ": '" + kw + "' needs " + std::to_string(n) + " values");
          }
        };
        if (kw == "depth" && !q.depth_path) {
          need(1);
          q.depth_path = tok[i + 1];
          i += 2;
        } else if (kw == "gt" && !q.gt) {
          need(7);
          q.gt = detail::parse_pose(tok, i + 1, where, warnings);
          i += 8;
        } else if (kw == "prior" && !q.prior) {
          need(4);
          std::vector<std::string> pq(tok.begin() + static_cast<std::ptrdiff_t>(i + 1),
                                      tok.begin() + static_cast<std::ptrdiff_t>(i + 5));
          pq.insert(pq.end(), {"0", "0", "0"});
          SensorPrior p;
          p.rotation = detail::parse_pose(pq, 0, where, warnings).rotation;
          q.prior = p;
          i += 5;
        } else {
          throw Error(Errc::kParseError, where + ": unexpected token '" + kw + "'");
        }
      }
      if (auto [it, fresh] = seen.emplace(q.name, where); !fresh) {
        throw Error(Errc::kParseError, where + ": duplicate image name " + q.name + " (first at " + it->second + ")");
      }
      m.queries.push_back(std::move(q));
    } else {
      throw Error(Errc::kParseError, where + ": unknown record '" + tok[0] + "'");
    }
  }
  if (m.scene_path.empty()) throw Error(Errc::kParseError, path.string() + ": missing 'scene' line");
  if (m.database_path.empty()) throw Error(Errc::kParseError, path.string() + ": missing 'database' line");

  std::vector<std::string> missing;
  auto check = [&](const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) missing.push_back(p.string());
  };
  check(m.resolve(m.scene_path));
  const auto db_path = m.resolve(m.database_path);
  if (std::filesystem::exists(db_path)) {
    m.database = read_manifest(db_path, warnings);
    for (const auto& e : m.database.entries) {
      if (auto [it, fresh] = seen.emplace(e.name, db_path.string()); !fresh) {
        throw Error(Errc::kParseError, "duplicate image name " + e.name + " in " + db_path.string() + " and " + it->second);
      }
      check(m.database.resolve(e.rgb_path));
      check(m.database.resolve(e.depth_path));
    }
  } else {
    missing.push_back(db_path.string());
  }
  for (const auto& q : m.queries) {
    check(m.resolve(q.rgb_path));
    if (q.depth_path) check(m.resolve(*q.depth_path));
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " referenced file(s) missing:";
    for (const auto& p : missing) msg += "\n  " + p;
    throw Error(Errc::kMissingFile, msg);
  }
  return m;
}

inline std::string format_query_line(const QueryEntry& q) {
  std::ostringstream os;
  const auto& K = q.intrinsics;
  os << "query " << q.name << ' ' << q.rgb_path << ' ' << format_double(K.fx) << ' ' << format_double(K.fy) << ' '
     << format_double(K.cx) << ' ' << format_double(K.cy) << ' ' << K.width << ' ' << K.height;
  if (q.depth_path) os << " depth " << *q.depth_path;
  if (q.gt) os << " gt " << format_pose(*q.gt);
  if (q.prior) {
    const auto qq = Pose(q.prior->rotation, Vec3::Zero()).quaternion();
    os << " prior " << format_double(qq.w()) << ' ' << format_double(qq.x()) << ' ' << format_double(qq.y()) << ' '
       << format_double(qq.z());
  }
  return os.str();
}

inline void write_dataset(const std::filesystem::path& path, const DatasetManifest& m) {
  auto os = detail::open_out(path);
  os << "# dataset: scene, reference database and queries\n";
  os << "scene " << m.scene_path << '\n';
  os << "database " << m.database_path << '\n';
  for (const auto& q : m.queries) os << format_query_line(q) << '\n';
  if (!os) throw Error(Errc::kIoError, "write failed: " + path.string());
}

}  // namespace uavloc
