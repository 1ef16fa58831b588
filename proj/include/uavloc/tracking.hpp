#pragma once

// Ground-target geolocation: the wide camera's pose places a calibrated zoom
// camera, whose target pixel is traced onto the terrain.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uavloc/error.hpp"
#include "uavloc/geom.hpp"
#include "uavloc/image.hpp"
#include "uavloc/scene.hpp"

namespace uavloc {

struct CameraRig {
  Intrinsics wide;
  Intrinsics zoom;
  Pose zoom_from_wide;  ///< maps wide-camera coordinates to zoom-camera coordinates
};

inline void validate(const CameraRig& rig) {
  require_valid(rig.wide);
  require_valid(rig.zoom);
  if (!rig.zoom_from_wide.is_valid(1e-6)) throw Error(Errc::kInvalidArgument, "rig relative transform is not rigid");
}

struct TargetObservation {
  double timestamp = 0.0;
  Vec2 zoom_pixel = Vec2::Zero();  ///< bottom-center of the target's bounding box
  Pose wide_pose;                  ///< estimated wide-camera pose (camera-from-world)
};

struct TrackSample {
  double timestamp = 0.0;
  Vec3 position = Vec3::Zero();
};

using TargetTrack = std::vector<TrackSample>;

inline Pose zoom_pose(const CameraRig& rig, const Pose& wide_pose) { return rig.zoom_from_wide * wide_pose; }

inline Vec3 localize_target(const TargetObservation& obs, const CameraRig& rig, const Heightfield& dem) {
  if (!obs.wide_pose.is_valid(1e-6)) throw Error(Errc::kInvalidArgument, "wide pose is not a valid rigid transform");
  if (!rig.zoom.contains(obs.zoom_pixel)) throw Error(Errc::kOutOfBounds, "target pixel outside the zoom image");
  const Pose zp = zoom_pose(rig, obs.wide_pose);
  const Vec3 dir = (zp.rotation.transpose() * rig.zoom.ray(obs.zoom_pixel)).normalized();
  const auto hit = raycast(dem, zp.center(), dir);
  if (!hit) throw Error(Errc::kRayMiss, "target ray leaves the terrain without a hit");
  return *hit;
}

inline void require_increasing(const TargetTrack& track, const char* what) {
  for (std::size_t i = 1; i < track.size(); ++i) {
    if (!(track[i].timestamp > track[i - 1].timestamp)) {
      throw Error(Errc::kInvalidArgument, std::string(what) + " timestamps must be strictly increasing");
    }
  }
}

inline constexpr double kTrackMatchWindow = 0.5;  // seconds

struct TrackErrorSample {
  double timestamp = 0.0;
  bool matched = false;
  double error = 0.0;  ///< meters; meaningful only when matched
};

struct TrackErrorReport {
  std::vector<TrackErrorSample> samples;  ///< one per estimated sample
  std::size_t n_matched = 0;
  std::size_t n_unmatched = 0;
  double mean = 0.0;
  double max = 0.0;
};

/// Each estimated sample is paired with the truth sample nearest in time
/// (within 0.5 s); unmatched samples are reported but left out of the stats.
inline TrackErrorReport track_error(const TargetTrack& estimated, const TargetTrack& truth) {
  require_increasing(estimated, "estimated track");
  require_increasing(truth, "ground-truth track");
  TrackErrorReport rep;
  double sum = 0.0;
  for (const auto& s : estimated) {
    TrackErrorSample out{s.timestamp, false, 0.0};
    auto it = std::lower_bound(truth.begin(), truth.end(), s.timestamp,
                               [](const TrackSample& t, double ts) { return t.timestamp < ts; });
    const TrackSample* best = nullptr;
    double gap = kTrackMatchWindow;
    // Ties in time go to the earlier truth sample.
    if (it != truth.begin() && s.timestamp - std::prev(it)->timestamp <= gap) {
      best = &*std::prev(it);
      gap = s.timestamp - best->timestamp;
    }
    if (it != truth.end() && it->timestamp - s.timestamp <= kTrackMatchWindow &&
        (best == nullptr || it->timestamp - s.timestamp < gap)) {
      best = &*it;
    }
    if (best) {
      out.matched = true;
      out.error = (s.position - best->position).norm();
      sum += out.error;
      rep.max = std::max(rep.max, out.error);
      ++rep.n_matched;
    } else {
      ++rep.n_unmatched;
    }
    rep.samples.push_back(out);
  }
  if (rep.n_matched == 0) throw Error(Errc::kNoMatchedSamples, "no estimated sample lies within 0.5 s of the truth");
  rep.mean = sum / static_cast<double>(rep.n_matched);
  return rep;
}

// ---------------------------------------------------------------------------
// Files: observations "timestamp px py [frame]" and the track CSV.

struct ObservationRecord {
  double timestamp = 0.0;
  Vec2 pixel = Vec2::Zero();
  std::string frame;  ///< optional key into the wide-pose file
};

inline std::vector<ObservationRecord> read_observations(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  std::vector<ObservationRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto p = line.find('#'); p != std::string::npos) line.resize(p);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (tok.size() != 3 && tok.size() != 4) throw Error(Errc::kParseError, where + ": expected 'timestamp px py [frame]'");
    ObservationRecord r;
    try {
      r.timestamp = std::stod(tok[0]);
      r.pixel = Vec2(std::stod(tok[1]), std::stod(tok[2]));
    } catch (const std::exception&) {
      throw Error(Errc::kParseError, where + ": malformed number");
    }
    if (tok.size() == 4) r.frame = tok[3];
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_observations(const std::filesystem::path& path, const std::vector<ObservationRecord>& obs) {
  auto os = detail::open_out(path);
  os << "# timestamp px py [frame]\n";
  char buf[128];
  for (const auto& o : obs) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", o.timestamp, o.pixel.x(), o.pixel.y());
    os << buf;
    if (!o.frame.empty()) os << ' ' << o.frame;
    os << '\n';
  }
}

inline void write_track_csv(const std::filesystem::path& path, const TargetTrack& track) {
  auto os = detail::open_out(path);
  os << "timestamp,x,y,z\n";
  char buf[160];
  for (const auto& s : track) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", s.timestamp, s.position.x(), s.position.y(),
                  s.position.z());
    os << buf;
  }
}

inline TargetTrack read_track_csv(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  TargetTrack out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line.rfind("timestamp", 0) == 0 || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    TrackSample s;
    if (!(ls >> s.timestamp >> s.position.x() >> s.position.y() >> s.position.z())) {
      throw Error(Errc::kParseError, path.string() + ":" + std::to_string(lineno) + ": expected timestamp,x,y,z");
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace uavloc
