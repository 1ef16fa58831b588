#pragma once

// Pose error and threshold-bucket success rates.

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "uavloc/error.hpp"
#include "uavloc/geom.hpp"

namespace uavloc {

struct PoseError {
  double translation = 0.0;  ///< meters between camera centers
  double rotation = 0.0;     ///< degrees
};

inline PoseError pose_error(const Pose& est, const Pose& gt) {
  return {(est.center() - gt.center()).norm(), rotation_angle_between_deg(est.rotation, gt.rotation)};
}

struct Threshold {
  double meters = 0.0;
  double degrees = 0.0;
};

inline std::vector<Threshold> default_thresholds() { return {{1.0, 1.0}, {3.0, 3.0}, {5.0, 5.0}}; }

struct BenchmarkRow {
  Threshold threshold;
  double success_pct = 0.0;  ///< rounded to 2 decimals
  std::size_t n_queries = 0;
  std::size_t n_failed = 0;
};

inline double round_pct(double pct) { return std::round(pct * 100.0) / 100.0; }

/// A missing error (failed localization) counts against every threshold.
inline std::vector<BenchmarkRow> benchmark(const std::vector<std::optional<PoseError>>& errors,
                                           const std::vector<Threshold>& thresholds = default_thresholds()) {
  if (errors.empty()) throw Error(Errc::kEmptyInput, "benchmark needs at least one query");
  std::size_t failed = 0;
  for (const auto& e : errors) failed += e ? 0 : 1;
  std::vector<BenchmarkRow> rows;
  for (const auto& th : thresholds) {
    std::size_t ok = 0;
    for (const auto& e : errors) {
      if (e && e->translation <= th.meters && e->rotation <= th.degrees) ++ok;
    }
    rows.push_back({th, round_pct(100.0 * static_cast<double>(ok) / static_cast<double>(errors.size())), errors.size(),
                    failed});
  }
  return rows;
}

inline std::vector<BenchmarkRow> benchmark(const std::vector<PoseError>& errors,
                                           const std::vector<Threshold>& thresholds = default_thresholds()) {
  return benchmark(std::vector<std::optional<PoseError>>(errors.begin(), errors.end()), thresholds);
}

inline std::string format_pct(double pct) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", pct);
  return buf;
}

}  // namespace uavloc
