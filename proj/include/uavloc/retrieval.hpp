#pragma once

// Global-descriptor place recognition with the rotation-prior pre-filter,
// the depth-based overlap oracle, and recall/precision at k.

#include <Eigen/Core>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
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

struct GlobalDescriptor {
  std::vector<float> values;

  std::size_t dim() const { return values.size(); }
};

inline double descriptor_distance(const GlobalDescriptor& a, const GlobalDescriptor& b) {
  if (a.dim() != b.dim()) throw Error(Errc::kInvalidArgument, "descriptor dimensions differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = static_cast<double>(a.values[i]) - b.values[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline constexpr int kDescriptorCells = 16;
inline constexpr int kDescriptorBins = 8;
inline constexpr int kDescriptorRawDim = kDescriptorCells * kDescriptorCells * kDescriptorBins;
inline constexpr int kDescriptorDim = 512;

namespace detail {

/// Fixed random projection with orthonormal rows (512 x 2048).
inline const Eigen::MatrixXf& descriptor_projection() {
  static const Eigen::MatrixXf projection = [] {
    Rng rng(0x61d5eedULL);
    Eigen::MatrixXd g(kDescriptorRawDim, kDescriptorDim);
    for (int c = 0; c < kDescriptorDim; ++c)
      for (int r = 0; r < kDescriptorRawDim; ++r) g(r, c) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(kDescriptorRawDim, kDescriptorDim);
    return Eigen::MatrixXf(q.transpose().cast<float>());
  }();
  return projection;
}

}  // namespace detail

/// Classical gradient embedding: the image is resampled to 16 x 16 cells of
/// 8 x 8 pixels, each cell gets a magnitude-weighted 8-bin orientation
/// histogram (2048-d), then signed square root, L2 normalization, the fixed
/// projection to 512-d, and L2 normalization again. A gradient-free image
/// maps to e1.
inline GlobalDescriptor compute_descriptor(const GrayImage& rgb) {
  if (rgb.empty()) throw Error(Errc::kEmptyImage, "cannot describe an empty image");
  constexpr int kCellPx = 8;
  constexpr int side = kDescriptorCells * kCellPx;
  const FloatImage small = gaussian_blur(resize_area(to_float(rgb), side, side), 1.0);

  std::vector<double> hist(kDescriptorRawDim, 0.0);
  double total = 0.0;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double gx = small(std::min(x + 1, side - 1), y) - small(std::max(x - 1, 0), y);
      const double gy = small(x, std::min(y + 1, side - 1)) - small(x, std::max(y - 1, 0));
      const double mag = std::hypot(gx, gy);
      if (mag <= 1e-9) continue;
      total += mag;
      double bin = (std::atan2(gy, gx) + std::numbers::pi) / (2.0 * std::numbers::pi) * kDescriptorBins;
      const int b0 = static_cast<int>(std::floor(bin)) % kDescriptorBins;
      const double frac = bin - std::floor(bin);
      const int b1 = (b0 + 1) % kDescriptorBins;
      const int cell = (y / kCellPx) * kDescriptorCells + (x / kCellPx);
      hist[cell * kDescriptorBins + b0] += mag * (1.0 - frac);
      hist[cell * kDescriptorBins + b1] += mag * frac;
    }
  }

  GlobalDescriptor out;
  out.values.assign(kDescriptorDim, 0.0f);
  if (total <= 1e-9) {
    out.values[0] = 1.0f;
    return out;
  }
  Eigen::VectorXf raw(kDescriptorRawDim);
  for (int i = 0; i < kDescriptorRawDim; ++i) raw[i] = static_cast<float>(std::sqrt(hist[i]));
  raw.normalize();
  Eigen::VectorXf proj = detail::descriptor_projection() * raw;
  const float n = proj.norm();
  if (!(n > 1e-12f)) {
    out.values[0] = 1.0f;
    return out;
  }
  proj /= n;
  std::copy(proj.data(), proj.data() + kDescriptorDim, out.values.begin());
  return out;
}

struct IndexEntry {
  std::string name;
  GlobalDescriptor descriptor;
  RotationAngles angles;  ///< render attitude angles
};

/// Immutable once built: descriptors of equal dimension under unique names.
class RetrievalIndex {
 public:
  RetrievalIndex() = default;

  explicit RetrievalIndex(std::vector<IndexEntry> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!by_name_.emplace(entries_[i].name, i).second) {
        throw Error(Errc::kInvalidArgument, "duplicate index name " + entries_[i].name);
      }
      if (entries_[i].descriptor.dim() != entries_.front().descriptor.dim()) {
        throw Error(Errc::kInvalidArgument, "descriptor dimensions differ in index");
      }
    }
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<IndexEntry>& entries() const { return entries_; }
  const IndexEntry& operator[](std::size_t i) const { return entries_[i]; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::size_t> all() const {
    std::vector<std::size_t> idx(entries_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }

 private:
  std::vector<IndexEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

struct PrefilterResult {
  std::vector<std::size_t> candidates;
  /// The prior's angles were undefined (gimbal lock) and the full index was
  /// returned.
  bool fail_open = false;
};

inline bool angles_within(const RotationAngles& a, const RotationAngles& b, double gamma_o_deg) {
  return angle_distance_deg(a.roll, b.roll) <= gamma_o_deg && angle_distance_deg(a.yaw, b.yaw) <= gamma_o_deg &&
         angle_distance_deg(a.pitch, b.pitch) <= gamma_o_deg;
}

/// Keeps entries whose roll, yaw and pitch each lie within gamma_o of the
/// prior's (wrapped differences).
inline PrefilterResult prefilter_by_rotation(const SensorPrior& prior, const RetrievalIndex& index,
                                             double gamma_o_deg) {
  PrefilterResult out;
  RotationAngles q;
  try {
    q = prior.attitude();
  } catch (const Error& e) {
    if (e.code() != Errc::kGimbalLock) throw;
    out.fail_open = true;
    out.candidates = index.all();
    return out;
  }
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (angles_within(q, index[i].angles, gamma_o_deg)) out.candidates.push_back(i);
  }
  return out;
}

struct RankedItem {
  std::string name;
  std::size_t index = 0;
  double distance = 0.0;
};

/// Exact nearest neighbors by Euclidean distance; ties broken by name.
inline std::vector<RankedItem> query_topk(const GlobalDescriptor& q, const RetrievalIndex& index,
                                          std::span<const std::size_t> candidates, std::size_t k) {
  if (k < 1) throw Error(Errc::kInvalidArgument, "k must be at least 1");
  if (candidates.empty()) throw Error(Errc::kEmptyCandidates, "no retrieval candidates");
  std::vector<RankedItem> items;
  items.reserve(candidates.size());
  for (std::size_t i : candidates) {
    items.push_back({index[i].name, i, descriptor_distance(q, index[i].descriptor)});
  }
  const std::size_t n = std::min(k, items.size());
  auto less = [](const RankedItem& a, const RankedItem& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.name < b.name;
  };
  std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n), items.end(), less);
  items.resize(n);
  return items;
}

/// Fraction of a's valid stride-sampled pixels that reproject into b inside
/// its image and agree with b's depth within depth_tol (relative).
inline double overlap_percentage(const RenderedView& a, const RenderedView& b, int stride = 4,
                                 double depth_tol = 0.03) {
  if (stride < 1) throw Error(Errc::kInvalidArgument, "stride must be positive");
  std::size_t valid = 0, overlapping = 0;
  const auto& Ka = a.intrinsics;
  for (int v = 0; v < a.depth.height; v += stride) {
    for (int u = 0; u < a.depth.width; u += stride) {
      const float d = a.depth(u, v);
      if (!(d > 0.0f)) continue;
      ++valid;
      const Vec3 X = unproject(a.pose, Ka, Vec2(u, v), d);
      const auto proj = try_project(b.pose, b.intrinsics, X);
      if (!proj || !b.intrinsics.contains(proj->pixel)) continue;
      const double db = sample_depth(b.depth, proj->pixel.x(), proj->pixel.y());
      if (db > 0.0 && std::abs(proj->depth - db) <= depth_tol * proj->depth) ++overlapping;
    }
  }
  if (valid == 0) throw Error(Errc::kNoValidDepth, "first view has no valid sampled depth");
  return static_cast<double>(overlapping) / static_cast<double>(valid);
}

/// Retrieval is counted correct when the overlap is strictly above 50 %.
inline constexpr double kOverlapThreshold = 0.5;

inline bool is_correct_retrieval(double overlap) { return overlap > kOverlapThreshold; }

struct RetrievalMetrics {
  double recall = 0.0;     ///< R@k in [0, 1]
  double precision = 0.0;  ///< P@k in [0, 1]
};

/// `correct[q][r]` says whether the r-th ranked item of query q is correct.
/// Lists shorter than k count the missing ranks as misses.
inline RetrievalMetrics retrieval_metrics(const std::vector<std::vector<bool>>& correct, std::size_t k) {
  if (correct.empty()) throw Error(Errc::kEmptyResults, "no queries to score");
  if (k < 1) throw Error(Errc::kInvalidArgument, "k must be at least 1");
  double hits = 0.0, precision = 0.0;
  for (const auto& ranked : correct) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) n += ranked[r] ? 1 : 0;
    if (n > 0) hits += 1.0;
    precision += static_cast<double>(n) / static_cast<double>(k);
  }
  const double nq = static_cast<double>(correct.size());
  return {hits / nq, precision / nq};
}

// ---------------------------------------------------------------------------
// Descriptor file: "name dim v1 ... vdim" per line, '#' comments.

struct NamedDescriptor {
  std::string name;
  GlobalDescriptor descriptor;
};

inline std::vector<NamedDescriptor> read_descriptors(const std::filesystem::path& path,
                                                     std::vector<std::string>* warnings = nullptr) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::kIoError, "cannot open " + path.string());
  std::vector<NamedDescriptor> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto p = line.find('#'); p != std::string::npos) line.resize(p);
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    long long dim = 0;
    if (!(ls >> dim) || dim <= 0) throw Error(Errc::kParseError, where + ": missing or invalid dimension");
    NamedDescriptor nd;
    nd.name = name;
    nd.descriptor.values.resize(static_cast<std::size_t>(dim));
    double norm2 = 0.0;
    for (auto& v : nd.descriptor.values) {
      double x;
      if (!(ls >> x) || !std::isfinite(x)) throw Error(Errc::kParseError, where + ": expected " + std::to_string(dim) + " finite values");
      v = static_cast<float>(x);
      norm2 += x * x;
    }
    std::string extra;
    if (ls >> extra) throw Error(Errc::kParseError, where + ": trailing fields after " + std::to_string(dim) + " values");
    const double norm = std::sqrt(norm2);
    if (!(norm > 0.0)) throw Error(Errc::kParseError, where + ": zero descriptor");
    if (std::abs(norm - 1.0) > 1e-3 && warnings) {
      warnings->push_back(where + ": descriptor norm " + std::to_string(norm) + " re-normalized");
    }
    for (auto& v : nd.descriptor.values) v = static_cast<float>(v / norm);
    out.push_back(std::move(nd));
  }
  return out;
}

inline void write_descriptors(const std::filesystem::path& path, const std::vector<NamedDescriptor>& descs) {
  auto os = detail::open_out(path);
  char buf[32];
  for (const auto& d : descs) {
    os << d.name << ' ' << d.descriptor.dim();
    for (float v : d.descriptor.values) {
      std::snprintf(buf, sizeof(buf), " %.9g", v);
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace uavloc
