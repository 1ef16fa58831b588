#pragma once

// Online localization of one query image against a rendered reference
// database: rotation-prior pre-filter, global retrieval, local matching
// against the top-k references, lifting through reference depth, and
// gravity-guided PnP RANSAC on the pooled correspondences.

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "uavloc/error.hpp"
#include "uavloc/geom.hpp"
#include "uavloc/matching.hpp"
#include "uavloc/parallel.hpp"
#include "uavloc/pose.hpp"
#include "uavloc/retrieval.hpp"
#include "uavloc/scene.hpp"

namespace uavloc {

struct PipelineConfig {
  std::size_t topk = 3;
  double gamma_o_deg = 30.0;
  /// Use the sensor prior for pre-filtering and the RANSAC gravity stop.
  bool use_prior = true;
  DetectorOptions detector;
  double match_ratio = kDefaultBinaryRatio;
  RansacConfig ransac;
};

/// Everything precomputed for one rendered reference image.
struct ReferenceData {
  RenderedView view;
  GlobalDescriptor descriptor;
  std::vector<Keypoint> keypoints;
};

inline std::shared_ptr<const ReferenceData> prepare_reference(RenderedView view, const DetectorOptions& detector) {
  auto data = std::make_shared<ReferenceData>();
  data->descriptor = compute_descriptor(view.rgb);
  data->keypoints = detect_and_describe(view.rgb, detector);
  data->view = std::move(view);
  return data;
}

struct ReferenceEntry {
  std::string name;
  RotationAngles angles;
  std::shared_ptr<const ReferenceData> data;
};

/// Reference views plus the retrieval index over them. Entries may share
/// their data with other databases.
class ReferenceDatabase {
 public:
  ReferenceDatabase() = default;

  explicit ReferenceDatabase(std::vector<ReferenceEntry> entries) : entries_(std::move(entries)) {
    std::vector<IndexEntry> idx;
    idx.reserve(entries_.size());
    for (const auto& e : entries_) {
      if (!e.data) throw Error(Errc::kInvalidArgument, "reference " + e.name + " has no data");
      idx.push_back({e.name, e.data->descriptor, e.angles});
    }
    index_ = RetrievalIndex(std::move(idx));
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<ReferenceEntry>& entries() const { return entries_; }
  const RetrievalIndex& index() const { return index_; }

  const ReferenceEntry* find(const std::string& name) const {
    const auto i = index_.find(name);
    return i ? &entries_[*i] : nullptr;
  }

 private:
  std::vector<ReferenceEntry> entries_;
  RetrievalIndex index_;
};

struct QueryInput {
  std::string name;
  GrayImage rgb;
  Intrinsics intrinsics;
  std::optional<SensorPrior> prior;
};

struct LocalizationResult {
  std::optional<PoseEstimate> estimate;
  std::vector<RankedItem> retrieved;
  std::size_t prefiltered_count = 0;
  bool prefilter_fail_open = false;
  std::size_t n_matches = 0;
  std::size_t n_correspondences = 0;
  std::optional<Errc> failure;  ///< why no pose was produced
  std::string failure_message;
};

/// Errors that end a single query's localization without aborting a batch.
inline bool is_localization_failure(Errc c) {
  return c == Errc::kEmptyCandidates || c == Errc::kTooFewCorrespondences || c == Errc::kNoModelFound;
}

inline LocalizationResult localize_query(const ReferenceDatabase& db, const QueryInput& q, const PipelineConfig& cfg) {
  LocalizationResult res;
  try {
    const bool with_prior = cfg.use_prior && q.prior.has_value();
    std::vector<std::size_t> candidates;
    if (with_prior) {
      auto pf = prefilter_by_rotation(*q.prior, db.index(), cfg.gamma_o_deg);
      candidates = std::move(pf.candidates);
      res.prefilter_fail_open = pf.fail_open;
    } else {
      candidates = db.index().all();
    }
    res.prefiltered_count = candidates.size();
    res.retrieved = query_topk(compute_descriptor(q.rgb), db.index(), candidates, cfg.topk);

    const auto qk = detect_and_describe(q.rgb, cfg.detector);
    std::vector<Match> matches;
    for (const auto& r : res.retrieved) {
      const auto& ref = db.entries()[r.index];
      auto m = match_features(qk, ref.data->keypoints, cfg.match_ratio, ref.name);
      matches.insert(matches.end(), m.begin(), m.end());
    }
    res.n_matches = matches.size();
    const auto corrs = lift_matches(matches, [&](const std::string& name) -> const RenderedView* {
      const auto* e = db.find(name);
      return e ? &e->data->view : nullptr;
    });
    res.n_correspondences = corrs.size();
    res.estimate = ransac_pnp(corrs, q.intrinsics, with_prior ? q.prior : std::nullopt, cfg.ransac);
  } catch (const Error& e) {
    if (!is_localization_failure(e.code())) throw;
    res.estimate.reset();
    res.failure = e.code();
    res.failure_message = e.what();
  }
  return res;
}

}  // namespace uavloc
