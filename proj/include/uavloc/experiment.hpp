#pragma once

// Render-setting ablation: one scene, one fixed query set, several reference
// grids. Views shared between grids are rendered and described once.

#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uavloc/dataio.hpp"
#include "uavloc/eval.hpp"
#include "uavloc/parallel.hpp"
#include "uavloc/pipeline.hpp"
#include "uavloc/retrieval.hpp"
#include "uavloc/scene.hpp"
#include "uavloc/viewgen.hpp"

namespace uavloc {

struct ExperimentVariant {
  std::string name;
  std::vector<AltitudeLevel> levels;
  std::vector<double> pitches;
};

struct ExperimentConfig {
  std::optional<std::filesystem::path> scene_path;  ///< loaded instead of generating `scene`
  SceneSpec scene;
  Intrinsics camera = Intrinsics::centered(320, 240, 260.0);
  Bounds view_bounds;
  double yaw_interval_deg = 45.0;
  std::vector<ExperimentVariant> variants;
  QuerySetSpec queries;
  PipelineConfig pipeline;
  std::vector<Threshold> thresholds = default_thresholds();
  int jobs = 1;
};

/// Render-setting variants: single altitude at 45 deg, two altitudes at
/// 45 deg, and two altitudes at 45 and 0 deg.
inline std::vector<ExperimentVariant> hierarchical_render_variants() {
  return {{"H150_p45", {{150.0, 75.0}}, {45.0}},
          {"H150+100_p45", {{150.0, 75.0}, {100.0, 50.0}}, {45.0}},
          {"H150+100_p45+0", {{150.0, 75.0}, {100.0, 50.0}}, {45.0, 0.0}}};
}

/// Reads variant.<name>.levels / variant.<name>.pitches (variants in order of
/// first appearance) alongside scene.*, camera.*, views.*, queries.* and the
/// pipeline keys.
inline ExperimentConfig experiment_config_from(const Config& c, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig e;
  if (auto p = c.get("scene.path")) {
    const std::filesystem::path path(*p);
    e.scene_path = path.is_absolute() ? path : base_dir / path;
  }
  e.scene = scene_spec_from(c);
  e.camera = camera_from(c);
  const double half = e.scene.extent * 0.2;
  e.view_bounds = {-half, -half, half, half};
  if (auto v = c.get("views.bounds")) e.view_bounds = parse_bounds(*v, "views.bounds");
  e.yaw_interval_deg = c.get_double("views.yaw_interval_deg", e.yaw_interval_deg);
  std::vector<std::string> names;
  for (const auto& key : c.keys_with_prefix("variant.")) {
    const auto dot = key.rfind('.');
    const std::string name = key.substr(8, dot - 8);
    if (dot <= 8 || name.empty()) throw Error(Errc::kParseError, "bad variant key " + key);
    if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
  }
  for (const auto& name : names) {
    ExperimentVariant v;
    v.name = name;
    const auto levels = c.get("variant." + name + ".levels");
    const auto pitches = c.get("variant." + name + ".pitches");
    if (!levels || !pitches) throw Error(Errc::kInvalidSpec, "variant " + name + " needs levels and pitches");
    v.levels = parse_levels(*levels, "variant." + name + ".levels");
    v.pitches = parse_double_list(*pitches, "variant." + name + ".pitches");
    e.variants.push_back(std::move(v));
  }
  if (e.variants.empty()) e.variants = hierarchical_render_variants();
  e.queries = query_spec_from(c, e.view_bounds);
  e.pipeline = pipeline_config_from(c);
  if (auto t = c.get("eval.thresholds")) {
    const auto v = parse_double_list(*t, "eval.thresholds");
    if (v.empty() || v.size() % 2) throw Error(Errc::kParseError, "eval.thresholds needs meter,degree pairs");
    e.thresholds.clear();
    for (std::size_t i = 0; i < v.size(); i += 2) e.thresholds.push_back({v[i], v[i + 1]});
  }
  return e;
}

struct QueryRecord {
  std::string name;
  std::optional<PoseError> error;  ///< empty when localization failed
  int iterations = 0;
  bool early_stop = false;
  /// 1-based rank of the first retrieved reference overlapping the query by
  /// more than 50 %; 0 when none does.
  int best_ref_rank = 0;
  std::string failure;
};

struct VariantReport {
  std::string name;
  std::size_t n_views = 0;
  std::vector<BenchmarkRow> rows;
  RetrievalMetrics recall_at_1;
  RetrievalMetrics recall_at_k;
  std::size_t k = 0;
  std::vector<QueryRecord> queries;
};

struct ExperimentReport {
  std::vector<VariantReport> variants;
};

/// A rendered query with its ground truth and prior.
struct RenderedQuery {
  QuerySample sample;
  RenderedView view;
};

inline std::vector<RenderedQuery> render_queries(const Heightfield& h, const QuerySetSpec& spec, const Intrinsics& K,
                                                 int jobs) {
  const auto samples = generate_queries(h, spec);
  std::vector<RenderedQuery> out(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    out[i].sample = samples[i];
    out[i].view = render_view(h, samples[i].pose, K);
  });
  return out;
}

/// Builds reference databases that share rendered views keyed by exact pose.
class ReferenceCache {
 public:
  ReferenceCache(const Heightfield& h, const Intrinsics& K, DetectorOptions detector, int jobs)
      : h_(h), K_(K), detector_(detector), jobs_(jobs) {}

  ReferenceDatabase build(const ViewGridSpec& spec) {
    validate(spec, h_);
    const auto vps = generate_viewpoints(spec, &h_);
    std::vector<std::string> keys(vps.size());
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < vps.size(); ++i) {
      keys[i] = format_pose(vps[i].pose);
      if (!cache_.count(keys[i])) {
        cache_[keys[i]] = nullptr;
        todo.push_back(i);
      }
    }
    std::vector<std::shared_ptr<const ReferenceData>> fresh(todo.size());
    parallel_for(todo.size(), jobs_, [&](std::size_t j) {
      fresh[j] = prepare_reference(render_view(h_, vps[todo[j]].pose, K_), detector_);
    });
    for (std::size_t j = 0; j < todo.size(); ++j) cache_[keys[todo[j]]] = fresh[j];
    std::vector<ReferenceEntry> entries;
    entries.reserve(vps.size());
    for (std::size_t i = 0; i < vps.size(); ++i) entries.push_back({vps[i].name, vps[i].angles, cache_.at(keys[i])});
    return ReferenceDatabase(std::move(entries));
  }

  std::size_t rendered() const { return cache_.size(); }

 private:
  const Heightfield& h_;
  Intrinsics K_;
  DetectorOptions detector_;
  int jobs_;
  std::map<std::string, std::shared_ptr<const ReferenceData>> cache_;
};

/// Localizes every query against `db` and scores poses and retrieval.
inline VariantReport evaluate_variant(const std::string& name, const ReferenceDatabase& db,
                                      const std::vector<RenderedQuery>& queries, const PipelineConfig& cfg,
                                      const std::vector<Threshold>& thresholds, int jobs) {
  if (queries.empty()) throw Error(Errc::kEmptyInput, "experiment has no queries");
  VariantReport rep;
  rep.name = name;
  rep.n_views = db.size();
  rep.k = cfg.topk;
  rep.queries.resize(queries.size());
  std::vector<std::vector<bool>> correct(queries.size());
  parallel_for(queries.size(), jobs, [&](std::size_t i) {
    const auto& q = queries[i];
    QueryInput in{q.sample.name, q.view.rgb, q.view.intrinsics, q.sample.prior};
    LocalizationResult r;
    try {
      r = localize_query(db, in, cfg);
    } catch (const Error& e) {
      throw Error(e.code(), "variant " + name + ", query " + q.sample.name + ": " + e.what());
    }
    QueryRecord& rec = rep.queries[i];
    rec.name = q.sample.name;
    if (r.estimate) {
      rec.error = pose_error(r.estimate->pose, q.sample.pose);
      rec.iterations = r.estimate->iterations_run;
      rec.early_stop = r.estimate->early_stopped_by_gravity;
    } else {
      rec.failure = errc_name(*r.failure);
    }
    for (std::size_t k = 0; k < r.retrieved.size(); ++k) {
      const auto& ref = db.entries()[r.retrieved[k].index];
      bool ok = false;
      try {
        ok = is_correct_retrieval(overlap_percentage(q.view, ref.data->view));
      } catch (const Error& e) {
        if (e.code() != Errc::kNoValidDepth) throw;
      }
      correct[i].push_back(ok);
      if (ok && rec.best_ref_rank == 0) rec.best_ref_rank = static_cast<int>(k + 1);
    }
  });
  std::vector<std::optional<PoseError>> errors;
  for (const auto& r : rep.queries) errors.push_back(r.error);
  rep.rows = benchmark(errors, thresholds);
  rep.recall_at_1 = retrieval_metrics(correct, 1);
  rep.recall_at_k = retrieval_metrics(correct, cfg.topk);
  return rep;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  if (cfg.queries.count == 0) throw Error(Errc::kEmptyInput, "experiment has no queries");
  if (cfg.variants.empty()) throw Error(Errc::kInvalidSpec, "experiment has no variants");
  const Heightfield h = cfg.scene_path ? read_heightfield(*cfg.scene_path) : generate_scene(cfg.scene);
  QuerySetSpec qs = cfg.queries;
  if (qs.bounds.empty()) qs.bounds = cfg.view_bounds;
  const auto queries = render_queries(h, qs, cfg.camera, cfg.jobs);
  ReferenceCache cache(h, cfg.camera, cfg.pipeline.detector, cfg.jobs);
  ExperimentReport report;
  for (const auto& v : cfg.variants) {
    ViewGridSpec spec;
    spec.levels = v.levels;
    spec.pitches = v.pitches;
    spec.yaw_interval_deg = cfg.yaw_interval_deg;
    spec.bounds = cfg.view_bounds;
    ReferenceDatabase db;
    try {
      db = cache.build(spec);
    } catch (const Error& e) {
      throw Error(e.code(), "variant " + v.name + ": " + e.what());
    }
    report.variants.push_back(evaluate_variant(v.name, db, queries, cfg.pipeline, cfg.thresholds, cfg.jobs));
  }
  return report;
}

inline std::string report_csv(const std::vector<VariantReport>& variants) {
  std::ostringstream os;
  os << "variant,threshold_m,threshold_deg,success_pct,n_queries,n_failed\n";
  for (const auto& v : variants) {
    for (const auto& r : v.rows) {
      os << v.name << ',' << format_double(r.threshold.meters) << ',' << format_double(r.threshold.degrees) << ','
         << format_pct(r.success_pct) << ',' << r.n_queries << ',' << r.n_failed << '\n';
    }
  }
  return os.str();
}

inline std::string per_query_csv(const std::vector<QueryRecord>& queries) {
  std::ostringstream os;
  os << "query,t_err_m,r_err_deg,iterations,early_stop,retrieval_rank_of_best_ref\n";
  for (const auto& q : queries) {
    os << q.name << ',';
    if (q.error) {
      os << format_double(q.error->translation) << ',' << format_double(q.error->rotation);
    } else {
      os << "inf,inf";
    }
    os << ',' << q.iterations << ',' << (q.early_stop ? 1 : 0) << ',' << q.best_ref_rank << '\n';
  }
  return os.str();
}

inline std::string summary_text(const std::vector<VariantReport>& variants) {
  std::ostringstream os;
  for (const auto& v : variants) {
    os << v.name << " (" << v.n_views << " views)";
    for (const auto& r : v.rows) {
      os << "  (" << format_double(r.threshold.meters) << "m," << format_double(r.threshold.degrees)
         << "deg) " << format_pct(r.success_pct) << "%";
    }
    if (!v.rows.empty()) os << "  failed " << v.rows.front().n_failed << "/" << v.rows.front().n_queries;
    os << "  R@1 " << format_pct(100.0 * v.recall_at_1.recall) << "%  R@" << v.k << ' '
       << format_pct(100.0 * v.recall_at_k.recall) << "%\n";
  }
  return os.str();
}

}  // namespace uavloc
