#pragma once

// Command-line front end: offline generation (scene, reference views,
// queries) and the online stages (localize, track, evaluate).

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uavloc/dataio.hpp"
#include "uavloc/error.hpp"
#include "uavloc/eval.hpp"
#include "uavloc/experiment.hpp"
#include "uavloc/pipeline.hpp"
#include "uavloc/retrieval.hpp"
#include "uavloc/scene.hpp"
#include "uavloc/tracking.hpp"
#include "uavloc/viewgen.hpp"

namespace uavloc {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitPipeline = 3 };

/// Pipeline failures get exit status 3, everything else raised by the library
/// is a problem with the input data (2).
inline int exit_code_for(Errc c) {
  switch (c) {
    case Errc::kEmptyCandidates:
    case Errc::kTooFewCorrespondences:
    case Errc::kNoModelFound:
    case Errc::kDegenerateConfiguration:
    case Errc::kNoRealSolution:
    case Errc::kSingularNormalEquations:
    case Errc::kRayMiss:
    case Errc::kNoMatchedSamples:
    case Errc::kBehindCamera:
    case Errc::kGimbalLock:
      return kExitPipeline;
    default:
      return kExitData;
  }
}

namespace detail {

/// Central 60 % of the heightfield, where reference views and queries are
/// placed by default.
inline Bounds default_view_bounds(const Heightfield& h) {
  const double cx = 0.5 * (h.x0() + h.x1()), cy = 0.5 * (h.y0() + h.y1());
  const double hx = 0.2 * (h.x1() - h.x0()), hy = 0.2 * (h.y1() - h.y0());
  return {cx - hx, cy - hy, cx + hx, cy + hy};
}

inline Config load_optional_config(const std::string& path) {
  return path.empty() ? Config() : Config::load(path);
}

inline std::string relative_to(const std::filesystem::path& target, const std::filesystem::path& dir) {
  const auto t = std::filesystem::absolute(target).lexically_normal();
  const auto rel = t.lexically_relative(std::filesystem::absolute(dir.empty() ? "." : dir).lexically_normal());
  return rel.empty() ? t.string() : rel.string();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  if (!os) throw Error(Errc::kIoError, "write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  auto is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

struct LoadedDataset {
  DatasetManifest manifest;
  ReferenceDatabase db;
};

inline LoadedDataset load_dataset(const std::filesystem::path& path, const DetectorOptions& detector, int jobs) {
  std::vector<std::string> warnings;
  LoadedDataset out;
  out.manifest = load_manifest(path, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  const auto& dbm = out.manifest.database;
  std::vector<ReferenceEntry> entries(dbm.entries.size());
  parallel_for(dbm.entries.size(), jobs, [&](std::size_t i) {
    const auto& e = dbm.entries[i];
    RenderedView v;
    v.rgb = read_pgm(dbm.resolve(e.rgb_path));
    v.depth = read_depth(dbm.resolve(e.depth_path));
    v.pose = e.pose;
    v.intrinsics = e.intrinsics;
    if (v.rgb.width != e.intrinsics.width || v.rgb.height != e.intrinsics.height || v.depth.width != v.rgb.width ||
        v.depth.height != v.rgb.height) {
      throw Error(Errc::kParseError, "image size of " + e.name + " does not match its intrinsics");
    }
    entries[i] = {e.name, e.angles, prepare_reference(std::move(v), detector)};
  });
  out.db = ReferenceDatabase(std::move(entries));
  return out;
}

/// First dash-prefixed argument that neither the app nor the chosen
/// subcommand defines.
inline std::optional<std::string> first_unknown_flag(CLI::App& app, int argc, const char* const* argv) {
  CLI::App* sub = nullptr;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.empty() || arg[0] != '-') {
      if (!sub) {
        try {
          sub = app.get_subcommand(arg);
        } catch (const CLI::OptionNotFound&) {
        }
      }
      continue;
    }
    if (arg == "-" || arg == "--") continue;
    const std::string name = arg.substr(0, arg.find('='));
    const bool known = app.get_option_no_throw(name) != nullptr || (sub && sub->get_option_no_throw(name) != nullptr);
    if (!known) return name;
  }
  return std::nullopt;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands. Each returns an exit status; library errors propagate.

struct GenSceneArgs {
  std::string config;
  std::string out = "scene.uavh";
  std::optional<std::uint64_t> seed;
};

inline int cmd_gen_scene(const GenSceneArgs& a) {
  Config c = detail::load_optional_config(a.config);
  if (a.seed) c.set("scene.seed", std::to_string(*a.seed));
  const auto h = generate_scene(scene_spec_from(c));
  write_heightfield(a.out, h);
  std::cout << "scene " << h.nx() << 'x' << h.ny() << " cells of " << format_double(h.cell()) << " m -> " << a.out
            << '\n';
  return kExitOk;
}

struct GenViewsArgs {
  std::string scene;
  std::string config;
  std::string out = "db";
  int jobs = 1;
};

inline int cmd_gen_views(const GenViewsArgs& a) {
  const Config c = detail::load_optional_config(a.config);
  const auto h = read_heightfield(a.scene);
  const auto spec = view_grid_from(c, detail::default_view_bounds(h));
  const auto K = camera_from(c);
  const auto m = render_database(h, spec, K, a.out, a.jobs);
  std::cout << m.entries.size() << " reference views -> " << (std::filesystem::path(a.out) / "manifest.txt").string()
            << '\n';
  return kExitOk;
}

struct GenQueriesArgs {
  std::string scene;
  std::string database;  ///< database manifest
  std::string config;
  std::string out = "queries";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> count;
  int jobs = 1;
};

/// Renders queries and writes <out>/dataset.txt tying scene, database and
/// queries (with ground truth and noisy priors) together.
inline int cmd_gen_queries(const GenQueriesArgs& a) {
  Config c = detail::load_optional_config(a.config);
  if (a.seed) c.set("queries.seed", std::to_string(*a.seed));
  if (a.count) c.set("queries.count", std::to_string(*a.count));
  const auto h = read_heightfield(a.scene);
  const auto spec = query_spec_from(c, detail::default_view_bounds(h));
  const auto K = camera_from(c);
  const auto rendered = render_queries(h, spec, K, a.jobs);

  const std::filesystem::path out(a.out);
  DatasetManifest m;
  m.base_dir = out;
  m.scene_path = detail::relative_to(a.scene, out);
  m.database_path = detail::relative_to(a.database, out);
  for (const auto& q : rendered) {
    QueryEntry e;
    e.name = q.sample.name;
    e.rgb_path = "rgb/" + e.name + ".pgm";
    e.depth_path = "depth/" + e.name + ".uavd";
    e.intrinsics = K;
    e.gt = q.sample.pose;
    e.prior = q.sample.prior;
    write_pgm(out / e.rgb_path, q.view.rgb);
    write_depth(out / *e.depth_path, q.view.depth);
    m.queries.push_back(std::move(e));
  }
  write_dataset(out / "dataset.txt", m);
  std::cout << m.queries.size() << " queries -> " << (out / "dataset.txt").string() << '\n';
  return kExitOk;
}

struct LocalizeArgs {
  std::string dataset;
  std::string config;
  std::string out = "results";
  std::optional<std::uint64_t> seed;
  bool no_prior = false;
  int jobs = 1;
};

/// Writes poses.txt (localized queries only), localize.csv (one row per
/// query) and retrieval.csv (one row per retrieved reference).
inline int cmd_localize(const LocalizeArgs& a) {
  Config c = detail::load_optional_config(a.config);
  if (a.seed) c.set("ransac.seed", std::to_string(*a.seed));
  if (a.no_prior) c.set("retrieval.use_prior", "false");
  const auto cfg = pipeline_config_from(c);
  const auto data = detail::load_dataset(a.dataset, cfg.detector, a.jobs);
  const auto& queries = data.manifest.queries;
  if (queries.empty()) throw Error(Errc::kEmptyInput, a.dataset + " lists no queries");

  struct Row {
    LocalizationResult result;
    std::vector<int> correct;  // -1 unknown, 0/1 otherwise
    int best_ref_rank = 0;
  };
  std::vector<Row> rows(queries.size());
  parallel_for(queries.size(), a.jobs, [&](std::size_t i) {
    const auto& q = queries[i];
    QueryInput in{q.name, read_pgm(data.manifest.resolve(q.rgb_path)), q.intrinsics, q.prior};
    if (in.rgb.width != q.intrinsics.width || in.rgb.height != q.intrinsics.height) {
      throw Error(Errc::kParseError, "image size of query " + q.name + " does not match its intrinsics");
    }
    Row& row = rows[i];
    row.result = localize_query(data.db, in, cfg);
    std::optional<RenderedView> qv;
    if (q.depth_path && q.gt) {
      qv = RenderedView{in.rgb, read_depth(data.manifest.resolve(*q.depth_path)), *q.gt, q.intrinsics};
    }
    for (std::size_t k = 0; k < row.result.retrieved.size(); ++k) {
      int ok = -1;
      if (qv) {
        try {
          ok = is_correct_retrieval(overlap_percentage(*qv, data.db.entries()[row.result.retrieved[k].index].data->view))
                   ? 1
                   : 0;
        } catch (const Error& e) {
          if (e.code() != Errc::kNoValidDepth) throw;
          ok = 0;
        }
      }
      row.correct.push_back(ok);
      if (ok == 1 && row.best_ref_rank == 0) row.best_ref_rank = static_cast<int>(k + 1);
    }
  });

  const std::filesystem::path out(a.out);
  NamedPoses poses;
  std::ostringstream loc, ret;
  loc << "query,status,inliers,iterations,early_stop,gravity_deviation_deg,n_matches,n_correspondences,"
         "prefiltered_count,best_ref_rank\n";
  ret << "query,rank,name,distance,prefiltered_count,correct\n";
  std::size_t n_ok = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto& r = rows[i].result;
    loc << queries[i].name << ',';
    if (r.estimate) {
      ++n_ok;
      poses.emplace_back(queries[i].name, r.estimate->pose);
      loc << "ok," << r.estimate->inliers.size() << ',' << r.estimate->iterations_run << ','
          << (r.estimate->early_stopped_by_gravity ? 1 : 0) << ','
          << format_double(r.estimate->gravity_deviation);
    } else {
      loc << errc_name(*r.failure) << ",0,0,0,";
    }
    loc << ',' << r.n_matches << ',' << r.n_correspondences << ',' << r.prefiltered_count << ','
        << rows[i].best_ref_rank << '\n';
    for (std::size_t k = 0; k < r.retrieved.size(); ++k) {
      const int ok = rows[i].correct[k];
      ret << queries[i].name << ',' << (k + 1) << ',' << r.retrieved[k].name << ','
          << format_double(r.retrieved[k].distance) << ',' << r.prefiltered_count << ','
          << (ok < 0 ? std::string() : std::to_string(ok)) << '\n';
    }
  }
  write_poses(out / "poses.txt", poses);
  detail::write_text(out / "localize.csv", loc.str());
  detail::write_text(out / "retrieval.csv", ret.str());
  std::cout << "localized " << n_ok << '/' << queries.size() << " queries -> " << out.string() << '\n';
  return n_ok == 0 ? kExitPipeline : kExitOk;
}

struct TrackArgs {
  std::string scene;
  std::string rig;
  std::string observations;
  std::string poses;  ///< wide-camera poses, "name qw qx qy qz tx ty tz"
  std::string truth;  ///< optional ground-truth track CSV
  std::string out = "track.csv";
};

/// Observations name their wide pose through the optional frame column;
/// without it the i-th observation uses the i-th pose. Observations whose ray
/// misses the terrain are skipped with a warning.
inline int cmd_track(const TrackArgs& a) {
  const auto h = read_heightfield(a.scene);
  const auto rig = rig_from(Config::load(a.rig));
  const auto obs = read_observations(a.observations);
  std::vector<std::string> warnings;
  const auto poses = read_poses(a.poses, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  std::map<std::string, Pose> by_name(poses.begin(), poses.end());

  TargetTrack track;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& o = obs[i];
    const Pose* wide = nullptr;
    if (!o.frame.empty()) {
      auto it = by_name.find(o.frame);
      if (it == by_name.end()) throw Error(Errc::kParseError, "observation frame " + o.frame + " has no pose");
      wide = &it->second;
    } else {
      if (i >= poses.size()) throw Error(Errc::kParseError, "more observations than poses");
      wide = &poses[i].second;
    }
    try {
      track.push_back({o.timestamp, localize_target({o.timestamp, o.pixel, *wide}, rig, h)});
    } catch (const Error& e) {
      if (e.code() != Errc::kRayMiss) throw;
      std::cerr << "warning: observation at t=" << format_double(o.timestamp) << ": " << e.what() << '\n';
    }
  }
  if (track.empty()) throw Error(Errc::kRayMiss, "no observation produced a target position");
  require_increasing(track, "target track");
  write_track_csv(a.out, track);
  std::cout << track.size() << '/' << obs.size() << " target positions -> " << a.out << '\n';
  if (!a.truth.empty()) {
    const auto rep = track_error(track, read_track_csv(a.truth));
    std::cout << "track error: mean " << format_double(rep.mean) << " m, max " << format_double(rep.max)
              << " m, matched " << rep.n_matched << ", unmatched " << rep.n_unmatched << '\n';
  }
  return kExitOk;
}

struct EvaluateArgs {
  std::string dataset;     ///< with ground truth
  std::string results;     ///< directory written by localize
  std::string experiment;  ///< experiment config; replaces dataset/results
  std::string out = "eval";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
};

inline int cmd_evaluate_experiment(const EvaluateArgs& a) {
  Config c = Config::load(a.experiment);
  if (a.seed) c.set("queries.seed", std::to_string(*a.seed));
  auto cfg = experiment_config_from(c, std::filesystem::path(a.experiment).parent_path());
  cfg.jobs = a.jobs;
  const auto report = run_experiment(cfg);
  const std::filesystem::path out(a.out);
  detail::write_text(out / "report.csv", report_csv(report.variants));
  for (const auto& v : report.variants) detail::write_text(out / ("per_query_" + v.name + ".csv"), per_query_csv(v.queries));
  const std::string summary = summary_text(report.variants);
  detail::write_text(out / "summary.txt", summary);
  std::cout << summary;
  return kExitOk;
}

/// Scores a localize run against the dataset's ground truth. Queries missing
/// from poses.txt count as failures.
inline int cmd_evaluate(const EvaluateArgs& a) {
  if (!a.experiment.empty()) return cmd_evaluate_experiment(a);
  const auto m = load_manifest(a.dataset);
  const std::filesystem::path res(a.results);
  const auto est = read_poses(res / "poses.txt");
  std::map<std::string, Pose> by_name(est.begin(), est.end());

  std::map<std::string, std::vector<std::string>> loc;  // query -> localize.csv fields
  if (std::filesystem::exists(res / "localize.csv")) {
    std::istringstream is(detail::read_text(res / "localize.csv"));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto f = detail::split_csv(line);
      if (f.size() != 10) throw Error(Errc::kParseError, (res / "localize.csv").string() + ": expected 10 columns");
      loc[f[0]] = std::move(f);
    }
  }

  std::vector<QueryRecord> records;
  for (const auto& q : m.queries) {
    if (!q.gt) throw Error(Errc::kParseError, "query " + q.name + " has no ground-truth pose");
    QueryRecord r;
    r.name = q.name;
    if (auto it = by_name.find(q.name); it != by_name.end()) r.error = pose_error(it->second, *q.gt);
    if (auto it = loc.find(q.name); it != loc.end()) {
      const auto& f = it->second;
      r.iterations = detail::parse_int(f[3], "localize.csv");
      r.early_stop = f[4] == "1";
      r.best_ref_rank = detail::parse_int(f[9], "localize.csv");
      if (f[1] != "ok") r.failure = f[1];
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw Error(Errc::kEmptyInput, a.dataset + " lists no queries");
  std::vector<std::optional<PoseError>> errors;
  for (const auto& r : records) errors.push_back(r.error);
  VariantReport v;
  v.name = "localize";
  v.rows = benchmark(errors);
  const std::filesystem::path out(a.out);
  detail::write_text(out / "report.csv", report_csv({v}));
  detail::write_text(out / "per_query.csv", per_query_csv(records));
  for (const auto& row : v.rows) {
    std::cout << '(' << format_double(row.threshold.meters) << "m, " << format_double(row.threshold.degrees)
              << "deg) " << format_pct(row.success_pct) << "%\n";
  }
  std::cout << "failed " << v.rows.front().n_failed << '/' << v.rows.front().n_queries << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

/// Parses argv and runs one subcommand. Usage errors exit 1, data errors 2,
/// pipeline failures 3.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  CLI::App app{"UAV visual localization against rendered reference views", "uavloc"};
  app.require_subcommand(1);

  GenSceneArgs gs;
  auto* s_scene = app.add_subcommand("gen-scene", "generate a synthetic heightfield scene");
  s_scene->add_option("--config", gs.config, "config with scene.* keys")->check(CLI::ExistingFile);
  s_scene->add_option("--out", gs.out, "output heightfield file");
  s_scene->add_option("--seed", gs.seed, "overrides scene.seed");

  GenViewsArgs gv;
  auto* s_views = app.add_subcommand("gen-views", "render the reference database");
  s_views->add_option("--scene", gv.scene, "heightfield file")->required()->check(CLI::ExistingFile);
  s_views->add_option("--config", gv.config, "config with views.* and camera.* keys")->check(CLI::ExistingFile);
  s_views->add_option("--out", gv.out, "output directory");
  s_views->add_option("--jobs", gv.jobs, "worker threads")->check(CLI::PositiveNumber);

  GenQueriesArgs gq;
  auto* s_queries = app.add_subcommand("gen-queries", "sample and render query images with priors");
  s_queries->add_option("--scene", gq.scene, "heightfield file")->required()->check(CLI::ExistingFile);
  s_queries->add_option("--database", gq.database, "database manifest")->required()->check(CLI::ExistingFile);
  s_queries->add_option("--config", gq.config, "config with queries.* and camera.* keys")->check(CLI::ExistingFile);
  s_queries->add_option("--out", gq.out, "output directory");
  s_queries->add_option("--seed", gq.seed, "overrides queries.seed");
  s_queries->add_option("--count", gq.count, "overrides queries.count");
  s_queries->add_option("--jobs", gq.jobs, "worker threads")->check(CLI::PositiveNumber);

  LocalizeArgs lo;
  auto* s_loc = app.add_subcommand("localize", "localize every query of a dataset");
  s_loc->add_option("--dataset", lo.dataset, "dataset manifest")->required()->check(CLI::ExistingFile);
  s_loc->add_option("--config", lo.config, "pipeline config")->check(CLI::ExistingFile);
  s_loc->add_option("--out", lo.out, "output directory");
  s_loc->add_option("--seed", lo.seed, "overrides ransac.seed");
  s_loc->add_flag("--no-prior", lo.no_prior, "ignore sensor priors");
  s_loc->add_option("--jobs", lo.jobs, "worker threads")->check(CLI::PositiveNumber);

  TrackArgs tr;
  auto* s_track = app.add_subcommand("track", "geolocate ground targets seen by the zoom camera");
  s_track->add_option("--scene", tr.scene, "heightfield used as elevation model")->required()->check(CLI::ExistingFile);
  s_track->add_option("--rig", tr.rig, "rig config")->required()->check(CLI::ExistingFile);
  s_track->add_option("--observations", tr.observations, "timestamp px py [frame] per line")
      ->required()
      ->check(CLI::ExistingFile);
  s_track->add_option("--poses", tr.poses, "wide-camera poses")->required()->check(CLI::ExistingFile);
  s_track->add_option("--truth", tr.truth, "ground-truth track CSV")->check(CLI::ExistingFile);
  s_track->add_option("--out", tr.out, "output track CSV");

  EvaluateArgs ev;
  auto* s_eval = app.add_subcommand("evaluate", "benchmark localization results or run a render-setting ablation");
  auto* o_ds = s_eval->add_option("--dataset", ev.dataset, "dataset manifest with ground truth")->check(CLI::ExistingFile);
  auto* o_res = s_eval->add_option("--results", ev.results, "directory written by localize")->check(CLI::ExistingDirectory);
  auto* o_exp = s_eval->add_option("--experiment", ev.experiment, "experiment config")->check(CLI::ExistingFile);
  o_ds->needs(o_res);
  o_res->needs(o_ds);
  o_exp->excludes(o_ds);
  o_exp->excludes(o_res);
  s_eval->add_option("--out", ev.out, "output directory");
  s_eval->add_option("--seed", ev.seed, "overrides queries.seed of an experiment");
  s_eval->add_option("--jobs", ev.jobs, "worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
    if (*s_eval && ev.experiment.empty() && ev.dataset.empty()) {
      throw CLI::RequiredError("--dataset/--results or --experiment");
    }
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // Missing required options are reported before unknown ones; name the
    // unknown flag first since it is usually the actual mistake.
    if (auto bad = detail::first_unknown_flag(app, argc, argv)) {
      err << "error: unknown option " << *bad << "\n\n";
    } else {
      err << "error: " << e.what() << "\n\n";
    }
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  auto* old_out = std::cout.rdbuf(out.rdbuf());
  struct Restore {
    std::streambuf* buf;
    ~Restore() { std::cout.rdbuf(buf); }
  } restore{old_out};
  try {
    if (*s_scene) return cmd_gen_scene(gs);
    if (*s_views) return cmd_gen_views(gv);
    if (*s_queries) return cmd_gen_queries(gq);
    if (*s_loc) return cmd_localize(lo);
    if (*s_track) return cmd_track(tr);
    return cmd_evaluate(ev);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return kExitData;
  }
}

}  // namespace uavloc
