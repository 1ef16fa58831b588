#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "test_support.hpp"
#include "uavloc/retrieval.hpp"
#include "uavloc/viewgen.hpp"

namespace uavloc {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

TEST(Viewpoints, SixteenPerPositionAtDefaultAngles) {
  auto spec = ViewGridSpec::standard({0, 0, 100, 100});
  spec.levels = {{100.0, 50.0}};
  const auto vps = generate_viewpoints(spec);
  ASSERT_EQ(vps.size(), 9u * 16u);
  std::map<std::pair<int, int>, int> per_position;
  for (const auto& vp : vps) ++per_position[{vp.row, vp.col}];
  EXPECT_EQ(per_position.size(), 9u);
  for (const auto& [pos, n] : per_position) EXPECT_EQ(n, 16);
}

TEST(Viewpoints, PerLevelGridCounts) {
  EXPECT_EQ(grid_count(100, 50), 3);
  EXPECT_EQ(grid_count(150, 50), 4);
  EXPECT_EQ(grid_count(150, 75), 3);
  auto spec = ViewGridSpec::standard({-75, -75, 75, 75});
  std::set<std::tuple<int, int, int>> positions;
  const auto vps = generate_viewpoints(spec);
  for (const auto& vp : vps) positions.insert({vp.level, vp.row, vp.col});
  EXPECT_EQ(positions.size(), 25u);
  EXPECT_EQ(vps.size(), 25u * 2u * 8u);
}

TEST(ViewpointsProperty, CountFormulaAndAngles) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    ViewGridSpec spec;
    const int nlev = 1 + static_cast<int>(rng.index(3));
    for (int l = 0; l < nlev; ++l) spec.levels.push_back({rng.uniform(80, 200), rng.uniform(20, 90)});
    const double intervals[] = {30, 45, 60, 90, 120};
    spec.yaw_interval_deg = intervals[rng.index(5)];
    spec.pitches = {0.0, rng.uniform(10, 80)};
    spec.bounds = {rng.uniform(-100, 0), rng.uniform(-100, 0), rng.uniform(10, 150), rng.uniform(10, 150)};
    std::size_t expected = 0;
    for (const auto& l : spec.levels) {
      expected += static_cast<std::size_t>(grid_count(spec.bounds.xmax - spec.bounds.xmin, l.spacing) *
                                           grid_count(spec.bounds.ymax - spec.bounds.ymin, l.spacing));
    }
    expected *= spec.pitches.size() * static_cast<std::size_t>(yaw_steps(spec.yaw_interval_deg));
    const auto vps = generate_viewpoints(spec);
    ASSERT_EQ(vps.size(), expected);
    for (const auto& vp : vps) {
      const auto a = attitude_angles(vp.pose.rotation);
      ASSERT_LT(angle_distance_deg(a.roll, vp.angles.roll), 1e-6);
      ASSERT_LT(angle_distance_deg(a.yaw, vp.angles.yaw), 1e-6);
      ASSERT_LT(angle_distance_deg(a.pitch, vp.angles.pitch), 1e-6);
      // Off-nadir label matches the optical axis.
      const Vec3 fwd = vp.pose.rotation.row(2).transpose();
      ASSERT_NEAR(rad2deg(std::acos(std::clamp(-fwd.z(), -1.0, 1.0))), vp.pitch_label, 1e-9);
    }
  }
}

TEST(Viewpoints, AbsoluteAltitudeAndHeightAboveGround) {
  const auto h = generate_scene(testing::small_city(4));
  auto spec = ViewGridSpec::standard({-50, -50, 50, 50});
  for (const auto& vp : generate_viewpoints(spec, &h)) {
    EXPECT_DOUBLE_EQ(vp.pose.center().z(), vp.level == 0 ? 100.0 : 150.0);
  }
  spec.height_above_ground = true;
  spec.levels = {{60.0, 50.0}};
  for (const auto& vp : generate_viewpoints(spec, &h)) {
    const Vec3 c = vp.pose.center();
    EXPECT_NEAR(c.z(), h.height_clamped(c.x(), c.y()) + 60.0, 1e-9);
  }
  EXPECT_THROW(generate_viewpoints(spec), Error);
}

TEST(Viewpoints, InvalidSpecs) {
  auto spec = ViewGridSpec::standard({0, 0, 100, 100});
  spec.yaw_interval_deg = 50;
  EXPECT_THROW(validate(spec), Error);
  spec = ViewGridSpec::standard({0, 0, 0, 100});
  EXPECT_THROW(validate(spec), Error);
  spec = ViewGridSpec::standard({0, 0, 100, 100});
  spec.pitches = {95};
  EXPECT_THROW(validate(spec), Error);
}

TEST(Viewpoints, LevelBelowPeakRejected) {
  const auto h = generate_scene(testing::small_city(4));
  auto spec = ViewGridSpec::standard({-100, -100, 100, 100});
  spec.levels = {{h.max_height_in(-100, -100, 100, 100) - 1.0, 50.0}};
  try {
    validate(spec, h);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kInvalidSpec);
  }
}

TEST(RenderDatabase, ManifestFilesAndDeterminism) {
  const auto h = generate_scene(testing::small_city(4));
  auto spec = ViewGridSpec::standard({0, 0, 100, 100});
  spec.levels = {{100.0, 50.0}};
  const auto K = Intrinsics::centered(48, 36, 40.0);
  const auto a = fresh_dir("uavloc_db_a"), b = fresh_dir("uavloc_db_b");
  const auto m = render_database(h, spec, K, a, 2);
  render_database(h, spec, K, b, 1);
  ASSERT_EQ(m.entries.size(), 144u);
  for (const auto& e : m.entries) {
    ASSERT_TRUE(fs::exists(m.resolve(e.rgb_path)));
    ASSERT_TRUE(fs::exists(m.resolve(e.depth_path)));
    ASSERT_EQ(slurp(a / e.rgb_path), slurp(b / e.rgb_path));
    ASSERT_EQ(slurp(a / e.depth_path), slurp(b / e.depth_path));
  }
  EXPECT_EQ(slurp(a / "manifest.txt"), slurp(b / "manifest.txt"));

  const auto r = read_manifest(a / "manifest.txt");
  ASSERT_EQ(r.entries.size(), m.entries.size());
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    EXPECT_EQ(r.entries[i].name, m.entries[i].name);
    EXPECT_TRUE(r.entries[i].pose.rotation.isApprox(m.entries[i].pose.rotation, 1e-14));
    EXPECT_TRUE(r.entries[i].pose.translation.isApprox(m.entries[i].pose.translation, 1e-12));
    EXPECT_DOUBLE_EQ(r.entries[i].angles.yaw, m.entries[i].angles.yaw);
    EXPECT_EQ(r.entries[i].intrinsics.width, 48);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Manifest, ParseErrorsNameTheLine) {
  const auto dir = fresh_dir("uavloc_manifest_bad");
  {
    std::ofstream os(dir / "manifest.txt");
    os << "# header\n";
    os << "v1 1 0 0 0 0 0 0 0 0 0 100 100 50 40 100 80 a.pgm a.uavd\n";
    os << "v2 1 0 0 zero 0 0 0 0 0 0 100 100 50 40 100 80 b.pgm b.uavd\n";
  }
  try {
    read_manifest(dir / "manifest.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kParseError);
    EXPECT_NE(std::string(e.what()).find("manifest.txt:3"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Queries, RangesAndDeterminism) {
  const auto h = generate_scene(testing::small_city(4));
  QuerySetSpec spec;
  spec.count = 200;
  spec.seed = 5;
  spec.bounds = {-80, -80, 80, 80};
  const auto a = generate_queries(h, spec);
  const auto b = generate_queries(h, spec);
  ASSERT_EQ(a.size(), 200u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec3 c = a[i].pose.center();
    EXPECT_GE(c.z(), 50.0);
    EXPECT_LE(c.z(), 200.0);
    EXPECT_GE(c.x(), -80.0);
    EXPECT_LE(c.x(), 80.0);
    EXPECT_GE(a[i].pitch, 15.0);
    EXPECT_LE(a[i].pitch, 70.0);
    EXPECT_GE(c.z() - h.height_clamped(c.x(), c.y()), spec.min_clearance);
    const Vec3 fwd = a[i].pose.rotation.row(2).transpose();
    EXPECT_NEAR(rad2deg(std::acos(-fwd.z())), a[i].pitch, 1e-9);
    EXPECT_EQ(a[i].pose.rotation, b[i].pose.rotation);
    EXPECT_EQ(a[i].prior.rotation, b[i].prior.rotation);
  }
}

TEST(Queries, PriorNoiseScale) {
  const auto h = testing::flat_field(300, 2.0);
  QuerySetSpec spec;
  spec.count = 400;
  spec.bounds = {-100, -100, 100, 100};
  spec.prior_sigma_deg = 0.0;
  for (const auto& q : generate_queries(h, spec)) {
    ASSERT_LT(rotation_angle_between_deg(q.prior.rotation, q.pose.rotation), 1e-9);
  }
  spec.prior_sigma_deg = 2.0;
  double sum_sq = 0.0;
  const auto qs = generate_queries(h, spec);
  for (const auto& q : qs) {
    const auto g = attitude_angles(q.pose.rotation);
    const auto p = q.prior.attitude();
    const double d = wrap_deg(p.yaw - g.yaw);
    sum_sq += d * d;
  }
  const double sigma = std::sqrt(sum_sq / static_cast<double>(qs.size()));
  EXPECT_NEAR(sigma, 2.0, 0.3);
}

// With exact priors the rotation pre-filter keeps the reference that overlaps
// the query most, up to near-ties: a nadir reference overlaps a shallow query
// almost equally at every yaw, and an oblique view from a neighbouring grid
// position can look back onto the same ground.
TEST(QueriesProperty, ExactPriorKeepsBestOverlapReference) {
  const auto h = generate_scene(testing::small_city(8));
  const auto K = Intrinsics::centered(64, 48, 52.0);
  const auto grid = ViewGridSpec::standard({-75, -75, 75, 75});
  const auto vps = generate_viewpoints(grid, &h);
  std::vector<RenderedView> views;
  std::vector<IndexEntry> entries;
  for (const auto& vp : vps) {
    views.push_back(render_view(h, vp.pose, K));
    entries.push_back({vp.name, GlobalDescriptor{std::vector<float>(4, 0.5f)}, vp.angles});
  }
  const RetrievalIndex index(entries);
  QuerySetSpec qs;
  qs.count = 60;
  qs.seed = 17;
  qs.bounds = grid.bounds;
  qs.prior_sigma_deg = 0.0;
  int exact = 0;
  const auto queries = generate_queries(h, qs);
  for (const auto& q : queries) {
    const auto qv = render_view(h, q.pose, K);
    std::vector<double> overlap(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) overlap[i] = overlap_percentage(qv, views[i], 2);
    const auto best = std::max_element(overlap.begin(), overlap.end());
    const auto kept = prefilter_by_rotation(q.prior, index, 30.0).candidates;
    double kept_best = 0.0;
    for (auto i : kept) kept_best = std::max(kept_best, overlap[i]);
    if (kept_best == *best) ++exact;
    EXPECT_GE(kept_best, 0.9 * *best) << q.name << " best " << vps[best - overlap.begin()].name;
    EXPECT_EQ(is_correct_retrieval(kept_best), is_correct_retrieval(*best)) << q.name;
  }
  EXPECT_GE(exact, static_cast<int>(0.85 * queries.size()));
}

}  // namespace
}  // namespace uavloc
