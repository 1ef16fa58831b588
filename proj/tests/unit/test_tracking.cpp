#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "uavloc/tracking.hpp"

namespace uavloc {
namespace {

CameraRig rig_with_offset(const Vec3& t) {
  CameraRig rig;
  rig.wide = Intrinsics::centered(320, 240, 260.0);
  rig.zoom = Intrinsics::centered(641, 481, 1800.0);
  rig.zoom_from_wide = Pose(Mat3::Identity(), t);
  return rig;
}

TEST(LocalizeTarget, NadirPrincipalPixelHitsGroundBelow) {
  const auto h = testing::flat_field(300, 1.0, 12.0);
  const auto rig = rig_with_offset(Vec3::Zero());
  const TargetObservation obs{0.0, Vec2(rig.zoom.cx, rig.zoom.cy),
                              Pose::from_center(look_rotation(0.0, 90.0), Vec3(40, -25, 150))};
  const Vec3 p = localize_target(obs, rig, h);
  EXPECT_LT((p - Vec3(40, -25, 12)).norm(), 1e-6);
}

TEST(LocalizeTarget, RigOffsetShiftsHitByTranslation) {
  const auto h = testing::flat_field(300, 1.0);
  // x_zoom = x_wide + t, so the zoom center sits at wide center - R^T t.
  const auto rig = rig_with_offset(Vec3(-0.08, 0.0, 0.0));
  const Pose wide = Pose::from_center(look_rotation(0.0, 90.0), Vec3(0, 0, 100));
  const Vec3 p = localize_target({0.0, Vec2(rig.zoom.cx, rig.zoom.cy), wide}, rig, h);
  const Vec3 expect = wide.center() - wide.rotation.transpose() * Vec3(-0.08, 0.0, 0.0);
  EXPECT_NEAR(p.x(), expect.x(), 1e-9);
  EXPECT_NEAR(p.y(), expect.y(), 1e-9);
  EXPECT_NEAR(p.z(), 0.0, 1e-9);
}

TEST(LocalizeTarget, ObliqueRayOnFlatGround) {
  const auto h = testing::flat_field(500, 1.0);
  const auto rig = rig_with_offset(Vec3::Zero());
  // Looking north, 30 degrees below the horizon from 100 m.
  const Pose wide = Pose::from_center(look_rotation(0.0, 30.0), Vec3(0, 0, 100));
  const Vec3 p = localize_target({0.0, Vec2(rig.zoom.cx, rig.zoom.cy), wide}, rig, h);
  const Vec3 fwd = wide.rotation.transpose() * Vec3::UnitZ();
  const double dist = 100.0 / std::tan(deg2rad(30.0));
  EXPECT_NEAR(std::hypot(p.x(), p.y()), dist, 1e-4);
  EXPECT_NEAR(std::atan2(p.y(), p.x()), std::atan2(fwd.y(), fwd.x()), 1e-9);
}

TEST(LocalizeTarget, Errors) {
  const auto h = testing::flat_field(100, 1.0);
  const auto rig = rig_with_offset(Vec3::Zero());
  const Pose level = Pose::from_center(look_rotation(0.0, 0.0), Vec3(0, 0, 50));
  EXPECT_EQ(testing::error_code_of([&] { localize_target({0.0, Vec2(320, 10), level}, rig, h); }), Errc::kRayMiss);
  EXPECT_EQ(testing::error_code_of([&] { localize_target({0.0, Vec2(-1, 10), level}, rig, h); }), Errc::kOutOfBounds);
  Pose bad = level;
  bad.rotation(0, 0) = 3.0;
  EXPECT_EQ(testing::error_code_of([&] { localize_target({0.0, Vec2(320, 400), bad}, rig, h); }), Errc::kInvalidArgument);
}

TEST(LocalizeTargetProperty, RecoversVisibleSurfacePoints) {
  const auto city = generate_scene(testing::small_city(3));
  const auto rig = rig_with_offset(Vec3(-0.08, 0.02, 0.01));
  Rng rng(17);
  int checked = 0;
  for (int t = 0; t < 400 && checked < 100; ++t) {
    const Vec3 c(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(120, 200));
    const Pose wide = Pose::from_center(look_rotation(rng.uniform(0, 360), rng.uniform(40, 90)), c);
    const Pose zp = zoom_pose(rig, wide);
    const Vec2 px(rng.uniform(0, 640), rng.uniform(0, 480));
    const Vec3 dir = (zp.rotation.transpose() * rig.zoom.ray(px)).normalized();
    const auto hit = raycast(city, zp.center(), dir);
    if (!hit) continue;
    ++checked;
    // Re-project the surface point: the round trip lands on the same point.
    const Vec2 back = project(zp, rig.zoom, *hit).pixel;
    const Vec3 p = localize_target({0.0, back, wide}, rig, city);
    EXPECT_LT((p - *hit).norm(), 0.05) << "trial " << t;
  }
  EXPECT_EQ(checked, 100);
}

TEST(TrackError, Examples) {
  const TargetTrack truth{{0.0, Vec3(0, 0, 0)}, {1.0, Vec3(10, 0, 0)}, {2.0, Vec3(20, 0, 0)}};
  const auto same = track_error(truth, truth);
  EXPECT_EQ(same.n_matched, 3u);
  EXPECT_EQ(same.mean, 0.0);
  const TargetTrack est{{0.1, Vec3(0, 3, 0)}, {1.0, Vec3(10, 0, 4)}, {5.0, Vec3(0, 0, 0)}};
  const auto rep = track_error(est, truth);
  EXPECT_EQ(rep.n_matched, 2u);
  EXPECT_EQ(rep.n_unmatched, 1u);
  EXPECT_DOUBLE_EQ(rep.mean, 3.5);
  EXPECT_DOUBLE_EQ(rep.max, 4.0);
  EXPECT_FALSE(rep.samples[2].matched);
}

TEST(TrackError, WindowEdgesAndTies) {
  const TargetTrack truth{{0.0, Vec3(0, 0, 0)}, {1.0, Vec3(1, 0, 0)}};
  // Exactly 0.5 s from both neighbours: the earlier one wins.
  auto rep = track_error({{0.5, Vec3(0, 0, 0)}}, truth);
  EXPECT_EQ(rep.samples[0].error, 0.0);
  rep = track_error({{1.5, Vec3(1, 0, 0)}, {1.5001, Vec3(1, 0, 0)}}, truth);
  EXPECT_TRUE(rep.samples[0].matched);
  EXPECT_FALSE(rep.samples[1].matched);
  EXPECT_EQ(testing::error_code_of([&] { track_error({{3.0, Vec3::Zero()}}, truth); }), Errc::kNoMatchedSamples);
  EXPECT_EQ(testing::error_code_of([&] { track_error({{1.0, Vec3::Zero()}, {1.0, Vec3::Zero()}}, truth); }), Errc::kInvalidArgument);
}

TEST(TrackErrorProperty, MatchesBruteForceNearest) {
  Rng rng(41);
  for (int t = 0; t < 100; ++t) {
    TargetTrack truth, est;
    double ts = 0.0;
    for (int i = 0; i < 30; ++i) truth.push_back({ts += rng.uniform(0.05, 1.5), Vec3(rng.normal(), rng.normal(), 0)});
    ts = 0.0;
    for (int i = 0; i < 30; ++i) est.push_back({ts += rng.uniform(0.05, 1.5), Vec3(rng.normal(), rng.normal(), 0)});
    TrackErrorReport rep;
    try {
      rep = track_error(est, truth);
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), Errc::kNoMatchedSamples);
      continue;
    }
    for (std::size_t i = 0; i < est.size(); ++i) {
      const TrackSample* best = nullptr;
      for (const auto& s : truth) {
        const double g = std::abs(s.timestamp - est[i].timestamp);
        if (g <= kTrackMatchWindow && (!best || g < std::abs(best->timestamp - est[i].timestamp))) best = &s;
      }
      ASSERT_EQ(rep.samples[i].matched, best != nullptr);
      if (best) ASSERT_DOUBLE_EQ(rep.samples[i].error, (est[i].position - best->position).norm());
    }
  }
}

TEST(TrackIo, RoundTripsAndReportsLines) {
  const auto dir = std::filesystem::temp_directory_path() / "uavloc_track";
  std::filesystem::create_directories(dir);
  const std::vector<ObservationRecord> obs{{0.1, Vec2(10.5, 20.25), ""}, {0.2, Vec2(1.0 / 3.0, 2), "frame_7"}};
  write_observations(dir / "obs.txt", obs);
  const auto back = read_observations(dir / "obs.txt");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].pixel, obs[1].pixel);
  EXPECT_EQ(back[1].frame, "frame_7");
  EXPECT_TRUE(back[0].frame.empty());
  {
    std::ofstream os(dir / "bad.txt");
    os << "0.1 1 2\n0.2 x 2\n";
  }
  try {
    read_observations(dir / "bad.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kParseError);
    EXPECT_NE(std::string(e.what()).find("bad.txt:2"), std::string::npos);
  }
  const TargetTrack track{{0.5, Vec3(1.0 / 7.0, -2, 3e5)}, {1.25, Vec3(0, 0, 0)}};
  write_track_csv(dir / "t.csv", track);
  const auto t2 = read_track_csv(dir / "t.csv");
  ASSERT_EQ(t2.size(), 2u);
  EXPECT_EQ(t2[0].position, track[0].position);
  EXPECT_EQ(t2[1].timestamp, 1.25);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace uavloc
