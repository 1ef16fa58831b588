#include <gtest/gtest.h>

#include "test_support.hpp"
#include "uavloc/pose.hpp"

namespace uavloc {
namespace {

const Intrinsics kK = Intrinsics::centered(640, 480, 500.0);

Pose random_camera(Rng& rng) {
  const Vec3 c(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(80, 200));
  return Pose::from_center(look_rotation(rng.uniform(0, 360), rng.uniform(30, 90)) *
                               testing::axis_angle(testing::random_unit(rng), rng.uniform(0, 5)),
                           c);
}

// Points seen by the camera at random pixels and depths.
std::vector<Correspondence2D3D> visible_points(const Pose& pose, Rng& rng, int n, double noise_px = 0.0) {
  std::vector<Correspondence2D3D> out;
  for (int i = 0; i < n; ++i) {
    const Vec2 px(rng.uniform(20, 620), rng.uniform(20, 460));
    Correspondence2D3D c;
    c.world_point = unproject(pose, kK, px, rng.uniform(50, 250));
    c.query_pixel = px + noise_px * Vec2(rng.normal(), rng.normal());
    out.push_back(c);
  }
  return out;
}

double rot_err(const Pose& a, const Pose& b) { return rotation_angle_between_deg(a.rotation, b.rotation); }
double center_err(const Pose& a, const Pose& b) { return (a.center() - b.center()).norm(); }

TEST(RealRoots, KnownQuartic) {
  // (x - 1)(x + 2)(x - 3)(x^2 + 1) has real roots -2, 1, 3.
  detail::Poly p{1.0};
  for (const auto& f : {detail::Poly{-1, 1}, detail::Poly{2, 1}, detail::Poly{-3, 1}, detail::Poly{1, 0, 1}}) {
    p = detail::poly_mul(p, f);
  }
  auto r = detail::real_roots(p);
  std::sort(r.begin(), r.end());
  ASSERT_EQ(r.size(), 3u);
  EXPECT_NEAR(r[0], -2.0, 1e-10);
  EXPECT_NEAR(r[1], 1.0, 1e-10);
  EXPECT_NEAR(r[2], 3.0, 1e-10);
  EXPECT_TRUE(detail::real_roots({1.0, 0.0, 1.0}).empty());
}

TEST(P3P, RecoversPoseWithFourthPointDisambiguation) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const Pose gt = random_camera(rng);
    const auto corrs = visible_points(gt, rng, 4);
    std::vector<Pose> cands;
    try {
      cands = pnp_minimal(corrs, kK);
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), Errc::kDegenerateConfiguration);
      continue;
    }
    ASSERT_FALSE(cands.empty());
    ASSERT_LE(cands.size(), 4u);
    EXPECT_LT(rot_err(cands.front(), gt), 1e-6) << "trial " << t;
    EXPECT_LT(center_err(cands.front(), gt), 1e-5) << "trial " << t;
  }
}

TEST(P3P, ThreePointsContainTruth) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const Pose gt = random_camera(rng);
    const auto corrs = visible_points(gt, rng, 3);
    const auto cands = pnp_minimal(corrs, kK);
    double best = 1e9;
    for (const auto& c : cands) {
      best = std::min(best, rot_err(c, gt) + center_err(c, gt));
      for (const auto& x : corrs) EXPECT_LT(detail::reprojection_error(c, kK, x), 1e-6);
    }
    EXPECT_LT(best, 1e-5);
  }
}

TEST(P3P, CollinearIsDegenerate) {
  std::vector<Correspondence2D3D> c(3);
  for (int i = 0; i < 3; ++i) {
    c[i].world_point = Vec3(i * 10.0, i * 5.0, 0.0);
    c[i].query_pixel = Vec2(100.0 + i, 100.0 + 2 * i);
  }
  try {
    pnp_minimal(c, kK);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kDegenerateConfiguration);
  }
  EXPECT_THROW(pnp_minimal(std::vector<Correspondence2D3D>(5), kK), Error);
}

TEST(GravityDeviation, Examples) {
  const Mat3 R = look_rotation(30.0, 45.0);
  EXPECT_NEAR(gravity_deviation(R, R), 0.0, 1e-6);
  // A yaw change leaves gravity in the camera frame unchanged for a level roll.
  EXPECT_NEAR(gravity_deviation(look_rotation(10.0, 45.0), look_rotation(200.0, 45.0)), 0.0, 1e-6);
  EXPECT_NEAR(gravity_deviation(look_rotation(10.0, 45.0), look_rotation(10.0, 55.0)), 10.0, 1e-9);
  // Rolling about the optical axis moves gravity by the full roll only when
  // gravity is perpendicular to that axis; looking straight down it stays put.
  const Mat3 roll = testing::axis_angle(Vec3::UnitZ(), 7.0);
  const Mat3 level = look_rotation(30.0, 0.0), nadir = look_rotation(30.0, 90.0);
  EXPECT_NEAR(gravity_deviation(level, roll * level), 7.0, 1e-9);
  EXPECT_NEAR(gravity_deviation(nadir, roll * nadir), 0.0, 1e-6);
  const double s45 = std::sqrt(0.5);
  EXPECT_NEAR(gravity_deviation(R, roll * R), rad2deg(std::acos(s45 * s45 + s45 * s45 * std::cos(deg2rad(7.0)))), 1e-9);
}

TEST(Refine, JacobianMatchesFiniteDifferences) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const Pose gt = random_camera(rng);
    const auto corrs = visible_points(gt, rng, 12, 1.0);
    const Pose p = perturb_pose(gt, (Eigen::Matrix<double, 6, 1>() << 0.01, -0.02, 0.01, 1, -2, 0.5).finished());
    const Eigen::MatrixXd J = reprojection_jacobian(p, corrs, kK);
    const double h = 1e-6;
    for (int k = 0; k < 6; ++k) {
      Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();
      d[k] = h;
      const Eigen::VectorXd num =
          (reprojection_residuals(perturb_pose(p, d), corrs, kK) - reprojection_residuals(perturb_pose(p, -d), corrs, kK)) /
          (2 * h);
      EXPECT_LT((num - J.col(k)).norm(), 1e-4 * std::max(1.0, num.norm())) << "column " << k;
    }
  }
}

TEST(Refine, ConvergesFromPerturbedPose) {
  Rng rng(9);
  const Pose gt = random_camera(rng);
  const auto corrs = visible_points(gt, rng, 50);
  const Pose start = perturb_pose(gt, (Eigen::Matrix<double, 6, 1>() << 0.03, 0.02, -0.02, 3, -2, 4).finished());
  const auto r = refine_pose(start, corrs, kK);
  EXPECT_FALSE(r.degraded);
  EXPECT_LT(r.final_rms, 1e-6);
  EXPECT_LT(rot_err(r.pose, gt), 1e-6);
  EXPECT_LT(center_err(r.pose, gt), 1e-5);
}

TEST(Refine, RequiresFourAndFlagsSingular) {
  Rng rng(2);
  const Pose gt = random_camera(rng);
  EXPECT_THROW(refine_pose(gt, visible_points(gt, rng, 3), kK), Error);
  // Every correspondence the same: the normal equations are rank deficient.
  auto same = visible_points(gt, rng, 1, 0.0);
  same = {same[0], same[0], same[0], same[0]};
  same[0].query_pixel += Vec2(3, 0);
  const auto r = refine_pose(gt, same, kK);
  EXPECT_LE(r.final_rms, r.initial_rms);
}

TEST(RefineProperty, NeverIncreasesRms) {
  Rng rng(10);
  for (int t = 0; t < 50; ++t) {
    const Pose gt = random_camera(rng);
    auto corrs = visible_points(gt, rng, 4 + static_cast<int>(rng.index(40)), 2.0);
    // Some gross outliers so that the cost surface is awkward.
    for (std::size_t i = 0; i < corrs.size() / 5; ++i) corrs[i].query_pixel = Vec2(rng.uniform(0, 640), rng.uniform(0, 480));
    const Pose start = perturb_pose(gt, (Eigen::Matrix<double, 6, 1>() << rng.normal() * 0.05, rng.normal() * 0.05,
                                         rng.normal() * 0.05, rng.normal() * 5, rng.normal() * 5, rng.normal() * 5)
                                            .finished());
    const auto r = refine_pose(start, corrs, kK);
    EXPECT_LE(r.final_rms, r.initial_rms + 1e-12);
    EXPECT_NEAR(r.initial_rms, rms_reprojection_error(start, corrs, kK), 1e-9);
  }
}

struct Problem {
  Pose gt;
  std::vector<Correspondence2D3D> corrs;
};

Problem outlier_problem(std::uint64_t seed, int n, double outlier_ratio, double noise_px) {
  Rng rng(seed);
  Problem p;
  p.gt = random_camera(rng);
  p.corrs = visible_points(p.gt, rng, n, noise_px);
  const int bad = static_cast<int>(outlier_ratio * n);
  for (int i = 0; i < bad; ++i) p.corrs[static_cast<std::size_t>(i)].query_pixel = Vec2(rng.uniform(0, 640), rng.uniform(0, 480));
  return p;
}

TEST(Ransac, RecoversPoseWithHalfOutliers) {
  for (std::uint64_t s = 1; s <= 10; ++s) {
    const auto p = outlier_problem(s, 200, 0.5, 0.5);
    RansacConfig cfg;
    cfg.seed = s;
    const auto est = ransac_pnp(p.corrs, kK, std::nullopt, cfg);
    EXPECT_LT(rot_err(est.pose, p.gt), 0.2);
    EXPECT_LT(center_err(est.pose, p.gt), 0.5);
    EXPECT_GE(est.inliers.size(), 95u);
    EXPECT_FALSE(est.early_stopped_by_gravity);
    EXPECT_EQ(est.gravity_deviation, 0.0);
  }
}

TEST(Ransac, ErrorsOnTooFewAndNoModel) {
  Rng rng(1);
  const Pose gt = random_camera(rng);
  try {
    ransac_pnp(visible_points(gt, rng, 3), kK, std::nullopt, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kTooFewCorrespondences);
  }
  // Pure noise: no hypothesis explains 4 points within a tiny threshold.
  std::vector<Correspondence2D3D> noise;
  for (int i = 0; i < 30; ++i) {
    Correspondence2D3D c;
    c.world_point = Vec3(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(0, 50));
    c.query_pixel = Vec2(rng.uniform(0, 640), rng.uniform(0, 480));
    noise.push_back(c);
  }
  RansacConfig cfg;
  cfg.reproj_thresh = 1e-4;
  cfg.max_iters = 200;
  try {
    ransac_pnp(noise, kK, std::nullopt, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kNoModelFound);
  }
  cfg.confidence = 1.0;
  EXPECT_THROW(ransac_pnp(noise, kK, std::nullopt, cfg), Error);
}

TEST(Ransac, ExactPriorStopsEarly) {
  const auto p = outlier_problem(21, 300, 0.3, 0.5);
  RansacConfig cfg;
  cfg.confidence = 0.999999;
  const SensorPrior prior{p.gt.rotation, std::nullopt};
  const auto with = ransac_pnp(p.corrs, kK, prior, cfg);
  const auto without = ransac_pnp(p.corrs, kK, std::nullopt, cfg);
  EXPECT_TRUE(with.early_stopped_by_gravity);
  EXPECT_LE(with.iterations_run, without.iterations_run);
  EXPECT_LT(with.gravity_deviation, cfg.gamma_eps_deg);
  EXPECT_LT(rot_err(with.pose, p.gt), 0.2);
}

TEST(Ransac, WrongPriorNeverStopsEarly) {
  const auto p = outlier_problem(22, 200, 0.3, 0.5);
  const SensorPrior prior{testing::axis_angle(Vec3::UnitX(), 20.0) * p.gt.rotation, std::nullopt};
  const auto est = ransac_pnp(p.corrs, kK, prior, {});
  EXPECT_FALSE(est.early_stopped_by_gravity);
  EXPECT_NEAR(est.gravity_deviation, 20.0, 0.5);
  RansacConfig reject;
  reject.reject_gravity_deg = 5.0;
  // Every hypothesis near the truth is now discarded; whatever survives
  // explains far fewer points.
  try {
    const auto r = ransac_pnp(p.corrs, kK, prior, reject);
    EXPECT_LT(r.inliers.size(), est.inliers.size() / 4);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kNoModelFound);
  }
}

TEST(RansacProperty, DeterministicForSeed) {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto p = outlier_problem(100 + s, 120, 0.6, 1.0);
    RansacConfig cfg;
    cfg.seed = 77 + s;
    const auto a = ransac_pnp(p.corrs, kK, std::nullopt, cfg);
    const auto b = ransac_pnp(p.corrs, kK, std::nullopt, cfg);
    EXPECT_EQ(a.pose.rotation, b.pose.rotation);
    EXPECT_EQ(a.pose.translation, b.pose.translation);
    EXPECT_EQ(a.inliers, b.inliers);
    EXPECT_EQ(a.iterations_run, b.iterations_run);
  }
}

TEST(RansacProperty, EarlyStopImpliesGravityAndRatio) {
  Rng rng(31);
  for (int t = 0; t < 30; ++t) {
    const auto p = outlier_problem(200 + t, 100, rng.uniform(0, 0.7), 0.7);
    const SensorPrior prior{testing::axis_angle(testing::random_unit(rng), rng.uniform(0, 4)) * p.gt.rotation,
                            std::nullopt};
    RansacConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(t);
    const auto est = ransac_pnp(p.corrs, kK, prior, cfg);
    EXPECT_LE(est.iterations_run, cfg.max_iters);
    EXPECT_GE(est.inliers.size(), 4u);
    for (std::size_t i : est.inliers) EXPECT_LT(detail::reprojection_error(est.pose, kK, p.corrs[i]), cfg.reproj_thresh);
    if (est.early_stopped_by_gravity) {
      // The stopping hypothesis met both conditions; refinement may move the
      // final pose slightly.
      EXPECT_LT(est.gravity_deviation, cfg.gamma_eps_deg + 0.5);
    }
  }
}

TEST(AdaptiveIterations, Formula) {
  EXPECT_EQ(detail::adaptive_iterations(1.0, 0.99, 1000), 1);
  EXPECT_EQ(detail::adaptive_iterations(0.0, 0.99, 1000), 1000);
  // log(0.01) / log(1 - 0.5^4) = 71.35
  EXPECT_EQ(detail::adaptive_iterations(0.5, 0.99, 1000), 72);
  EXPECT_EQ(detail::adaptive_iterations(0.1, 0.99, 1000), 1000);
}

}  // namespace
}  // namespace uavloc
