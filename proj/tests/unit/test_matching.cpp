#include <gtest/gtest.h>

#include <bitset>
#include <set>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"
#include "uavloc/matching.hpp"

namespace uavloc {
namespace {

GrayImage checkerboard(int w, int h, int square, int x0, int y0) {
  GrayImage img(w, h, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int cx = (x - x0 + 10 * square) / square, cy = (y - y0 + 10 * square) / square;
      img(x, y) = ((cx + cy) % 2) ? 220 : 30;
    }
  return img;
}

class SceneViews : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { scene_ = new Heightfield(generate_scene(testing::small_city(21))); }
  static void TearDownTestSuite() {
    delete scene_;
    scene_ = nullptr;
  }
  static RenderedView view(const Vec3& c, double heading, double off_nadir) {
    return render_view(*scene_, Pose::from_center(look_rotation(heading, 90.0 - off_nadir), c),
                       Intrinsics::centered(320, 240, 260.0));
  }
  static Heightfield* scene_;
};
Heightfield* SceneViews::scene_ = nullptr;

TEST(Hamming, MatchesBitsetCount) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    BinaryDescriptor a, b;
    int expect = 0;
    for (int w = 0; w < 4; ++w) {
      a[w] = rng.next();
      b[w] = rng.next();
      expect += static_cast<int>(std::bitset<64>(a[w] ^ b[w]).count());
    }
    ASSERT_EQ(hamming(a, b), expect);
  }
}

TEST(Detector, ConstantImageHasNoKeypoints) {
  EXPECT_TRUE(detect_and_describe(GrayImage(128, 96, 77), 500).empty());
}

TEST(Detector, TooSmallImageRejected) {
  try {
    detect_and_describe(GrayImage(20, 100, 0), 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kImageTooSmall);
  }
}

TEST(Detector, CheckerboardCornersAtAnalyticLocations) {
  // Intensity changes between pixel x0 - 1 and x0, so corners sit at
  // x0 - 0.5 + k * square.
  const int square = 16, x0 = 37, y0 = 29;
  DetectorOptions opt;
  opt.levels = 1;
  opt.max_keypoints = 500;
  const auto kps = detect_and_describe(checkerboard(240, 200, square, x0, y0), opt);
  ASSERT_GT(kps.size(), 40u);
  for (const auto& k : kps) {
    const double gx = x0 - 0.5 + std::round((k.position.x() - (x0 - 0.5)) / square) * square;
    const double gy = y0 - 0.5 + std::round((k.position.y() - (y0 - 0.5)) / square) * square;
    EXPECT_LT((k.position - Vec2(gx, gy)).norm(), 1.0) << k.position.transpose();
  }
}

TEST(Detector, PyramidKeypointsMapToFullResolution) {
  const int square = 24, x0 = 41, y0 = 33;
  const auto kps = detect_and_describe(checkerboard(320, 240, square, x0, y0), 800);
  int upper = 0;
  for (const auto& k : kps) {
    if (k.level == 0) continue;
    ++upper;
    const double gx = x0 - 0.5 + std::round((k.position.x() - (x0 - 0.5)) / square) * square;
    const double gy = y0 - 0.5 + std::round((k.position.y() - (y0 - 0.5)) / square) * square;
    EXPECT_LT((k.position - Vec2(gx, gy)).norm(), 2.0) << "level " << k.level;
  }
  EXPECT_GT(upper, 0);
}

TEST_F(SceneViews, DeterministicAndCapped) {
  const auto v = view(Vec3(0, 0, 120), 20, 45);
  const auto a = detect_and_describe(v.rgb, 300);
  const auto b = detect_and_describe(v.rgb, 300);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_LE(a.size(), 300u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].position, b[i].position);
    EXPECT_EQ(a[i].descriptor, b[i].descriptor);
  }
}

TEST_F(SceneViews, SelfMatchIsIdentity) {
  const auto kps = detect_and_describe(view(Vec3(15, -10, 110), 100, 30).rgb, 800);
  const auto m = match_features(kps, kps, kDefaultBinaryRatio, "self");
  // Duplicate descriptors would be ambiguous; every unique one matches itself.
  std::size_t unique = 0;
  for (std::size_t i = 0; i < kps.size(); ++i) {
    bool dup = false;
    for (std::size_t j = 0; j < kps.size() && !dup; ++j) dup = j != i && kps[j].descriptor == kps[i].descriptor;
    unique += dup ? 0 : 1;
  }
  EXPECT_GE(m.size(), unique);
  for (const auto& x : m) {
    EXPECT_EQ(x.query_pixel, x.ref_pixel);
    EXPECT_EQ(x.score, 1.0);
    EXPECT_EQ(x.ref_name, "self");
  }
}

TEST(Matching, SingleCandidatesPassVacuousRatio) {
  Keypoint a, b;
  a.descriptor = {~0ULL, ~0ULL, 0, 0};
  b.descriptor = {0, 0, 0, 0};
  const auto m = match_features({a}, {b}, 0.9);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_DOUBLE_EQ(m[0].score, 0.5);
}

TEST(MatchingProperty, SymmetricUnderSwap) {
  Rng rng(6);
  for (int t = 0; t < 30; ++t) {
    std::vector<Keypoint> q(40 + rng.index(40)), r(40 + rng.index(40));
    for (auto* set : {&q, &r}) {
      for (auto& k : *set) {
        k.position = Vec2(rng.uniform(0, 300), rng.uniform(0, 200));
        for (auto& w : k.descriptor) w = rng.next();
      }
    }
    // Plant some near-copies so matches exist.
    for (std::size_t i = 0; i < 15; ++i) {
      r[i].descriptor = q[i].descriptor;
      r[i].descriptor[0] ^= 1ULL << rng.index(64);
    }
    const auto ab = match_features(q, r);
    const auto ba = match_features(r, q);
    ASSERT_EQ(ab.size(), ba.size());
    std::set<std::tuple<double, double, double, double>> sa, sb;
    for (const auto& m : ab) sa.insert({m.query_pixel.x(), m.query_pixel.y(), m.ref_pixel.x(), m.ref_pixel.y()});
    for (const auto& m : ba) sb.insert({m.ref_pixel.x(), m.ref_pixel.y(), m.query_pixel.x(), m.query_pixel.y()});
    ASSERT_EQ(sa, sb);
    ASSERT_GE(ab.size(), 10u);
  }
}

TEST_F(SceneViews, ShiftedRenderMatchesGroundTruthFlow) {
  const auto q = view(Vec3(10, 5, 120), 45, 40);
  const auto r = view(Vec3(13, 9, 120), 45, 40);  // 5 m away
  const auto m = match_features(detect_and_describe(q.rgb, 2048), detect_and_describe(r.rgb, 2048));
  ASSERT_GE(m.size(), 50u);
  int good = 0, checked = 0;
  for (const auto& x : m) {
    const double d = sample_depth(q.depth, x.query_pixel.x(), x.query_pixel.y());
    if (!(d > 0.0)) continue;
    ++checked;
    const Vec3 X = unproject(q.pose, q.intrinsics, x.query_pixel, d);
    const auto p = try_project(r.pose, r.intrinsics, X);
    if (p && (p->pixel - x.ref_pixel).norm() <= 3.0) ++good;
  }
  EXPECT_GE(good, 0.8 * checked) << good << "/" << checked;
}

TEST(Lift, PrincipalPixelNadir) {
  const auto h = testing::flat_field(200, 1.0);
  const auto K = Intrinsics::centered(101, 81, 80.0);
  const auto ref = render_view(h, Pose::from_center(look_rotation(0.0, 90.0), Vec3(0, 0, 100)), K);
  std::unordered_map<std::string, const RenderedView*> refs{{"r", &ref}};
  const auto c = lift_matches(std::vector<Match>{{Vec2(3, 4), Vec2(K.cx, K.cy), "r", 1.0}}, refs);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_LT(c[0].world_point.norm(), 1e-3);
  EXPECT_EQ(c[0].query_pixel, Vec2(3, 4));
}

TEST(Lift, SkyPixelsDroppedUnknownRefRejected) {
  const auto h = testing::flat_field(200, 1.0);
  const auto K = Intrinsics::centered(64, 48, 50.0);
  const auto ref = render_view(h, Pose::from_center(look_rotation(0.0, 0.0), Vec3(0, 0, 30)), K);
  std::unordered_map<std::string, const RenderedView*> refs{{"r", &ref}};
  // Top row of a level camera sees sky.
  ASSERT_EQ(ref.depth(10, 0), 0.0f);
  EXPECT_TRUE(lift_matches(std::vector<Match>{{Vec2(1, 1), Vec2(10, 0), "r", 1.0}}, refs).empty());
  try {
    lift_matches(std::vector<Match>{{Vec2(1, 1), Vec2(10, 40), "missing", 1.0}}, refs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kUnknownReference);
  }
}

TEST_F(SceneViews, LiftedPointsLieOnSurfaceAndReproject) {
  const auto ref = view(Vec3(-20, 30, 150), 200, 45);
  std::unordered_map<std::string, const RenderedView*> refs{{"ref", &ref}};
  Rng rng(4);
  std::vector<Match> matches;
  for (int i = 0; i < 100; ++i) {
    // Pixel centers so that no interpolation straddles a depth edge.
    const Vec2 px(std::floor(rng.uniform(0, 319)), std::floor(rng.uniform(100, 239)));  // the top rows reach past the scene edge
    matches.push_back({Vec2(0, 0), px, "ref", 1.0});
  }
  std::size_t lifted = 0;
  for (const auto& m : matches) {
    const auto c = lift_matches(std::vector<Match>{m}, refs);
    if (c.empty()) continue;
    ++lifted;
    const Vec3& X = c[0].world_point;
    EXPECT_LT(std::abs(X.z() - scene_->height_clamped(X.x(), X.y())), 2.0 * scene_->cell());
    EXPECT_LT((project(ref.pose, ref.intrinsics, X).pixel - m.ref_pixel).norm(), 0.5);
  }
  EXPECT_GT(lifted, 80u);
}

TEST(ExternalMatches, ParseAndErrors) {
  const auto dir = std::filesystem::temp_directory_path() / "uavloc_matches";
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "ok.txt");
    os << "# comment\n1 2 3 4 refA 0.9\n5 6 7 8 refB 0.5\n\n9.5 10 11 12 refA 1\n";
  }
  const auto m = load_external_matches(dir / "ok.txt");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[1].ref_name, "refB");
  EXPECT_EQ(m[2].query_pixel, Vec2(9.5, 10));
  {
    std::ofstream os(dir / "neg.txt");
    os << "1 2 3 4 refA 0.9\n1 -2 3 4 refA 0.9\n";
  }
  try {
    load_external_matches(dir / "neg.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kParseError);
    EXPECT_NE(std::string(e.what()).find("neg.txt:2"), std::string::npos);
  }
  MatchFileBounds b;
  b.query_size = {8, 8};
  EXPECT_THROW(load_external_matches(dir / "ok.txt", b), Error);
  std::filesystem::remove_all(dir);
}

TEST(ExternalMatchesProperty, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "uavloc_matches_rt";
  Rng rng(12);
  std::vector<Match> m(1000);
  for (auto& x : m) {
    x.query_pixel = Vec2(rng.uniform(0, 4000), rng.uniform(0, 3000));
    x.ref_pixel = Vec2(rng.uniform(0, 4000), rng.uniform(0, 3000));
    x.ref_name = "ref" + std::to_string(rng.index(50));
    x.score = rng.uniform();
  }
  write_matches(dir / "m.txt", m);
  const auto r = load_external_matches(dir / "m.txt");
  ASSERT_EQ(r.size(), m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    ASSERT_EQ(r[i].query_pixel, m[i].query_pixel);
    ASSERT_EQ(r[i].ref_pixel, m[i].ref_pixel);
    ASSERT_EQ(r[i].ref_name, m[i].ref_name);
    ASSERT_EQ(r[i].score, m[i].score);
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace uavloc
