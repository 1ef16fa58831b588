#pragma once

// Camera pose from 2D-3D correspondences: a P3P minimal solver, RANSAC with an
// optional gravity-based early stop, and Levenberg-Marquardt refinement.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <complex>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "uavloc/error.hpp"
#include "uavloc/geom.hpp"
#include "uavloc/matching.hpp"
#include "uavloc/rng.hpp"

namespace uavloc {

namespace detail {

/// Polynomials as coefficient vectors, lowest degree first.
using Poly = std::vector<double>;

inline Poly poly_mul(const Poly& a, const Poly& b) {
  Poly r(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  return r;
}

inline Poly poly_add(const Poly& a, const Poly& b, double sb = 1.0) {
  Poly r(std::max(a.size(), b.size()), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) r[i] += a[i];
  for (std::size_t i = 0; i < b.size(); ++i) r[i] += sb * b[i];
  return r;
}

inline Poly poly_scale(Poly a, double s) {
  for (double& c : a) c *= s;
  return a;
}

inline double poly_eval(const Poly& p, double x) {
  double r = 0.0;
  for (std::size_t i = p.size(); i-- > 0;) r = r * x + p[i];
  return r;
}

inline double poly_deriv_eval(const Poly& p, double x) {
  double r = 0.0;
  for (std::size_t i = p.size(); i-- > 1;) r = r * x + static_cast<double>(i) * p[i];
  return r;
}

/// Real roots via companion-matrix eigenvalues, each polished by Newton steps.
inline std::vector<double> real_roots(Poly p) {
  double scale = 0.0;
  for (double c : p) scale = std::max(scale, std::abs(c));
  if (scale == 0.0) return {};
  while (p.size() > 1 && std::abs(p.back()) <= 1e-13 * scale) p.pop_back();
  const int deg = static_cast<int>(p.size()) - 1;
  std::vector<double> roots;
  if (deg < 1) return roots;
  if (deg == 1) {
    roots.push_back(-p[0] / p[1]);
    return roots;
  }
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(deg, deg);
  for (int i = 1; i < deg; ++i) C(i, i - 1) = 1.0;
  for (int i = 0; i < deg; ++i) C(i, deg - 1) = -p[static_cast<std::size_t>(i)] / p.back();
  Eigen::EigenSolver<Eigen::MatrixXd> es(C, false);
  for (int i = 0; i < deg; ++i) {
    const std::complex<double> z = es.eigenvalues()[i];
    if (std::abs(z.imag()) > 1e-5 * std::max(1.0, std::abs(z))) continue;
    double x = z.real();
    for (int k = 0; k < 8; ++k) {
      const double d = poly_deriv_eval(p, x);
      if (d == 0.0) break;
      const double step = poly_eval(p, x) / d;
      x -= step;
      if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(x))) break;
    }
    roots.push_back(x);
  }
  return roots;
}

/// Rigid transform with cam = R * world + t from paired points (Kabsch).
inline Pose absolute_orientation(const std::vector<Vec3>& world, const std::vector<Vec3>& cam) {
  Vec3 cw = Vec3::Zero(), cc = Vec3::Zero();
  for (std::size_t i = 0; i < world.size(); ++i) {
    cw += world[i];
    cc += cam[i];
  }
  cw /= static_cast<double>(world.size());
  cc /= static_cast<double>(cam.size());
  Mat3 H = Mat3::Zero();
  for (std::size_t i = 0; i < world.size(); ++i) H += (world[i] - cw) * (cam[i] - cc).transpose();
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 R = svd.matrixV() * D * svd.matrixU().transpose();
  return Pose(R, cc - R * cw);
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

inline Mat3 exp_so3(const Vec3& w) {
  const double angle = w.norm();
  if (angle < 1e-300) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

inline double reprojection_error(const Pose& pose, const Intrinsics& K, const Correspondence2D3D& c) {
  const Vec3 p = pose.transform(c.world_point);
  if (!(p.z() > kMinProjectionDepth)) return std::numeric_limits<double>::infinity();
  const Vec2 px(K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy);
  return (px - c.query_pixel).norm();
}

}  // namespace detail

/// True when the three points are collinear within a relative cross-product
/// tolerance.
inline bool points_collinear(const Vec3& a, const Vec3& b, const Vec3& c, double tol = 1e-9) {
  const Vec3 u = b - a, v = c - a;
  return u.cross(v).norm() <= tol * u.norm() * v.norm();
}

/// P3P on the first three correspondences. With a fourth, the candidates are
/// sorted by its reprojection error (ascending); otherwise by order found.
inline std::vector<Pose> pnp_minimal(const std::vector<Correspondence2D3D>& corrs, const Intrinsics& K) {
  if (corrs.size() != 3 && corrs.size() != 4) {
    throw Error(Errc::kInvalidArgument, "minimal solver takes 3 or 4 correspondences");
  }
  const Vec3& X1 = corrs[0].world_point;
  const Vec3& X2 = corrs[1].world_point;
  const Vec3& X3 = corrs[2].world_point;
  if (points_collinear(X1, X2, X3)) throw Error(Errc::kDegenerateConfiguration, "minimal world points are collinear");

  const Vec3 f1 = K.ray(corrs[0].query_pixel).normalized();
  const Vec3 f2 = K.ray(corrs[1].query_pixel).normalized();
  const Vec3 f3 = K.ray(corrs[2].query_pixel).normalized();
  const double ca = f2.dot(f3), cb = f1.dot(f3), cg = f1.dot(f2);
  const double a2 = (X2 - X3).squaredNorm(), b2 = (X1 - X3).squaredNorm(), c2 = (X1 - X2).squaredNorm();

  // With u = s2/s1, v = s3/s1 and D(v) = 1 + v^2 - 2 v cos(beta), the law of
  // cosines gives two quadratics in u; their difference is linear in u, which
  // substituted back leaves a quartic in v.
  using detail::Poly;
  const Poly D{1.0, -2.0 * cb, 1.0};
  const Poly N = detail::poly_add(detail::poly_add(Poly{-b2, 0.0, b2}, detail::poly_scale(D, c2)),
                                  detail::poly_scale(D, a2), -1.0);
  const Poly M{-2.0 * b2 * cg, 2.0 * b2 * ca};
  Poly quartic = detail::poly_scale(detail::poly_mul(N, N), b2);
  quartic = detail::poly_add(quartic, detail::poly_mul(detail::poly_mul(N, M), Poly{-2.0 * b2 * cg}));
  quartic = detail::poly_add(quartic,
                             detail::poly_mul(detail::poly_mul(M, M), detail::poly_add(Poly{b2}, detail::poly_scale(D, c2), -1.0)));

  const std::vector<Vec3> world{X1, X2, X3};
  std::vector<Pose> candidates;
  for (double v : detail::real_roots(quartic)) {
    if (!(v > 0.0)) continue;
    const double m = detail::poly_eval(M, v);
    if (std::abs(m) < 1e-14 * std::max(1.0, b2)) continue;
    const double u = detail::poly_eval(N, v) / m;
    const double d = detail::poly_eval(D, v);
    if (!(u > 0.0) || !(d > 0.0)) continue;
    Vec3 s;
    s[0] = std::sqrt(b2 / d);
    s[1] = u * s[0];
    s[2] = v * s[0];
    // Newton polish of the three distances on the law-of-cosines system.
    auto residual = [&](const Vec3& q) {
      return Vec3(q[1] * q[1] + q[2] * q[2] - 2 * q[1] * q[2] * ca - a2,
                  q[0] * q[0] + q[2] * q[2] - 2 * q[0] * q[2] * cb - b2,
                  q[0] * q[0] + q[1] * q[1] - 2 * q[0] * q[1] * cg - c2);
    };
    for (int it = 0; it < 3; ++it) {
      Mat3 J;
      J << 0.0, 2 * s[1] - 2 * s[2] * ca, 2 * s[2] - 2 * s[1] * ca,
          2 * s[0] - 2 * s[2] * cb, 0.0, 2 * s[2] - 2 * s[0] * cb,
          2 * s[0] - 2 * s[1] * cg, 2 * s[1] - 2 * s[0] * cg, 0.0;
      const Vec3 step = J.fullPivLu().solve(residual(s));
      if (!step.allFinite()) break;
      s -= step;
    }
    const double scale = std::max({a2, b2, c2});
    if (!(residual(s).cwiseAbs().maxCoeff() <= 1e-6 * scale) || !(s.minCoeff() > 0.0)) continue;
    const Pose pose = detail::absolute_orientation(world, {s[0] * f1, s[1] * f2, s[2] * f3});
    bool duplicate = false;
    for (const auto& c : candidates) {
      if ((c.rotation - pose.rotation).norm() < 1e-9 && (c.translation - pose.translation).norm() < 1e-9 * (1.0 + pose.translation.norm())) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) candidates.push_back(pose);
  }
  if (candidates.empty()) throw Error(Errc::kNoRealSolution, "P3P has no real solution");

  if (corrs.size() == 4) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      order.emplace_back(detail::reprojection_error(candidates[i], K, corrs[3]), i);
    }
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Pose> sorted;
    for (const auto& o : order) sorted.push_back(candidates[o.second]);
    candidates = std::move(sorted);
  }
  return candidates;
}

/// Angle in degrees between the camera-frame gravity directions of the prior
/// and the hypothesis (dot product clamped before arccos).
inline double gravity_deviation(const Mat3& prior_rotation, const Mat3& hyp_rotation) {
  const double d = gravity_direction(prior_rotation).dot(gravity_direction(hyp_rotation));
  return rad2deg(std::acos(std::clamp(d, -1.0, 1.0)));
}

inline double gravity_deviation(const SensorPrior& prior, const Pose& hyp) {
  return gravity_deviation(prior.rotation, hyp.rotation);
}

// ---------------------------------------------------------------------------
// Refinement

/// Stacked reprojection residuals (projected - observed), 2 per correspondence.
inline Eigen::VectorXd reprojection_residuals(const Pose& pose, const std::vector<Correspondence2D3D>& corrs,
                                              const Intrinsics& K) {
  Eigen::VectorXd r(2 * static_cast<Eigen::Index>(corrs.size()));
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const Vec3 p = pose.transform(corrs[i].world_point);
    const auto k = static_cast<Eigen::Index>(2 * i);
    r[k] = K.fx * p.x() / p.z() + K.cx - corrs[i].query_pixel.x();
    r[k + 1] = K.fy * p.y() / p.z() + K.cy - corrs[i].query_pixel.y();
  }
  return r;
}

/// Jacobian of reprojection_residuals with respect to the left perturbation
/// (omega, delta): R <- exp(omega) R, t <- t + delta.
inline Eigen::MatrixXd reprojection_jacobian(const Pose& pose, const std::vector<Correspondence2D3D>& corrs,
                                             const Intrinsics& K) {
  Eigen::MatrixXd J(2 * static_cast<Eigen::Index>(corrs.size()), 6);
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const Vec3 rx = pose.rotation * corrs[i].world_point;
    const Vec3 p = rx + pose.translation;
    const double iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> dpi;
    dpi << K.fx * iz, 0.0, -K.fx * p.x() * iz * iz, 0.0, K.fy * iz, -K.fy * p.y() * iz * iz;
    Eigen::Matrix<double, 3, 6> dp;
    dp.leftCols<3>() = -detail::skew(rx);
    dp.rightCols<3>() = Mat3::Identity();
    J.block<2, 6>(static_cast<Eigen::Index>(2 * i), 0) = dpi * dp;
  }
  return J;
}

/// Applies the left perturbation used by reprojection_jacobian.
inline Pose perturb_pose(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  return Pose(detail::exp_so3(delta.head<3>()) * pose.rotation, pose.translation + delta.tail<3>());
}

inline double rms_reprojection_error(const Pose& pose, const std::vector<Correspondence2D3D>& corrs, const Intrinsics& K) {
  if (corrs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : corrs) {
    const double e = detail::reprojection_error(pose, K, c);
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(corrs.size()));
}

struct RefineResult {
  Pose pose;
  bool degraded = false;  ///< normal equations were singular; pose is the input
  int iterations = 0;
  double initial_rms = 0.0;
  double final_rms = 0.0;
};

inline constexpr int kRefineMaxIterations = 100;
inline constexpr double kRefineRelativeTolerance = 1e-10;

/// Levenberg-Marquardt on reprojection error. Only cost-decreasing steps are
/// accepted, so the result never has a higher RMS than the input.
inline RefineResult refine_pose(const Pose& pose, const std::vector<Correspondence2D3D>& inliers, const Intrinsics& K) {
  if (inliers.size() < 4) throw Error(Errc::kTooFewCorrespondences, "refinement needs at least 4 correspondences");
  RefineResult res;
  res.pose = pose;
  res.initial_rms = rms_reprojection_error(pose, inliers, K);
  res.final_rms = res.initial_rms;
  auto cost_of = [&](const Pose& p) {
    double c = 0.0;
    for (const auto& x : inliers) {
      const double e = detail::reprojection_error(p, K, x);
      c += e * e;
    }
    return c;
  };
  double cost = cost_of(pose);
  if (!std::isfinite(cost)) {
    res.degraded = true;
    return res;
  }
  double lambda = 1e-4;
  Pose current = pose;
  for (int it = 0; it < kRefineMaxIterations && cost > 0.0; ++it) {
    res.iterations = it + 1;
    const Eigen::MatrixXd J = reprojection_jacobian(current, inliers, K);
    const Eigen::VectorXd r = reprojection_residuals(current, inliers, K);
    const Eigen::Matrix<double, 6, 6> H = J.transpose() * J;
    const Eigen::Matrix<double, 6, 1> g = J.transpose() * r;
    if (it == 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(H, Eigen::EigenvaluesOnly);
      const auto ev = es.eigenvalues();
      if (!(ev.minCoeff() > 1e-12 * ev.maxCoeff())) {
        res.degraded = true;
        res.pose = pose;
        return res;
      }
    }
    bool accepted = false;
    while (lambda < 1e12) {
      Eigen::Matrix<double, 6, 6> A = H;
      A.diagonal() += lambda * H.diagonal();
      const Eigen::Matrix<double, 6, 1> delta = A.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Pose cand = perturb_pose(current, delta);
      const double c = cost_of(cand);
      if (c < cost) {
        const double rel = (cost - c) / cost;
        current = cand;
        cost = c;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (rel < kRefineRelativeTolerance) lambda = 1e12;  // converged
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted || lambda >= 1e12) break;
  }
  res.pose = current;
  res.final_rms = rms_reprojection_error(current, inliers, K);
  return res;
}

// ---------------------------------------------------------------------------
// RANSAC

struct RansacConfig {
  int max_iters = 2048;
  double reproj_thresh = 5.0;  ///< pixels
  double confidence = 0.999;
  double gamma_eps_deg = 2.0;
  double min_inlier_ratio_for_early_stop = 0.5;
  std::uint64_t seed = 0x5eedULL;
  /// When set (and a prior is given), hypotheses whose gravity deviation
  /// exceeds this many degrees are discarded instead of scored.
  std::optional<double> reject_gravity_deg;
  bool refine = true;
};

inline void validate(const RansacConfig& cfg) {
  if (cfg.max_iters < 1 || !(cfg.reproj_thresh > 0.0) || !(cfg.confidence > 0.0 && cfg.confidence < 1.0) ||
      !(cfg.gamma_eps_deg >= 0.0) || !(cfg.min_inlier_ratio_for_early_stop >= 0.0) ||
      (cfg.reject_gravity_deg && !(*cfg.reject_gravity_deg > 0.0))) {
    throw Error(Errc::kInvalidArgument, "invalid RANSAC configuration");
  }
}

struct PoseEstimate {
  Pose pose;
  std::vector<std::size_t> inliers;
  int iterations_run = 0;
  bool early_stopped_by_gravity = false;
  double gravity_deviation = 0.0;  ///< degrees; 0 without a prior
  bool refinement_degraded = false;
};

namespace detail {

struct Score {
  std::size_t count = 0;
  double mean_error = 0.0;
};

inline Score score_pose(const Pose& pose, const std::vector<Correspondence2D3D>& corrs, const Intrinsics& K,
                        double thresh, std::vector<std::size_t>* inliers = nullptr) {
  Score s;
  double sum = 0.0;
  if (inliers) inliers->clear();
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const double e = reprojection_error(pose, K, corrs[i]);
    if (e < thresh) {
      ++s.count;
      sum += e;
      if (inliers) inliers->push_back(i);
    }
  }
  s.mean_error = s.count ? sum / static_cast<double>(s.count) : 0.0;
  return s;
}

inline int adaptive_iterations(double inlier_ratio, double confidence, int max_iters) {
  if (inlier_ratio >= 1.0) return 1;
  const double w4 = std::pow(inlier_ratio, 4);
  if (w4 <= 0.0) return max_iters;
  const double n = std::log(1.0 - confidence) / std::log1p(-w4);
  if (!std::isfinite(n) || n >= max_iters) return max_iters;
  return std::max(1, static_cast<int>(std::ceil(n)));
}

}  // namespace detail

inline constexpr int kMaxSampleRedraws = 10;

inline PoseEstimate ransac_pnp(const std::vector<Correspondence2D3D>& corrs, const Intrinsics& K,
                               const std::optional<SensorPrior>& prior, const RansacConfig& cfg) {
  validate(cfg);
  require_valid(K);
  const std::size_t n = corrs.size();
  if (n < 4) throw Error(Errc::kTooFewCorrespondences, "PnP RANSAC needs at least 4 correspondences");

  Rng rng(cfg.seed);
  std::optional<Pose> best;
  detail::Score best_score;
  int needed = cfg.max_iters;
  PoseEstimate est;
  std::vector<Correspondence2D3D> sample(4);

  for (int it = 0; it < needed; ++it) {
    est.iterations_run = it + 1;
    std::array<std::size_t, 4> idx{};
    bool ok = false;
    for (int draw = 0; draw <= kMaxSampleRedraws && !ok; ++draw) {
      for (int k = 0; k < 4; ++k) {
        std::size_t j;
        do {
          j = rng.index(n);
        } while (std::find(idx.begin(), idx.begin() + k, j) != idx.begin() + k);
        idx[static_cast<std::size_t>(k)] = j;
      }
      ok = !points_collinear(corrs[idx[0]].world_point, corrs[idx[1]].world_point, corrs[idx[2]].world_point);
    }
    if (!ok) continue;
    for (int k = 0; k < 4; ++k) sample[static_cast<std::size_t>(k)] = corrs[idx[static_cast<std::size_t>(k)]];

    std::vector<Pose> cands;
    try {
      cands = pnp_minimal(sample, K);
    } catch (const Error& e) {
      if (e.code() == Errc::kDegenerateConfiguration || e.code() == Errc::kNoRealSolution) continue;
      throw;
    }
    const Pose& hyp = cands.front();
    if (prior && cfg.reject_gravity_deg && gravity_deviation(*prior, hyp) > *cfg.reject_gravity_deg) continue;

    const detail::Score s = detail::score_pose(hyp, corrs, K, cfg.reproj_thresh);
    if (s.count == 0) continue;
    if (best && !(s.count > best_score.count || (s.count == best_score.count && s.mean_error < best_score.mean_error))) {
      continue;
    }
    best = hyp;
    best_score = s;
    const double ratio = static_cast<double>(s.count) / static_cast<double>(n);
    needed = std::min(needed, detail::adaptive_iterations(ratio, cfg.confidence, cfg.max_iters));
    if (prior && ratio >= cfg.min_inlier_ratio_for_early_stop && gravity_deviation(*prior, hyp) < cfg.gamma_eps_deg) {
      est.early_stopped_by_gravity = true;
      break;
    }
  }

  if (!best || best_score.count < 4) throw Error(Errc::kNoModelFound, "no hypothesis reached 4 inliers");

  std::vector<std::size_t> inliers;
  detail::score_pose(*best, corrs, K, cfg.reproj_thresh, &inliers);
  Pose pose = *best;
  if (cfg.refine) {
    std::vector<Correspondence2D3D> in;
    in.reserve(inliers.size());
    for (std::size_t i : inliers) in.push_back(corrs[i]);
    const RefineResult r = refine_pose(pose, in, K);
    est.refinement_degraded = r.degraded;
    std::vector<std::size_t> refined;
    detail::score_pose(r.pose, corrs, K, cfg.reproj_thresh, &refined);
    if (refined.size() >= 4) {
      pose = r.pose;
      inliers = std::move(refined);
    }
  }
  est.pose = pose;
  est.inliers = std::move(inliers);
  if (prior) est.gravity_deviation = gravity_deviation(*prior, pose);
  return est;
}

}  // namespace uavloc
