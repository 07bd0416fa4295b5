// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0
//
// Pinhole projection, a Grunert-style P3P minimal solver, RANSAC pose
// estimation with optional weighted sampling, and pose-error metrics.

#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "fgsn/random.hpp"
#include "fgsn/types.hpp"

namespace fgsn {

/// One putative 2D-3D match: query pixel (x right, y down), index of the
/// matched cloud point, and the descriptor-distance ratio used by the
/// ratio test (best/second-best, in [0,1]).
struct Match2D3D {
  Vec2 pixel = Vec2::Zero();
  int point_id = 0;
  double ratio = 0;
};

struct RansacConfig {
  int iterations = 10000;
  double inlier_threshold_px = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 1)
      throw std::invalid_argument("RansacConfig: iterations must be >= 1");
    if (inlier_threshold_px <= 0)
      throw std::invalid_argument("RansacConfig: threshold must be > 0");
  }
};

/// Projects a world point; nullopt when behind the camera or out of bounds.
inline std::optional<Vec2> project(const PinholeCamera& camera,
                                   const Pose& pose, const Vec3& point) {
  Vec3 pc = pose.apply(point);
  if (pc.z() <= 0) return std::nullopt;
  Vec2 px(camera.fx * pc.x() / pc.z() + camera.cx,
          camera.fy * pc.y() / pc.z() + camera.cy);
  if (px.x() < 0 || px.x() >= camera.width || px.y() < 0 ||
      px.y() >= camera.height)
    return std::nullopt;
  return px;
}

/// Unit viewing ray in camera coordinates for a pixel.
inline Vec3 bearing_from_pixel(const PinholeCamera& camera, const Vec2& pixel) {
  return Vec3((pixel.x() - camera.cx) / camera.fx,
              (pixel.y() - camera.cy) / camera.fy, 1.0)
      .normalized();
}

/// Position error (camera-center distance, meters) and rotation error
/// (relative rotation angle, degrees).
inline std::pair<double, double> pose_error(const Pose& estimate,
                                            const Pose& truth) {
  double pos = (estimate.center() - truth.center()).norm();
  Mat3 rel = estimate.rotation * truth.rotation.transpose();
  double deg = Eigen::AngleAxisd(rel).angle() * 180.0 / std::numbers::pi;
  return {pos, deg};
}

namespace detail {

// Real roots of c4 v^4 + c3 v^3 + c2 v^2 + c1 v + c0 via the companion
// matrix of the monic polynomial, degree-reduced when leading terms vanish.
inline std::vector<double> real_poly_roots(std::array<double, 5> c) {
  double scale = 0;
  for (double x : c) scale = std::max(scale, std::abs(x));
  if (scale == 0) return {};
  int lead = 0;  // c[0] multiplies v^4; skip negligible leading coefficients
  while (lead < 4 && std::abs(c[lead]) <= 1e-13 * scale) ++lead;
  int degree = 4 - lead;
  if (degree == 0) return {};
  if (degree == 1) return {-c[lead + 1] / c[lead]};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 0; i < degree; ++i)
    companion(0, i) = -c[lead + 1 + i] / c[lead];
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> eig(companion, false);
  std::vector<double> roots;
  for (int i = 0; i < degree; ++i) {
    std::complex<double> z = eig.eigenvalues()(i);
    if (std::abs(z.imag()) < 1e-6 * std::max(1.0, std::abs(z.real())))
      roots.push_back(z.real());
  }
  return roots;
}

}  // namespace detail

/// P3P: camera poses consistent with 3 unit bearings seeing 3 world points.
/// Returns 0-4 poses; each reprojects the points onto the bearings within
/// 1e-9 angular error.
inline std::vector<Pose> p3p_solve(const std::array<Vec3, 3>& bearings,
                                   const std::array<Vec3, 3>& points) {
  std::array<Vec3, 3> f = bearings;
  for (Vec3& b : f) {
    double n = b.norm();
    if (std::abs(n - 1.0) > 1e-6)
      throw std::invalid_argument("p3p_solve: bearings must be unit norm");
    b /= n;
  }
  const Vec3 d21 = points[1] - points[0];
  const Vec3 d31 = points[2] - points[0];
  if (d21.cross(d31).norm() <= 1e-12 * d21.norm() * d31.norm())
    throw std::invalid_argument("p3p_solve: degenerate configuration");

  const double a2 = (points[1] - points[2]).squaredNorm();
  const double b2 = (points[0] - points[2]).squaredNorm();
  const double c2 = (points[0] - points[1]).squaredNorm();
  const double A = a2 / b2;
  const double B = c2 / b2;
  const double p = f[1].dot(f[2]);
  const double q = f[0].dot(f[2]);
  const double r = f[0].dot(f[1]);

  // Resultant of the two Grunert distance-ratio equations, eliminating u:
  //   eqA(u,v) = u^2 + v^2 - 2uvp - A(1 + v^2 - 2vq)
  //   eqB(u,v) = 1 + u^2 - 2ur - B(1 + v^2 - 2vq)
  // with u = s2/s1, v = s3/s1.
  const double c4 = A * A - 2 * A * B - 2 * A + B * B - 4 * B * p * p + 2 * B + 1;
  const double c3 = -4 * A * A * q + 8 * A * B * q + 4 * A * p * r + 4 * A * q -
                    4 * B * B * q + 8 * B * p * p * q + 4 * B * p * r -
                    4 * B * q - 4 * p * r;
  const double c2_ = 4 * A * A * q * q + 2 * A * A - 8 * A * B * q * q -
                     4 * A * B - 8 * A * p * q * r - 4 * A * r * r +
                     4 * B * B * q * q + 2 * B * B - 4 * B * p * p -
                     8 * B * p * q * r + 4 * p * p + 4 * r * r - 2;
  const double c1 = -4 * A * A * q + 8 * A * B * q + 4 * A * p * r +
                    8 * A * q * r * r - 4 * A * q - 4 * B * B * q +
                    4 * B * p * r + 4 * B * q - 4 * p * r;
  const double c0 = A * A - 2 * A * B - 4 * A * r * r + 2 * A + B * B - 2 * B + 1;

  auto eval_quartic = [&](double v) {
    return (((c4 * v + c3) * v + c2_) * v + c1) * v + c0;
  };
  auto eval_quartic_d = [&](double v) {
    return ((4 * c4 * v + 3 * c3) * v + 2 * c2_) * v + c1;
  };
  auto eqA = [&](double u, double v) {
    return u * u + v * v - 2 * u * v * p - A * (1 + v * v - 2 * v * q);
  };
  auto eqB = [&](double u, double v) {
    return 1 + u * u - 2 * u * r - B * (1 + v * v - 2 * v * q);
  };

  std::vector<Pose> poses;
  auto try_solution = [&](double u, double v) {
    // Joint Newton polish on (eqA, eqB) tightens both residuals.
    for (int it = 0; it < 10; ++it) {
      double fa = eqA(u, v);
      double fb = eqB(u, v);
      double j00 = 2 * u - 2 * v * p;
      double j01 = 2 * v - 2 * u * p - A * (2 * v - 2 * q);
      double j10 = 2 * u - 2 * r;
      double j11 = -B * (2 * v - 2 * q);
      double det = j00 * j11 - j01 * j10;
      if (std::abs(det) < 1e-14) break;
      double du = (fa * j11 - fb * j01) / det;
      double dv = (j00 * fb - j10 * fa) / det;
      u -= du;
      v -= dv;
      if (std::abs(du) + std::abs(dv) < 1e-15) break;
    }
    if (!(u > 0) || !(v > 0)) return;
    if (std::abs(eqA(u, v)) > 1e-9 || std::abs(eqB(u, v)) > 1e-9) return;
    double den = 1 + v * v - 2 * v * q;
    if (den <= 0) return;
    double s1 = std::sqrt(b2 / den);
    double s2 = u * s1;
    double s3 = v * s1;

    // Absolute orientation from the 3 camera-frame points via shared triads.
    std::array<Vec3, 3> qpts = {s1 * f[0], s2 * f[1], s3 * f[2]};
    auto triad = [](const std::array<Vec3, 3>& pts) {
      Mat3 m;
      Vec3 e1 = (pts[1] - pts[0]).normalized();
      Vec3 t = (pts[2] - pts[0]) - (pts[2] - pts[0]).dot(e1) * e1;
      Vec3 e2 = t.normalized();
      m.col(0) = e1;
      m.col(1) = e2;
      m.col(2) = e1.cross(e2);
      return m;
    };
    Pose pose;
    pose.rotation = triad(qpts) * triad(points).transpose();
    Vec3 world_centroid = (points[0] + points[1] + points[2]) / 3.0;
    Vec3 cam_centroid = (qpts[0] + qpts[1] + qpts[2]) / 3.0;
    pose.translation = cam_centroid - pose.rotation * world_centroid;

    for (int i = 0; i < 3; ++i) {
      Vec3 dir = pose.apply(points[i]).normalized();
      double angle = std::atan2(dir.cross(f[i]).norm(), dir.dot(f[i]));
      if (!(angle < 1e-9)) return;
    }
    for (const Pose& existing : poses)
      if ((existing.rotation - pose.rotation).cwiseAbs().maxCoeff() < 1e-6 &&
          (existing.translation - pose.translation).norm() <
              1e-6 * (1 + pose.translation.norm()))
        return;
    poses.push_back(pose);
  };

  for (double v : detail::real_poly_roots({c4, c3, c2_, c1, c0})) {
    for (int it = 0; it < 8; ++it) {
      double d = eval_quartic_d(v);
      if (std::abs(d) < 1e-14) break;
      double step = eval_quartic(v) / d;
      v -= step;
      if (std::abs(step) < 1e-15) break;
    }
    if (!(v > 0)) continue;
    double denom = 2 * (p * v - r);
    if (std::abs(denom) > 1e-9) {
      double u = ((B - A + 1) * v * v + 2 * q * (A - B) * v - (A - B + 1)) / denom;
      try_solution(u, v);
    } else {
      // u drops out of the resultant relation; recover it from eqB directly.
      double disc = r * r - (1 - B * (1 + v * v - 2 * v * q));
      if (disc < 0) continue;
      double s = std::sqrt(disc);
      for (double u : {r + s, r - s})
        if (std::abs(eqA(u, v)) < 1e-6) try_solution(u, v);
    }
  }
  return poses;
}

struct RansacResult {
  bool success = false;
  Pose pose;
  std::vector<char> inlier_mask;
  int inlier_count = 0;
  double inlier_ratio = 0;
};

/// P3P RANSAC over 2D-3D matches. Sampling is uniform, or proportional to
/// sampling_weights when given. Per-iteration RNG streams are derived from
/// (seed, iteration), so results are independent of evaluation order.
inline RansacResult ransac_pose(std::span<const Match2D3D> matches,
                                const LabeledPointCloud& cloud,
                                const PinholeCamera& camera,
                                const RansacConfig& config,
                                const std::vector<double>* sampling_weights =
                                    nullptr) {
  config.validate();
  const int n = static_cast<int>(matches.size());
  if (n < 3) throw std::invalid_argument("ransac_pose: need at least 3 matches");
  for (const Match2D3D& m : matches)
    if (m.point_id < 0 || m.point_id >= static_cast<int>(cloud.size()))
      throw std::invalid_argument("ransac_pose: point_id out of range");

  std::vector<double> cumulative;
  if (sampling_weights) {
    if (static_cast<int>(sampling_weights->size()) != n)
      throw std::invalid_argument("ransac_pose: weight count mismatch");
    double total = 0;
    int positive = 0;
    for (double w : *sampling_weights) {
      if (w < 0 || !std::isfinite(w))
        throw std::invalid_argument("ransac_pose: negative or non-finite weight");
      total += w;
      if (w > 0) ++positive;
    }
    if (total <= 0)
      throw std::invalid_argument("ransac_pose: weights must have positive sum");
    if (positive < 3)
      throw std::invalid_argument(
          "ransac_pose: need >= 3 matches with positive weight");
    cumulative.resize(n);
    double acc = 0;
    for (int i = 0; i < n; ++i) {
      acc += (*sampling_weights)[i];
      cumulative[i] = acc;
    }
  }

  std::vector<Vec3> bearings(n);
  for (int i = 0; i < n; ++i)
    bearings[i] = bearing_from_pixel(camera, matches[i].pixel);

  auto count_inliers = [&](const Pose& pose, std::vector<char>* mask) {
    int count = 0;
    for (int i = 0; i < n; ++i) {
      bool in = false;
      if (auto px = project(camera, pose, cloud.points[matches[i].point_id].position))
        in = (*px - matches[i].pixel).norm() < config.inlier_threshold_px;
      if (mask) (*mask)[i] = in ? 1 : 0;
      if (in) ++count;
    }
    return count;
  };

  RansacResult best;
  best.inlier_count = -1;
  for (int iter = 0; iter < config.iterations; ++iter) {
    std::mt19937_64 rng = make_rng(config.seed, static_cast<std::uint64_t>(iter));
    std::array<int, 3> pick{};
    bool ok = true;
    for (int s = 0; s < 3; ++s) {
      int idx = -1;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        if (sampling_weights) {
          std::uniform_real_distribution<double> u(0.0, cumulative.back());
          double target = u(rng);
          idx = static_cast<int>(
              std::lower_bound(cumulative.begin(), cumulative.end(), target) -
              cumulative.begin());
          idx = std::min(idx, n - 1);
        } else {
          std::uniform_int_distribution<int> u(0, n - 1);
          idx = u(rng);
        }
        bool dup = false;
        for (int t = 0; t < s; ++t)
          if (pick[t] == idx) dup = true;
        if (!dup) break;
        idx = -1;
      }
      if (idx < 0) {
        ok = false;
        break;
      }
      pick[s] = idx;
    }
    if (!ok) continue;

    std::array<Vec3, 3> sample_bearings;
    std::array<Vec3, 3> sample_points;
    for (int s = 0; s < 3; ++s) {
      sample_bearings[s] = bearings[pick[s]];
      sample_points[s] = cloud.points[matches[pick[s]].point_id].position;
    }
    std::vector<Pose> candidates;
    try {
      candidates = p3p_solve(sample_bearings, sample_points);
    } catch (const std::invalid_argument&) {
      continue;  // collinear sample
    }
    for (const Pose& pose : candidates) {
      int count = count_inliers(pose, nullptr);
      if (count > best.inlier_count) {
        best.inlier_count = count;
        best.pose = pose;
        best.success = true;
      }
    }
    // A full-consensus pose cannot be improved and ties never displace it.
    if (best.inlier_count == n) break;
  }

  if (!best.success) {
    best.inlier_count = 0;
    return best;
  }
  best.inlier_mask.assign(n, 0);
  best.inlier_count = count_inliers(best.pose, &best.inlier_mask);
  best.inlier_ratio = double(best.inlier_count) / double(n);
  return best;
}

}  // namespace fgsn
