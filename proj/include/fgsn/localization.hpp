// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0
//
// Semantic localization: label-consistency match filtering (SSMC),
// gravity-constrained match scoring for weighted RANSAC (GSMC), a planar
// particle filter weighted by segmentation agreement (PFSL), and
// stationary-class selection.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "fgsn/geometry.hpp"
#include "fgsn/random.hpp"
#include "fgsn/types.hpp"

namespace fgsn {

/// Lowe ratio test: keep matches whose best/second-best distance ratio is
/// strictly below the threshold.
inline std::vector<Match2D3D> ratio_test(std::span<const Match2D3D> matches,
                                         double threshold = 0.9) {
  std::vector<Match2D3D> kept;
  for (const Match2D3D& m : matches)
    if (m.ratio < threshold) kept.push_back(m);
  return kept;
}

/// Label-consistency filter: keep matches whose query-pixel label equals the
/// matched 3D point's label. Order preserved.
inline std::vector<Match2D3D> ssmc_filter(std::span<const Match2D3D> matches,
                                          const LabelMap& query_labels,
                                          const LabeledPointCloud& cloud) {
  std::vector<Match2D3D> kept;
  for (const Match2D3D& m : matches) {
    if (m.point_id < 0 || m.point_id >= static_cast<int>(cloud.size()))
      throw std::invalid_argument("ssmc_filter: point_id out of range");
    int row = static_cast<int>(std::floor(m.pixel.y()));
    int col = static_cast<int>(std::floor(m.pixel.x()));
    if (!query_labels.contains(row, col))
      throw std::invalid_argument("ssmc_filter: match pixel outside label map");
    if (query_labels.at(row, col) == cloud.points[m.point_id].label)
      kept.push_back(m);
  }
  return kept;
}

struct GravityPrior {
  Vec3 gravity_dir = Vec3(0, 0, -1);  // unit, world frame, pointing down
  double camera_height_m = 1.5;
  int yaw_samples = 360;

  void validate() const {
    if (std::abs(gravity_dir.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("GravityPrior: gravity_dir must be unit norm");
    if (yaw_samples < 1)
      throw std::invalid_argument("GravityPrior: yaw_samples must be >= 1");
  }
};

/// Gravity-aligned camera rotation (x right, y down, z forward) whose
/// forward axis is horizontal at the given yaw. Rows of the returned
/// world->camera rotation are the camera axes in world coordinates.
inline Mat3 gravity_aligned_rotation(const Vec3& gravity_dir, double yaw) {
  Vec3 up = -gravity_dir;
  Vec3 seed = std::abs(up.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  Vec3 east = (seed - seed.dot(up) * up).normalized();
  Vec3 north = up.cross(east);
  Vec3 forward = std::cos(yaw) * east + std::sin(yaw) * north;
  Vec3 down = gravity_dir;
  Vec3 right = down.cross(forward);
  Mat3 rotation;
  rotation.row(0) = right;
  rotation.row(1) = down;
  rotation.row(2) = forward;
  return rotation;
}

/// GSMC per-match score: over a yaw grid, recover the camera center from the
/// match's back-projected ray and the known height above ground, then count
/// cloud points landing on a query pixel with their own label. Returns the
/// best count over the grid (0 when no yaw is feasible). scoring_stride > 1
/// counts every stride-th point only (a uniform thinning; normalization in
/// gsmc_localize cancels the scale).
inline int gsmc_score(const Match2D3D& match, const LabeledPointCloud& cloud,
                      const PinholeCamera& camera, const LabelMap& query_labels,
                      const GravityPrior& prior, double ground_z,
                      int neighborhood_radius_px = 0, int scoring_stride = 1) {
  prior.validate();
  if (match.point_id < 0 || match.point_id >= static_cast<int>(cloud.size()))
    throw std::invalid_argument("gsmc_score: point_id out of range");
  if (scoring_stride < 1)
    throw std::invalid_argument("gsmc_score: scoring_stride must be >= 1");

  const Vec3 up = -prior.gravity_dir;
  const double height = ground_z + prior.camera_height_m;
  const Vec3 anchor = cloud.points[match.point_id].position;
  const Vec3 bearing_cam = bearing_from_pixel(camera, match.pixel);

  int best = 0;
  for (int k = 0; k < prior.yaw_samples; ++k) {
    double yaw = 2.0 * std::numbers::pi * k / prior.yaw_samples;
    Mat3 rotation = gravity_aligned_rotation(prior.gravity_dir, yaw);
    Vec3 ray_world = rotation.transpose() * bearing_cam;
    double vertical = ray_world.dot(up);
    if (std::abs(vertical) < 1e-6) continue;
    double s = (anchor.dot(up) - height) / vertical;
    if (s <= 0) continue;  // matched point would sit behind the camera
    Vec3 center = anchor - s * ray_world;
    Pose pose;
    pose.rotation = rotation;
    pose.translation = -(rotation * center);

    int score = 0;
    for (std::size_t i = 0; i < cloud.size(); i += scoring_stride) {
      const CloudPoint& pt = cloud.points[i];
      auto px = project(camera, pose, pt.position);
      if (!px) continue;
      int row = static_cast<int>(std::floor(px->y()));
      int col = static_cast<int>(std::floor(px->x()));
      bool hit = false;
      for (int dr = -neighborhood_radius_px;
           dr <= neighborhood_radius_px && !hit; ++dr)
        for (int dc = -neighborhood_radius_px;
             dc <= neighborhood_radius_px && !hit; ++dc)
          if (query_labels.contains(row + dr, col + dc) &&
              query_labels.at(row + dr, col + dc) == pt.label)
            hit = true;
      if (hit) ++score;
    }
    best = std::max(best, score);
  }
  return best;
}

/// GSMC localization: per-match gravity scores become RANSAC sampling
/// weights (uniform when all scores are equal, which covers the all-zero
/// case exactly).
inline RansacResult gsmc_localize(std::span<const Match2D3D> matches,
                                  const LabeledPointCloud& cloud,
                                  const PinholeCamera& camera,
                                  const LabelMap& query_labels,
                                  const GravityPrior& prior, double ground_z,
                                  const RansacConfig& config,
                                  int neighborhood_radius_px = 0,
                                  int scoring_stride = 1) {
  if (matches.size() < 3)
    throw std::invalid_argument("gsmc_localize: need at least 3 matches");
  std::vector<double> scores(matches.size());
  for (std::size_t i = 0; i < matches.size(); ++i)
    scores[i] = gsmc_score(matches[i], cloud, camera, query_labels, prior,
                           ground_z, neighborhood_radius_px, scoring_stride);
  bool all_equal =
      std::all_of(scores.begin(), scores.end(),
                  [&](double s) { return s == scores.front(); });
  if (all_equal) return ransac_pose(matches, cloud, camera, config);
  return ransac_pose(matches, cloud, camera, config, &scores);
}

// ---------------------------------------------------------------------------
// PFSL

struct Particle {
  double x = 0;
  double y = 0;
  double heading = 0;  // radians
  double weight = 0;
};

struct OdometryDelta {
  double dx = 0;      // meters, in the previous pose's local frame
  double dy = 0;
  double dtheta = 0;  // radians
};

struct PfslConfig {
  double noise_std_xy = 0.05;
  double noise_std_theta = 0.01;
  double likelihood_sharpness = 10.0;  // lambda
  double resample_ess_fraction = 0.5;

  void validate() const {
    if (noise_std_xy < 0 || noise_std_theta < 0)
      throw std::invalid_argument("PfslConfig: negative noise std");
    if (likelihood_sharpness < 0)
      throw std::invalid_argument("PfslConfig: negative sharpness");
    if (resample_ess_fraction <= 0 || resample_ess_fraction > 1)
      throw std::invalid_argument("PfslConfig: ess fraction must be in (0, 1]");
  }
};

using PoseOfParticle = std::function<Pose(const Particle&)>;

namespace detail {

inline void systematic_resample(std::vector<Particle>& particles,
                                std::mt19937_64& rng) {
  const std::size_t n = particles.size();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double start = u01(rng) / double(n);
  std::vector<Particle> resampled;
  resampled.reserve(n);
  double acc = particles[0].weight;
  std::size_t idx = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double target = start + double(k) / double(n);
    while (acc < target && idx + 1 < n) acc += particles[++idx].weight;
    Particle p = particles[idx];
    p.weight = 1.0 / double(n);
    resampled.push_back(p);
  }
  particles = std::move(resampled);
}

}  // namespace detail

/// One predict/update/resample cycle of the planar particle filter. Each
/// particle moves by the odometry increment plus Gaussian noise, is
/// re-weighted by exp(lambda * m) where m is the fraction of visible
/// stationary points whose projected pixel label matches the point label,
/// and the set is systematically resampled when the effective sample size
/// drops below resample_ess_fraction * N.
inline void pfsl_step(std::vector<Particle>& particles,
                      const OdometryDelta& odometry,
                      const LabelMap& query_labels,
                      const LabeledPointCloud& cloud,
                      const PinholeCamera& camera,
                      const PoseOfParticle& camera_of_pose,
                      const std::vector<char>& stationary_mask,
                      const PfslConfig& config, std::uint64_t seed) {
  config.validate();
  if (particles.empty())
    throw std::invalid_argument("pfsl_step: no particles");
  if (stationary_mask.size() != cloud.num_classes)
    throw std::invalid_argument("pfsl_step: stationary mask size mismatch");
  double sum = 0;
  for (const Particle& p : particles) {
    if (p.weight < 0)
      throw std::invalid_argument("pfsl_step: negative particle weight");
    sum += p.weight;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("pfsl_step: weights must be normalized");

  // Predict.
  for (std::size_t i = 0; i < particles.size(); ++i) {
    Particle& p = particles[i];
    std::mt19937_64 rng = make_rng(seed, i);
    std::normal_distribution<double> noise_xy(0.0, config.noise_std_xy);
    std::normal_distribution<double> noise_theta(0.0, config.noise_std_theta);
    double c = std::cos(p.heading);
    double s = std::sin(p.heading);
    p.x += c * odometry.dx - s * odometry.dy + noise_xy(rng);
    p.y += s * odometry.dx + c * odometry.dy + noise_xy(rng);
    p.heading += odometry.dtheta + noise_theta(rng);
  }

  // Update: match fraction over visible stationary points.
  std::vector<double> fractions(particles.size(), 0.0);
  bool any_visible = false;
  for (std::size_t i = 0; i < particles.size(); ++i) {
    Pose pose = camera_of_pose(particles[i]);
    long visible = 0;
    long matching = 0;
    for (const CloudPoint& pt : cloud.points) {
      if (!stationary_mask[pt.label]) continue;
      auto px = project(camera, pose, pt.position);
      if (!px) continue;
      ++visible;
      int row = static_cast<int>(std::floor(px->y()));
      int col = static_cast<int>(std::floor(px->x()));
      if (query_labels.contains(row, col) &&
          query_labels.at(row, col) == pt.label)
        ++matching;
    }
    if (visible > 0) {
      any_visible = true;
      fractions[i] = double(matching) / double(visible);
    }
  }
  if (any_visible) {
    double total = 0;
    for (std::size_t i = 0; i < particles.size(); ++i) {
      particles[i].weight *=
          std::exp(config.likelihood_sharpness * fractions[i]);
      total += particles[i].weight;
    }
    for (Particle& p : particles) p.weight /= total;
  }

  // Resample on effective-sample-size collapse.
  double ess_denominator = 0;
  for (const Particle& p : particles) ess_denominator += p.weight * p.weight;
  double ess = 1.0 / ess_denominator;
  if (ess < config.resample_ess_fraction * double(particles.size())) {
    std::mt19937_64 rng = make_rng(seed, 0xe55);
    detail::systematic_resample(particles, rng);
  }
}

struct ParticleEstimate {
  Vec2 position = Vec2::Zero();
  double heading = 0;
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();
};

/// Weighted mean pose and 2-D position covariance of a particle set.
inline ParticleEstimate particle_estimate(std::span<const Particle> particles) {
  if (particles.empty())
    throw std::invalid_argument("particle_estimate: no particles");
  ParticleEstimate est;
  double sin_sum = 0;
  double cos_sum = 0;
  double wsum = 0;
  for (const Particle& p : particles) {
    est.position += p.weight * Vec2(p.x, p.y);
    sin_sum += p.weight * std::sin(p.heading);
    cos_sum += p.weight * std::cos(p.heading);
    wsum += p.weight;
  }
  est.position /= wsum;
  est.heading = std::atan2(sin_sum, cos_sum);
  for (const Particle& p : particles) {
    Vec2 d = Vec2(p.x, p.y) - est.position;
    est.covariance += (p.weight / wsum) * d * d.transpose();
  }
  return est;
}

// ---------------------------------------------------------------------------
// Stationary-class selection

struct ClassFrequencyStats {
  Eigen::VectorXd p_c;  // per-class correspondence frequency
  Eigen::VectorXd p_p;  // per-class pixel frequency

  void validate() const {
    if (p_c.size() != p_p.size() || p_c.size() == 0)
      throw std::invalid_argument("ClassFrequencyStats: size mismatch");
    for (const Eigen::VectorXd* v : {&p_c, &p_p}) {
      if (v->minCoeff() < 0 || !v->allFinite())
        throw std::invalid_argument("ClassFrequencyStats: invalid entries");
      if (std::abs(v->sum() - 1.0) > 1e-9)
        throw std::invalid_argument("ClassFrequencyStats: must sum to 1");
    }
  }
};

/// Distributions from raw per-class counts.
inline ClassFrequencyStats stats_from_counts(
    const std::vector<std::size_t>& correspondence_counts,
    const std::vector<std::size_t>& pixel_counts) {
  if (correspondence_counts.size() != pixel_counts.size() ||
      correspondence_counts.empty())
    throw std::invalid_argument("stats_from_counts: size mismatch");
  ClassFrequencyStats stats;
  stats.p_c.resize(static_cast<long>(correspondence_counts.size()));
  stats.p_p.resize(static_cast<long>(pixel_counts.size()));
  double c_total = 0;
  double p_total = 0;
  for (std::size_t i = 0; i < correspondence_counts.size(); ++i) {
    c_total += double(correspondence_counts[i]);
    p_total += double(pixel_counts[i]);
  }
  if (c_total <= 0 || p_total <= 0)
    throw std::invalid_argument("stats_from_counts: empty counts");
  for (std::size_t i = 0; i < correspondence_counts.size(); ++i) {
    stats.p_c(static_cast<long>(i)) = double(correspondence_counts[i]) / c_total;
    stats.p_p(static_cast<long>(i)) = double(pixel_counts[i]) / p_total;
  }
  return stats;
}

/// Classes whose correspondence-to-pixel frequency ratio exceeds the
/// threshold; classes never seen in pixels are excluded.
inline std::vector<std::uint32_t> select_stationary(
    const ClassFrequencyStats& stats, double threshold = 0.2) {
  stats.validate();
  std::vector<std::uint32_t> selected;
  for (long c = 0; c < stats.p_c.size(); ++c) {
    if (stats.p_p(c) <= 0) continue;
    if (stats.p_c(c) / stats.p_p(c) > threshold)
      selected.push_back(static_cast<std::uint32_t>(c));
  }
  return selected;
}

}  // namespace fgsn
