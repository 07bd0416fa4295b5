// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic benchmark world: labeled point clouds with a fine-to-coarse
// label hierarchy, smooth planar camera trajectories with exact odometry,
// simulated 2D-3D matching with outliers and segmentation noise, and the
// end-to-end benchmark runner.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fgsn/clustering.hpp"
#include "fgsn/evaluation.hpp"
#include "fgsn/geometry.hpp"
#include "fgsn/localization.hpp"
#include "fgsn/parallel.hpp"
#include "fgsn/random.hpp"
#include "fgsn/serialization.hpp"
#include "fgsn/types.hpp"

namespace fgsn {

// ---------------------------------------------------------------------------
// Scene

struct SceneSpec {
  int num_points = 20000;
  Vec3 extent_min = Vec3(-24, -24, 0);
  Vec3 extent_max = Vec3(24, 24, 1.5);
  int k_fine = 100;
  int k_coarse = 10;
  std::vector<std::uint32_t> coarse_map;  // empty: fine label i -> i % k_coarse
  std::uint64_t seed = 0;

  std::vector<std::uint32_t> effective_coarse_map() const {
    if (!coarse_map.empty()) return coarse_map;
    std::vector<std::uint32_t> map(k_fine);
    for (int i = 0; i < k_fine; ++i)
      map[i] = static_cast<std::uint32_t>(i % k_coarse);
    return map;
  }

  void validate() const {
    if (num_points < 1) throw std::invalid_argument("SceneSpec: num_points must be >= 1");
    if (k_fine < 1) throw std::invalid_argument("SceneSpec: k_fine must be >= 1");
    if (k_fine > num_points)
      throw std::invalid_argument("SceneSpec: k_fine > num_points");
    if (k_coarse < 1 || k_coarse > k_fine)
      throw std::invalid_argument("SceneSpec: k_coarse must be in [1, k_fine]");
    for (int a = 0; a < 3; ++a)
      if (!(extent_min[a] < extent_max[a]))
        throw std::invalid_argument("SceneSpec: empty extent");
    std::vector<std::uint32_t> map = effective_coarse_map();
    if (static_cast<int>(map.size()) != k_fine)
      throw std::invalid_argument("SceneSpec: coarse_map must cover all fine labels");
    std::vector<char> hit(k_coarse, 0);
    for (std::uint32_t c : map) {
      if (c >= static_cast<std::uint32_t>(k_coarse))
        throw std::invalid_argument("SceneSpec: coarse_map value out of range");
      hit[c] = 1;
    }
    for (char h : hit)
      if (!h) throw std::invalid_argument("SceneSpec: coarse_map not onto");
  }
};

inline void to_json(json& j, const SceneSpec& s) {
  j = json{{"num_points", s.num_points},
           {"extent_min", {s.extent_min.x(), s.extent_min.y(), s.extent_min.z()}},
           {"extent_max", {s.extent_max.x(), s.extent_max.y(), s.extent_max.z()}},
           {"k_fine", s.k_fine},
           {"k_coarse", s.k_coarse},
           {"coarse_map", s.coarse_map},
           {"seed", s.seed}};
}
inline void from_json(const json& j, SceneSpec& s) {
  j.at("num_points").get_to(s.num_points);
  auto lo = j.at("extent_min").get<std::vector<double>>();
  auto hi = j.at("extent_max").get<std::vector<double>>();
  if (lo.size() != 3 || hi.size() != 3)
    throw ParseError("SceneSpec: extent must have 3 coordinates");
  s.extent_min = Vec3(lo[0], lo[1], lo[2]);
  s.extent_max = Vec3(hi[0], hi[1], hi[2]);
  j.at("k_fine").get_to(s.k_fine);
  j.at("k_coarse").get_to(s.k_coarse);
  j.at("coarse_map").get_to(s.coarse_map);
  j.at("seed").get_to(s.seed);
}

struct GeneratedScene {
  LabeledPointCloud fine;
  LabeledPointCloud coarse;
};

/// Uniform points in the extent; fine labels from spatial k-means so labels
/// form coherent regions; coarse labels via the fine-to-coarse map. Point
/// positions depend only on (num_points, extent, seed), not on k_fine, so
/// scenes at different granularities share geometry.
inline GeneratedScene gen_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng = make_rng(spec.seed, 0x905e);
  Eigen::MatrixXd positions(spec.num_points, 3);
  for (int i = 0; i < spec.num_points; ++i)
    for (int a = 0; a < 3; ++a) {
      std::uniform_real_distribution<double> u(spec.extent_min[a],
                                               spec.extent_max[a]);
      positions(i, a) = u(rng);
    }
  KmeansResult km = kmeans_cluster(positions, spec.k_fine, 50,
                                   derive_seed(spec.seed, 0x6bf0));
  std::vector<std::uint32_t> coarse_map = spec.effective_coarse_map();

  GeneratedScene scene;
  scene.fine.num_classes = static_cast<std::uint32_t>(spec.k_fine);
  scene.coarse.num_classes = static_cast<std::uint32_t>(spec.k_coarse);
  scene.fine.points.reserve(spec.num_points);
  scene.coarse.points.reserve(spec.num_points);
  for (int i = 0; i < spec.num_points; ++i) {
    CloudPoint p;
    p.position = positions.row(i).transpose();
    p.label = static_cast<std::uint32_t>(km.assignments[i]);
    scene.fine.points.push_back(p);
    p.label = coarse_map[p.label];
    scene.coarse.points.push_back(p);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Trajectory

struct TrajectorySpec {
  double length_m = 100.0;
  double step_m = 0.5;
  double turn_bias = 0.03;       // rad per step; loops the path
  double curvature = 0.02;       // rad per step, smooth sinusoidal wander
  double start_x = 0.0;
  double start_y = -16.0;
  double start_heading = 0.0;
  double camera_height_m = 2.2;
  double ground_z = 0.0;
  std::uint64_t seed = 0;

  int num_steps() const {
    return std::max(1, static_cast<int>(std::llround(length_m / step_m)));
  }

  void validate() const {
    if (step_m <= 0) throw std::invalid_argument("TrajectorySpec: step_m must be > 0");
    if (length_m < step_m)
      throw std::invalid_argument("TrajectorySpec: length_m must be >= step_m");
    if (camera_height_m <= 0)
      throw std::invalid_argument("TrajectorySpec: camera_height_m must be > 0");
  }
};

inline void to_json(json& j, const TrajectorySpec& s) {
  j = json{{"length_m", s.length_m},       {"step_m", s.step_m},
           {"turn_bias", s.turn_bias},     {"curvature", s.curvature},
           {"start_x", s.start_x},         {"start_y", s.start_y},
           {"start_heading", s.start_heading},
           {"camera_height_m", s.camera_height_m},
           {"ground_z", s.ground_z},       {"seed", s.seed}};
}
inline void from_json(const json& j, TrajectorySpec& s) {
  j.at("length_m").get_to(s.length_m);
  j.at("step_m").get_to(s.step_m);
  j.at("turn_bias").get_to(s.turn_bias);
  j.at("curvature").get_to(s.curvature);
  j.at("start_x").get_to(s.start_x);
  j.at("start_y").get_to(s.start_y);
  j.at("start_heading").get_to(s.start_heading);
  j.at("camera_height_m").get_to(s.camera_height_m);
  j.at("ground_z").get_to(s.ground_z);
  j.at("seed").get_to(s.seed);
}

/// Camera pose for a planar ground pose: gravity-aligned, forward horizontal
/// at the given heading, center at ground_z + camera_height.
inline Pose planar_camera_pose(double x, double y, double heading,
                               double camera_height_m, double ground_z) {
  Pose pose;
  pose.rotation = gravity_aligned_rotation(Vec3(0, 0, -1), heading);
  Vec3 center(x, y, ground_z + camera_height_m);
  pose.translation = -(pose.rotation * center);
  return pose;
}

struct Trajectory {
  std::vector<double> x, y, heading;
  std::vector<Pose> poses;               // world->camera per step
  std::vector<OdometryDelta> odometry;   // exact local-frame increments
  double camera_height_m = 2.2;
  double ground_z = 0.0;

  int size() const { return static_cast<int>(poses.size()); }
};

/// Smooth planar trajectory: constant step length, heading driven by a turn
/// bias plus a seeded sinusoidal wander. Odometry increments are exact; noise
/// belongs to the consumer.
inline Trajectory gen_trajectory(const TrajectorySpec& spec) {
  spec.validate();
  const int steps = spec.num_steps();
  std::mt19937_64 rng = make_rng(spec.seed, 0x7247);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double period = 40.0 + 40.0 * u01(rng);
  double phase = 2.0 * std::numbers::pi * u01(rng);

  Trajectory traj;
  traj.camera_height_m = spec.camera_height_m;
  traj.ground_z = spec.ground_z;
  double px = spec.start_x;
  double py = spec.start_y;
  double h = spec.start_heading;
  for (int k = 0; k <= steps; ++k) {
    traj.x.push_back(px);
    traj.y.push_back(py);
    traj.heading.push_back(h);
    traj.poses.push_back(planar_camera_pose(px, py, h, spec.camera_height_m,
                                            spec.ground_z));
    if (k == steps) break;
    double omega = spec.turn_bias +
                   spec.curvature *
                       std::sin(2.0 * std::numbers::pi * k / period + phase);
    px += spec.step_m * std::cos(h);
    py += spec.step_m * std::sin(h);
    h += omega;
  }
  for (int k = 0; k + 1 < traj.size(); ++k) {
    double dxw = traj.x[k + 1] - traj.x[k];
    double dyw = traj.y[k + 1] - traj.y[k];
    double c = std::cos(traj.heading[k]);
    double s = std::sin(traj.heading[k]);
    OdometryDelta d;
    d.dx = c * dxw + s * dyw;
    d.dy = -s * dxw + c * dyw;
    d.dtheta = traj.heading[k + 1] - traj.heading[k];
    traj.odometry.push_back(d);
  }
  return traj;
}

inline void to_json(json& j, const Trajectory& t) {
  json odo = json::array();
  for (const OdometryDelta& d : t.odometry)
    odo.push_back({d.dx, d.dy, d.dtheta});
  j = json{{"x", t.x},
           {"y", t.y},
           {"heading", t.heading},
           {"poses", t.poses},
           {"odometry", odo},
           {"camera_height_m", t.camera_height_m},
           {"ground_z", t.ground_z}};
}
inline void from_json(const json& j, Trajectory& t) {
  j.at("x").get_to(t.x);
  j.at("y").get_to(t.y);
  j.at("heading").get_to(t.heading);
  j.at("poses").get_to(t.poses);
  t.odometry.clear();
  for (const json& row : j.at("odometry")) {
    if (!row.is_array() || row.size() != 3)
      throw ParseError("Trajectory: odometry entries must be [dx, dy, dtheta]");
    OdometryDelta d;
    d.dx = row[0].get<double>();
    d.dy = row[1].get<double>();
    d.dtheta = row[2].get<double>();
    t.odometry.push_back(d);
  }
  j.at("camera_height_m").get_to(t.camera_height_m);
  j.at("ground_z").get_to(t.ground_z);
  if (t.x.size() != t.y.size() || t.x.size() != t.heading.size() ||
      t.x.size() != t.poses.size() ||
      t.odometry.size() + 1 != t.poses.size())
    throw ParseError("Trajectory: inconsistent array lengths");
}

// ---------------------------------------------------------------------------
// Observation noise model

struct MislabelModel {
  double base = 0.02;
  double per_log2 = 0.015;
  double cap = 0.5;

  double rate(int k) const {
    if (k < 1) throw std::invalid_argument("MislabelModel: k must be >= 1");
    double r = base + (k > 1 ? per_log2 * std::log2(double(k)) : 0.0);
    return std::clamp(r, 0.0, cap);
  }
};

inline void to_json(json& j, const MislabelModel& m) {
  j = json{{"base", m.base}, {"per_log2", m.per_log2}, {"cap", m.cap}};
}
inline void from_json(const json& j, MislabelModel& m) {
  j.at("base").get_to(m.base);
  j.at("per_log2").get_to(m.per_log2);
  j.at("cap").get_to(m.cap);
}

struct NoiseSpec {
  double pixel_noise_px = 1.8;
  double outlier_rate = 0.985;
  MislabelModel mislabel;
  double odometry_std_xy = 0.05;
  double odometry_std_theta = 0.01;
  // Ratio-test distances: inliers always pass the 0.9 test; outlier ratios
  // are uniform on a range tuned so roughly a quarter of them pass.
  double inlier_ratio_min = 0.3;
  double inlier_ratio_max = 0.8;
  double outlier_ratio_min = 13.0 / 15.0;
  double outlier_ratio_max = 1.0;
  int splat_radius_px = 4;
  int max_matches = 1000;  // 0: every visible point becomes a match

  void validate() const {
    if (pixel_noise_px < 0)
      throw std::invalid_argument("NoiseSpec: pixel noise must be >= 0");
    if (outlier_rate < 0 || outlier_rate > 1)
      throw std::invalid_argument("NoiseSpec: outlier_rate must be in [0, 1]");
    if (mislabel.base < 0 || mislabel.base > 1 || mislabel.cap < 0 ||
        mislabel.cap > 1 || mislabel.per_log2 < 0)
      throw std::invalid_argument("NoiseSpec: mislabel rates must be in [0, 1]");
    if (odometry_std_xy < 0 || odometry_std_theta < 0)
      throw std::invalid_argument("NoiseSpec: odometry noise must be >= 0");
    if (!(inlier_ratio_min >= 0 && inlier_ratio_min <= inlier_ratio_max &&
          inlier_ratio_max <= 1))
      throw std::invalid_argument("NoiseSpec: bad inlier ratio range");
    if (!(outlier_ratio_min >= 0 && outlier_ratio_min <= outlier_ratio_max &&
          outlier_ratio_max <= 1))
      throw std::invalid_argument("NoiseSpec: bad outlier ratio range");
    if (splat_radius_px < 0)
      throw std::invalid_argument("NoiseSpec: splat radius must be >= 0");
    if (max_matches < 0)
      throw std::invalid_argument("NoiseSpec: max_matches must be >= 0");
  }
};

inline void to_json(json& j, const NoiseSpec& n) {
  j = json{{"pixel_noise_px", n.pixel_noise_px},
           {"outlier_rate", n.outlier_rate},
           {"mislabel", n.mislabel},
           {"odometry_std_xy", n.odometry_std_xy},
           {"odometry_std_theta", n.odometry_std_theta},
           {"inlier_ratio_min", n.inlier_ratio_min},
           {"inlier_ratio_max", n.inlier_ratio_max},
           {"outlier_ratio_min", n.outlier_ratio_min},
           {"outlier_ratio_max", n.outlier_ratio_max},
           {"splat_radius_px", n.splat_radius_px},
           {"max_matches", n.max_matches}};
}
inline void from_json(const json& j, NoiseSpec& n) {
  j.at("pixel_noise_px").get_to(n.pixel_noise_px);
  j.at("outlier_rate").get_to(n.outlier_rate);
  j.at("mislabel").get_to(n.mislabel);
  j.at("odometry_std_xy").get_to(n.odometry_std_xy);
  j.at("odometry_std_theta").get_to(n.odometry_std_theta);
  j.at("inlier_ratio_min").get_to(n.inlier_ratio_min);
  j.at("inlier_ratio_max").get_to(n.inlier_ratio_max);
  j.at("outlier_ratio_min").get_to(n.outlier_ratio_min);
  j.at("outlier_ratio_max").get_to(n.outlier_ratio_max);
  j.at("splat_radius_px").get_to(n.splat_radius_px);
  j.at("max_matches").get_to(n.max_matches);
}

/// Query segmentation rendered from the cloud: far-to-near painter pass of
/// small disks (so the nearest point wins overlaps), unobserved pixels keep a
/// background label (= k, the map declares k+1 classes), then each pixel
/// flips to a uniformly random other label with probability mislabel.rate(k).
inline LabelMap render_label_map(const LabeledPointCloud& cloud,
                                 const PinholeCamera& camera, const Pose& pose,
                                 const NoiseSpec& noise, int k,
                                 std::uint64_t seed) {
  if (k != static_cast<int>(cloud.num_classes))
    throw std::invalid_argument("render_label_map: k != cloud.num_classes");
  LabelMap map(camera.height, camera.width, static_cast<std::uint32_t>(k) + 1,
               static_cast<std::uint32_t>(k));

  struct Splat {
    double depth;
    int row, col;
    std::uint32_t label;
  };
  std::vector<Splat> splats;
  for (const CloudPoint& pt : cloud.points) {
    auto px = project(camera, pose, pt.position);
    if (!px) continue;
    double depth = pose.apply(pt.position).z();
    splats.push_back({depth, static_cast<int>(std::floor(px->y())),
                      static_cast<int>(std::floor(px->x())), pt.label});
  }
  std::stable_sort(splats.begin(), splats.end(),
                   [](const Splat& a, const Splat& b) { return a.depth > b.depth; });
  const int rad = noise.splat_radius_px;
  for (const Splat& s : splats)
    for (int dr = -rad; dr <= rad; ++dr)
      for (int dc = -rad; dc <= rad; ++dc)
        if (dr * dr + dc * dc <= rad * rad &&
            map.contains(s.row + dr, s.col + dc))
          map.at(s.row + dr, s.col + dc) = s.label;

  double rate = noise.mislabel.rate(k);
  if (rate > 0) {
    std::mt19937_64 rng = make_rng(seed, 0xf11b);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<std::uint32_t> other(
        0, static_cast<std::uint32_t>(k) - 1);
    for (std::uint32_t& label : map.labels) {
      if (u01(rng) >= rate) continue;
      std::uint32_t t = other(rng);
      label = (t >= label) ? t + 1 : t;  // uniform over the k other labels
    }
  }
  return map;
}

struct Observation {
  std::vector<Match2D3D> matches;
  std::vector<char> inlier_flags;  // ground truth: 1 unless rematched
  LabelMap query_labels;
};

/// The query segmentation gen_observations attaches for this observation
/// seed. Lets stored observations (matches only) be rehydrated exactly.
inline LabelMap regen_query_labels(const LabeledPointCloud& cloud,
                                   const PinholeCamera& camera,
                                   const Pose& pose, const NoiseSpec& noise,
                                   int k, std::uint64_t seed) {
  return render_label_map(cloud, camera, pose, noise, k,
                          derive_seed(seed, 0x10ab));
}

/// Simulated 2D-3D matching for one query pose: visible points become
/// matches with Gaussian pixel noise; an outlier_rate fraction is rematched
/// to uniformly random other points (the pixel is kept, so it still shows the
/// physically observed point); descriptor ratios are drawn per ground-truth
/// status; the query segmentation is rendered with the same noise model.
inline Observation gen_observations(const LabeledPointCloud& cloud,
                                    const PinholeCamera& camera,
                                    const Pose& pose, const NoiseSpec& noise,
                                    int k, std::uint64_t seed) {
  noise.validate();
  camera.validate();
  if (k != static_cast<int>(cloud.num_classes))
    throw std::invalid_argument("gen_observations: k != cloud.num_classes");

  std::vector<std::pair<int, Vec2>> visible;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (auto px = project(camera, pose, cloud.points[i].position))
      visible.emplace_back(static_cast<int>(i), *px);
  if (visible.empty())
    throw std::invalid_argument("gen_observations: no visible points");

  std::mt19937_64 rng = make_rng(seed, 0x0b5e);
  if (noise.max_matches > 0 &&
      static_cast<int>(visible.size()) > noise.max_matches) {
    std::shuffle(visible.begin(), visible.end(), rng);
    visible.resize(noise.max_matches);
  }

  Observation obs;
  std::normal_distribution<double> pixel_noise(0.0, noise.pixel_noise_px);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> inlier_ratio(noise.inlier_ratio_min,
                                                      noise.inlier_ratio_max);
  std::uniform_real_distribution<double> outlier_ratio(noise.outlier_ratio_min,
                                                       noise.outlier_ratio_max);
  std::uniform_int_distribution<int> any_point(
      0, static_cast<int>(cloud.size()) - 1);

  for (const auto& [point_id, pixel] : visible) {
    Match2D3D m;
    double px = pixel.x() + (noise.pixel_noise_px > 0 ? pixel_noise(rng) : 0.0);
    double py = pixel.y() + (noise.pixel_noise_px > 0 ? pixel_noise(rng) : 0.0);
    m.pixel.x() = std::clamp(px, 0.0, double(camera.width) - 1e-3);
    m.pixel.y() = std::clamp(py, 0.0, double(camera.height) - 1e-3);
    m.point_id = point_id;
    bool outlier = cloud.size() > 1 && u01(rng) < noise.outlier_rate;
    if (outlier) {
      int other = any_point(rng);
      while (other == point_id) other = any_point(rng);
      m.point_id = other;
      m.ratio = outlier_ratio(rng);
    } else {
      m.ratio = inlier_ratio(rng);
    }
    obs.matches.push_back(m);
    obs.inlier_flags.push_back(outlier ? 0 : 1);
  }
  obs.query_labels = regen_query_labels(cloud, camera, pose, noise, k, seed);
  return obs;
}

inline void to_json(json& j, const Observation& obs) {
  json matches = json::array();
  for (const Match2D3D& m : obs.matches)
    matches.push_back({m.pixel.x(), m.pixel.y(), m.point_id, m.ratio});
  j = json{{"matches", std::move(matches)},
           {"inlier_flags", std::vector<int>(obs.inlier_flags.begin(),
                                             obs.inlier_flags.end())}};
}
inline void from_json(const json& j, Observation& obs) {
  obs.matches.clear();
  for (const json& e : j.at("matches")) {
    if (!e.is_array() || e.size() != 4)
      throw ParseError("Observation: match must be [x, y, point_id, ratio]");
    Match2D3D m;
    m.pixel.x() = e[0].get<double>();
    m.pixel.y() = e[1].get<double>();
    m.point_id = e[2].get<int>();
    m.ratio = e[3].get<double>();
    obs.matches.push_back(m);
  }
  auto flags = j.at("inlier_flags").get<std::vector<int>>();
  obs.inlier_flags.assign(flags.begin(), flags.end());
  if (obs.inlier_flags.size() != obs.matches.size())
    throw ParseError("Observation: flag count mismatch");
}

/// Odometry with consumption-time Gaussian noise applied.
inline std::vector<OdometryDelta> noisy_odometry(const Trajectory& trajectory,
                                                 const NoiseSpec& noise,
                                                 std::uint64_t seed) {
  std::mt19937_64 rng = make_rng(seed, 0x0d03);
  std::normal_distribution<double> nxy(0.0, noise.odometry_std_xy);
  std::normal_distribution<double> nth(0.0, noise.odometry_std_theta);
  std::vector<OdometryDelta> out = trajectory.odometry;
  for (OdometryDelta& d : out) {
    d.dx += nxy(rng);
    d.dy += nxy(rng);
    d.dtheta += nth(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Benchmark

enum class Method { kPlain, kSsmc, kGsmc, kPfsl };

inline Method method_from_string(const std::string& name) {
  if (name == "plain") return Method::kPlain;
  if (name == "ssmc") return Method::kSsmc;
  if (name == "gsmc") return Method::kGsmc;
  if (name == "pfsl") return Method::kPfsl;
  throw std::invalid_argument("unknown method '" + name +
                              "' (valid: plain, ssmc, gsmc, pfsl)");
}

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kPlain: return "plain";
    case Method::kSsmc: return "ssmc";
    case Method::kGsmc: return "gsmc";
    case Method::kPfsl: return "pfsl";
  }
  return "?";
}

struct BenchmarkConfig {
  Method method = Method::kSsmc;
  int label_granularity = 100;  // must equal cloud.num_classes
  NoiseSpec noise;
  int num_queries = 200;
  int ransac_iterations = 100;
  double inlier_threshold_px = 5.0;
  double ratio_threshold = 0.9;
  RecallThresholds thresholds;
  int threads = 1;
  std::uint64_t seed = 0;

  // GSMC
  int gsmc_yaw_samples = 120;
  int gsmc_scoring_stride = 12;
  int gsmc_neighborhood_px = 1;

  // PFSL
  int pfsl_particles = 1000;
  PfslConfig pfsl;
  int pfsl_scoring_points = 400;
  double pfsl_init_std_xy = 0.5;
  double pfsl_init_std_theta = 0.1;
  double stationary_threshold = 0.2;

  void validate() const {
    noise.validate();
    thresholds.validate();
    pfsl.validate();
    if (label_granularity < 1)
      throw std::invalid_argument("BenchmarkConfig: label_granularity must be >= 1");
    if (num_queries < 1)
      throw std::invalid_argument("BenchmarkConfig: num_queries must be >= 1");
    if (ransac_iterations < 1)
      throw std::invalid_argument("BenchmarkConfig: ransac_iterations must be >= 1");
    if (inlier_threshold_px <= 0)
      throw std::invalid_argument("BenchmarkConfig: inlier threshold must be > 0");
    if (ratio_threshold <= 0 || ratio_threshold > 1)
      throw std::invalid_argument("BenchmarkConfig: ratio threshold must be in (0, 1]");
    if (threads < 1)
      throw std::invalid_argument("BenchmarkConfig: threads must be >= 1");
    if (gsmc_yaw_samples < 1 || gsmc_scoring_stride < 1 ||
        gsmc_neighborhood_px < 0)
      throw std::invalid_argument("BenchmarkConfig: bad gsmc settings");
    if (pfsl_particles < 1)
      throw std::invalid_argument("BenchmarkConfig: pfsl_particles must be >= 1");
    if (pfsl_init_std_xy < 0 || pfsl_init_std_theta < 0)
      throw std::invalid_argument("BenchmarkConfig: pfsl init noise must be >= 0");
    if (stationary_threshold < 0)
      throw std::invalid_argument("BenchmarkConfig: stationary threshold must be >= 0");
  }
};

struct QueryResult {
  std::string query_id;
  bool success = false;
  double position_error_m = std::numeric_limits<double>::infinity();
  double rotation_error_deg = std::numeric_limits<double>::infinity();
  int inlier_count = 0;
  double inlier_ratio = 0;
  // Ground-truth-flag inlier fractions around the consistency filter
  // (ratio-test survivors before, filter survivors after).
  double pre_filter_inlier_ratio = 0;
  double post_filter_inlier_ratio = 0;
};

struct BenchmarkResult {
  Method method = Method::kSsmc;
  std::vector<QueryResult> rows;
  std::vector<double> recall;  // percent, per configured threshold pair
  std::vector<std::pair<double, double>> cdf_inlier_count;
  std::vector<std::pair<double, double>> cdf_inlier_ratio;
};

namespace detail {

inline double flag_ratio(const std::vector<char>& flags) {
  if (flags.empty()) return 0;
  long in = std::count(flags.begin(), flags.end(), char(1));
  return double(in) / double(flags.size());
}

// Ratio test that carries the ground-truth flags along.
inline void ratio_test_flagged(const Observation& obs, double threshold,
                               std::vector<Match2D3D>* matches,
                               std::vector<char>* flags) {
  for (std::size_t i = 0; i < obs.matches.size(); ++i)
    if (obs.matches[i].ratio < threshold) {
      matches->push_back(obs.matches[i]);
      flags->push_back(obs.inlier_flags[i]);
    }
}

inline void ssmc_flagged(const LabelMap& labels, const LabeledPointCloud& cloud,
                         std::vector<Match2D3D>* matches,
                         std::vector<char>* flags) {
  std::vector<Match2D3D> kept;
  std::vector<char> kept_flags;
  for (std::size_t i = 0; i < matches->size(); ++i) {
    const Match2D3D& m = (*matches)[i];
    int row = static_cast<int>(std::floor(m.pixel.y()));
    int col = static_cast<int>(std::floor(m.pixel.x()));
    if (labels.contains(row, col) &&
        labels.at(row, col) == cloud.points[m.point_id].label) {
      kept.push_back(m);
      kept_flags.push_back((*flags)[i]);
    }
  }
  *matches = std::move(kept);
  *flags = std::move(kept_flags);
}

inline LabeledPointCloud thin_cloud(const LabeledPointCloud& cloud,
                                    int target_points) {
  if (target_points <= 0 || static_cast<int>(cloud.size()) <= target_points)
    return cloud;
  LabeledPointCloud thin;
  thin.num_classes = cloud.num_classes;
  double stride = double(cloud.size()) / double(target_points);
  for (int i = 0; i < target_points; ++i)
    thin.points.push_back(cloud.points[static_cast<std::size_t>(i * stride)]);
  return thin;
}

inline void finalize_benchmark(const BenchmarkConfig& config,
                               BenchmarkResult* result) {
  std::vector<std::pair<double, double>> errors;
  std::vector<double> counts;
  std::vector<double> ratios;
  for (const QueryResult& row : result->rows) {
    errors.emplace_back(row.position_error_m, row.rotation_error_deg);
    counts.push_back(double(row.inlier_count));
    ratios.push_back(row.inlier_ratio);
  }
  result->recall = recall_table(errors, config.thresholds);
  result->cdf_inlier_count = inlier_cdf(counts);
  result->cdf_inlier_ratio = inlier_cdf(ratios);
}

inline BenchmarkResult run_pfsl_benchmark(const LabeledPointCloud& cloud,
                                          const Trajectory& trajectory,
                                          const PinholeCamera& camera,
                                          const BenchmarkConfig& config) {
  if (trajectory.size() < 2)
    throw std::invalid_argument("run_benchmark: pfsl needs >= 2 trajectory steps");
  const int k = config.label_granularity;
  const int total_steps = trajectory.size() - 1;

  // Stationary-class selection from the first observation; nothing moves in
  // this world, so normally every class qualifies, but the statistics are
  // computed rather than assumed.
  std::vector<char> mask(static_cast<std::size_t>(k), 1);
  {
    Observation obs = gen_observations(cloud, camera, trajectory.poses[0],
                                       config.noise, k,
                                       derive_seed(config.seed, 8000));
    std::vector<std::size_t> corr_counts(static_cast<std::size_t>(k), 0);
    std::vector<std::size_t> pixel_counts(static_cast<std::size_t>(k), 0);
    for (const Match2D3D& m : obs.matches)
      ++corr_counts[cloud.points[m.point_id].label];
    for (std::uint32_t label : obs.query_labels.labels)
      if (label < static_cast<std::uint32_t>(k)) ++pixel_counts[label];
    std::size_t c_total = std::accumulate(corr_counts.begin(),
                                          corr_counts.end(), std::size_t{0});
    std::size_t p_total = std::accumulate(pixel_counts.begin(),
                                          pixel_counts.end(), std::size_t{0});
    if (c_total > 0 && p_total > 0) {
      ClassFrequencyStats stats = stats_from_counts(corr_counts, pixel_counts);
      std::vector<std::uint32_t> selected =
          select_stationary(stats, config.stationary_threshold);
      if (!selected.empty()) {
        std::fill(mask.begin(), mask.end(), char(0));
        for (std::uint32_t c : selected) mask[c] = 1;
      }
    }
  }

  LabeledPointCloud scoring = thin_cloud(cloud, config.pfsl_scoring_points);

  std::vector<Particle> particles(config.pfsl_particles);
  {
    std::mt19937_64 rng = make_rng(config.seed, 8100);
    std::normal_distribution<double> nxy(0.0, config.pfsl_init_std_xy);
    std::normal_distribution<double> nth(0.0, config.pfsl_init_std_theta);
    for (Particle& p : particles) {
      p.x = trajectory.x[0] + nxy(rng);
      p.y = trajectory.y[0] + nxy(rng);
      p.heading = trajectory.heading[0] + nth(rng);
      p.weight = 1.0 / double(config.pfsl_particles);
    }
  }

  std::vector<OdometryDelta> odometry =
      noisy_odometry(trajectory, config.noise, derive_seed(config.seed, 8200));
  PoseOfParticle camera_of_pose = [&](const Particle& p) {
    return planar_camera_pose(p.x, p.y, p.heading, trajectory.camera_height_m,
                              trajectory.ground_z);
  };

  const int n_reports = std::min(config.num_queries, total_steps);
  std::vector<char> report(static_cast<std::size_t>(total_steps) + 1, 0);
  for (int q = 0; q < n_reports; ++q)
    report[static_cast<std::size_t>((std::int64_t(q) + 1) * total_steps /
                                    n_reports)] = 1;

  BenchmarkResult result;
  result.method = Method::kPfsl;
  for (int t = 1; t <= total_steps; ++t) {
    LabelMap labels =
        render_label_map(cloud, camera, trajectory.poses[t], config.noise, k,
                         derive_seed(config.seed, 8300 + std::uint64_t(t)));
    pfsl_step(particles, odometry[t - 1], labels, scoring, camera,
              camera_of_pose, mask, config.pfsl,
              derive_seed(config.seed, 20000 + std::uint64_t(t)));
    if (!report[t]) continue;

    ParticleEstimate est = particle_estimate(particles);
    QueryResult row;
    char id[32];
    std::snprintf(id, sizeof id, "s%04d", t);
    row.query_id = id;
    row.success = true;
    Pose est_pose =
        planar_camera_pose(est.position.x(), est.position.y(), est.heading,
                           trajectory.camera_height_m, trajectory.ground_z);
    auto [pos_err, rot_err] = pose_error(est_pose, trajectory.poses[t]);
    row.position_error_m = pos_err;
    row.rotation_error_deg = rot_err;
    long visible = 0;
    long matching = 0;
    for (const CloudPoint& pt : scoring.points) {
      if (!mask[pt.label]) continue;
      auto px = project(camera, est_pose, pt.position);
      if (!px) continue;
      ++visible;
      int r = static_cast<int>(std::floor(px->y()));
      int c = static_cast<int>(std::floor(px->x()));
      if (labels.contains(r, c) && labels.at(r, c) == pt.label) ++matching;
    }
    row.inlier_count = static_cast<int>(matching);
    row.inlier_ratio = visible > 0 ? double(matching) / double(visible) : 0.0;
    result.rows.push_back(std::move(row));
  }
  finalize_benchmark(config, &result);
  return result;
}

// Single-image localization of one observation against the map; shared by
// the benchmark runner and the CLI. Throws std::invalid_argument when too
// few matches survive filtering.
inline void localize_one(const Observation& obs, const Pose& truth,
                         const LabeledPointCloud& cloud,
                         const PinholeCamera& camera, double camera_height_m,
                         double ground_z, const BenchmarkConfig& config,
                         std::uint64_t ransac_seed, QueryResult* row) {
  std::vector<Match2D3D> matches;
  std::vector<char> flags;
  ratio_test_flagged(obs, config.ratio_threshold, &matches, &flags);
  row->pre_filter_inlier_ratio = flag_ratio(flags);
  row->post_filter_inlier_ratio = row->pre_filter_inlier_ratio;

  RansacConfig rc;
  rc.iterations = config.ransac_iterations;
  rc.inlier_threshold_px = config.inlier_threshold_px;
  rc.seed = ransac_seed;

  RansacResult estimate;
  if (config.method == Method::kPlain) {
    estimate = ransac_pose(matches, cloud, camera, rc);
  } else {
    ssmc_flagged(obs.query_labels, cloud, &matches, &flags);
    row->post_filter_inlier_ratio = flag_ratio(flags);
    if (config.method == Method::kSsmc) {
      estimate = ransac_pose(matches, cloud, camera, rc);
    } else {
      GravityPrior prior;
      prior.gravity_dir = Vec3(0, 0, -1);
      prior.camera_height_m = camera_height_m;
      prior.yaw_samples = config.gsmc_yaw_samples;
      estimate = gsmc_localize(matches, cloud, camera, obs.query_labels,
                               prior, ground_z, rc,
                               config.gsmc_neighborhood_px,
                               config.gsmc_scoring_stride);
    }
  }
  if (estimate.success) {
    row->success = true;
    auto [pos, rot] = pose_error(estimate.pose, truth);
    row->position_error_m = pos;
    row->rotation_error_deg = rot;
    row->inlier_count = estimate.inlier_count;
    row->inlier_ratio = estimate.inlier_ratio;
  }
}

}  // namespace detail

/// Seeded end-to-end benchmark. Single-image methods (plain / ssmc / gsmc)
/// sample query poses evenly from the trajectory and localize each query
/// independently (parallel across queries); pfsl runs the particle filter
/// along the whole trajectory and reports at the sampled steps. Aggregates
/// pose errors into a recall table plus inlier-count and inlier-ratio CDFs.
inline BenchmarkResult run_benchmark(const LabeledPointCloud& cloud,
                                     const Trajectory& trajectory,
                                     const PinholeCamera& camera,
                                     const BenchmarkConfig& config) {
  config.validate();
  cloud.validate();
  camera.validate();
  if (config.label_granularity != static_cast<int>(cloud.num_classes))
    throw std::invalid_argument(
        "run_benchmark: label_granularity != cloud.num_classes");
  if (trajectory.size() < 1)
    throw std::invalid_argument("run_benchmark: empty trajectory");

  if (config.method == Method::kPfsl)
    return detail::run_pfsl_benchmark(cloud, trajectory, camera, config);

  const int k = config.label_granularity;
  const int n_queries = std::min(config.num_queries, trajectory.size());
  BenchmarkResult result;
  result.method = config.method;
  result.rows.resize(n_queries);

  parallel_for(n_queries, config.threads, [&](std::size_t q) {
    int step = static_cast<int>(double(q) * double(trajectory.size()) /
                                double(n_queries));
    const Pose& truth = trajectory.poses[step];
    QueryResult row;
    char id[32];
    std::snprintf(id, sizeof id, "q%04zu", q);
    row.query_id = id;
    try {
      Observation obs =
          gen_observations(cloud, camera, truth, config.noise, k,
                           derive_seed(config.seed, 9000 + std::uint64_t(q)));
      detail::localize_one(obs, truth, cloud, camera,
                           trajectory.camera_height_m, trajectory.ground_z,
                           config, derive_seed(config.seed, 40000 + q), &row);
    } catch (const std::invalid_argument&) {
      // Too few matches survived filtering; the query counts as a failure.
    }
    result.rows[q] = std::move(row);
  });

  detail::finalize_benchmark(config, &result);
  return result;
}

}  // namespace fgsn
