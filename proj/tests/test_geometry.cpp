// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "fgsn/geometry.hpp"
#include "fgsn/random.hpp"

using namespace fgsn;

namespace {

PinholeCamera test_camera() {
  PinholeCamera cam;
  cam.fx = 500;
  cam.fy = 480;
  cam.cx = 320;
  cam.cy = 240;
  cam.width = 640;
  cam.height = 480;
  return cam;
}

Mat3 random_rotation(std::mt19937_64& rng, double max_angle = 0.4) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 axis(u(rng), u(rng), u(rng));
  while (axis.norm() < 1e-3) axis = Vec3(u(rng), u(rng), u(rng));
  std::uniform_real_distribution<double> a(-max_angle, max_angle);
  return Eigen::AngleAxisd(a(rng), axis.normalized()).toRotationMatrix();
}

Pose random_pose(std::mt19937_64& rng) {
  Pose pose;
  pose.rotation = random_rotation(rng);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Vec3 center(u(rng), u(rng), u(rng));
  pose.translation = -pose.rotation * center;
  return pose;
}

// World point that projects exactly to the requested pixel at the given depth.
Vec3 point_at_pixel(const PinholeCamera& cam, const Pose& pose, double u,
                    double v, double depth) {
  Vec3 pc((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
  return pose.rotation.transpose() * (pc - pose.translation);
}

struct RansacScene {
  LabeledPointCloud cloud;
  std::vector<Match2D3D> matches;
  Pose pose;
};

// `n` matches from exact projections; the first `outliers` of them get their
// pixel replaced by a uniform draw over the image.
RansacScene make_scene(int n, int outliers, std::uint64_t seed) {
  PinholeCamera cam = test_camera();
  std::mt19937_64 rng = make_rng(seed, 0x6e0);
  RansacScene s;
  s.pose = random_pose(rng);
  s.cloud.num_classes = 1;
  std::uniform_real_distribution<double> px(40.0, cam.width - 40.0);
  std::uniform_real_distribution<double> py(40.0, cam.height - 40.0);
  std::uniform_real_distribution<double> pz(2.0, 12.0);
  for (int i = 0; i < n; ++i) {
    double u = px(rng), v = py(rng);
    CloudPoint p;
    p.position = point_at_pixel(cam, s.pose, u, v, pz(rng));
    p.label = 0;
    s.cloud.points.push_back(p);
    Match2D3D m;
    m.pixel = i < outliers ? Vec2(px(rng), py(rng)) : Vec2(u, v);
    m.point_id = i;
    m.ratio = 0.5;
    s.matches.push_back(m);
  }
  return s;
}

}  // namespace

TEST_CASE("a point on the optical axis projects to the principal point") {
  PinholeCamera cam = test_camera();
  Pose identity;
  auto px = project(cam, identity, Vec3(0, 0, 1));
  REQUIRE(px.has_value());
  REQUIRE(px->x() == cam.cx);
  REQUIRE(px->y() == cam.cy);
}

TEST_CASE("points behind the camera or outside the frame are not visible") {
  PinholeCamera cam = test_camera();
  Pose identity;
  REQUIRE_FALSE(project(cam, identity, Vec3(0, 0, -1)).has_value());
  REQUIRE_FALSE(project(cam, identity, Vec3(0, 0, 0)).has_value());
  REQUIRE_FALSE(project(cam, identity, Vec3(50, 0, 1)).has_value());
  REQUIRE_FALSE(project(cam, identity, Vec3(0, -50, 1)).has_value());
}

TEST_CASE("projection matches a homogeneous-coordinates recomputation") {
  PinholeCamera cam = test_camera();
  std::mt19937_64 rng = make_rng(1, 0);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  int visible = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Pose pose = random_pose(rng);
    Vec3 p(u(rng), u(rng), u(rng) + 5.0);
    Eigen::Matrix3d K;
    K << cam.fx, 0, cam.cx, 0, cam.fy, cam.cy, 0, 0, 1;
    Eigen::Matrix<double, 3, 4> rt;
    rt.leftCols<3>() = pose.rotation;
    rt.col(3) = pose.translation;
    Eigen::Vector4d hom(p.x(), p.y(), p.z(), 1.0);
    Vec3 proj = K * (rt * hom);
    auto px = project(cam, pose, p);
    if (proj.z() <= 0) {
      REQUIRE_FALSE(px.has_value());
      continue;
    }
    Vec2 expect(proj.x() / proj.z(), proj.y() / proj.z());
    bool in_frame = expect.x() >= 0 && expect.x() < cam.width &&
                    expect.y() >= 0 && expect.y() < cam.height;
    REQUIRE(px.has_value() == in_frame);
    if (px) {
      ++visible;
      REQUIRE((*px - expect).norm() < 1e-9);
    }
  }
  REQUIRE(visible > 50);
}

TEST_CASE("pixel bearings are unit rays pointing at the source point") {
  PinholeCamera cam = test_camera();
  std::mt19937_64 rng = make_rng(2, 0);
  std::uniform_real_distribution<double> u(60.0, 400.0);
  for (int trial = 0; trial < 50; ++trial) {
    Pose pose = random_pose(rng);
    Vec3 p = point_at_pixel(cam, pose, u(rng), u(rng), 4.0);
    auto px = project(cam, pose, p);
    REQUIRE(px.has_value());
    Vec3 bearing = bearing_from_pixel(cam, *px);
    REQUIRE(bearing.norm() == Catch::Approx(1.0).epsilon(1e-12));
    Vec3 dir = pose.apply(p).normalized();
    REQUIRE((bearing - dir).norm() < 1e-9);
  }
}

TEST_CASE("pose error is zero for identical poses") {
  std::mt19937_64 rng = make_rng(3, 0);
  Pose pose = random_pose(rng);
  auto [pos, rot] = pose_error(pose, pose);
  REQUIRE(pos == 0.0);
  REQUIRE(rot == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("a pure translation shows up only in the position term") {
  Pose truth;
  Pose estimate;
  estimate.translation = Vec3(1, 0, 0);
  auto [pos, rot] = pose_error(estimate, truth);
  REQUIRE(pos == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(rot == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("a five-degree relative rotation measures five degrees") {
  std::mt19937_64 rng = make_rng(4, 0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vec3 axis = Vec3(u(rng), u(rng), u(rng)).normalized();
    Pose truth;
    Pose estimate;
    estimate.rotation =
        Eigen::AngleAxisd(5.0 * std::numbers::pi / 180.0, axis)
            .toRotationMatrix();
    auto [pos, rot] = pose_error(estimate, truth);
    REQUIRE(pos == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(rot == Catch::Approx(5.0).margin(1e-9));
    auto [pos2, rot2] = pose_error(truth, estimate);
    REQUIRE(rot2 == Catch::Approx(rot).margin(1e-12));
    REQUIRE(pos2 == Catch::Approx(pos).margin(1e-12));
  }
}

TEST_CASE("triangle pose solving recovers the generating pose") {
  PinholeCamera cam = test_camera();
  std::mt19937_64 rng = make_rng(5, 0);
  std::uniform_real_distribution<double> px(60.0, 580.0);
  std::uniform_real_distribution<double> py(60.0, 420.0);
  std::uniform_real_distribution<double> pz(2.0, 10.0);
  int total_solutions = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Pose truth = random_pose(rng);
    std::array<Vec3, 3> points;
    std::array<Vec3, 3> bearings;
    for (int i = 0; i < 3; ++i) {
      points[i] = point_at_pixel(cam, truth, px(rng), py(rng), pz(rng));
      bearings[i] = truth.apply(points[i]).normalized();
    }
    Vec3 d21 = points[1] - points[0];
    Vec3 d31 = points[2] - points[0];
    if (d21.cross(d31).norm() < 1e-6 * d21.norm() * d31.norm()) continue;

    std::vector<Pose> poses = p3p_solve(bearings, points);
    REQUIRE(poses.size() >= 1);
    REQUIRE(poses.size() <= 4);
    total_solutions += static_cast<int>(poses.size());

    double best_pos = 1e9, best_rot = 1e9;
    for (const Pose& pose : poses) {
      // Every solution interpolates its three inputs.
      for (int i = 0; i < 3; ++i) {
        Vec3 dir = pose.apply(points[i]).normalized();
        double angle =
            std::atan2(dir.cross(bearings[i]).norm(), dir.dot(bearings[i]));
        REQUIRE(angle < 1e-9);
      }
      auto [pos, rot] = pose_error(pose, truth);
      best_pos = std::min(best_pos, pos);
      best_rot = std::min(best_rot, rot);
    }
    REQUIRE(best_pos < 1e-6);
    REQUIRE(best_rot < 1e-6);
  }
  REQUIRE(total_solutions >= 200);
}

TEST_CASE("collinear triangles and bad bearings are rejected") {
  std::array<Vec3, 3> points = {Vec3(0, 0, 5), Vec3(1, 0, 5), Vec3(2, 0, 5)};
  std::array<Vec3, 3> bearings = {Vec3(0, 0, 1), Vec3(0.1, 0, 1).normalized(),
                                  Vec3(0.2, 0, 1).normalized()};
  REQUIRE_THROWS_AS(p3p_solve(bearings, points), std::invalid_argument);

  points[2] = Vec3(1, 2, 6);
  bearings[2] = Vec3(0.2, 0.3, 1.0);  // not unit norm
  REQUIRE_THROWS_AS(p3p_solve(bearings, points), std::invalid_argument);
}

TEST_CASE("consensus search on clean matches gets the exact pose") {
  RansacScene s = make_scene(80, 0, 10);
  RansacConfig config;
  config.iterations = 50;
  config.seed = 1;
  RansacResult r =
      ransac_pose(s.matches, s.cloud, test_camera(), config);
  REQUIRE(r.success);
  REQUIRE(r.inlier_count == 80);
  REQUIRE(r.inlier_ratio == 1.0);
  auto [pos, rot] = pose_error(r.pose, s.pose);
  REQUIRE(pos < 1e-6);
  REQUIRE(rot < 1e-6);
}

TEST_CASE("thirty percent outliers still yield the true pose") {
  for (std::uint64_t seed : {11, 12, 13}) {
    RansacScene s = make_scene(100, 30, seed);
    RansacConfig config;
    config.iterations = 2000;
    config.seed = seed;
    RansacResult r =
        ransac_pose(s.matches, s.cloud, test_camera(), config);
    REQUIRE(r.success);
    auto [pos, rot] = pose_error(r.pose, s.pose);
    REQUIRE(pos < 0.01);
    REQUIRE(rot < 0.1);
    REQUIRE(r.inlier_count >= 70);
    for (int i = 30; i < 100; ++i) REQUIRE(r.inlier_mask[i] == 1);
  }
}

TEST_CASE("consensus search is deterministic for a fixed seed") {
  RansacScene s = make_scene(60, 18, 20);
  RansacConfig config;
  config.iterations = 500;
  config.seed = 9;
  RansacResult a = ransac_pose(s.matches, s.cloud, test_camera(), config);
  RansacResult b = ransac_pose(s.matches, s.cloud, test_camera(), config);
  REQUIRE(a.pose.rotation == b.pose.rotation);
  REQUIRE(a.pose.translation == b.pose.translation);
  REQUIRE(a.inlier_count == b.inlier_count);
  REQUIRE(a.inlier_mask == b.inlier_mask);
}

TEST_CASE("inlier count grows with the acceptance threshold") {
  RansacScene s = make_scene(100, 40, 30);
  std::mt19937_64 rng = make_rng(31, 0);
  std::normal_distribution<double> jitter(0.0, 1.5);
  for (Match2D3D& m : s.matches)
    m.pixel += Vec2(jitter(rng), jitter(rng));
  int prev = 0;
  for (double threshold : {1.0, 2.0, 5.0, 10.0}) {
    RansacConfig config;
    config.iterations = 300;
    config.seed = 4;
    config.inlier_threshold_px = threshold;
    RansacResult r =
        ransac_pose(s.matches, s.cloud, test_camera(), config);
    REQUIRE(r.inlier_count >= prev);
    prev = r.inlier_count;
  }
}

TEST_CASE("weights pinned to three inliers reproduce the three-match run") {
  RansacScene s = make_scene(40, 37, 41);  // matches 37..39 are clean
  std::array<Vec3, 3> bearings;
  std::array<Vec3, 3> points;
  for (int i = 0; i < 3; ++i) {
    bearings[i] =
        bearing_from_pixel(test_camera(), s.matches[37 + i].pixel);
    points[i] = s.cloud.points[s.matches[37 + i].point_id].position;
  }
  REQUIRE(p3p_solve(bearings, points).size() == 1);  // unambiguous triangle

  RansacConfig config;
  config.iterations = 20;
  config.seed = 2;
  std::vector<double> weights(40, 0.0);
  weights[37] = weights[38] = weights[39] = 1.0;
  RansacResult weighted =
      ransac_pose(s.matches, s.cloud, test_camera(), config, &weights);

  std::vector<Match2D3D> three(s.matches.begin() + 37, s.matches.end());
  LabeledPointCloud cloud = s.cloud;
  for (Match2D3D& m : three) m.point_id -= 37;
  cloud.points.erase(cloud.points.begin(), cloud.points.begin() + 37);
  RansacResult alone = ransac_pose(three, cloud, test_camera(), config);

  REQUIRE(weighted.success);
  REQUIRE(alone.success);
  auto [dpos, drot] = pose_error(weighted.pose, alone.pose);
  REQUIRE(dpos < 1e-9);
  REQUIRE(drot < 1e-9);
  auto [pos, rot] = pose_error(weighted.pose, s.pose);
  REQUIRE(pos < 1e-6);
  REQUIRE(rot < 1e-6);
}

TEST_CASE("weighted sampling succeeds where uniform sampling runs dry") {
  RansacScene s = make_scene(80, 77, 50);  // only 3 clean matches
  RansacConfig config;
  config.iterations = 40;
  config.seed = 3;
  std::vector<double> weights(80, 0.0);
  weights[77] = weights[78] = weights[79] = 1.0;
  RansacResult weighted =
      ransac_pose(s.matches, s.cloud, test_camera(), config, &weights);
  auto [pos, rot] = pose_error(weighted.pose, s.pose);
  REQUIRE(pos < 1e-6);
  REQUIRE(rot < 1e-6);

  RansacResult uniform = ransac_pose(s.matches, s.cloud, test_camera(), config);
  auto [upos, urot] = pose_error(uniform.pose, s.pose);
  REQUIRE(upos > 0.01);  // 40 uniform draws almost never hit the clean triple
}

TEST_CASE("consensus search validates its inputs") {
  RansacScene s = make_scene(10, 0, 60);
  RansacConfig config;
  config.iterations = 10;
  PinholeCamera cam = test_camera();

  std::vector<Match2D3D> two(s.matches.begin(), s.matches.begin() + 2);
  REQUIRE_THROWS_AS(ransac_pose(two, s.cloud, cam, config),
                    std::invalid_argument);

  std::vector<Match2D3D> bad = s.matches;
  bad[0].point_id = 99;
  REQUIRE_THROWS_AS(ransac_pose(bad, s.cloud, cam, config),
                    std::invalid_argument);

  std::vector<double> weights(10, 1.0);
  weights.pop_back();
  REQUIRE_THROWS_AS(ransac_pose(s.matches, s.cloud, cam, config, &weights),
                    std::invalid_argument);
  weights.assign(10, 0.0);
  REQUIRE_THROWS_AS(ransac_pose(s.matches, s.cloud, cam, config, &weights),
                    std::invalid_argument);
  weights[0] = -1.0;
  REQUIRE_THROWS_AS(ransac_pose(s.matches, s.cloud, cam, config, &weights),
                    std::invalid_argument);
  weights.assign(10, 0.0);
  weights[0] = weights[1] = 1.0;  // only two positive entries
  REQUIRE_THROWS_AS(ransac_pose(s.matches, s.cloud, cam, config, &weights),
                    std::invalid_argument);

  RansacConfig broken;
  broken.iterations = 0;
  REQUIRE_THROWS_AS(ransac_pose(s.matches, s.cloud, cam, broken),
                    std::invalid_argument);
  broken = config;
  broken.inlier_threshold_px = 0;
  REQUIRE_THROWS_AS(ransac_pose(s.matches, s.cloud, cam, broken),
                    std::invalid_argument);
}
