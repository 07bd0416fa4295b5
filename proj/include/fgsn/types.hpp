// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgsn {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Error thrown when a persisted artifact cannot be decoded. The message
/// names the offending field or section.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pixel address in raster convention: row 0 is the top image row.
struct PixelCoord {
  int row = 0;
  int col = 0;

  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Dense raster of per-pixel feature vectors, row-major, origin top-left.
/// data layout: (row * width + col) * dim + component.
template <typename Scalar>
struct FeatureMapT {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<Scalar> data;

  FeatureMapT() = default;
  FeatureMapT(int h, int w, int d)
      : height(h), width(w), dim(d),
        data(static_cast<std::size_t>(h) * w * d, Scalar(0)) {
    if (h <= 0 || w <= 0 || d <= 0)
      throw std::invalid_argument("FeatureMap: non-positive shape");
  }

  std::span<const Scalar> at(int row, int col) const {
    return {data.data() + (static_cast<std::size_t>(row) * width + col) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<Scalar> at(int row, int col) {
    return {data.data() + (static_cast<std::size_t>(row) * width + col) * dim,
            static_cast<std::size_t>(dim)};
  }
  bool contains(int row, int col) const {
    return row >= 0 && row < height && col >= 0 && col < width;
  }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * width;
  }

  void validate() const {
    if (height <= 0 || width <= 0 || dim <= 0)
      throw std::invalid_argument("FeatureMap: non-positive shape");
    if (data.size() != pixel_count() * static_cast<std::size_t>(dim))
      throw std::invalid_argument("FeatureMap: data length mismatch");
    for (Scalar v : data)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::invalid_argument("FeatureMap: non-finite value");
  }
};

using FeatureMap = FeatureMapT<float>;

/// Hard per-pixel labels. Every label must be < num_classes.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::uint32_t num_classes = 0;
  std::vector<std::uint32_t> labels;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint32_t classes, std::uint32_t fill = 0)
      : height(h), width(w), num_classes(classes),
        labels(static_cast<std::size_t>(h) * w, fill) {
    if (h <= 0 || w <= 0 || classes == 0)
      throw std::invalid_argument("LabelMap: empty shape or zero classes");
    if (fill >= classes)
      throw std::invalid_argument("LabelMap: fill label out of range");
  }

  std::uint32_t at(int row, int col) const {
    return labels[static_cast<std::size_t>(row) * width + col];
  }
  std::uint32_t& at(int row, int col) {
    return labels[static_cast<std::size_t>(row) * width + col];
  }
  bool contains(int row, int col) const {
    return row >= 0 && row < height && col >= 0 && col < width;
  }

  void validate() const {
    if (height <= 0 || width <= 0)
      throw std::invalid_argument("LabelMap: non-positive shape");
    if (labels.size() != static_cast<std::size_t>(height) * width)
      throw std::invalid_argument("LabelMap: labels length mismatch");
    for (std::uint32_t l : labels)
      if (l >= num_classes)
        throw std::invalid_argument("LabelMap: label >= num_classes");
  }
};

/// Per-pixel class scores. After normalization each pixel's scores form a
/// probability vector. layout: (row * width + col) * num_classes + class.
template <typename Scalar>
struct ScoreMapT {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<Scalar> scores;

  ScoreMapT() = default;
  ScoreMapT(int h, int w, int classes)
      : height(h), width(w), num_classes(classes),
        scores(static_cast<std::size_t>(h) * w * classes, Scalar(0)) {
    if (h <= 0 || w <= 0 || classes <= 0)
      throw std::invalid_argument("ScoreMap: non-positive shape");
  }

  std::span<const Scalar> at(int row, int col) const {
    return {scores.data() +
                (static_cast<std::size_t>(row) * width + col) * num_classes,
            static_cast<std::size_t>(num_classes)};
  }
  std::span<Scalar> at(int row, int col) {
    return {scores.data() +
                (static_cast<std::size_t>(row) * width + col) * num_classes,
            static_cast<std::size_t>(num_classes)};
  }

  /// In-place per-pixel normalization to unit sum (softmax is applied
  /// earlier, by whoever produced raw scores; this is a plain rescale).
  void normalize() {
    for (std::size_t px = 0; px < static_cast<std::size_t>(height) * width;
         ++px) {
      Scalar* s = scores.data() + px * num_classes;
      double sum = 0;
      for (int c = 0; c < num_classes; ++c) sum += static_cast<double>(s[c]);
      if (sum <= 0) throw std::invalid_argument("ScoreMap: non-positive sum");
      for (int c = 0; c < num_classes; ++c)
        s[c] = static_cast<Scalar>(static_cast<double>(s[c]) / sum);
    }
  }

  bool is_normalized(double tol = 1e-6) const {
    for (std::size_t px = 0; px < static_cast<std::size_t>(height) * width;
         ++px) {
      const Scalar* s = scores.data() + px * num_classes;
      double sum = 0;
      for (int c = 0; c < num_classes; ++c) {
        double v = static_cast<double>(s[c]);
        if (!std::isfinite(v) || v < -tol || v > 1 + tol) return false;
        sum += v;
      }
      if (std::abs(sum - 1.0) > tol) return false;
    }
    return true;
  }

  LabelMap argmax_labels() const {
    LabelMap out(height, width, static_cast<std::uint32_t>(num_classes));
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) {
        auto s = at(r, c);
        int best = 0;
        for (int k = 1; k < num_classes; ++k)
          if (s[k] > s[best]) best = k;
        out.at(r, c) = static_cast<std::uint32_t>(best);
      }
    return out;
  }

  void validate() const {
    if (height <= 0 || width <= 0 || num_classes <= 0)
      throw std::invalid_argument("ScoreMap: non-positive shape");
    if (scores.size() != static_cast<std::size_t>(height) * width *
                             static_cast<std::size_t>(num_classes))
      throw std::invalid_argument("ScoreMap: scores length mismatch");
    for (Scalar v : scores)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::invalid_argument("ScoreMap: non-finite value");
  }
};

using ScoreMap = ScoreMapT<float>;
/// Double-precision scores used inside training / gradient paths.
using ScoreTensor = ScoreMapT<double>;

/// A reference/target image pair with matched pixel positions.
struct CorrespondenceSample {
  std::string ref_image_id;
  std::string tgt_image_id;
  std::vector<PixelCoord> ref_points;
  std::vector<PixelCoord> tgt_points;

  std::size_t size() const { return ref_points.size(); }

  void validate() const {
    if (ref_points.empty())
      throw std::invalid_argument("CorrespondenceSample: no points");
    if (ref_points.size() != tgt_points.size())
      throw std::invalid_argument(
          "CorrespondenceSample: ref/tgt point count mismatch");
  }
};

struct PinholeCamera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    if (fx <= 0 || fy <= 0)
      throw std::invalid_argument("PinholeCamera: non-positive focal length");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
      throw std::invalid_argument(
          "PinholeCamera: principal point outside image");
    if (width <= 0 || height <= 0)
      throw std::invalid_argument("PinholeCamera: non-positive size");
  }
};

/// Rigid camera pose, stored world->camera: a world point p maps to
/// camera coordinates rotation * p + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  /// Camera center in world coordinates.
  Vec3 center() const { return -rotation.transpose() * translation; }

  Pose inverse() const {
    Pose out;
    out.rotation = rotation.transpose();
    out.translation = -(rotation.transpose() * translation);
    return out;
  }

  /// this ∘ other: apply `other` first, then this pose.
  Pose compose(const Pose& other) const {
    Pose out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  bool is_valid(double tol = 1e-9) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    Mat3 should_be_identity = rotation.transpose() * rotation;
    if ((should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() > tol)
      return false;
    return std::abs(rotation.determinant() - 1.0) <= tol;
  }

  void validate(double tol = 1e-9) const {
    if (!is_valid(tol)) throw std::invalid_argument("Pose: invalid rotation");
  }
};

/// 3D scene point with a class/cluster label and an optional descriptor.
struct CloudPoint {
  Vec3 position = Vec3::Zero();
  std::uint32_t label = 0;
  std::vector<float> descriptor;
};

struct LabeledPointCloud {
  std::uint32_t num_classes = 0;
  std::vector<CloudPoint> points;

  std::size_t size() const { return points.size(); }

  void validate() const {
    for (const CloudPoint& p : points) {
      if (!p.position.allFinite())
        throw std::invalid_argument("LabeledPointCloud: non-finite position");
      if (p.label >= num_classes)
        throw std::invalid_argument(
            "LabeledPointCloud: label >= num_classes");
    }
  }
};

/// One 2D observation of a 3D point: which image saw it and where.
struct PixelObservation {
  std::string image_id;
  PixelCoord pixel;
};

using SegmentationSet = std::map<std::string, LabelMap>;

/// Most frequent label among the observed pixels; ties resolved toward the
/// lowest label index.
inline std::uint32_t majority_label(
    std::span<const PixelObservation> observations,
    const SegmentationSet& segmentations) {
  if (observations.empty())
    throw std::invalid_argument("majority_label: no observations");
  std::map<std::uint32_t, std::size_t> counts;
  for (const PixelObservation& obs : observations) {
    auto it = segmentations.find(obs.image_id);
    if (it == segmentations.end())
      throw std::invalid_argument("majority_label: unknown image id '" +
                                  obs.image_id + "'");
    const LabelMap& seg = it->second;
    if (!seg.contains(obs.pixel.row, obs.pixel.col))
      throw std::invalid_argument("majority_label: pixel outside label map");
    counts[seg.at(obs.pixel.row, obs.pixel.col)]++;
  }
  std::uint32_t best = 0;
  std::size_t best_count = 0;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {  // map iterates ascending, so ties keep lowest
      best = label;
      best_count = count;
    }
  }
  return best;
}

}  // namespace fgsn
