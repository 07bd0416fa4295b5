// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0
//
// Patch-tiled prediction with linear blend weights: patches are scored
// independently and combined per pixel as a weighted mean, weight 1 on the
// patch core falling off linearly to 0 at the patch border.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fgsn/types.hpp"

namespace fgsn {

struct TileSpec {
  int patch_size = 713;
  int stride = 476;
  int core_size = 236;

  void validate() const {
    if (core_size <= 0 || core_size > patch_size)
      throw std::invalid_argument("TileSpec: core_size must be in (0, patch_size]");
    if (stride <= 0 || stride > patch_size)
      throw std::invalid_argument("TileSpec: stride must be in (0, patch_size]");
  }
};

/// Per-axis blend ramp: 1 on the centered core span, linear to 0 at both
/// patch borders. The core start is floor((patch - core) / 2), so the two
/// ramps differ in length by one pixel when patch - core is odd.
inline Eigen::VectorXd make_axis_ramp(const TileSpec& spec) {
  spec.validate();
  const int p = spec.patch_size;
  const int k = spec.core_size;
  const int a = (p - k) / 2;  // first core pixel
  Eigen::VectorXd ramp(p);
  for (int i = 0; i < p; ++i) {
    if (i < a)
      ramp(i) = double(i) / double(a);
    else if (i < a + k)
      ramp(i) = 1.0;
    else
      ramp(i) = double(p - 1 - i) / double(p - 1 - (a + k - 1));
  }
  return ramp;
}

/// 2-D blend weights: product of the two per-axis ramps.
inline Eigen::MatrixXd make_weight_map(const TileSpec& spec) {
  Eigen::VectorXd ramp = make_axis_ramp(spec);
  return ramp * ramp.transpose();
}

using PatchPredictor = std::function<ScoreTensor(const FeatureMap&)>;

namespace detail {

// Tile offsets along one axis: stride steps, with the last tile shifted
// inward so it ends exactly at the axis border.
inline std::vector<int> tile_offsets(int length, int patch, int stride) {
  if (length <= patch) return {0};
  std::vector<int> offs;
  for (int o = 0; o + patch < length; o += stride) offs.push_back(o);
  offs.push_back(length - patch);
  return offs;
}

// Patch extraction with edge replication for images smaller than a patch.
inline FeatureMap extract_patch(const FeatureMap& image, int row0, int col0,
                                int size) {
  FeatureMap patch(size, size, image.dim);
  for (int i = 0; i < size; ++i) {
    int r = std::clamp(row0 + i, 0, image.height - 1);
    for (int j = 0; j < size; ++j) {
      int c = std::clamp(col0 + j, 0, image.width - 1);
      auto src = image.at(r, c);
      auto dst = patch.at(i, j);
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  return patch;
}

}  // namespace detail

/// Tiled inference over a full image. Each pixel's scores are the weighted
/// mean of the covering patch predictions; where every covering weight is 0
/// (image pixels landing only on exact patch borders) the weights are floored
/// at 1e-6, which reduces to a plain mean of the covering patches there.
inline ScoreMap blend_predict(const FeatureMap& image,
                              const PatchPredictor& predictor,
                              const TileSpec& spec) {
  spec.validate();
  image.validate();
  const Eigen::VectorXd ramp = make_axis_ramp(spec);
  const std::vector<int> row_offs =
      detail::tile_offsets(image.height, spec.patch_size, spec.stride);
  const std::vector<int> col_offs =
      detail::tile_offsets(image.width, spec.patch_size, spec.stride);

  const std::size_t pixels = image.pixel_count();
  int num_classes = -1;
  std::vector<double> acc;           // weighted score sums
  std::vector<double> weight(pixels, 0.0);
  std::vector<double> fallback;      // unweighted sums for zero-weight pixels
  std::vector<int> cover(pixels, 0);

  for (int r0 : row_offs) {
    for (int c0 : col_offs) {
      FeatureMap patch = detail::extract_patch(image, r0, c0, spec.patch_size);
      ScoreTensor scores = predictor(patch);
      if (scores.height != spec.patch_size || scores.width != spec.patch_size)
        throw std::invalid_argument("blend_predict: predictor output shape mismatch");
      if (num_classes < 0) {
        num_classes = scores.num_classes;
        acc.assign(pixels * num_classes, 0.0);
        fallback.assign(pixels * num_classes, 0.0);
      } else if (scores.num_classes != num_classes) {
        throw std::invalid_argument("blend_predict: predictor class count changed");
      }
      for (int i = 0; i < spec.patch_size; ++i) {
        int r = r0 + i;
        if (r >= image.height) break;
        for (int j = 0; j < spec.patch_size; ++j) {
          int c = c0 + j;
          if (c >= image.width) break;
          double w = ramp(i) * ramp(j);
          std::size_t px = static_cast<std::size_t>(r) * image.width + c;
          auto s = scores.at(i, j);
          for (int k = 0; k < num_classes; ++k) {
            acc[px * num_classes + k] += w * s[k];
            fallback[px * num_classes + k] += s[k];
          }
          weight[px] += w;
          cover[px]++;
        }
      }
    }
  }

  ScoreMap out(image.height, image.width, num_classes);
  for (std::size_t px = 0; px < pixels; ++px) {
    if (weight[px] > 0) {
      for (int k = 0; k < num_classes; ++k)
        out.scores[px * num_classes + k] =
            static_cast<float>(acc[px * num_classes + k] / weight[px]);
    } else {
      // All covering weights are 0; the 1e-6 floor cancels into a plain mean.
      if (cover[px] == 0)
        throw std::runtime_error("blend_predict: uncovered pixel");
      for (int k = 0; k < num_classes; ++k)
        out.scores[px * num_classes + k] =
            static_cast<float>(fallback[px * num_classes + k] / cover[px]);
    }
  }
  return out;
}

}  // namespace fgsn
