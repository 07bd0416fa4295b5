// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic correspondence datasets for the clustering/training pipeline:
// pairs of feature maps showing the same piecewise-constant "scene" from two
// traversals, with pixel-accurate correspondences and ground-truth appearance
// classes for evaluation.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgsn/random.hpp"
#include "fgsn/serialization.hpp"
#include "fgsn/training.hpp"
#include "fgsn/types.hpp"

namespace fgsn {

struct CorrDataSpec {
  int num_pairs = 6;
  int height = 24;
  int width = 32;
  int feature_dim = 6;
  int num_regions = 12;     // Voronoi regions per image
  int num_prototypes = 8;   // appearance classes shared across the dataset
  double prototype_scale = 2.0;
  double noise_std = 0.05;
  double condition_shift = 0.4;  // global appearance offset of the 2nd traversal
  int corr_points = 60;          // correspondences per pair
  int shift_row = 2;             // ref->tgt viewpoint shift in pixels
  int shift_col = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_pairs < 1) throw std::invalid_argument("CorrDataSpec: num_pairs must be >= 1");
    if (height < 2 || width < 2)
      throw std::invalid_argument("CorrDataSpec: maps must be at least 2x2");
    if (feature_dim < 1)
      throw std::invalid_argument("CorrDataSpec: feature_dim must be >= 1");
    if (num_regions < 1 || num_prototypes < 1)
      throw std::invalid_argument("CorrDataSpec: region/prototype counts must be >= 1");
    if (noise_std < 0 || condition_shift < 0 || prototype_scale <= 0)
      throw std::invalid_argument("CorrDataSpec: bad noise settings");
    if (corr_points < 1)
      throw std::invalid_argument("CorrDataSpec: corr_points must be >= 1");
    if (shift_row < 0 || shift_col < 0 || shift_row >= height ||
        shift_col >= width)
      throw std::invalid_argument("CorrDataSpec: shift must fit inside the map");
  }
};

inline void to_json(json& j, const CorrDataSpec& s) {
  j = json{{"num_pairs", s.num_pairs},
           {"height", s.height},
           {"width", s.width},
           {"feature_dim", s.feature_dim},
           {"num_regions", s.num_regions},
           {"num_prototypes", s.num_prototypes},
           {"prototype_scale", s.prototype_scale},
           {"noise_std", s.noise_std},
           {"condition_shift", s.condition_shift},
           {"corr_points", s.corr_points},
           {"shift_row", s.shift_row},
           {"shift_col", s.shift_col},
           {"seed", s.seed}};
}
inline void from_json(const json& j, CorrDataSpec& s) {
  j.at("num_pairs").get_to(s.num_pairs);
  j.at("height").get_to(s.height);
  j.at("width").get_to(s.width);
  j.at("feature_dim").get_to(s.feature_dim);
  j.at("num_regions").get_to(s.num_regions);
  j.at("num_prototypes").get_to(s.num_prototypes);
  j.at("prototype_scale").get_to(s.prototype_scale);
  j.at("noise_std").get_to(s.noise_std);
  j.at("condition_shift").get_to(s.condition_shift);
  j.at("corr_points").get_to(s.corr_points);
  j.at("shift_row").get_to(s.shift_row);
  j.at("shift_col").get_to(s.shift_col);
  j.at("seed").get_to(s.seed);
}

struct CorrDataset {
  TrainData data;
  std::vector<LabelMap> ref_classes;  // ground-truth appearance class per pixel
};

/// Each pair shows one piecewise-constant scene twice: the reference image
/// samples a Voronoi region field of appearance prototypes plus Gaussian
/// noise; the target image samples the same field shifted by
/// (shift_row, shift_col) pixels and offset by a dataset-wide condition
/// vector. Correspondences map target pixel (r, c) to reference pixel
/// (r + shift_row, c + shift_col).
inline CorrDataset gen_correspondence_data(const CorrDataSpec& spec) {
  spec.validate();
  std::mt19937_64 rng = make_rng(spec.seed, 0xc0da);
  std::normal_distribution<double> unit_normal(0.0, 1.0);

  Eigen::MatrixXd prototypes(spec.num_prototypes, spec.feature_dim);
  for (int p = 0; p < spec.num_prototypes; ++p)
    for (int d = 0; d < spec.feature_dim; ++d)
      prototypes(p, d) = spec.prototype_scale * unit_normal(rng);

  Eigen::VectorXd shift_dir(spec.feature_dim);
  for (int d = 0; d < spec.feature_dim; ++d) shift_dir(d) = unit_normal(rng);
  if (shift_dir.norm() > 0) shift_dir.normalize();
  Eigen::VectorXd condition = spec.condition_shift * shift_dir;

  std::uniform_real_distribution<double> urow(0.0, double(spec.height));
  std::uniform_real_distribution<double> ucol(0.0, double(spec.width));
  std::uniform_int_distribution<int> uproto(0, spec.num_prototypes - 1);
  std::normal_distribution<double> noise(0.0, spec.noise_std);

  CorrDataset out;
  for (int pair = 0; pair < spec.num_pairs; ++pair) {
    std::vector<double> site_r(spec.num_regions), site_c(spec.num_regions);
    std::vector<int> site_proto(spec.num_regions);
    for (int s = 0; s < spec.num_regions; ++s) {
      site_r[s] = urow(rng);
      site_c[s] = ucol(rng);
      site_proto[s] = uproto(rng);
    }
    auto proto_at = [&](double r, double c) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int s = 0; s < spec.num_regions; ++s) {
        double dr = r - site_r[s];
        double dc = c - site_c[s];
        double d = dr * dr + dc * dc;
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      return site_proto[best];
    };

    FeatureMap ref(spec.height, spec.width, spec.feature_dim);
    FeatureMap tgt(spec.height, spec.width, spec.feature_dim);
    LabelMap classes(spec.height, spec.width,
                     static_cast<std::uint32_t>(spec.num_prototypes), 0);
    for (int r = 0; r < spec.height; ++r)
      for (int c = 0; c < spec.width; ++c) {
        int p_ref = proto_at(r, c);
        classes.at(r, c) = static_cast<std::uint32_t>(p_ref);
        auto fr = ref.at(r, c);
        for (int d = 0; d < spec.feature_dim; ++d)
          fr[d] = static_cast<float>(prototypes(p_ref, d) +
                                     (spec.noise_std > 0 ? noise(rng) : 0.0));
        int p_tgt = proto_at(r + spec.shift_row, c + spec.shift_col);
        auto ft = tgt.at(r, c);
        for (int d = 0; d < spec.feature_dim; ++d)
          ft[d] = static_cast<float>(prototypes(p_tgt, d) + condition(d) +
                                     (spec.noise_std > 0 ? noise(rng) : 0.0));
      }

    CorrespondenceSample sample;
    sample.ref_image_id = "ref_" + std::to_string(pair);
    sample.tgt_image_id = "tgt_" + std::to_string(pair);
    std::uniform_int_distribution<int> vr(0, spec.height - spec.shift_row - 1);
    std::uniform_int_distribution<int> vc(0, spec.width - spec.shift_col - 1);
    for (int i = 0; i < spec.corr_points; ++i) {
      int r = vr(rng);
      int c = vc(rng);
      sample.tgt_points.push_back({r, c});
      sample.ref_points.push_back({r + spec.shift_row, c + spec.shift_col});
    }

    out.data.ref_maps.push_back(std::move(ref));
    out.data.tgt_maps.push_back(std::move(tgt));
    out.data.pairs.push_back({pair, pair, std::move(sample)});
    out.ref_classes.push_back(std::move(classes));
  }
  out.data.validate();
  return out;
}

}  // namespace fgsn
