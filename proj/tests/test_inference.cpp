// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "fgsn/inference.hpp"
#include "fgsn/random.hpp"

using namespace fgsn;

namespace {

TileSpec small_spec() {
  TileSpec s;
  s.patch_size = 5;
  s.stride = 3;
  s.core_size = 1;
  return s;
}

FeatureMap index_image(int h, int w) {
  FeatureMap img(h, w, 1);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) img.at(r, c)[0] = float(r * w + c);
  return img;
}

// Constant scores per patch, keyed by the patch's top-left image value.
PatchPredictor patch_id_predictor(int num_classes = 2) {
  return [num_classes](const FeatureMap& patch) {
    ScoreTensor out(patch.height, patch.width, num_classes);
    double v = patch.at(0, 0)[0];
    for (std::size_t px = 0; px < patch.pixel_count(); ++px) {
      out.scores[px * num_classes] = v;
      for (int k = 1; k < num_classes; ++k)
        out.scores[px * num_classes + k] = 1000.0 - v;
    }
    return out;
  };
}

}  // namespace

TEST_CASE("axis ramp is flat on the core and linear to zero at the borders") {
  TileSpec spec;
  spec.patch_size = 11;
  spec.stride = 6;
  spec.core_size = 3;
  Eigen::VectorXd ramp = make_axis_ramp(spec);
  REQUIRE(ramp.size() == 11);
  REQUIRE(ramp(0) == 0.0);
  REQUIRE(ramp(10) == 0.0);
  REQUIRE(ramp(2) == 0.5);
  REQUIRE(ramp(8) == 0.5);
  REQUIRE(ramp(4) == 1.0);
  REQUIRE(ramp(5) == 1.0);
  REQUIRE(ramp(6) == 1.0);
  for (int i = 1; i < 11; ++i) REQUIRE(ramp(i) >= 0.0);
}

TEST_CASE("odd core margins leave the down ramp one pixel longer") {
  TileSpec spec;
  spec.patch_size = 10;
  spec.stride = 5;
  spec.core_size = 3;
  Eigen::VectorXd ramp = make_axis_ramp(spec);
  // floor((10 - 3) / 2) = 3 pixels rise, core 3..5, 4 pixels fall.
  REQUIRE(ramp(2) == Catch::Approx(2.0 / 3.0));
  REQUIRE(ramp(3) == 1.0);
  REQUIRE(ramp(5) == 1.0);
  REQUIRE(ramp(6) == Catch::Approx(3.0 / 4.0));
  REQUIRE(ramp(9) == 0.0);
}

TEST_CASE("weight map is the outer product of the axis ramps") {
  TileSpec spec;
  spec.patch_size = 11;
  spec.stride = 6;
  spec.core_size = 3;
  Eigen::MatrixXd w = make_weight_map(spec);
  Eigen::VectorXd ramp = make_axis_ramp(spec);
  REQUIRE(w.rows() == 11);
  REQUIRE(w.cols() == 11);
  REQUIRE(w(5, 5) == 1.0);
  REQUIRE(w(2, 8) == 0.25);
  REQUIRE(w(0, 5) == 0.0);
  REQUIRE(w(5, 10) == 0.0);
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) REQUIRE(w(i, j) == ramp(i) * ramp(j));
}

TEST_CASE("default tile weights are one on the core and zero on the border") {
  TileSpec spec;  // 713 / 476 / 236
  Eigen::MatrixXd w = make_weight_map(spec);
  const int a = (713 - 236) / 2;
  for (int i = a; i < a + 236; i += 5)
    for (int j = a; j < a + 236; j += 5) REQUIRE(w(i, j) == 1.0);
  for (int i = 0; i < 713; i += 7) {
    REQUIRE(w(i, 0) == 0.0);
    REQUIRE(w(0, i) == 0.0);
    REQUIRE(w(i, 712) == 0.0);
    REQUIRE(w(712, i) == 0.0);
  }
  REQUIRE(w(a - 1, a) < 1.0);
  REQUIRE(w(a + 236, a) < 1.0);
}

TEST_CASE("tile configuration bounds are enforced") {
  TileSpec spec = small_spec();
  spec.core_size = 0;
  REQUIRE_THROWS_AS(make_axis_ramp(spec), std::invalid_argument);
  spec = small_spec();
  spec.core_size = 6;
  REQUIRE_THROWS_AS(make_axis_ramp(spec), std::invalid_argument);
  spec = small_spec();
  spec.stride = 0;
  REQUIRE_THROWS_AS(make_axis_ramp(spec), std::invalid_argument);
  spec = small_spec();
  spec.stride = 9;
  REQUIRE_THROWS_AS(make_axis_ramp(spec), std::invalid_argument);
}

TEST_CASE("an image no larger than one patch passes through unblended") {
  TileSpec spec = small_spec();
  FeatureMap img = index_image(4, 5);
  int calls = 0;
  PatchPredictor pred = [&](const FeatureMap& patch) {
    ++calls;
    ScoreTensor out(patch.height, patch.width, 2);
    for (std::size_t px = 0; px < patch.pixel_count(); ++px) {
      out.scores[px * 2] = 0.25;
      out.scores[px * 2 + 1] = 0.75;
    }
    return out;
  };
  ScoreMap out = blend_predict(img, pred, spec);
  REQUIRE(calls == 1);
  REQUIRE(out.height == 4);
  REQUIRE(out.width == 5);
  for (std::size_t px = 0; px < std::size_t(out.height) * out.width; ++px) {
    REQUIRE(out.scores[px * 2] == 0.25f);
    REQUIRE(out.scores[px * 2 + 1] == 0.75f);
  }
}

TEST_CASE("overlapping patches blend by the hand-computed weights") {
  TileSpec spec = small_spec();  // ramp [0, .5, 1, .5, 0], tiles at 0 and 2
  FeatureMap img = index_image(7, 7);
  ScoreMap out = blend_predict(img, patch_id_predictor(), spec);

  // Patch constants are the image value at each tile origin:
  // (0,0)->0, (0,2)->2, (2,0)->14, (2,2)->16.
  REQUIRE(out.at(3, 3)[0] == 8.0f);    // all four at weight .25
  REQUIRE(out.at(2, 2)[0] == 0.0f);    // core of the first tile only
  REQUIRE(out.at(4, 4)[0] == 16.0f);   // core of the shifted last tile
  REQUIRE(out.at(3, 2)[0] == 7.0f);    // even split between tiles 0 and 14
  REQUIRE(out.at(0, 0)[0] == 0.0f);    // zero-weight corner, single cover
  REQUIRE(out.at(3, 3)[1] == 992.0f);  // second channel blends the same way
}

TEST_CASE("pixels covered only at zero weight fall back to a plain mean") {
  TileSpec spec;
  spec.patch_size = 9;
  spec.stride = 6;
  spec.core_size = 3;
  // A one-row image keeps every pixel on the zero row ramp.
  FeatureMap img = index_image(1, 15);
  ScoreMap out = blend_predict(img, patch_id_predictor(), spec);
  // Tiles start at columns 0 and 6; constants 0 and 6.
  for (int c = 0; c < 6; ++c) REQUIRE(out.at(0, c)[0] == 0.0f);
  for (int c = 6; c < 9; ++c) REQUIRE(out.at(0, c)[0] == 3.0f);
  for (int c = 9; c < 15; ++c) REQUIRE(out.at(0, c)[0] == 6.0f);
}

TEST_CASE("a constant predictor is reproduced exactly everywhere") {
  TileSpec spec = small_spec();
  FeatureMap img = index_image(13, 9);
  PatchPredictor pred = [](const FeatureMap& patch) {
    ScoreTensor out(patch.height, patch.width, 3);
    for (std::size_t px = 0; px < patch.pixel_count(); ++px) {
      out.scores[px * 3] = 0.25;
      out.scores[px * 3 + 1] = 0.5;
      out.scores[px * 3 + 2] = 0.25;
    }
    return out;
  };
  ScoreMap out = blend_predict(img, pred, spec);
  for (std::size_t px = 0; px < std::size_t(out.height) * out.width; ++px) {
    REQUIRE(out.scores[px * 3] == 0.25f);
    REQUIRE(out.scores[px * 3 + 1] == 0.5f);
    REQUIRE(out.scores[px * 3 + 2] == 0.25f);
  }
}

TEST_CASE("blending normalized patch scores keeps pixels normalized") {
  TileSpec spec;
  spec.patch_size = 6;
  spec.stride = 4;
  spec.core_size = 2;
  FeatureMap img = index_image(11, 14);
  std::mt19937_64 rng = make_rng(3, 0);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  PatchPredictor pred = [&](const FeatureMap& patch) {
    ScoreTensor out(patch.height, patch.width, 4);
    for (std::size_t px = 0; px < patch.pixel_count(); ++px) {
      double z = 0;
      for (int k = 0; k < 4; ++k) {
        out.scores[px * 4 + k] = u(rng);
        z += out.scores[px * 4 + k];
      }
      for (int k = 0; k < 4; ++k) out.scores[px * 4 + k] /= z;
    }
    return out;
  };
  ScoreMap out = blend_predict(img, pred, spec);
  REQUIRE(out.is_normalized(1e-6));
}

TEST_CASE("tiling covers a wide image with the shifted final tile") {
  TileSpec spec;
  spec.patch_size = 9;
  spec.stride = 5;
  spec.core_size = 3;
  FeatureMap img = index_image(20, 9);
  int calls = 0;
  PatchPredictor pred = [&](const FeatureMap& patch) {
    ++calls;
    ScoreTensor out(patch.height, patch.width, 1);
    for (double& s : out.scores) s = 1.0;
    return out;
  };
  ScoreMap out = blend_predict(img, pred, spec);
  // Row offsets 0, 5, 10 plus the inward-shifted 11; one column tile.
  REQUIRE(calls == 4);
  for (float s : out.scores) REQUIRE(s == 1.0f);
}

TEST_CASE("predictor output shape and class drift are rejected") {
  TileSpec spec = small_spec();
  FeatureMap img = index_image(7, 7);
  PatchPredictor bad_shape = [](const FeatureMap& patch) {
    return ScoreTensor(patch.height - 1, patch.width, 2);
  };
  REQUIRE_THROWS_AS(blend_predict(img, bad_shape, spec),
                    std::invalid_argument);
  int calls = 0;
  PatchPredictor drift = [&](const FeatureMap& patch) {
    ++calls;
    ScoreTensor out(patch.height, patch.width, calls == 1 ? 2 : 3);
    return out;
  };
  REQUIRE_THROWS_AS(blend_predict(img, drift, spec), std::invalid_argument);
}
