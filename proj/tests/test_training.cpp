// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "fgsn/random.hpp"
#include "fgsn/training.hpp"

using namespace fgsn;

namespace {

FeatureMap random_map(int h, int w, int d, std::uint64_t seed) {
  FeatureMap m(h, w, d);
  std::mt19937_64 rng = make_rng(seed, 0);
  std::normal_distribution<double> g(0.0, 1.0);
  for (float& v : m.data) v = static_cast<float>(g(rng));
  return m;
}

LabelMap random_labels(int h, int w, std::uint32_t classes,
                       std::uint64_t seed) {
  LabelMap m(h, w, classes);
  std::mt19937_64 rng = make_rng(seed, 1);
  std::uniform_int_distribution<std::uint32_t> pick(0, classes - 1);
  for (std::uint32_t& l : m.labels) l = pick(rng);
  return m;
}

CorrespondenceSample identity_sample(int h, int w, int stride = 1) {
  CorrespondenceSample s;
  s.ref_image_id = "ref";
  s.tgt_image_id = "tgt";
  for (int r = 0; r < h; r += stride)
    for (int c = 0; c < w; c += stride) {
      s.ref_points.push_back({r, c});
      s.tgt_points.push_back({r, c});
    }
  return s;
}

}  // namespace

TEST_CASE("head creation wires the layer chain and zeroes biases") {
  ToyHead head = ToyHead::create(3, {5, 4}, 7, 11);
  REQUIRE(head.layers.size() == 3);
  REQUIRE(head.input_dim() == 3);
  REQUIRE(head.num_classes() == 7);
  REQUIRE(head.layers[0].weights.rows() == 5);
  REQUIRE(head.layers[0].weights.cols() == 3);
  REQUIRE(head.layers[1].weights.rows() == 4);
  REQUIRE(head.layers[1].weights.cols() == 5);
  REQUIRE(head.layers[2].weights.rows() == 7);
  REQUIRE(head.layers[2].weights.cols() == 4);
  for (const ToyHeadLayer& l : head.layers) REQUIRE(l.bias.isZero(0));
  REQUIRE(head.parameter_count() == (15 + 5) + (20 + 4) + (28 + 7));
  REQUIRE_NOTHROW(head.validate());

  ToyHead again = ToyHead::create(3, {5, 4}, 7, 11);
  REQUIRE(again.layers[1].weights == head.layers[1].weights);
  ToyHead other = ToyHead::create(3, {5, 4}, 7, 12);
  REQUIRE(other.layers[0].weights != head.layers[0].weights);
}

TEST_CASE("head validation rejects broken shapes") {
  ToyHead head;
  REQUIRE_THROWS_AS(head.validate(), std::invalid_argument);
  head = ToyHead::create(2, {3}, 2, 0);
  head.layers[1].weights.resize(2, 4);  // breaks the chain
  head.layers[1].weights.setZero();
  REQUIRE_THROWS_AS(head.validate(), std::invalid_argument);
  head = ToyHead::create(2, {3}, 2, 0);
  head.layers[0].bias.resize(5);
  head.layers[0].bias.setZero();
  REQUIRE_THROWS_AS(head.validate(), std::invalid_argument);
  head = ToyHead::create(2, {3}, 2, 0);
  head.layers[0].weights(0, 0) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(head.validate(), std::invalid_argument);
}

TEST_CASE("forward applies per-pixel softmax to the affine stack") {
  ToyHead head;
  ToyHeadLayer layer;
  layer.weights = Eigen::Matrix2d::Identity();
  layer.bias = Eigen::Vector2d::Zero();
  head.layers.push_back(layer);

  FeatureMap map(1, 2, 2);
  map.data = {0.3f, -0.7f, 2.0f, 2.0f};
  ScoreTensor out = head.forward(map);
  REQUIRE(out.num_classes == 2);
  double a = std::exp(static_cast<double>(map.data[0]));
  double b = std::exp(static_cast<double>(map.data[1]));
  REQUIRE(out.at(0, 0)[0] == Catch::Approx(a / (a + b)).epsilon(1e-12));
  REQUIRE(out.at(0, 0)[1] == Catch::Approx(b / (a + b)).epsilon(1e-12));
  REQUIRE(out.at(0, 1)[0] == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(out.is_normalized(1e-9));
}

TEST_CASE("forward softmax rows stay normalized under extreme logits") {
  ToyHead head = ToyHead::create(2, {}, 3, 5, 50.0);
  FeatureMap map = random_map(4, 4, 2, 6);
  ScoreTensor out = head.forward(map);
  REQUIRE(out.is_normalized(1e-9));
  for (double s : out.scores) {
    REQUIRE(std::isfinite(s));
    REQUIRE(s >= 0.0);
  }
}

TEST_CASE("classification loss on a split pair of scores is log 2") {
  ScoreTensor scores(1, 1, 2);
  scores.scores = {0.5, 0.5};
  LabelMap labels(1, 1, 2);
  labels.labels = {0};
  REQUIRE(class_loss(scores, labels) ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("classification loss on uniform scores is log of the class count") {
  const int C = 5;
  ScoreTensor scores(3, 4, C);
  for (double& s : scores.scores) s = 1.0 / C;
  LabelMap labels = random_labels(3, 4, C, 3);
  REQUIRE(class_loss(scores, labels) ==
          Catch::Approx(std::log(double(C))).epsilon(1e-12));
}

TEST_CASE("classification loss guards the log at tiny scores") {
  ScoreTensor scores(1, 1, 2);
  scores.scores = {0.0, 1.0};
  LabelMap labels(1, 1, 2);
  labels.labels = {0};
  REQUIRE(class_loss(scores, labels) ==
          Catch::Approx(-std::log(kLogClamp)).epsilon(1e-12));
}

TEST_CASE("classification loss rejects mismatched shapes") {
  ScoreTensor scores(2, 2, 3);
  for (double& s : scores.scores) s = 1.0 / 3;
  LabelMap labels(2, 3, 3);
  REQUIRE_THROWS_AS(class_loss(scores, labels), std::invalid_argument);
}

TEST_CASE("correspondence loss matches the worked single-match example") {
  ScoreTensor ref(1, 1, 2);
  ref.scores = {0.5, 0.5};
  ScoreTensor tgt(1, 1, 2);
  tgt.scores = {0.25, 0.75};
  LabelMap labels(1, 1, 2);
  labels.labels = {0};
  CorrespondenceSample s;
  s.ref_points = {{0, 0}};
  s.tgt_points = {{0, 0}};
  double loss = corr_loss(ref, tgt, s, labels);
  REQUIRE(loss == Catch::Approx(2.0794).margin(1e-4));
  REQUIRE(loss ==
          Catch::Approx(-(std::log(0.5) + std::log(0.25))).epsilon(1e-12));
}

TEST_CASE("correspondence loss with identical maps doubles the one-map term") {
  ScoreTensor ref(2, 2, 3);
  std::mt19937_64 rng = make_rng(9, 0);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int px = 0; px < 4; ++px) {
    double a = u(rng), b = u(rng), c = u(rng);
    double z = a + b + c;
    ref.scores[px * 3 + 0] = a / z;
    ref.scores[px * 3 + 1] = b / z;
    ref.scores[px * 3 + 2] = c / z;
  }
  LabelMap labels = random_labels(2, 2, 3, 4);
  CorrespondenceSample s = identity_sample(2, 2);

  double one_map = 0;
  for (int px = 0; px < 4; ++px)
    one_map -= std::log(ref.scores[px * 3 + labels.labels[px]]);
  one_map /= 4.0;
  REQUIRE(corr_loss(ref, ref, s, labels) ==
          Catch::Approx(2.0 * one_map).epsilon(1e-12));
}

TEST_CASE("correspondence loss validates pixels and labels") {
  ScoreTensor ref(2, 2, 2);
  ScoreTensor tgt(2, 2, 2);
  for (double& v : ref.scores) v = 0.5;
  for (double& v : tgt.scores) v = 0.5;
  LabelMap labels(2, 2, 2);
  CorrespondenceSample s;
  s.ref_points = {{0, 5}};
  s.tgt_points = {{0, 0}};
  REQUIRE_THROWS_AS(corr_loss(ref, tgt, s, labels), std::invalid_argument);
  s.ref_points = {{0, 0}};
  s.tgt_points = {{5, 0}};
  REQUIRE_THROWS_AS(corr_loss(ref, tgt, s, labels), std::invalid_argument);
  s.tgt_points = {{0, 0}};
  ScoreTensor narrow(2, 2, 1);
  for (double& v : narrow.scores) v = 1.0;
  LabelMap wide(2, 2, 3);
  wide.labels = {2, 0, 0, 0};
  REQUIRE_THROWS_AS(corr_loss(ref, tgt, s, wide), std::invalid_argument);
}

TEST_CASE("total objective is the sum of both terms") {
  FeatureMap ref = random_map(3, 3, 2, 10);
  FeatureMap tgt = random_map(3, 3, 2, 11);
  LabelMap labels = random_labels(3, 3, 4, 12);
  CorrespondenceSample s = identity_sample(3, 3);
  ToyHead head = ToyHead::create(2, {6}, 4, 13);

  ScoreTensor ref_scores = head.forward(ref);
  ScoreTensor tgt_scores = head.forward(tgt);
  double expect = class_loss(ref_scores, labels) +
                  corr_loss(ref_scores, tgt_scores, s, labels);
  REQUIRE(total_loss(ref_scores, tgt_scores, s, labels) ==
          Catch::Approx(expect).epsilon(1e-12));

  TrainBatch batch{&ref, &tgt, &labels, &s};
  REQUIRE(loss_value(head, batch) == Catch::Approx(expect).epsilon(1e-12));
  LossEval eval = loss_with_gradients(head, batch);
  REQUIRE(eval.class_term ==
          Catch::Approx(class_loss(ref_scores, labels)).epsilon(1e-10));
  REQUIRE(eval.corr_term ==
          Catch::Approx(corr_loss(ref_scores, tgt_scores, s, labels))
              .epsilon(1e-10));
  REQUIRE(eval.total == Catch::Approx(eval.class_term + eval.corr_term)
                            .epsilon(1e-12));
}

TEST_CASE("loss kinds isolate one term and drop the other") {
  FeatureMap ref = random_map(2, 3, 2, 20);
  FeatureMap tgt = random_map(2, 3, 2, 21);
  LabelMap labels = random_labels(2, 3, 3, 22);
  CorrespondenceSample s = identity_sample(2, 3);
  ToyHead head = ToyHead::create(2, {4}, 3, 23);
  TrainBatch batch{&ref, &tgt, &labels, &s};

  LossEval cls = loss_with_gradients(head, batch, LossKind::kClass);
  REQUIRE(cls.corr_term == 0.0);
  REQUIRE(cls.total == cls.class_term);
  LossEval corr = loss_with_gradients(head, batch, LossKind::kCorr);
  REQUIRE(corr.class_term == 0.0);
  REQUIRE(corr.total == corr.corr_term);

  // The classification term alone must not need target data.
  TrainBatch ref_only{&ref, nullptr, &labels, nullptr};
  REQUIRE_NOTHROW(loss_with_gradients(head, ref_only, LossKind::kClass));
  REQUIRE_THROWS_AS(loss_with_gradients(head, ref_only, LossKind::kTotal),
                    std::invalid_argument);
  TrainBatch empty{nullptr, nullptr, nullptr, nullptr};
  REQUIRE_THROWS_AS(loss_with_gradients(head, empty, LossKind::kClass),
                    std::invalid_argument);
}

TEST_CASE("a score pinned below the clamp contributes no gradient") {
  ToyHead head;
  ToyHeadLayer layer;
  layer.weights.resize(2, 1);
  layer.weights << 0.0, 30.0;  // logits (0, 30): p0 ~ 9e-14, clamped
  layer.bias = Eigen::Vector2d::Zero();
  head.layers.push_back(layer);

  FeatureMap map(1, 1, 1);
  map.data = {1.0f};
  LabelMap labels(1, 1, 2);
  labels.labels = {0};
  TrainBatch batch{&map, nullptr, &labels, nullptr};
  LossEval eval = loss_with_gradients(head, batch, LossKind::kClass);
  REQUIRE(eval.class_term ==
          Catch::Approx(-std::log(kLogClamp)).epsilon(1e-12));
  REQUIRE(eval.grads.layers[0].weights.isZero(0));
  REQUIRE(eval.grads.layers[0].bias.isZero(0));
}

TEST_CASE("analytic gradients agree with central differences") {
  std::mt19937_64 rng = make_rng(31, 0);
  std::uniform_int_distribution<int> dim(1, 3), classes(2, 4), side(2, 4);
  for (int trial = 0; trial < 10; ++trial) {
    int d = dim(rng);
    int C = classes(rng);
    int h = side(rng), w = side(rng);
    FeatureMap ref = random_map(h, w, d, 100 + trial);
    FeatureMap tgt = random_map(h, w, d, 200 + trial);
    LabelMap labels = random_labels(h, w, static_cast<std::uint32_t>(C),
                                    300 + trial);
    CorrespondenceSample s = identity_sample(h, w, 2);
    // A step of 1e-3 is fine for the convex linear-head loss; the stacked
    // tanh head carries more curvature, so probe it with a smaller step.
    bool hidden = trial % 2 == 0;
    ToyHead head = hidden ? ToyHead::create(d, {5}, C, 400 + trial)
                          : ToyHead::create(d, {}, C, 400 + trial);
    TrainBatch batch{&ref, &tgt, &labels, &s};
    LossKind kind = trial % 3 == 0   ? LossKind::kClass
                    : trial % 3 == 1 ? LossKind::kCorr
                                     : LossKind::kTotal;
    REQUIRE(grad_check(head, batch, hidden ? 1e-4 : 1e-3, kind) < 1e-4);
  }
}

TEST_CASE("a linear head passes the gradient check at a coarse step") {
  FeatureMap ref = random_map(2, 2, 2, 150);
  LabelMap labels = random_labels(2, 2, 3, 151);
  ToyHead head = ToyHead::create(2, {}, 3, 152);
  TrainBatch batch{&ref, nullptr, &labels, nullptr};
  REQUIRE(grad_check(head, batch, 1e-3, LossKind::kClass) < 1e-4);

  FeatureMap tgt = random_map(2, 2, 2, 153);
  CorrespondenceSample s = identity_sample(2, 2);
  TrainBatch both{&ref, &tgt, &labels, &s};
  REQUIRE(grad_check(head, both, 1e-3, LossKind::kCorr) < 1e-4);
}

TEST_CASE("gradient verification of an empty head reports zero error") {
  ToyHead head;
  FeatureMap ref = random_map(2, 2, 2, 50);
  LabelMap labels = random_labels(2, 2, 2, 51);
  TrainBatch batch{&ref, nullptr, &labels, nullptr};
  REQUIRE(grad_check(head, batch, 1e-3, LossKind::kClass) == 0.0);
}

TEST_CASE("one plain gradient step scales by the learning rate") {
  ToyHead head;
  ToyHeadLayer layer;
  layer.weights.resize(1, 1);
  layer.weights << 1.0;
  layer.bias = Eigen::VectorXd::Zero(1);
  head.layers.push_back(layer);

  HeadGradients grads = HeadGradients::zeros_like(head);
  grads.layers[0].weights << 1.0;
  TrainConfig config;
  config.learning_rate = 0.1;
  config.momentum = 0.0;
  config.weight_decay = 0.0;
  SgdState state = SgdState::zeros_like(head);
  sgd_step(head, grads, config, state);
  REQUIRE(head.layers[0].weights(0, 0) == Catch::Approx(0.9).epsilon(1e-15));
  REQUIRE(head.layers[0].bias(0) == 0.0);
}

TEST_CASE("momentum and weight decay follow the velocity recurrence") {
  ToyHead head = ToyHead::create(2, {3}, 2, 60);
  ToyHead mirror = head;

  TrainConfig config;
  config.learning_rate = 0.05;
  config.momentum = 0.9;
  config.weight_decay = 0.01;
  SgdState state = SgdState::zeros_like(head);

  std::vector<HeadGradients> steps;
  std::mt19937_64 rng = make_rng(61, 0);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int t = 0; t < 3; ++t) {
    HeadGradients grads = HeadGradients::zeros_like(head);
    for (auto& l : grads.layers) {
      for (long i = 0; i < l.weights.size(); ++i) l.weights(i) = g(rng);
      for (long i = 0; i < l.bias.size(); ++i) l.bias(i) = g(rng);
    }
    steps.push_back(grads);
    sgd_step(head, grads, config, state);
  }

  std::vector<ToyHeadLayer> v;
  for (const ToyHeadLayer& l : mirror.layers)
    v.push_back({Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()),
                 Eigen::VectorXd::Zero(l.bias.size())});
  for (const HeadGradients& grads : steps)
    for (std::size_t l = 0; l < mirror.layers.size(); ++l) {
      v[l].weights = config.momentum * v[l].weights +
                     grads.layers[l].weights +
                     config.weight_decay * mirror.layers[l].weights;
      v[l].bias = config.momentum * v[l].bias + grads.layers[l].bias +
                  config.weight_decay * mirror.layers[l].bias;
      mirror.layers[l].weights -= config.learning_rate * v[l].weights;
      mirror.layers[l].bias -= config.learning_rate * v[l].bias;
    }
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    REQUIRE((head.layers[l].weights - mirror.layers[l].weights)
                .cwiseAbs()
                .maxCoeff() < 1e-15);
    REQUIRE((head.layers[l].bias - mirror.layers[l].bias)
                .cwiseAbs()
                .maxCoeff() < 1e-15);
  }
}

TEST_CASE("optimizer rejects mismatched or non-finite gradients") {
  ToyHead head = ToyHead::create(2, {}, 2, 70);
  TrainConfig config;
  SgdState state = SgdState::zeros_like(head);
  HeadGradients grads;  // empty
  REQUIRE_THROWS_AS(sgd_step(head, grads, config, state),
                    std::invalid_argument);
  grads = HeadGradients::zeros_like(head);
  grads.layers[0].weights(0, 0) = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(sgd_step(head, grads, config, state),
                    std::invalid_argument);
}

TEST_CASE("classifier reinitialization touches only the final layer") {
  ToyHead head = ToyHead::create(3, {4}, 5, 80);
  ToyHead before = head;
  head.reinit_final_layer(81, 0.01);
  REQUIRE(head.layers[0].weights == before.layers[0].weights);
  REQUIRE(head.layers[0].bias == before.layers[0].bias);
  REQUIRE(head.layers[1].weights != before.layers[1].weights);
  REQUIRE(head.layers[1].bias.isZero(0));

  ToyHead again = before;
  again.reinit_final_layer(81, 0.01);
  REQUIRE(again.layers[1].weights == head.layers[1].weights);
}

TEST_CASE("head parameters round-trip through json") {
  ToyHead head = ToyHead::create(3, {4}, 2, 90);
  ToyHead back = json(head).get<ToyHead>();
  REQUIRE(back.layers.size() == head.layers.size());
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    REQUIRE(back.layers[l].weights == head.layers[l].weights);
    REQUIRE(back.layers[l].bias == head.layers[l].bias);
  }
  json broken = json(head);
  broken["layers"][0]["weights"] = std::vector<double>{1.0};
  REQUIRE_THROWS_AS(broken.get<ToyHead>(), ParseError);
}

namespace {

TrainData make_train_data(std::uint64_t seed, int n_pairs = 4) {
  TrainData data;
  for (int i = 0; i < n_pairs; ++i) {
    data.ref_maps.push_back(random_map(6, 6, 3, seed + i));
    data.tgt_maps.push_back(random_map(6, 6, 3, seed + 100 + i));
    TrainData::Pair pair;
    pair.ref_index = i;
    pair.tgt_index = i;
    pair.sample = identity_sample(6, 6, 2);
    data.pairs.push_back(std::move(pair));
  }
  return data;
}

TrainConfig small_config() {
  TrainConfig c;
  c.learning_rate = 1e-2;
  c.total_iterations = 10;
  c.recluster_interval = 10;
  c.num_clusters = 4;
  c.cluster_samples = 64;
  c.hidden_dims = {6};
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("training with interval equal to length clusters exactly once") {
  TrainData data = make_train_data(500);
  TrainConfig config = small_config();
  TrainResult result = train_loop(data, config);

  REQUIRE(result.centroid_history.size() == 1);
  REQUIRE(result.trace.size() == 10);
  for (int i = 0; i < 10; ++i) {
    REQUIRE(result.trace[i].iteration == i + 1);
    REQUIRE(result.trace[i].total ==
            Catch::Approx(result.trace[i].class_term +
                          result.trace[i].corr_term)
                .epsilon(1e-12));
  }
  REQUIRE(result.validation.size() == 2);
  REQUIRE(result.validation.front().first == 0);
  REQUIRE(result.validation.back().first == 10);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [it, v] : result.validation) best = std::min(best, v);
  REQUIRE(result.best_validation == best);
}

TEST_CASE("training reclusters at every interval boundary") {
  TrainData data = make_train_data(600);
  TrainConfig config = small_config();
  config.recluster_interval = 5;
  TrainResult result = train_loop(data, config);
  REQUIRE(result.centroid_history.size() == 2);
  REQUIRE(result.validation.size() == 3);
  REQUIRE(result.validation[1].first == 5);
}

TEST_CASE("training is deterministic for a fixed seed") {
  TrainData data = make_train_data(700);
  TrainConfig config = small_config();
  config.recluster_interval = 5;
  TrainResult a = train_loop(data, config);
  TrainResult b = train_loop(data, config);
  REQUIRE(a.best_validation == b.best_validation);
  REQUIRE(a.trace.back().total == b.trace.back().total);
  for (std::size_t l = 0; l < a.final_head.layers.size(); ++l)
    REQUIRE(a.final_head.layers[l].weights ==
            b.final_head.layers[l].weights);
}

TEST_CASE("disabling the recluster reset keeps the classifier in place") {
  TrainData data = make_train_data(800);
  TrainConfig config = small_config();
  config.learning_rate = 1e-30;  // freeze the parameters, keep the schedule
  config.recluster_interval = 5;

  TrainConfig keep = config;
  keep.no_recluster_reset = true;
  TrainResult kept = train_loop(data, keep);
  TrainResult reset = train_loop(data, config);

  // Hidden layers see only ~1e-30 updates either way.
  REQUIRE((kept.final_head.layers[0].weights -
           reset.final_head.layers[0].weights)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  // With the reset enabled the classifier is re-drawn at the boundary.
  ToyHead initial = ToyHead::create(3, config.hidden_dims, config.num_clusters,
                                    derive_seed(config.seed, 2000),
                                    config.init_std);
  REQUIRE((kept.final_head.layers.back().weights -
           initial.layers.back().weights)
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  REQUIRE((reset.final_head.layers.back().weights -
           initial.layers.back().weights)
              .cwiseAbs()
              .maxCoeff() > 1e-3);
}

TEST_CASE("training rejects invalid configuration and data") {
  TrainData data = make_train_data(900);
  TrainConfig config = small_config();
  config.recluster_interval = 11;  // longer than the run
  REQUIRE_THROWS_AS(train_loop(data, config), std::invalid_argument);
  config = small_config();
  config.learning_rate = 0;
  REQUIRE_THROWS_AS(train_loop(data, config), std::invalid_argument);
  config = small_config();
  TrainData empty;
  REQUIRE_THROWS_AS(train_loop(empty, config), std::invalid_argument);
}
