// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-part training objective (per-pixel cross-entropy on cluster labels plus
// a correspondence-consistency term), a toy per-pixel segmentation head, SGD
// with momentum and weight decay, gradient verification, and the training
// loop with periodic re-clustering.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fgsn/clustering.hpp"
#include "fgsn/random.hpp"
#include "fgsn/serialization.hpp"
#include "fgsn/types.hpp"

namespace fgsn {

// log() guard: scores below this are treated as flat (zero gradient).
inline constexpr double kLogClamp = 1e-12;

struct ToyHeadLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

/// Per-pixel affine stack with tanh between layers (1x1 convolutions). The
/// final layer is affine; per-pixel softmax happens in forward().
struct ToyHead {
  std::vector<ToyHeadLayer> layers;

  int input_dim() const {
    return layers.empty() ? 0 : static_cast<int>(layers.front().weights.cols());
  }
  int num_classes() const {
    return layers.empty() ? 0 : static_cast<int>(layers.back().weights.rows());
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const ToyHeadLayer& l : layers)
      n += static_cast<std::size_t>(l.weights.size()) + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("ToyHead: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const ToyHeadLayer& l = layers[i];
      if (l.weights.rows() != l.bias.size())
        throw std::invalid_argument("ToyHead: bias shape mismatch");
      if (i > 0 && l.weights.cols() != layers[i - 1].weights.rows())
        throw std::invalid_argument("ToyHead: layer dimension chain broken");
      if (!l.weights.allFinite() || !l.bias.allFinite())
        throw std::invalid_argument("ToyHead: non-finite parameter");
    }
  }

  static ToyHead create(int input_dim, const std::vector<int>& hidden_dims,
                        int num_classes, std::uint64_t seed,
                        double init_std = 0.1) {
    if (input_dim <= 0 || num_classes <= 0)
      throw std::invalid_argument("ToyHead: non-positive dimensions");
    ToyHead head;
    std::mt19937_64 rng = make_rng(seed, 0x4ead);
    std::normal_distribution<double> gauss(0.0, init_std);
    int in = input_dim;
    std::vector<int> outs = hidden_dims;
    outs.push_back(num_classes);
    for (int out : outs) {
      if (out <= 0) throw std::invalid_argument("ToyHead: non-positive width");
      ToyHeadLayer layer;
      layer.weights.resize(out, in);
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) layer.weights(r, c) = gauss(rng);
      layer.bias = Eigen::VectorXd::Zero(out);
      head.layers.push_back(std::move(layer));
      in = out;
    }
    return head;
  }

  /// Re-draw the classifier layer from N(0, std_dev), zero its biases.
  void reinit_final_layer(std::uint64_t seed, double std_dev) {
    if (layers.empty()) throw std::invalid_argument("ToyHead: no layers");
    std::mt19937_64 rng = make_rng(seed, 0xf1a1);
    std::normal_distribution<double> gauss(0.0, std_dev);
    ToyHeadLayer& last = layers.back();
    for (int r = 0; r < last.weights.rows(); ++r)
      for (int c = 0; c < last.weights.cols(); ++c)
        last.weights(r, c) = gauss(rng);
    last.bias.setZero();
  }

  /// Forward pass over a whole map: per-pixel logits then softmax.
  ScoreTensor forward(const FeatureMap& map) const;
};

inline void to_json(json& j, const ToyHead& head) {
  json layers = json::array();
  for (const ToyHeadLayer& l : head.layers) {
    std::vector<double> w(l.weights.size());
    for (int r = 0; r < l.weights.rows(); ++r)
      for (int c = 0; c < l.weights.cols(); ++c)
        w[static_cast<std::size_t>(r) * l.weights.cols() + c] = l.weights(r, c);
    layers.push_back(json{
        {"rows", l.weights.rows()},
        {"cols", l.weights.cols()},
        {"weights", w},
        {"bias", std::vector<double>(l.bias.data(),
                                     l.bias.data() + l.bias.size())}});
  }
  j = json{{"layers", std::move(layers)}};
}
inline void from_json(const json& j, ToyHead& head) {
  head.layers.clear();
  for (const json& e : j.at("layers")) {
    ToyHeadLayer l;
    long rows = e.at("rows").get<long>();
    long cols = e.at("cols").get<long>();
    auto w = e.at("weights").get<std::vector<double>>();
    if (rows <= 0 || cols <= 0 ||
        w.size() != static_cast<std::size_t>(rows) * cols)
      throw ParseError("ToyHead: weights shape mismatch");
    l.weights.resize(rows, cols);
    for (long r = 0; r < rows; ++r)
      for (long c = 0; c < cols; ++c)
        l.weights(r, c) = w[static_cast<std::size_t>(r) * cols + c];
    auto b = e.at("bias").get<std::vector<double>>();
    if (static_cast<long>(b.size()) != rows)
      throw ParseError("ToyHead: bias shape mismatch");
    l.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), rows);
    head.layers.push_back(std::move(l));
  }
  head.validate();
}

struct TrainConfig {
  double learning_rate = 2.5e-5;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int recluster_interval = 100;
  int total_iterations = 100;
  double reinit_std = 0.01;
  bool no_recluster_reset = false;
  std::uint64_t seed = 0;
  double validation_fraction = 0.3;

  // Head architecture.
  std::vector<int> hidden_dims = {16};
  double init_std = 0.1;

  // Label regeneration knobs handed to the clustering stage.
  int num_clusters = 8;
  int cluster_samples = 512;
  int reduced_dim = 0;  // 0: keep the input feature dimension
  int kmeans_max_iters = 100;

  void validate() const {
    if (learning_rate <= 0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (momentum < 0) throw std::invalid_argument("TrainConfig: momentum must be >= 0");
    if (weight_decay < 0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (reinit_std <= 0) throw std::invalid_argument("TrainConfig: reinit_std must be > 0");
    if (total_iterations < 1) throw std::invalid_argument("TrainConfig: total_iterations must be >= 1");
    if (recluster_interval < 1 || recluster_interval > total_iterations)
      throw std::invalid_argument(
          "TrainConfig: recluster_interval must be in [1, total_iterations]");
    if (validation_fraction < 0 || validation_fraction >= 1)
      throw std::invalid_argument("TrainConfig: validation_fraction must be in [0, 1)");
    if (init_std <= 0) throw std::invalid_argument("TrainConfig: init_std must be > 0");
    if (num_clusters < 1) throw std::invalid_argument("TrainConfig: num_clusters must be >= 1");
    if (cluster_samples < 2 || cluster_samples % 2 != 0)
      throw std::invalid_argument("TrainConfig: cluster_samples must be even and >= 2");
  }
};

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"momentum", c.momentum},
           {"weight_decay", c.weight_decay},
           {"recluster_interval", c.recluster_interval},
           {"total_iterations", c.total_iterations},
           {"reinit_std", c.reinit_std},
           {"no_recluster_reset", c.no_recluster_reset},
           {"seed", c.seed},
           {"validation_fraction", c.validation_fraction},
           {"hidden_dims", c.hidden_dims},
           {"init_std", c.init_std},
           {"num_clusters", c.num_clusters},
           {"cluster_samples", c.cluster_samples},
           {"reduced_dim", c.reduced_dim},
           {"kmeans_max_iters", c.kmeans_max_iters}};
}
inline void from_json(const json& j, TrainConfig& c) {
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("momentum").get_to(c.momentum);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("recluster_interval").get_to(c.recluster_interval);
  j.at("total_iterations").get_to(c.total_iterations);
  j.at("reinit_std").get_to(c.reinit_std);
  j.at("no_recluster_reset").get_to(c.no_recluster_reset);
  j.at("seed").get_to(c.seed);
  j.at("validation_fraction").get_to(c.validation_fraction);
  j.at("hidden_dims").get_to(c.hidden_dims);
  j.at("init_std").get_to(c.init_std);
  j.at("num_clusters").get_to(c.num_clusters);
  j.at("cluster_samples").get_to(c.cluster_samples);
  j.at("reduced_dim").get_to(c.reduced_dim);
  j.at("kmeans_max_iters").get_to(c.kmeans_max_iters);
}

namespace detail {

inline Eigen::MatrixXd features_as_columns(const FeatureMap& map) {
  Eigen::MatrixXd x(map.dim, map.pixel_count());
  for (std::size_t px = 0; px < map.pixel_count(); ++px)
    for (int k = 0; k < map.dim; ++k)
      x(k, static_cast<long>(px)) =
          static_cast<double>(map.data[px * map.dim + k]);
  return x;
}

struct ForwardCache {
  // acts[l] is the input to layer l (dim x pixels); acts[0] is the feature map.
  std::vector<Eigen::MatrixXd> acts;
  Eigen::MatrixXd logits;  // classes x pixels
  Eigen::MatrixXd probs;   // classes x pixels, columns sum to 1
};

inline ForwardCache forward_cached(const ToyHead& head, const FeatureMap& map) {
  head.validate();
  if (map.dim != head.input_dim())
    throw std::invalid_argument("ToyHead: feature dim mismatch");
  ForwardCache cache;
  cache.acts.push_back(features_as_columns(map));
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    const ToyHeadLayer& layer = head.layers[l];
    Eigen::MatrixXd z =
        (layer.weights * cache.acts[l]).colwise() + layer.bias;
    if (l + 1 < head.layers.size())
      cache.acts.push_back(z.array().tanh().matrix());
    else
      cache.logits = std::move(z);
  }
  cache.probs.resizeLike(cache.logits);
  for (long px = 0; px < cache.logits.cols(); ++px) {
    Eigen::VectorXd col = cache.logits.col(px);
    col.array() -= col.maxCoeff();
    Eigen::VectorXd e = col.array().exp();
    cache.probs.col(px) = e / e.sum();
  }
  return cache;
}

}  // namespace detail

inline ScoreTensor ToyHead::forward(const FeatureMap& map) const {
  detail::ForwardCache cache = detail::forward_cached(*this, map);
  ScoreTensor out(map.height, map.width, num_classes());
  for (long px = 0; px < cache.probs.cols(); ++px)
    for (int c = 0; c < num_classes(); ++c)
      out.scores[static_cast<std::size_t>(px) * num_classes() + c] =
          cache.probs(c, px);
  return out;
}

// ---------------------------------------------------------------------------
// Losses

/// Mean over pixels of -log(score at the true label).
template <typename Scalar>
double class_loss(const ScoreMapT<Scalar>& scores, const LabelMap& labels) {
  if (scores.height != labels.height || scores.width != labels.width)
    throw std::invalid_argument("class_loss: shape mismatch");
  if (labels.num_classes > static_cast<std::uint32_t>(scores.num_classes))
    throw std::invalid_argument("class_loss: more labels than score channels");
  double total = 0;
  const std::size_t pixels = static_cast<std::size_t>(scores.height) * scores.width;
  for (std::size_t px = 0; px < pixels; ++px) {
    double p = static_cast<double>(
        scores.scores[px * scores.num_classes + labels.labels[px]]);
    total -= std::log(std::max(p, kLogClamp));
  }
  return total / double(pixels);
}

/// Correspondence-consistency cross-entropy for one image pair:
/// -(1/N) sum_i c_i^T (log d_ref(x_i) + log d_tgt(x'_i)), with c_i the
/// one-hot reference label at x_i.
template <typename Scalar>
double corr_loss(const ScoreMapT<Scalar>& ref_scores,
                 const ScoreMapT<Scalar>& tgt_scores,
                 const CorrespondenceSample& sample,
                 const LabelMap& ref_labels) {
  sample.validate();
  if (ref_scores.height != ref_labels.height ||
      ref_scores.width != ref_labels.width)
    throw std::invalid_argument("corr_loss: ref scores/labels shape mismatch");
  if (ref_scores.num_classes != tgt_scores.num_classes)
    throw std::invalid_argument("corr_loss: class count mismatch");
  double total = 0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const PixelCoord& rp = sample.ref_points[i];
    const PixelCoord& tp = sample.tgt_points[i];
    if (!ref_labels.contains(rp.row, rp.col))
      throw std::invalid_argument("corr_loss: ref pixel out of bounds");
    if (tp.row < 0 || tp.row >= tgt_scores.height || tp.col < 0 ||
        tp.col >= tgt_scores.width)
      throw std::invalid_argument("corr_loss: tgt pixel out of bounds");
    std::uint32_t c = ref_labels.at(rp.row, rp.col);
    if (c >= static_cast<std::uint32_t>(ref_scores.num_classes))
      throw std::invalid_argument("corr_loss: label outside score channels");
    double p_ref = static_cast<double>(ref_scores.at(rp.row, rp.col)[c]);
    double p_tgt = static_cast<double>(tgt_scores.at(tp.row, tp.col)[c]);
    total -= std::log(std::max(p_ref, kLogClamp)) +
             std::log(std::max(p_tgt, kLogClamp));
  }
  return total / double(sample.size());
}

template <typename Scalar>
double total_loss(const ScoreMapT<Scalar>& ref_scores,
                  const ScoreMapT<Scalar>& tgt_scores,
                  const CorrespondenceSample& sample,
                  const LabelMap& ref_labels) {
  return class_loss(ref_scores, ref_labels) +
         corr_loss(ref_scores, tgt_scores, sample, ref_labels);
}

// ---------------------------------------------------------------------------
// Gradients

struct HeadGradients {
  std::vector<ToyHeadLayer> layers;

  static HeadGradients zeros_like(const ToyHead& head) {
    HeadGradients g;
    for (const ToyHeadLayer& l : head.layers)
      g.layers.push_back({Eigen::MatrixXd::Zero(l.weights.rows(),
                                                l.weights.cols()),
                          Eigen::VectorXd::Zero(l.bias.size())});
    return g;
  }
};

enum class LossKind { kClass, kCorr, kTotal };

/// One training example: a reference/target feature-map pair, the reference
/// cluster labels, and the pixel correspondences between the two maps.
struct TrainBatch {
  const FeatureMap* ref_features = nullptr;
  const FeatureMap* tgt_features = nullptr;
  const LabelMap* ref_labels = nullptr;
  const CorrespondenceSample* sample = nullptr;
};

struct LossEval {
  double class_term = 0;
  double corr_term = 0;
  double total = 0;
  HeadGradients grads;
};

namespace detail {

// Accumulates parameter gradients for dL/dlogits = G over one cached pass.
inline void backward(const ToyHead& head, const ForwardCache& cache,
                     Eigen::MatrixXd G, HeadGradients& grads) {
  for (int l = static_cast<int>(head.layers.size()) - 1; l >= 0; --l) {
    grads.layers[l].weights += G * cache.acts[l].transpose();
    grads.layers[l].bias += G.rowwise().sum();
    if (l > 0)
      G = (head.layers[l].weights.transpose() * G).array() *
          (1.0 - cache.acts[l].array().square());
  }
}

}  // namespace detail

/// Losses plus analytic parameter gradients for one batch.
inline LossEval loss_with_gradients(const ToyHead& head,
                                    const TrainBatch& batch,
                                    LossKind kind = LossKind::kTotal) {
  if (!batch.ref_features || !batch.ref_labels)
    throw std::invalid_argument("loss_with_gradients: missing reference data");
  const bool want_class = kind != LossKind::kCorr;
  const bool want_corr = kind != LossKind::kClass;
  if (want_corr && (!batch.tgt_features || !batch.sample))
    throw std::invalid_argument("loss_with_gradients: missing target data");

  const FeatureMap& ref = *batch.ref_features;
  const LabelMap& labels = *batch.ref_labels;
  if (ref.height != labels.height || ref.width != labels.width)
    throw std::invalid_argument("loss_with_gradients: label shape mismatch");

  LossEval out;
  out.grads = HeadGradients::zeros_like(head);
  const int C = head.num_classes();

  detail::ForwardCache ref_cache = detail::forward_cached(head, ref);
  Eigen::MatrixXd g_ref =
      Eigen::MatrixXd::Zero(C, static_cast<long>(ref.pixel_count()));

  if (want_class) {
    const double inv_pixels = 1.0 / double(ref.pixel_count());
    for (std::size_t px = 0; px < ref.pixel_count(); ++px) {
      std::uint32_t y = labels.labels[px];
      if (y >= static_cast<std::uint32_t>(C))
        throw std::invalid_argument("loss_with_gradients: label out of range");
      double p = ref_cache.probs(y, static_cast<long>(px));
      out.class_term -= std::log(std::max(p, kLogClamp));
      if (p > kLogClamp) {
        g_ref.col(static_cast<long>(px)) +=
            ref_cache.probs.col(static_cast<long>(px)) * inv_pixels;
        g_ref(y, static_cast<long>(px)) -= inv_pixels;
      }
    }
    out.class_term /= double(ref.pixel_count());
  }

  if (want_corr) {
    const FeatureMap& tgt = *batch.tgt_features;
    const CorrespondenceSample& sample = *batch.sample;
    sample.validate();
    detail::ForwardCache tgt_cache = detail::forward_cached(head, tgt);
    Eigen::MatrixXd g_tgt =
        Eigen::MatrixXd::Zero(C, static_cast<long>(tgt.pixel_count()));
    const double inv_n = 1.0 / double(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const PixelCoord& rp = sample.ref_points[i];
      const PixelCoord& tp = sample.tgt_points[i];
      if (!ref.contains(rp.row, rp.col) || !tgt.contains(tp.row, tp.col))
        throw std::invalid_argument(
            "loss_with_gradients: correspondence pixel out of bounds");
      std::uint32_t c = labels.at(rp.row, rp.col);
      long rpx = static_cast<long>(rp.row) * ref.width + rp.col;
      long tpx = static_cast<long>(tp.row) * tgt.width + tp.col;
      double p_ref = ref_cache.probs(c, rpx);
      double p_tgt = tgt_cache.probs(c, tpx);
      out.corr_term -=
          std::log(std::max(p_ref, kLogClamp)) + std::log(std::max(p_tgt, kLogClamp));
      if (p_ref > kLogClamp) {
        g_ref.col(rpx) += ref_cache.probs.col(rpx) * inv_n;
        g_ref(c, rpx) -= inv_n;
      }
      if (p_tgt > kLogClamp) {
        g_tgt.col(tpx) += tgt_cache.probs.col(tpx) * inv_n;
        g_tgt(c, tpx) -= inv_n;
      }
    }
    out.corr_term /= double(sample.size());
    detail::backward(head, tgt_cache, std::move(g_tgt), out.grads);
  }

  detail::backward(head, ref_cache, std::move(g_ref), out.grads);
  out.total = out.class_term + out.corr_term;
  return out;
}

/// Loss value only (no gradient work); used by the finite-difference oracle.
inline double loss_value(const ToyHead& head, const TrainBatch& batch,
                         LossKind kind = LossKind::kTotal) {
  double value = 0;
  detail::ForwardCache ref_cache = detail::forward_cached(head, *batch.ref_features);
  ScoreTensor ref_scores(batch.ref_features->height, batch.ref_features->width,
                         head.num_classes());
  for (long px = 0; px < ref_cache.probs.cols(); ++px)
    for (int c = 0; c < head.num_classes(); ++c)
      ref_scores.scores[static_cast<std::size_t>(px) * head.num_classes() + c] =
          ref_cache.probs(c, px);
  if (kind != LossKind::kCorr) value += class_loss(ref_scores, *batch.ref_labels);
  if (kind != LossKind::kClass) {
    ScoreTensor tgt_scores = head.forward(*batch.tgt_features);
    value += corr_loss(ref_scores, tgt_scores, *batch.sample, *batch.ref_labels);
  }
  return value;
}

/// Max relative error between analytic gradients and central differences,
/// taken over every parameter of the head.
inline double grad_check(const ToyHead& head, const TrainBatch& batch,
                         double epsilon, LossKind kind = LossKind::kTotal) {
  if (head.parameter_count() == 0) return 0;
  LossEval eval = loss_with_gradients(head, batch, kind);
  double max_rel = 0;
  ToyHead probe = head;
  auto update = [&](double analytic, double& param) {
    double saved = param;
    param = saved + epsilon;
    double up = loss_value(probe, batch, kind);
    param = saved - epsilon;
    double down = loss_value(probe, batch, kind);
    param = saved;
    double numeric = (up - down) / (2 * epsilon);
    double rel = std::abs(analytic - numeric) /
                 std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    ToyHeadLayer& layer = probe.layers[l];
    for (int r = 0; r < layer.weights.rows(); ++r)
      for (int c = 0; c < layer.weights.cols(); ++c)
        update(eval.grads.layers[l].weights(r, c), layer.weights(r, c));
    for (int r = 0; r < layer.bias.size(); ++r)
      update(eval.grads.layers[l].bias(r), layer.bias(r));
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Optimizer

struct SgdState {
  std::vector<ToyHeadLayer> velocity;

  static SgdState zeros_like(const ToyHead& head) {
    SgdState s;
    for (const ToyHeadLayer& l : head.layers)
      s.velocity.push_back({Eigen::MatrixXd::Zero(l.weights.rows(),
                                                  l.weights.cols()),
                            Eigen::VectorXd::Zero(l.bias.size())});
    return s;
  }
};

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
inline void sgd_step(ToyHead& head, const HeadGradients& grads,
                     const TrainConfig& config, SgdState& state) {
  if (grads.layers.size() != head.layers.size() ||
      state.velocity.size() != head.layers.size())
    throw std::invalid_argument("sgd_step: gradient/state shape mismatch");
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    const ToyHeadLayer& g = grads.layers[l];
    ToyHeadLayer& p = head.layers[l];
    ToyHeadLayer& v = state.velocity[l];
    if (g.weights.rows() != p.weights.rows() ||
        g.weights.cols() != p.weights.cols() ||
        g.bias.size() != p.bias.size())
      throw std::invalid_argument("sgd_step: gradient shape mismatch at layer " +
                                  std::to_string(l));
    if (!g.weights.allFinite())
      throw std::invalid_argument("sgd_step: non-finite gradient in layer " +
                                  std::to_string(l) + " weights");
    if (!g.bias.allFinite())
      throw std::invalid_argument("sgd_step: non-finite gradient in layer " +
                                  std::to_string(l) + " bias");
    v.weights = config.momentum * v.weights + g.weights +
                config.weight_decay * p.weights;
    v.bias = config.momentum * v.bias + g.bias + config.weight_decay * p.bias;
    p.weights -= config.learning_rate * v.weights;
    p.bias -= config.learning_rate * v.bias;
  }
}

// ---------------------------------------------------------------------------
// Training loop

/// Training corpus: reference and target feature maps plus correspondence
/// samples joining them (one sample per ref/tgt image pair).
struct TrainData {
  struct Pair {
    int ref_index = 0;
    int tgt_index = 0;
    CorrespondenceSample sample;
  };

  std::vector<FeatureMap> ref_maps;
  std::vector<FeatureMap> tgt_maps;
  std::vector<Pair> pairs;

  void validate() const {
    if (pairs.empty()) throw std::invalid_argument("TrainData: no pairs");
    if (ref_maps.empty() || tgt_maps.empty())
      throw std::invalid_argument("TrainData: missing feature maps");
    for (const Pair& p : pairs) {
      if (p.ref_index < 0 || p.ref_index >= static_cast<int>(ref_maps.size()))
        throw std::invalid_argument("TrainData: ref index out of range");
      if (p.tgt_index < 0 || p.tgt_index >= static_cast<int>(tgt_maps.size()))
        throw std::invalid_argument("TrainData: tgt index out of range");
      p.sample.validate();
    }
  }
};

struct TraceRow {
  int iteration = 0;
  double class_term = 0;
  double corr_term = 0;
  double total = 0;
};

struct TrainResult {
  ToyHead head;        // lowest validation correspondence loss
  ToyHead final_head;  // parameters after the last iteration
  std::vector<CentroidSet> centroid_history;
  std::vector<TraceRow> trace;
  std::vector<std::pair<int, double>> validation;  // (iteration, corr loss)
  int best_iteration = 0;
  double best_validation = std::numeric_limits<double>::infinity();
};

namespace detail {

struct ClusterOutcome {
  WhitenTransform transform;
  CentroidSet centroids;
  std::vector<LabelMap> ref_labels;
};

inline ClusterOutcome recluster(const TrainData& data,
                                const TrainConfig& config,
                                std::uint64_t event_seed) {
  std::vector<std::vector<PixelCoord>> corr_pixels(data.ref_maps.size());
  for (const TrainData::Pair& p : data.pairs)
    corr_pixels[p.ref_index].insert(corr_pixels[p.ref_index].end(),
                                    p.sample.ref_points.begin(),
                                    p.sample.ref_points.end());
  FeatureSampleSet samples = sample_features(data.ref_maps, corr_pixels,
                                             config.cluster_samples, event_seed);
  int r = config.reduced_dim > 0 ? config.reduced_dim : samples.dim();
  WhitenTransform transform = fit_whiten(samples, r);
  Eigen::MatrixXd whitened(samples.count(), r);
  for (int i = 0; i < samples.count(); ++i)
    whitened.row(i) = transform.apply(samples.vectors.row(i).transpose());
  KmeansResult km = kmeans_cluster(whitened, config.num_clusters,
                                   config.kmeans_max_iters,
                                   derive_seed(event_seed, 0x6b6d));
  ClusterOutcome out;
  out.transform = std::move(transform);
  out.centroids = km.centroids;
  for (const FeatureMap& map : data.ref_maps)
    out.ref_labels.push_back(assign_labels(map, out.transform, out.centroids));
  return out;
}

}  // namespace detail

/// Alternates SGD over correspondence pairs with periodic re-clustering.
/// Validation correspondence loss is evaluated at every re-cluster boundary
/// (before the label/classifier reset) and at the start and end of training;
/// the head achieving the lowest value is returned.
inline TrainResult train_loop(const TrainData& data, const TrainConfig& config) {
  data.validate();
  config.validate();

  const int n_pairs = static_cast<int>(data.pairs.size());
  std::mt19937_64 order_rng = make_rng(config.seed, 0x08de);

  std::vector<int> order(n_pairs);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), order_rng);
  int n_val = static_cast<int>(config.validation_fraction * n_pairs);
  if (n_val >= n_pairs) n_val = n_pairs - 1;  // keep at least one train pair
  const std::vector<int> val_pairs(order.begin(), order.begin() + n_val);
  const std::vector<int> train_pairs(order.begin() + n_val, order.end());

  detail::ClusterOutcome clusters =
      detail::recluster(data, config, derive_seed(config.seed, 1000));

  TrainResult result;
  result.centroid_history.push_back(clusters.centroids);

  ToyHead head =
      ToyHead::create(data.ref_maps[0].dim, config.hidden_dims,
                      config.num_clusters, derive_seed(config.seed, 2000),
                      config.init_std);
  SgdState sgd = SgdState::zeros_like(head);

  // Held-out correspondence loss under the labels currently in force. With a
  // zero validation fraction the training pairs stand in.
  auto validation_corr = [&](const ToyHead& h) {
    const std::vector<int>& eval_set =
        val_pairs.empty() ? train_pairs : val_pairs;
    double total = 0;
    for (int idx : eval_set) {
      const TrainData::Pair& pair = data.pairs[idx];
      ScoreTensor ref_scores = h.forward(data.ref_maps[pair.ref_index]);
      ScoreTensor tgt_scores = h.forward(data.tgt_maps[pair.tgt_index]);
      total += corr_loss(ref_scores, tgt_scores, pair.sample,
                         clusters.ref_labels[pair.ref_index]);
    }
    return total / double(eval_set.size());
  };
  auto consider = [&](int iteration, const ToyHead& h) {
    double v = validation_corr(h);
    result.validation.emplace_back(iteration, v);
    if (v < result.best_validation) {
      result.best_validation = v;
      result.best_iteration = iteration;
      result.head = h;
    }
  };

  consider(0, head);

  std::vector<int> epoch = train_pairs;
  std::size_t epoch_pos = epoch.size();  // forces a shuffle on first use
  int cluster_event = 0;

  for (int iter = 1; iter <= config.total_iterations; ++iter) {
    if (epoch_pos >= epoch.size()) {
      std::shuffle(epoch.begin(), epoch.end(), order_rng);
      epoch_pos = 0;
    }
    const TrainData::Pair& pair = data.pairs[epoch[epoch_pos++]];
    TrainBatch batch{&data.ref_maps[pair.ref_index],
                     &data.tgt_maps[pair.tgt_index],
                     &clusters.ref_labels[pair.ref_index], &pair.sample};
    LossEval eval;
    try {
      eval = loss_with_gradients(head, batch);
      sgd_step(head, eval.grads, config, sgd);
    } catch (const std::exception& e) {
      throw std::runtime_error("train_loop: iteration " +
                               std::to_string(iter) + ": " + e.what());
    }
    result.trace.push_back({iter, eval.class_term, eval.corr_term, eval.total});

    if (iter % config.recluster_interval == 0 &&
        iter < config.total_iterations) {
      consider(iter, head);
      ++cluster_event;
      clusters = detail::recluster(
          data, config, derive_seed(config.seed, 1000 + cluster_event));
      result.centroid_history.push_back(clusters.centroids);
      if (!config.no_recluster_reset) {
        head.reinit_final_layer(derive_seed(config.seed, 3000 + cluster_event),
                                config.reinit_std);
        // The classifier was re-drawn; its momentum buffer is stale.
        sgd.velocity.back().weights.setZero();
        sgd.velocity.back().bias.setZero();
      }
    }
  }

  consider(config.total_iterations, head);
  result.final_head = head;
  return result;
}

}  // namespace fgsn
