// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-supervised label creation: sample features, PCA-whiten, k-means with
// empty-cluster reassignment, then dense nearest-centroid label maps.

#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "fgsn/random.hpp"
#include "fgsn/serialization.hpp"
#include "fgsn/types.hpp"

namespace fgsn {

struct FeatureSampleSet {
  enum class Source : std::uint8_t { kCorrespondence = 0, kUniform = 1 };

  Eigen::MatrixXd vectors;      // one sample per row, N x d
  std::vector<Source> source;   // per-row provenance flag

  int count() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }
};

/// sample_features draws `total` feature vectors for clustering: the first
/// ceil(total/2) from correspondence pixel positions, the rest uniformly over
/// all pixels of all maps. Sampling is with replacement.
inline FeatureSampleSet sample_features(
    const std::vector<FeatureMap>& maps,
    const std::vector<std::vector<PixelCoord>>& correspondence_pixels,
    int total, std::uint64_t seed) {
  if (maps.empty())
    throw std::invalid_argument("sample_features: empty feature-map list");
  if (correspondence_pixels.size() != maps.size())
    throw std::invalid_argument(
        "sample_features: correspondence lists must align with maps");
  if (total <= 0 || total % 2 != 0)
    throw std::invalid_argument("sample_features: total must be positive and even");

  const int dim = maps[0].dim;
  std::vector<std::pair<int, PixelCoord>> corr_pool;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].dim != dim)
      throw std::invalid_argument("sample_features: mixed feature dimensions");
    for (const PixelCoord& px : correspondence_pixels[i]) {
      if (!maps[i].contains(px.row, px.col))
        throw std::invalid_argument(
            "sample_features: correspondence pixel outside its map");
      corr_pool.emplace_back(static_cast<int>(i), px);
    }
  }
  if (corr_pool.empty())
    throw std::invalid_argument("sample_features: no correspondence pixels");

  const int n_corr = (total + 1) / 2;
  const int n_uniform = total / 2;

  FeatureSampleSet out;
  out.vectors.resize(total, dim);
  out.source.resize(total);

  std::mt19937_64 rng = make_rng(seed, 0x5a11);
  std::uniform_int_distribution<std::size_t> pick_corr(0, corr_pool.size() - 1);
  for (int s = 0; s < n_corr; ++s) {
    const auto& [img, px] = corr_pool[pick_corr(rng)];
    auto v = maps[img].at(px.row, px.col);
    for (int k = 0; k < dim; ++k) out.vectors(s, k) = v[k];
    out.source[s] = FeatureSampleSet::Source::kCorrespondence;
  }
  std::uniform_int_distribution<std::size_t> pick_map(0, maps.size() - 1);
  for (int s = 0; s < n_uniform; ++s) {
    const FeatureMap& map = maps[pick_map(rng)];
    std::uniform_int_distribution<int> pick_row(0, map.height - 1);
    std::uniform_int_distribution<int> pick_col(0, map.width - 1);
    int row = pick_row(rng);
    int col = pick_col(rng);
    auto v = map.at(row, col);
    for (int k = 0; k < dim; ++k) out.vectors(n_corr + s, k) = v[k];
    out.source[n_corr + s] = FeatureSampleSet::Source::kUniform;
  }
  return out;
}

/// PCA-whitening to r dimensions followed by l2 normalization on apply().
/// whiten() alone is the linear part (used for the covariance invariant).
struct WhitenTransform {
  Eigen::VectorXd mean;         // d
  Eigen::MatrixXd projection;   // d x r, columns scaled by 1/sqrt(eigenvalue)
  double eigenvalue_floor = 1e-8;

  int input_dim() const { return static_cast<int>(mean.size()); }
  int output_dim() const { return static_cast<int>(projection.cols()); }

  Eigen::VectorXd whiten(const Eigen::VectorXd& x) const {
    if (x.size() != mean.size())
      throw std::invalid_argument("WhitenTransform: dimension mismatch");
    return projection.transpose() * (x - mean);
  }

  /// Whiten then l2-normalize. A zero whitened vector stays zero.
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    Eigen::VectorXd w = whiten(x);
    double n = w.norm();
    if (n > 0) w /= n;
    return w;
  }
};

inline WhitenTransform fit_whiten(const FeatureSampleSet& samples,
                                  int reduced_dim,
                                  double eigenvalue_floor = 1e-8) {
  const int n = samples.count();
  const int d = samples.dim();
  if (reduced_dim <= 0 || reduced_dim > d)
    throw std::invalid_argument("fit_whiten: reduced_dim out of range");
  if (n <= reduced_dim)
    throw std::invalid_argument("fit_whiten: need more samples than dims");
  if (eigenvalue_floor <= 0)
    throw std::invalid_argument("fit_whiten: eigenvalue_floor must be > 0");

  WhitenTransform t;
  t.eigenvalue_floor = eigenvalue_floor;
  t.mean = samples.vectors.colwise().mean();
  Eigen::MatrixXd centered = samples.vectors.rowwise() - t.mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / double(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("fit_whiten: eigendecomposition failed");
  // Eigen sorts eigenvalues ascending; take the top reduced_dim, largest first.
  t.projection.resize(d, reduced_dim);
  for (int j = 0; j < reduced_dim; ++j) {
    int src = d - 1 - j;
    double lambda = std::max(eig.eigenvalues()(src), eigenvalue_floor);
    t.projection.col(j) = eig.eigenvectors().col(src) / std::sqrt(lambda);
  }
  return t;
}

struct CentroidSet {
  Eigen::MatrixXd centroids;  // m x r, one centroid per row

  int num_clusters() const { return static_cast<int>(centroids.rows()); }
  int dim() const { return static_cast<int>(centroids.cols()); }

  /// Index of the nearest centroid; ties resolve to the lowest index.
  int nearest(const Eigen::VectorXd& v) const {
    int best = 0;
    double best_d2 = (centroids.row(0).transpose() - v).squaredNorm();
    for (int m = 1; m < num_clusters(); ++m) {
      double d2 = (centroids.row(m).transpose() - v).squaredNorm();
      if (d2 < best_d2) {
        best = m;
        best_d2 = d2;
      }
    }
    return best;
  }
};

inline void to_json(json& j, const WhitenTransform& t) {
  std::vector<double> proj(t.projection.size());
  for (int i = 0; i < t.projection.rows(); ++i)
    for (int k = 0; k < t.projection.cols(); ++k)
      proj[static_cast<std::size_t>(i) * t.projection.cols() + k] =
          t.projection(i, k);
  j = json{{"mean", std::vector<double>(t.mean.data(),
                                        t.mean.data() + t.mean.size())},
           {"projection_rows", t.projection.rows()},
           {"projection_cols", t.projection.cols()},
           {"projection", proj},
           {"eigenvalue_floor", t.eigenvalue_floor}};
}
inline void from_json(const json& j, WhitenTransform& t) {
  auto mean = j.at("mean").get<std::vector<double>>();
  t.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(),
                                             static_cast<long>(mean.size()));
  long rows = j.at("projection_rows").get<long>();
  long cols = j.at("projection_cols").get<long>();
  auto proj = j.at("projection").get<std::vector<double>>();
  if (rows <= 0 || cols <= 0 ||
      proj.size() != static_cast<std::size_t>(rows) * cols)
    throw ParseError("WhitenTransform: projection shape mismatch");
  t.projection.resize(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long k = 0; k < cols; ++k)
      t.projection(i, k) = proj[static_cast<std::size_t>(i) * cols + k];
  j.at("eigenvalue_floor").get_to(t.eigenvalue_floor);
}

inline void to_json(json& j, const CentroidSet& c) {
  json rows = json::array();
  for (int m = 0; m < c.num_clusters(); ++m) {
    std::vector<double> row(c.dim());
    for (int k = 0; k < c.dim(); ++k) row[k] = c.centroids(m, k);
    rows.push_back(row);
  }
  j = json{{"centroids", std::move(rows)}};
}
inline void from_json(const json& j, CentroidSet& c) {
  const json& rows = j.at("centroids");
  if (!rows.is_array() || rows.empty())
    throw ParseError("CentroidSet: centroids must be a non-empty array");
  long m = static_cast<long>(rows.size());
  auto first = rows[0].get<std::vector<double>>();
  long r = static_cast<long>(first.size());
  c.centroids.resize(m, r);
  for (long i = 0; i < m; ++i) {
    auto row = rows[i].get<std::vector<double>>();
    if (static_cast<long>(row.size()) != r)
      throw ParseError("CentroidSet: ragged centroid rows");
    for (long k = 0; k < r; ++k) c.centroids(i, k) = row[k];
  }
}

struct KmeansResult {
  CentroidSet centroids;
  std::vector<int> assignments;
  double objective = 0;   // mean squared distance to assigned centroid
  int iterations = 0;
};

namespace detail {

inline double kmeans_objective(const Eigen::MatrixXd& data,
                               const Eigen::MatrixXd& centroids,
                               const std::vector<int>& assign) {
  double total = 0;
  for (long i = 0; i < data.rows(); ++i)
    total += (data.row(i) - centroids.row(assign[i])).squaredNorm();
  return total / double(data.rows());
}

// k-means++ seeding (squared-distance weighted).
inline Eigen::MatrixXd kmeans_pp_init(const Eigen::MatrixXd& data, int m,
                                      std::mt19937_64& rng) {
  const long n = data.rows();
  Eigen::MatrixXd centroids(m, data.cols());
  std::uniform_int_distribution<long> pick(0, n - 1);
  centroids.row(0) = data.row(pick(rng));
  Eigen::VectorXd d2 = (data.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < m; ++c) {
    double total = d2.sum();
    long chosen;
    if (total <= 0) {
      chosen = pick(rng);  // all points coincide with a centroid already
    } else {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      double acc = 0;
      chosen = n - 1;
      for (long i = 0; i < n; ++i) {
        acc += d2(i);
        if (acc >= target) {
          chosen = i;
          break;
        }
      }
    }
    centroids.row(c) = data.row(chosen);
    d2 = d2.cwiseMin(
        (data.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }
  return centroids;
}

}  // namespace detail

/// Lloyd k-means over row vectors. Deterministic for a fixed seed. Empty
/// clusters are re-seeded from a randomly chosen non-empty centroid scaled by
/// (1 + u), u uniform in [-1e-4, 1e-4] per coordinate; iteration continues, so
/// on convergent return every centroid is non-empty and pairwise distinct.
inline KmeansResult kmeans_cluster(const Eigen::MatrixXd& data, int m,
                                   int max_iters, std::uint64_t seed) {
  const long n = data.rows();
  if (n == 0) throw std::invalid_argument("kmeans_cluster: zero input vectors");
  if (m < 1) throw std::invalid_argument("kmeans_cluster: m must be >= 1");
  if (max_iters < 1)
    throw std::invalid_argument("kmeans_cluster: max_iters must be >= 1");
  if (!data.allFinite())
    throw std::invalid_argument("kmeans_cluster: non-finite input");

  std::mt19937_64 rng = make_rng(seed, 0x4b6d);
  KmeansResult result;
  Eigen::MatrixXd centroids = detail::kmeans_pp_init(data, m, rng);

  auto assign_all = [&](std::vector<int>& assign) {
    bool changed = false;
    for (long i = 0; i < n; ++i) {
      int best = 0;
      double best_d2 = (data.row(i) - centroids.row(0)).squaredNorm();
      for (int c = 1; c < m; ++c) {
        double d2 = (data.row(i) - centroids.row(c)).squaredNorm();
        if (d2 < best_d2) {
          best = c;
          best_d2 = d2;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    return changed;
  };

  std::vector<int> assign(n, -1);
  assign_all(assign);
  double prev_objective = detail::kmeans_objective(data, centroids, assign);

  std::uniform_real_distribution<double> jitter(-1e-4, 1e-4);
  int iter = 0;
  for (; iter < max_iters; ++iter) {
    // Update step: means of assigned vectors, then re-seed empty clusters.
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(m, data.cols());
    std::vector<long> counts(m, 0);
    for (long i = 0; i < n; ++i) {
      sums.row(assign[i]) += data.row(i);
      counts[assign[i]]++;
    }
    std::vector<int> non_empty;
    for (int c = 0; c < m; ++c)
      if (counts[c] > 0) non_empty.push_back(c);
    for (int c = 0; c < m; ++c)
      if (counts[c] > 0) centroids.row(c) = sums.row(c) / double(counts[c]);
    for (int c = 0; c < m; ++c) {
      if (counts[c] > 0) continue;
      std::uniform_int_distribution<std::size_t> pick(0, non_empty.size() - 1);
      while (true) {
        Eigen::RowVectorXd base = centroids.row(non_empty[pick(rng)]);
        Eigen::RowVectorXd candidate = base;
        for (long k = 0; k < candidate.size(); ++k)
          candidate(k) = base(k) * (1.0 + jitter(rng));
        // A zero coordinate is unmoved by the multiplicative perturbation;
        // nudge additively so re-seeded centroids never collide bitwise.
        if ((candidate.array() == base.array()).all())
          for (long k = 0; k < candidate.size(); ++k)
            candidate(k) += jitter(rng) * 1e-4;
        bool distinct = true;
        for (int other = 0; other < m; ++other)
          if (other != c &&
              (candidate.array() == centroids.row(other).array()).all())
            distinct = false;
        if (distinct) {
          centroids.row(c) = candidate;
          break;
        }
      }
    }

    bool changed = assign_all(assign);
    double objective = detail::kmeans_objective(data, centroids, assign);
    if (objective > prev_objective + 1e-12)
      throw std::runtime_error("kmeans_cluster: objective increased");
    prev_objective = objective;
    if (!changed) {
      ++iter;
      break;
    }
  }

  result.centroids.centroids = std::move(centroids);
  result.assignments = std::move(assign);
  result.objective = prev_objective;
  result.iterations = iter;
  return result;
}

/// Dense per-pixel nearest-centroid labels in whitened space.
inline LabelMap assign_labels(const FeatureMap& map,
                              const WhitenTransform& transform,
                              const CentroidSet& centroids) {
  if (map.dim != transform.input_dim())
    throw std::invalid_argument("assign_labels: feature dim mismatch");
  if (transform.output_dim() != centroids.dim())
    throw std::invalid_argument("assign_labels: centroid dim mismatch");
  LabelMap out(map.height, map.width,
               static_cast<std::uint32_t>(centroids.num_clusters()));
  Eigen::VectorXd x(map.dim);
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c) {
      auto v = map.at(r, c);
      for (int k = 0; k < map.dim; ++k) x(k) = v[k];
      out.at(r, c) = static_cast<std::uint32_t>(
          centroids.nearest(transform.apply(x)));
    }
  return out;
}

}  // namespace fgsn
