// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0
//
// Metrics: normalized mutual information between cluster and class
// assignments, contingency tables, recall-at-threshold tables, and
// empirical inlier CDFs.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fgsn {

struct AssignmentPair {
  std::vector<std::uint32_t> x;  // cluster ids
  std::vector<std::uint32_t> y;  // semantic class ids

  void validate() const {
    if (x.empty()) throw std::invalid_argument("AssignmentPair: empty");
    if (x.size() != y.size())
      throw std::invalid_argument("AssignmentPair: length mismatch");
  }
};

using ContingencyTable =
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

/// cell (t, c) = number of elements with class t and cluster c.
inline ContingencyTable contingency(const AssignmentPair& pair, int rows,
                                    int cols) {
  pair.validate();
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("contingency: non-positive shape");
  ContingencyTable table = ContingencyTable::Zero(rows, cols);
  for (std::size_t i = 0; i < pair.x.size(); ++i) {
    if (pair.y[i] >= static_cast<std::uint32_t>(rows))
      throw std::invalid_argument("contingency: class label out of range");
    if (pair.x[i] >= static_cast<std::uint32_t>(cols))
      throw std::invalid_argument("contingency: cluster label out of range");
    table(pair.y[i], pair.x[i])++;
  }
  return table;
}

/// NMI from a contingency table: I(X,Y)/sqrt(H(X)H(Y)) with natural-log
/// entropies over empirical frequencies; 0 when either marginal entropy is 0.
inline double nmi_from_contingency(const ContingencyTable& table) {
  const double total = double(table.sum());
  if (total <= 0) throw std::invalid_argument("nmi: empty table");
  Eigen::VectorXd row_sum(table.rows());
  Eigen::VectorXd col_sum(table.cols());
  for (long t = 0; t < table.rows(); ++t) row_sum(t) = double(table.row(t).sum());
  for (long c = 0; c < table.cols(); ++c) col_sum(c) = double(table.col(c).sum());

  auto entropy = [&](const Eigen::VectorXd& counts) {
    double h = 0;
    for (long i = 0; i < counts.size(); ++i) {
      if (counts(i) <= 0) continue;
      double f = counts(i) / total;
      h -= f * std::log(f);
    }
    return h;
  };
  double hx = entropy(col_sum);
  double hy = entropy(row_sum);
  if (hx <= 0 || hy <= 0) return 0.0;

  double mi = 0;
  for (long t = 0; t < table.rows(); ++t)
    for (long c = 0; c < table.cols(); ++c) {
      if (table(t, c) <= 0) continue;
      double joint = double(table(t, c)) / total;
      mi += joint * std::log(joint * total * total / (row_sum(t) * col_sum(c)));
    }
  return mi / std::sqrt(hx * hy);
}

inline double nmi(const AssignmentPair& pair) {
  pair.validate();
  std::uint32_t max_x = 0;
  std::uint32_t max_y = 0;
  for (std::size_t i = 0; i < pair.x.size(); ++i) {
    max_x = std::max(max_x, pair.x[i]);
    max_y = std::max(max_y, pair.y[i]);
  }
  return nmi_from_contingency(
      contingency(pair, static_cast<int>(max_y) + 1, static_cast<int>(max_x) + 1));
}

struct RecallThresholds {
  std::vector<std::pair<double, double>> levels =  // (meters, degrees)
      {{0.25, 2.0}, {0.5, 5.0}, {5.0, 10.0}};

  void validate() const {
    if (levels.empty()) throw std::invalid_argument("RecallThresholds: empty");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i].first <= 0 || levels[i].second <= 0)
        throw std::invalid_argument("RecallThresholds: non-positive entry");
      if (i > 0 && (levels[i].first <= levels[i - 1].first ||
                    levels[i].second <= levels[i - 1].second))
        throw std::invalid_argument(
            "RecallThresholds: must be strictly increasing in both components");
    }
  }
};

/// Percentage of results with position error <= meters AND rotation error
/// <= degrees, per threshold pair. Comparisons are inclusive.
inline std::vector<double> recall_table(
    std::span<const std::pair<double, double>> errors,
    const RecallThresholds& thresholds = {}) {
  thresholds.validate();
  if (errors.empty()) throw std::invalid_argument("recall_table: no results");
  std::vector<double> out;
  for (const auto& [meters, degrees] : thresholds.levels) {
    long hits = 0;
    for (const auto& [pos, rot] : errors)
      if (pos <= meters && rot <= degrees) ++hits;
    out.push_back(100.0 * double(hits) / double(errors.size()));
  }
  return out;
}

/// Empirical CDF: sorted unique values with cumulative fractions; the final
/// fraction is exactly 1.
inline std::vector<std::pair<double, double>> inlier_cdf(
    std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("inlier_cdf: no values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<double, double>> cdf;
  const double n = double(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    double v = sorted[i];
    while (i + 1 < sorted.size() && sorted[i + 1] == v) ++i;
    cdf.emplace_back(v, double(i + 1) / n);
  }
  cdf.back().second = 1.0;
  return cdf;
}

/// Aligned plain-text recall table, one row per method:
///   method      97.2 / 98.1 / 99.5
inline std::string format_recall_text(
    const std::vector<std::pair<std::string, std::vector<double>>>& rows,
    const RecallThresholds& thresholds = {}) {
  thresholds.validate();
  std::string out;
  out += "thresholds:";
  char buf[64];
  for (const auto& [m, d] : thresholds.levels) {
    std::snprintf(buf, sizeof buf, " %g m / %g deg;", m, d);
    out += buf;
  }
  out += "\n";
  std::size_t name_width = 6;
  for (const auto& [name, values] : rows)
    name_width = std::max(name_width, name.size());
  for (const auto& [name, values] : rows) {
    out += name;
    out.append(name_width + 2 - name.size(), ' ');
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%5.1f", values[i]);
      out += buf;
      if (i + 1 < values.size()) out += " / ";
    }
    out += "\n";
  }
  return out;
}

}  // namespace fgsn
