#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "prevalshift/dataset.hpp"
#include "prevalshift/error.hpp"

namespace prevalshift {

/// Column-major design for tree learners. Categorical columns hold category
/// ids stored as doubles.
struct TreeColumn {
  FeatureKind kind = FeatureKind::Numeric;
  std::vector<double> values;
};

struct TreeMatrix {
  std::vector<TreeColumn> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().values.size(); }
  std::size_t cols() const { return columns.size(); }
};

struct TreeConfig {
  int depth = 3;
  int min_leaf = 50;
};

struct TreeNode {
  /// -1 marks a leaf.
  int feature = -1;
  bool categorical = false;
  /// Numeric: go left when x <= threshold. Categorical: go left when x == threshold.
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

class RegressionTree {
 public:
  RegressionTree() = default;
  explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  double predict(std::span<const double> x) const {
    int at = 0;
    while (nodes_[static_cast<std::size_t>(at)].feature >= 0) {
      const auto& node = nodes_[static_cast<std::size_t>(at)];
      const double v = x[static_cast<std::size_t>(node.feature)];
      const bool go_left = node.categorical ? v == node.threshold : v <= node.threshold;
      at = go_left ? node.left : node.right;
    }
    return nodes_[static_cast<std::size_t>(at)].value;
  }

  double predict_row(const TreeMatrix& m, std::size_t row) const {
    int at = 0;
    while (nodes_[static_cast<std::size_t>(at)].feature >= 0) {
      const auto& node = nodes_[static_cast<std::size_t>(at)];
      const double v = m.columns[static_cast<std::size_t>(node.feature)].values[row];
      const bool go_left = node.categorical ? v == node.threshold : v <= node.threshold;
      at = go_left ? node.left : node.right;
    }
    return nodes_[static_cast<std::size_t>(at)].value;
  }

  std::span<const TreeNode> nodes() const { return nodes_; }

  int depth() const { return nodes_.empty() ? 0 : depth_from(0); }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.feature < 0; }));
  }

 private:
  int depth_from(int at) const {
    const auto& node = nodes_[static_cast<std::size_t>(at)];
    if (node.feature < 0) return 0;
    return 1 + std::max(depth_from(node.left), depth_from(node.right));
  }

  std::vector<TreeNode> nodes_;
};

namespace detail {

struct SplitChoice {
  double gain = 0.0;
  int feature = -1;
  bool categorical = false;
  double threshold = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const TreeMatrix& m, std::span<const double> targets, std::span<const double> weights,
              const TreeConfig& config)
      : m_(m), y_(targets), w_(weights), config_(config), goes_left_(m.rows(), 0) {}

  RegressionTree build() {
    std::vector<std::size_t> all(m_.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::vector<std::size_t>> sorted(m_.cols());
    for (std::size_t f = 0; f < m_.cols(); ++f) {
      if (m_.columns[f].kind != FeatureKind::Numeric) continue;
      sorted[f] = all;
      const auto& col = m_.columns[f].values;
      std::stable_sort(sorted[f].begin(), sorted[f].end(), [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
    }
    grow(all, sorted, 0);
    return RegressionTree(std::move(nodes_));
  }

 private:
  int grow(const std::vector<std::size_t>& rows, const std::vector<std::vector<std::size_t>>& sorted, int depth) {
    double sw = 0.0;
    double swy = 0.0;
    for (auto i : rows) {
      sw += w_[i];
      swy += w_[i] * y_[i];
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(TreeNode{.value = sw > 0.0 ? swy / sw : 0.0});

    const auto min_leaf = static_cast<std::size_t>(config_.min_leaf);
    if (depth >= config_.depth || rows.size() < 2 * min_leaf) return id;

    const SplitChoice best = find_split(rows, sorted, sw, swy);
    if (best.feature < 0) return id;

    const auto& col = m_.columns[static_cast<std::size_t>(best.feature)].values;
    std::vector<std::size_t> left_rows;
    std::vector<std::size_t> right_rows;
    for (auto i : rows) {
      const bool left = best.categorical ? col[i] == best.threshold : col[i] <= best.threshold;
      goes_left_[i] = left ? 1 : 0;
      (left ? left_rows : right_rows).push_back(i);
    }
    std::vector<std::vector<std::size_t>> left_sorted(sorted.size());
    std::vector<std::vector<std::size_t>> right_sorted(sorted.size());
    for (std::size_t f = 0; f < sorted.size(); ++f) {
      for (auto i : sorted[f]) (goes_left_[i] ? left_sorted[f] : right_sorted[f]).push_back(i);
    }

    nodes_[static_cast<std::size_t>(id)].feature = best.feature;
    nodes_[static_cast<std::size_t>(id)].categorical = best.categorical;
    nodes_[static_cast<std::size_t>(id)].threshold = best.threshold;
    const int left = grow(left_rows, left_sorted, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = left;
    const int right = grow(right_rows, right_sorted, depth + 1);
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  // Weighted variance reduction: S_L^2/W_L + S_R^2/W_R - S^2/W.
  // Candidates are scanned in (feature id, threshold) order; only a strictly
  // larger gain replaces the incumbent, which fixes tie-breaking.
  SplitChoice find_split(const std::vector<std::size_t>& rows, const std::vector<std::vector<std::size_t>>& sorted,
                         double sw, double swy) const {
    const auto min_leaf = static_cast<std::size_t>(config_.min_leaf);
    const double parent = swy * swy / sw;
    SplitChoice best;
    best.gain = 1e-12 * std::max(1.0, std::abs(parent));
    for (std::size_t f = 0; f < m_.cols(); ++f) {
      const auto& col = m_.columns[f].values;
      if (m_.columns[f].kind == FeatureKind::Numeric) {
        const auto& order = sorted[f];
        double lw = 0.0;
        double lwy = 0.0;
        for (std::size_t k = 0; k + 1 < order.size(); ++k) {
          const auto i = order[k];
          lw += w_[i];
          lwy += w_[i] * y_[i];
          const double here = col[i];
          const double next = col[order[k + 1]];
          if (!(next > here)) continue;
          const std::size_t n_left = k + 1;
          if (n_left < min_leaf || order.size() - n_left < min_leaf) continue;
          const double rw = sw - lw;
          if (lw <= 0.0 || rw <= 0.0) continue;
          const double gain = lwy * lwy / lw + (swy - lwy) * (swy - lwy) / rw - parent;
          if (gain > best.gain) best = {gain, static_cast<int>(f), false, here + 0.5 * (next - here)};
        }
      } else {
        struct Acc {
          std::size_t n = 0;
          double w = 0.0;
          double wy = 0.0;
        };
        std::map<double, Acc> by_category;
        for (auto i : rows) {
          auto& a = by_category[col[i]];
          ++a.n;
          a.w += w_[i];
          a.wy += w_[i] * y_[i];
        }
        if (by_category.size() < 2) continue;
        for (const auto& [category, a] : by_category) {
          if (a.n < min_leaf || rows.size() - a.n < min_leaf) continue;
          const double rw = sw - a.w;
          if (a.w <= 0.0 || rw <= 0.0) continue;
          const double gain = a.wy * a.wy / a.w + (swy - a.wy) * (swy - a.wy) / rw - parent;
          if (gain > best.gain) best = {gain, static_cast<int>(f), true, category};
        }
      }
    }
    return best;
  }

  const TreeMatrix& m_;
  std::span<const double> y_;
  std::span<const double> w_;
  TreeConfig config_;
  std::vector<TreeNode> nodes_;
  std::vector<char> goes_left_;
};

}  // namespace detail

/// Greedy depth-limited regression tree. Leaves hold the weighted target mean;
/// with hessian weights and gradient/hessian targets this yields Newton leaves.
inline RegressionTree fit_regression_tree(const TreeMatrix& features, std::span<const double> targets,
                                          std::span<const double> sample_weights, const TreeConfig& config) {
  const std::size_t n = features.rows();
  require(n >= 1, ErrorCode::InsufficientData, "regression tree needs at least one row");
  require(config.depth >= 0 && config.min_leaf >= 1, ErrorCode::InvalidArgument, "invalid tree config");
  require(targets.size() == n, ErrorCode::LengthMismatch, "targets differ from feature rows");
  require(sample_weights.empty() || sample_weights.size() == n, ErrorCode::LengthMismatch,
          "sample weights differ from feature rows");
  for (const auto& c : features.columns)
    require(c.values.size() == n, ErrorCode::LengthMismatch, "ragged tree matrix");
  for (double t : targets) require(std::isfinite(t), ErrorCode::InvalidArgument, "non-finite tree target");

  std::vector<double> unit;
  if (sample_weights.empty()) unit.assign(n, 1.0);
  const std::span<const double> w = sample_weights.empty() ? std::span<const double>(unit) : sample_weights;
  return detail::TreeBuilder(features, targets, w, config).build();
}

inline RegressionTree fit_regression_tree(const TreeMatrix& features, std::span<const double> targets,
                                          const TreeConfig& config) {
  return fit_regression_tree(features, targets, {}, config);
}

}  // namespace prevalshift
