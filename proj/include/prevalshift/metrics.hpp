#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "prevalshift/calibration.hpp"
#include "prevalshift/dataset.hpp"
#include "prevalshift/error.hpp"
#include "prevalshift/estimators.hpp"
#include "prevalshift/rng.hpp"

namespace prevalshift {

using GroupFn = std::function<std::string(const FeatureVector&)>;

struct BiasRow {
  std::string method;
  double estimate = 0.0;
  double bias_pp = 0.0;
  /// Undefined when the truth is zero.
  std::optional<double> relative_pct;
};

/// bias = estimate - truth, in percentage points; relative bias in percent of truth.
inline std::vector<BiasRow> bias_report(const std::vector<PrevalenceEstimate>& estimates, double truth) {
  require(truth >= 0.0 && truth <= 1.0, ErrorCode::InvalidArgument, "truth must lie in [0,1]");
  std::vector<BiasRow> rows;
  for (const auto& e : estimates) {
    BiasRow r{e.method, e.value, 100.0 * (e.value - truth), std::nullopt};
    if (truth > 0.0) r.relative_pct = 100.0 * (e.value - truth) / truth;
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Relative bias in percent; throws ZeroTruth where it is undefined.
inline double relative_bias_pct(double estimate, double truth) {
  require(truth != 0.0, ErrorCode::ZeroTruth, "relative bias is undefined for zero truth");
  return 100.0 * (estimate - truth) / truth;
}

struct BootstrapResult {
  double rmse = 0.0;
  /// Mean of (estimate - truth) over resamples.
  double mean_error = 0.0;
  int iterations = 0;
};

/// Resamples target rows with replacement (fits held fixed inside `method`)
/// and reports the root mean squared error against `truth`.
inline BootstrapResult bootstrap_rmse(const Dataset& target, const std::function<double(const Dataset&)>& method,
                                      double truth, int iterations, RngSeed seed) {
  require(iterations >= 1, ErrorCode::InvalidArgument, "bootstrap needs at least one iteration");
  require(!target.empty(), ErrorCode::EmptyDataset, "bootstrap of an empty target");
  const Rng root(seed);
  CompensatedSum sq, err;
  std::vector<std::size_t> picks(target.size());
  for (int b = 0; b < iterations; ++b) {
    Rng rng = root.split(static_cast<std::uint64_t>(b));
    for (auto& p : picks) p = static_cast<std::size_t>(rng.below(target.size()));
    const double e = method(target.subset(picks)) - truth;
    sq.add(e * e);
    err.add(e);
  }
  return {std::sqrt(sq.value() / iterations), err.value() / iterations, iterations};
}

struct CalibrationCell {
  std::string group;
  int bin = 0;
  std::size_t count = 0;
  double gap = 0.0;
};

struct CalibrationReport {
  double global_gap = 0.0;
  std::map<std::string, double> per_group_gaps;
  std::map<std::string, std::size_t> per_group_counts;
  std::vector<CalibrationCell> per_group_bin_gaps;
  std::vector<double> bin_edges;
  /// (group, bin) cells dropped for having fewer than `min_cell_rows` rows.
  std::size_t omitted_cells = 0;
};

/// Absolute gaps |mean calibrated score - mean label| globally, per group
/// (multi-accuracy) and per (group, equal-width score bin) (multicalibration).
inline CalibrationReport multicalibration_report(const Dataset& data, const Calibrator& calibrator,
                                                 const GroupFn& groups, int bins = 10,
                                                 std::size_t min_cell_rows = 20) {
  require(bins >= 1, ErrorCode::InvalidArgument, "bins must be positive");
  require(!data.empty(), ErrorCode::EmptyDataset, "report on an empty dataset");
  struct Acc {
    CompensatedSum w, wf, wy;
    std::size_t n = 0;
    void add(double weight, double f, double y) {
      w.add(weight);
      wf.add(weight * f);
      wy.add(weight * y);
      ++n;
    }
    double gap() const { return std::abs(wf.value() - wy.value()) / w.value(); }
  };
  Acc all;
  std::map<std::string, Acc> by_group;
  std::map<std::pair<std::string, int>, Acc> by_cell;
  for (const auto& r : data.rows()) {
    if (!r.label) fail(ErrorCode::MissingLabels, "report row without a label");
    if (!r.score) fail(ErrorCode::MissingScores, "report row without a score");
    const double f = apply(calibrator, *r.score, r.features);
    const std::string g = groups(r.features);
    const int bin = std::min(static_cast<int>(f * bins), bins - 1);
    all.add(r.weight, f, *r.label);
    by_group[g].add(r.weight, f, *r.label);
    by_cell[{g, bin}].add(r.weight, f, *r.label);
  }
  CalibrationReport out;
  out.global_gap = all.gap();
  for (const auto& [g, a] : by_group) {
    out.per_group_gaps[g] = a.gap();
    out.per_group_counts[g] = a.n;
  }
  for (const auto& [key, a] : by_cell) {
    if (a.n < min_cell_rows) {
      ++out.omitted_cells;
      continue;
    }
    out.per_group_bin_gaps.push_back({key.first, key.second, a.n, a.gap()});
  }
  for (int k = 0; k <= bins; ++k) out.bin_edges.push_back(static_cast<double>(k) / bins);
  return out;
}

struct ScoreHistogram {
  std::vector<double> bin_edges;
  std::vector<std::size_t> total;
  std::vector<std::size_t> positive;
  std::vector<std::size_t> negative;
  std::vector<std::size_t> unlabeled;
  std::size_t unique_scores = 0;
  /// Fraction of rows scoring exactly 0 or exactly 1.
  double boundary_mass = 0.0;
};

inline ScoreHistogram score_histogram(const Dataset& data, int bins = 10) {
  require(bins >= 1, ErrorCode::InvalidArgument, "bins must be positive");
  require(!data.empty(), ErrorCode::EmptyDataset, "histogram of an empty dataset");
  ScoreHistogram h;
  const auto nb = static_cast<std::size_t>(bins);
  h.total.assign(nb, 0);
  h.positive.assign(nb, 0);
  h.negative.assign(nb, 0);
  h.unlabeled.assign(nb, 0);
  for (int k = 0; k <= bins; ++k) h.bin_edges.push_back(static_cast<double>(k) / bins);
  std::set<double> unique;
  std::size_t boundary = 0;
  for (const auto& r : data.rows()) {
    if (!r.score) fail(ErrorCode::MissingScores, "histogram row without a score");
    const double s = *r.score;
    const auto bin = static_cast<std::size_t>(std::min(static_cast<int>(s * bins), bins - 1));
    ++h.total[bin];
    if (!r.label)
      ++h.unlabeled[bin];
    else if (*r.label == 1)
      ++h.positive[bin];
    else
      ++h.negative[bin];
    unique.insert(s);
    if (s == 0.0 || s == 1.0) ++boundary;
  }
  h.unique_scores = unique.size();
  h.boundary_mass = static_cast<double>(boundary) / static_cast<double>(data.size());
  return h;
}

}  // namespace prevalshift
