#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "prevalshift/calibration.hpp"
#include "prevalshift/dataset.hpp"
#include "prevalshift/error.hpp"
#include "prevalshift/estimators.hpp"
#include "prevalshift/metrics.hpp"
#include "prevalshift/rng.hpp"

namespace prevalshift {

/// `count` equally spaced values from `lo` to `hi` inclusive.
inline std::vector<double> linspace(double lo, double hi, int count) {
  std::vector<double> out;
  if (count == 1) return {lo};
  for (int k = 0; k < count; ++k) out.push_back(lo + (hi - lo) * k / (count - 1));
  return out;
}

/// Two-stratum covariate-shift process: binary X, Y ~ Bernoulli(P(Y|X)),
/// deterministic stratum scores.
struct SimConfig {
  int n = 10000;
  double p_y_given_x1 = 0.85;
  double p_y_given_x0 = 0.15;
  double score_x1 = 0.935;
  double score_x0 = 0.135;
  double train_p_x0 = 0.5;
  std::vector<double> shift_grid = linspace(0.01, 0.99, 20);
  int iterations = 50;
  RngSeed seed{20260101};

  void validate() const {
    auto prob = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
    require(n >= 1, ErrorCode::InvalidConfig, "n must be at least 1");
    require(iterations >= 1, ErrorCode::InvalidConfig, "iterations must be at least 1");
    require(prob(p_y_given_x1) && prob(p_y_given_x0) && prob(score_x1) && prob(score_x0) && prob(train_p_x0),
            ErrorCode::InvalidConfig, "probabilities must lie in [0,1]");
    require(!shift_grid.empty(), ErrorCode::InvalidConfig, "shift grid is empty");
    for (double p : shift_grid)
      require(std::isfinite(p) && p > 0.0 && p < 1.0, ErrorCode::InvalidConfig, "shift grid values must lie in (0,1)");
  }

  /// Prevalence of the population with P(X=0) = p_x0.
  double population_prevalence(double p_x0) const { return p_x0 * p_y_given_x0 + (1.0 - p_x0) * p_y_given_x1; }
};

inline Schema simulation_schema() { return Schema{{FeatureDecl{"X", FeatureKind::Categorical, {"0", "1"}}}}; }

/// n rows of the two-stratum process with P(X=0) = p_x0.
inline Dataset generate(const SimConfig& config, double p_x0, RngSeed seed) {
  config.validate();
  require(p_x0 >= 0.0 && p_x0 <= 1.0, ErrorCode::InvalidConfig, "p_x0 must lie in [0,1]");
  Rng rng(seed);
  std::vector<Row> rows;
  rows.reserve(static_cast<std::size_t>(config.n));
  for (int i = 0; i < config.n; ++i) {
    const bool x0 = rng.uniform() < p_x0;
    const bool y = rng.uniform() < (x0 ? config.p_y_given_x0 : config.p_y_given_x1);
    Row r;
    r.features = FeatureVector({{0, x0 ? 0U : 1U}}, {});
    r.label = y ? 1 : 0;
    r.score = x0 ? config.score_x0 : config.score_x1;
    rows.push_back(std::move(r));
  }
  return Dataset(simulation_schema(), std::move(rows));
}

inline std::vector<MethodId> default_sweep_methods() {
  std::vector<MethodId> out;
  for (const char* id : {"mean", "cc", "rg", "pacc", "sld", "cal-mean:global", "cal-mean:stratum"})
    out.push_back(parse_method(id));
  return out;
}

struct SweepRow {
  double p_x0 = 0.0;
  /// p_x0 - train_p_x0
  double delta = 0.0;
  std::string method;
  double mean_estimate = 0.0;
  /// mean(estimate - realized target prevalence)
  double bias = 0.0;
  /// bias / population prevalence * 100
  double relative_bias_pct = 0.0;
  double rmse = 0.0;
  double truth_population = 0.0;
  /// mean realized target prevalence across iterations
  double truth_sample = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::string config_hash;
  RngSeed seed;
  int iterations = 0;
  int n = 0;
  std::vector<std::string> methods;

  const SweepRow& at(double p_x0, std::string_view method) const {
    for (const auto& r : rows)
      if (r.method == method && std::abs(r.p_x0 - p_x0) < 1e-12) return r;
    fail(ErrorCode::InvalidArgument, "no sweep row for " + std::string(method));
  }
};

struct SweepOptions {
  /// Worker threads for iterations; results do not depend on it.
  int threads = 1;
  BoostConfig boost;
};

/// Thread cap from PREVALSHIFT_THREADS, defaulting to 1.
inline int threads_from_env() {
  if (const char* v = std::getenv("PREVALSHIFT_THREADS")) {
    const int n = std::atoi(v);
    if (n >= 1) return n;
  }
  return 1;
}

inline std::string config_hash(const SimConfig& c, const std::vector<MethodId>& methods) {
  std::string canon;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g,", v);
    canon += buf;
  };
  num(c.n);
  num(c.p_y_given_x1);
  num(c.p_y_given_x0);
  num(c.score_x1);
  num(c.score_x0);
  num(c.train_p_x0);
  for (double g : c.shift_grid) num(g);
  num(c.iterations);
  canon += std::to_string(c.seed.value) + ";";
  for (const auto& m : methods) canon += m.str() + ";";
  canon += kRngVersion;
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Fits the calibrator a sweep method id refers to.
inline Calibrator fit_sweep_calibrator(const std::string& id, const Dataset& cal, const BoostConfig& boost,
                                       RngSeed seed) {
  if (id == "global") return fit_global_multiplicative(cal);
  if (id == "isotonic") return fit_isotonic(cal);
  if (id == "stratum") return fit_stratum_additive(cal, GroupSpec::by_features(cal.schema(), {"X"}));
  if (id == "boosted") return fit_boosted_multicalibrator(cal, boost, seed);
  fail(ErrorCode::UnknownMethod, "unknown calibrator id '" + id + "' in cal-mean method");
}

/// Monte Carlo sweep. Iteration b draws calibration data at train_p_x0, fits
/// every method once, then estimates on a fresh target at each grid value.
/// Bias is measured against each target's realized prevalence.
inline SweepReport run_sweep(const SimConfig& config, const std::vector<MethodId>& methods,
                             const SweepOptions& options = {}) {
  config.validate();
  require(!methods.empty(), ErrorCode::InvalidConfig, "no methods requested");
  for (const auto& m : methods)
    if (m.kind == MethodKind::CalibratedMean && m.calibrator != "global" && m.calibrator != "isotonic" &&
        m.calibrator != "stratum" && m.calibrator != "boosted")
      fail(ErrorCode::UnknownMethod, "unknown calibrator id '" + m.calibrator + "' in " + m.str());

  const std::size_t grid = config.shift_grid.size();
  const std::size_t nm = methods.size();
  const auto b_count = static_cast<std::size_t>(config.iterations);
  // errors[b][g][m] and realized truths[b][g]
  std::vector<double> errors(b_count * grid * nm);
  std::vector<double> estimates(b_count * grid * nm);
  std::vector<double> truths(b_count * grid);

  const Rng root(config.seed);
  auto run_iteration = [&](std::size_t b) {
    const Rng it = root.split(b);
    const Dataset cal = generate(config, config.train_p_x0, it.derive_seed(0));
    QuantifierFits fits = fit_quantifiers(cal, methods);
    for (const auto& m : methods)
      if (m.kind == MethodKind::CalibratedMean && !fits.calibrators.count(m.calibrator))
        fits.calibrators.emplace(m.calibrator,
                                 fit_sweep_calibrator(m.calibrator, cal, options.boost, it.derive_seed(1u << 20)));
    for (std::size_t g = 0; g < grid; ++g) {
      const Dataset target = generate(config, config.shift_grid[g], it.derive_seed(1 + g));
      double positives = 0.0;
      for (const auto& r : target.rows()) positives += *r.label;
      const double truth = positives / static_cast<double>(target.size());
      truths[b * grid + g] = truth;
      for (std::size_t k = 0; k < nm; ++k) {
        const double e = estimate(methods[k], target, fits, &cal).value;
        estimates[(b * grid + g) * nm + k] = e;
        errors[(b * grid + g) * nm + k] = e - truth;
      }
    }
  };

  const auto threads = static_cast<std::size_t>(std::max(1, options.threads));
  if (threads == 1) {
    for (std::size_t b = 0; b < b_count; ++b) run_iteration(b);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, b_count); ++t) {
      pool.emplace_back([&] {
        for (std::size_t b = next++; b < b_count; b = next++) {
          try {
            run_iteration(b);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  SweepReport report;
  report.config_hash = config_hash(config, methods);
  report.seed = config.seed;
  report.iterations = config.iterations;
  report.n = config.n;
  for (const auto& m : methods) report.methods.push_back(m.str());
  for (std::size_t g = 0; g < grid; ++g) {
    const double p = config.shift_grid[g];
    CompensatedSum truth_sum;
    for (std::size_t b = 0; b < b_count; ++b) truth_sum.add(truths[b * grid + g]);
    for (std::size_t k = 0; k < nm; ++k) {
      CompensatedSum err, sq, est;
      for (std::size_t b = 0; b < b_count; ++b) {
        const double e = errors[(b * grid + g) * nm + k];
        err.add(e);
        sq.add(e * e);
        est.add(estimates[(b * grid + g) * nm + k]);
      }
      SweepRow row;
      row.p_x0 = p;
      row.delta = p - config.train_p_x0;
      row.method = methods[k].str();
      row.mean_estimate = est.value() / config.iterations;
      row.bias = err.value() / config.iterations;
      row.truth_population = config.population_prevalence(p);
      row.relative_bias_pct = 100.0 * row.bias / row.truth_population;
      row.rmse = std::sqrt(sq.value() / config.iterations);
      row.truth_sample = truth_sum.value() / config.iterations;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Shifted populations

enum class WeightShape { FavorLow, FavorHigh, FavorBothTails };

inline WeightShape parse_weight_shape(std::string_view s) {
  if (s == "favor_low") return WeightShape::FavorLow;
  if (s == "favor_high") return WeightShape::FavorHigh;
  if (s == "favor_both_tails") return WeightShape::FavorBothTails;
  fail(ErrorCode::InvalidConfig, "unknown weight shape '" + std::string(s) + "'");
}

inline std::string_view to_string(WeightShape s) {
  switch (s) {
    case WeightShape::FavorLow: return "favor_low";
    case WeightShape::FavorHigh: return "favor_high";
    case WeightShape::FavorBothTails: return "favor_both_tails";
  }
  return "?";
}

/// Resample so that the first category of a categorical feature has mass p_first.
struct MixtureShift {
  std::string feature;
  double p_first = 0.5;
};

/// Exponential tilt along a numeric feature, min-max normalized to z in [0,1]:
/// exp(-rate z), exp(rate z) or exp(rate |z - median z|). Rate 0 is uniform.
struct ImportanceShift {
  std::string feature;
  WeightShape shape = WeightShape::FavorLow;
  double rate = 3.0;
};

struct ShiftSpec {
  std::variant<MixtureShift, ImportanceShift> kind;
  /// Rows to draw; 0 means the source size.
  std::size_t target_n = 0;
};

struct ShiftResult {
  Dataset data;
  /// (sum p)^2 / sum p^2 of the per-row sampling probabilities.
  double effective_sample_size = 0.0;
  std::optional<double> feature_mean_before;
  std::optional<double> feature_mean_after;
};

/// Per-row sampling weights of a shift (unnormalized).
inline std::vector<double> shift_weights(const Dataset& source, const ShiftSpec& spec) {
  require(!source.empty(), ErrorCode::EmptyDataset, "cannot shift an empty dataset");
  std::vector<double> w(source.size());
  if (const auto* mix = std::get_if<MixtureShift>(&spec.kind)) {
    require(mix->p_first >= 0.0 && mix->p_first <= 1.0, ErrorCode::InvalidConfig, "mixture mass must lie in [0,1]");
    const FeatureId id = source.schema().require_feature(mix->feature);
    require(source.schema().features[id].kind == FeatureKind::Categorical, ErrorCode::InvalidConfig,
            "mixture shift needs a categorical feature");
    double first = 0.0;
    for (const auto& r : source.rows()) first += *r.features.categorical(id) == 0 ? 1.0 : 0.0;
    const double rest = static_cast<double>(source.size()) - first;
    require((mix->p_first == 0.0 || first > 0.0) && (mix->p_first == 1.0 || rest > 0.0), ErrorCode::InvalidConfig,
            "mixture shift needs rows on both sides of the requested mass");
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = *source.row(i).features.categorical(id) == 0 ? mix->p_first / first : (1.0 - mix->p_first) / rest;
    return w;
  }
  const auto& imp = std::get<ImportanceShift>(spec.kind);
  require(imp.rate >= 0.0 && std::isfinite(imp.rate), ErrorCode::InvalidConfig, "rate must be non-negative");
  const FeatureId id = source.schema().require_feature(imp.feature);
  require(source.schema().features[id].kind == FeatureKind::Numeric, ErrorCode::NonNumericFeature,
          "feature '" + imp.feature + "' is not numeric");
  std::vector<double> v(source.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = *source.row(i).features.numeric(id);
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double span = *hi - *lo;
  std::vector<double> z(v.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = span > 0.0 ? (v[i] - *lo) / span : 0.0;
  std::vector<double> sorted = z;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  const double median = m % 2 == 1 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  for (std::size_t i = 0; i < w.size(); ++i) {
    switch (imp.shape) {
      case WeightShape::FavorLow: w[i] = std::exp(-imp.rate * z[i]); break;
      case WeightShape::FavorHigh: w[i] = std::exp(imp.rate * z[i]); break;
      case WeightShape::FavorBothTails: w[i] = std::exp(imp.rate * std::abs(z[i] - median)); break;
    }
  }
  return w;
}

/// Importance-weighted resampling with replacement.
inline ShiftResult resample_shift(const Dataset& source, const ShiftSpec& spec, RngSeed seed) {
  const auto w = shift_weights(source, spec);
  Rng rng(seed);
  const std::size_t count = spec.target_n == 0 ? source.size() : spec.target_n;
  const auto picks = sample_with_replacement(w, count, rng);

  ShiftResult out{source.subset(picks), 0.0, std::nullopt, std::nullopt};
  CompensatedSum s, s2;
  for (double x : w) {
    s.add(x);
    s2.add(x * x);
  }
  out.effective_sample_size = s.value() * s.value() / s2.value();
  if (const auto* imp = std::get_if<ImportanceShift>(&spec.kind)) {
    const FeatureId id = source.schema().require_feature(imp->feature);
    auto mean_of = [id](const Dataset& d) {
      CompensatedSum acc;
      for (const auto& r : d.rows()) acc.add(*r.features.numeric(id));
      return acc.value() / static_cast<double>(d.size());
    };
    out.feature_mean_before = mean_of(source);
    out.feature_mean_after = mean_of(out.data);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bias decomposition

struct BiasDecomposition {
  /// mean(Y - h) within each group on the calibration data
  std::map<std::string, double> residual;
  /// target weight share of each group
  std::map<std::string, double> target_share;
  /// sum_G share_G * residual_G, i.e. truth - estimate for the uncalibrated mean
  double predicted_bias = 0.0;
};

inline BiasDecomposition bias_decomposition(const Dataset& cal, const Dataset& target, const GroupFn& groups) {
  require(!cal.empty() && !target.empty(), ErrorCode::EmptyDataset, "bias decomposition needs both samples");
  struct Acc {
    CompensatedSum w, wr;
  };
  std::map<std::string, Acc> cal_acc;
  for (const auto& r : cal.rows()) {
    if (!r.label) fail(ErrorCode::MissingLabels, "calibration row without a label");
    if (!r.score) fail(ErrorCode::MissingScores, "calibration row without a score");
    auto& a = cal_acc[groups(r.features)];
    a.w.add(r.weight);
    a.wr.add(r.weight * (*r.label - *r.score));
  }
  std::map<std::string, CompensatedSum> target_w;
  CompensatedSum total;
  for (const auto& r : target.rows()) {
    target_w[groups(r.features)].add(r.weight);
    total.add(r.weight);
  }
  BiasDecomposition out;
  for (const auto& [g, a] : cal_acc) out.residual[g] = a.wr.value() / a.w.value();
  CompensatedSum predicted;
  for (const auto& [g, w] : target_w) {
    auto it = out.residual.find(g);
    require(it != out.residual.end(), ErrorCode::EmptyGroup,
            "target group '" + g + "' has no calibration rows, so its residual is undefined");
    const double share = w.value() / total.value();
    out.target_share[g] = share;
    predicted.add(share * it->second);
  }
  out.predicted_bias = predicted.value();
  return out;
}

// ---------------------------------------------------------------------------
// Age-structured population

/// Synthetic employment-style population: integer age uniform on [16, 90],
/// a four-level education category, outcome rates by age band
/// (16-24, 25-54, 55-64, 65+) shifted on the logit scale by education, and a
/// score from a misspecified model that is linear in age.
struct AgePopulationConfig {
  std::vector<double> band_rates = {0.47, 0.76, 0.61, 0.17};
  std::vector<double> education_effects = {-0.4, -0.1, 0.1, 0.4};
  double score_intercept = 1.0;
  double score_age_slope = -1.4;
};

inline Schema age_population_schema() {
  return Schema{{FeatureDecl{"age", FeatureKind::Numeric, {}},
                 FeatureDecl{"education", FeatureKind::Categorical, {"e0", "e1", "e2", "e3"}}}};
}

inline int age_band(double age) {
  if (age < 25) return 0;
  if (age < 55) return 1;
  if (age < 65) return 2;
  return 3;
}

inline Dataset generate_age_population(std::size_t n, RngSeed seed, const AgePopulationConfig& config = {}) {
  Rng rng(seed);
  std::vector<Row> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double age = 16.0 + static_cast<double>(rng.below(75));
    const auto edu = static_cast<CategoryId>(rng.below(4));
    const double eta = logit(config.band_rates[static_cast<std::size_t>(age_band(age))]) +
                       config.education_effects[edu];
    Row r;
    r.features = FeatureVector({{1, edu}}, {{0, age}});
    r.label = rng.uniform() < sigmoid(eta) ? 1 : 0;
    r.score = sigmoid(config.score_intercept + config.score_age_slope * (age - 16.0) / 74.0 +
                      config.education_effects[edu]);
    rows.push_back(std::move(r));
  }
  return Dataset(age_population_schema(), std::move(rows));
}

}  // namespace prevalshift
