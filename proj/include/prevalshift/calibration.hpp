#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "prevalshift/dataset.hpp"
#include "prevalshift/error.hpp"
#include "prevalshift/numerics.hpp"
#include "prevalshift/rng.hpp"
#include "prevalshift/tree.hpp"

namespace prevalshift {

/// Affine map of [0,1] onto [epsilon, 1 - epsilon].
inline double squash(double score, double epsilon) {
  require(epsilon >= 0.0 && epsilon < 0.5, ErrorCode::InvalidEpsilon, "squash epsilon must lie in [0, 0.5)");
  return epsilon + (1.0 - 2.0 * epsilon) * score;
}

// ---------------------------------------------------------------------------
// Groups

/// Maps a feature vector onto a group key. Each term reads one feature:
/// categorical features contribute their category label, numeric features the
/// index of the half-open bin [edges[k-1], edges[k]) containing the value.
class GroupSpec {
 public:
  struct Term {
    std::string name;
    FeatureId id = 0;
    FeatureKind kind = FeatureKind::Categorical;
    std::vector<std::string> categories;
    std::vector<double> edges;
  };

  GroupSpec() = default;
  explicit GroupSpec(std::vector<Term> terms) : terms_(std::move(terms)) {}

  /// Group by the named features. Numeric features need an entry in `edges`.
  static GroupSpec by_features(const Schema& schema, const std::vector<std::string>& names,
                               const std::map<std::string, std::vector<double>>& edges = {}) {
    std::vector<Term> terms;
    for (const auto& name : names) {
      const FeatureId id = schema.require_feature(name);
      const auto& decl = schema.features[id];
      Term t{name, id, decl.kind, decl.categories, {}};
      if (decl.kind == FeatureKind::Numeric) {
        auto it = edges.find(name);
        require(it != edges.end() && !it->second.empty(), ErrorCode::InvalidArgument,
                "numeric group feature '" + name + "' needs bin edges");
        require(std::is_sorted(it->second.begin(), it->second.end()), ErrorCode::InvalidArgument,
                "bin edges must be ascending");
        t.edges = it->second;
      }
      terms.push_back(std::move(t));
    }
    return GroupSpec(std::move(terms));
  }

  std::optional<std::string> try_key(const FeatureVector& x) const {
    std::string key;
    for (std::size_t k = 0; k < terms_.size(); ++k) {
      const auto& t = terms_[k];
      if (k > 0) key += '|';
      key += t.name;
      if (t.kind == FeatureKind::Categorical) {
        auto cat = x.categorical(t.id);
        if (!cat) return std::nullopt;
        key += '=';
        key += *cat < t.categories.size() ? t.categories[*cat] : "#" + std::to_string(*cat);
      } else {
        auto v = x.numeric(t.id);
        if (!v) return std::nullopt;
        const auto bin = std::upper_bound(t.edges.begin(), t.edges.end(), *v) - t.edges.begin();
        key += "#" + std::to_string(bin);
      }
    }
    return key;
  }

  std::string operator()(const FeatureVector& x) const {
    auto key = try_key(x);
    if (!key) fail(ErrorCode::MissingCalibratorFeatures, "row lacks a feature used for grouping");
    return *key;
  }

  std::span<const Term> terms() const { return terms_; }

 private:
  std::vector<Term> terms_;
};

// ---------------------------------------------------------------------------
// Calibrator variants

struct IdentityCalibration {};

struct GlobalMultiplicative {
  double factor = 1.0;
};

/// Right-continuous non-decreasing step function. A score maps to the level
/// of the last breakpoint not exceeding it; scores below the first breakpoint
/// take the first level.
struct StepFunction {
  std::vector<double> breakpoints;
  std::vector<double> levels;

  double operator()(double score) const {
    auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), score);
    if (it == breakpoints.begin()) return levels.front();
    return levels[static_cast<std::size_t>(it - breakpoints.begin()) - 1];
  }
};

struct IsotonicCalibration {
  StepFunction step;
};

struct StratumAdditive {
  GroupSpec groups;
  std::map<std::string, double> offsets;
  /// Used for groups never seen during fitting.
  double fallback_offset = 0.0;
};

struct BoostConfig {
  int max_rounds = 100;
  /// Trees in the inner gradient-boosted model fitted per round.
  int trees_per_round = 100;
  int tree_depth = 3;
  int min_leaf = 50;
  double learning_rate = 0.1;
  int early_stop_patience = 5;
  double validation_fraction = 0.2;
  double squash_epsilon = 0.005;

  void validate() const {
    require(max_rounds >= 1 && trees_per_round >= 1 && tree_depth >= 1 && min_leaf >= 1 && early_stop_patience >= 1,
            ErrorCode::InvalidConfig, "boost config counts must be positive");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::InvalidConfig,
            "learning_rate must be positive");
    require(validation_fraction > 0.0 && validation_fraction < 1.0, ErrorCode::InvalidConfig,
            "validation_fraction must lie in (0,1)");
    require(squash_epsilon >= 0.0 && squash_epsilon < 0.5, ErrorCode::InvalidEpsilon,
            "squash_epsilon must lie in [0, 0.5)");
  }
};

/// One outer round: g = learning_rate * sum of trees, then F <- alpha (F + g).
struct BoostRound {
  std::vector<RegressionTree> trees;
  double alpha = 1.0;

  double increment(std::span<const double> inputs, double learning_rate) const {
    double g = 0.0;
    for (const auto& t : trees) g += learning_rate * t.predict(inputs);
    return g;
  }
};

/// Logit-space booster. Tree inputs are the listed features (categoricals as
/// category ids) followed by the current logit.
struct BoostedEnsemble {
  struct Input {
    std::string name;
    FeatureId id = 0;
    FeatureKind kind = FeatureKind::Numeric;
  };

  std::vector<Input> inputs;
  std::vector<BoostRound> rounds;
  BoostConfig config;
  /// Validation log loss after 0, 1, ... fitted rounds (before truncation).
  std::vector<double> validation_loss;
};

struct Calibrator {
  std::string id = "identity";
  std::variant<IdentityCalibration, GlobalMultiplicative, IsotonicCalibration, StratumAdditive, BoostedEnsemble>
      model;
  /// Fingerprint of the schema it was fitted on; empty when unknown.
  std::string schema_fingerprint;
};

struct CalibratedScore {
  double value = 0.0;
  /// Stratum calibrators only: the row's group was unseen at fit time.
  bool used_fallback = false;
};

namespace detail {

inline std::vector<double> boost_inputs(const BoostedEnsemble& e, const FeatureVector& x) {
  std::vector<double> values;
  values.reserve(e.inputs.size() + 1);
  for (const auto& in : e.inputs) {
    if (in.kind == FeatureKind::Categorical) {
      auto c = x.categorical(in.id);
      if (!c) fail(ErrorCode::MissingCalibratorFeatures, "missing categorical feature '" + in.name + "'");
      values.push_back(static_cast<double>(*c));
    } else {
      auto v = x.numeric(in.id);
      if (!v) fail(ErrorCode::MissingCalibratorFeatures, "missing numeric feature '" + in.name + "'");
      values.push_back(*v);
    }
  }
  values.push_back(0.0);  // current logit slot
  return values;
}

inline double boost_logit(const BoostedEnsemble& e, double score, const FeatureVector& x) {
  auto values = boost_inputs(e, x);
  double f = logit(squash(score, e.config.squash_epsilon));
  for (const auto& r : e.rounds) {
    values.back() = f;
    f = r.alpha * (f + r.increment(values, e.config.learning_rate));
  }
  return f;
}

}  // namespace detail

inline CalibratedScore apply_detailed(const Calibrator& calibrator, double score, const FeatureVector& features) {
  require(std::isfinite(score) && score >= 0.0 && score <= 1.0, ErrorCode::InvalidArgument, "score outside [0,1]");
  return std::visit(
      [&](const auto& m) -> CalibratedScore {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, IdentityCalibration>) {
          return {score, false};
        } else if constexpr (std::is_same_v<T, GlobalMultiplicative>) {
          return {std::clamp(m.factor * score, 0.0, 1.0), false};
        } else if constexpr (std::is_same_v<T, IsotonicCalibration>) {
          return {std::clamp(m.step(score), 0.0, 1.0), false};
        } else if constexpr (std::is_same_v<T, StratumAdditive>) {
          const std::string key = m.groups(features);
          auto it = m.offsets.find(key);
          if (it == m.offsets.end()) return {std::clamp(score + m.fallback_offset, 0.0, 1.0), true};
          return {std::clamp(score + it->second, 0.0, 1.0), false};
        } else {
          return {std::clamp(sigmoid(detail::boost_logit(m, score, features)), 0.0, 1.0), false};
        }
      },
      calibrator.model);
}

inline double apply(const Calibrator& calibrator, double score, const FeatureVector& features) {
  return apply_detailed(calibrator, score, features).value;
}

inline Calibrator identity_calibrator() { return Calibrator{"identity", IdentityCalibration{}, {}}; }

namespace detail {

struct LabeledScores {
  std::vector<double> scores;
  std::vector<double> labels;
  std::vector<double> weights;
};

inline LabeledScores labeled_scores(const Dataset& cal) {
  LabeledScores out;
  out.scores.reserve(cal.size());
  for (const auto& r : cal.rows()) {
    if (!r.label) fail(ErrorCode::MissingLabels, "calibration row without a label");
    if (!r.score) fail(ErrorCode::MissingScores, "calibration row without a score");
    out.scores.push_back(*r.score);
    out.labels.push_back(*r.label);
    out.weights.push_back(r.weight);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fitting

/// c = mean label / mean score on the calibration data.
inline Calibrator fit_global_multiplicative(const Dataset& cal) {
  require(!cal.empty(), ErrorCode::EmptyDataset, "empty calibration data");
  const auto d = detail::labeled_scores(cal);
  const double mean_label = weighted_mean(d.labels, d.weights);
  const double mean_score = weighted_mean(d.scores, d.weights);
  require(mean_score > 0.0, ErrorCode::ZeroMeanScore, "mean calibration score is zero");
  return Calibrator{"global", GlobalMultiplicative{mean_label / mean_score}, cal.schema().fingerprint()};
}

/// Weighted pool-adjacent-violators fit of label on score. Equal scores are
/// pooled before the pass so they always share a level.
inline StepFunction pav(std::span<const double> scores, std::span<const double> labels,
                        std::span<const double> weights) {
  require(scores.size() == labels.size() && scores.size() == weights.size(), ErrorCode::LengthMismatch,
          "PAV inputs differ in length");
  require(!scores.empty(), ErrorCode::EmptyDataset, "PAV on an empty sample");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  struct Block {
    double start;
    double w;
    double wy;
    double mean() const { return wy / w; }
  };
  std::vector<Block> stack;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    Block b{s, 0.0, 0.0};
    for (; k < order.size() && scores[order[k]] == s; ++k) {
      b.w += weights[order[k]];
      b.wy += weights[order[k]] * labels[order[k]];
    }
    stack.push_back(b);
    while (stack.size() > 1 && stack[stack.size() - 2].mean() >= stack.back().mean()) {
      const Block top = stack.back();
      stack.pop_back();
      stack.back().w += top.w;
      stack.back().wy += top.wy;
    }
  }
  StepFunction out;
  for (const auto& b : stack) {
    out.breakpoints.push_back(b.start);
    out.levels.push_back(b.mean());
  }
  return out;
}

inline Calibrator fit_isotonic(const Dataset& cal) {
  require(!cal.empty(), ErrorCode::EmptyDataset, "empty calibration data");
  const auto d = detail::labeled_scores(cal);
  return Calibrator{"isotonic", IsotonicCalibration{pav(d.scores, d.labels, d.weights)}, cal.schema().fingerprint()};
}

/// Per-group offsets eps_g = mean label - mean score within g.
inline Calibrator fit_stratum_additive(const Dataset& cal, const GroupSpec& groups) {
  require(!cal.empty(), ErrorCode::EmptyGroup, "calibration data has no rows, so every group is empty");
  struct Acc {
    CompensatedSum w, wy, wh;
  };
  std::map<std::string, Acc> acc;
  Acc all;
  for (const auto& r : cal.rows()) {
    if (!r.label) fail(ErrorCode::MissingLabels, "calibration row without a label");
    if (!r.score) fail(ErrorCode::MissingScores, "calibration row without a score");
    auto& a = acc[groups(r.features)];
    for (Acc* t : {&a, &all}) {
      t->w.add(r.weight);
      t->wy.add(r.weight * *r.label);
      t->wh.add(r.weight * *r.score);
    }
  }
  StratumAdditive model{groups, {}, (all.wy.value() - all.wh.value()) / all.w.value()};
  for (const auto& [key, a] : acc) {
    require(a.w.value() > 0.0, ErrorCode::EmptyGroup, "group '" + key + "' has zero weight");
    model.offsets[key] = (a.wy.value() - a.wh.value()) / a.w.value();
  }
  return Calibrator{"stratum", std::move(model), cal.schema().fingerprint()};
}

namespace detail {

/// One-dimensional logistic regression without intercept: maximizes
/// sum w [y log s(a z) + (1-y) log(1 - s(a z))] over a by Newton-Raphson.
inline double fit_unshrinkage(std::span<const double> z, std::span<const double> y, std::span<const double> w) {
  double a = 1.0;
  for (int iter = 0; iter < 100; ++iter) {
    double grad = 0.0;
    double curv = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = sigmoid(a * z[i]);
      grad += w[i] * (y[i] - p) * z[i];
      curv += w[i] * p * (1.0 - p) * z[i] * z[i];
    }
    if (!(curv > 0.0)) break;
    const double step = grad / curv;
    require(std::isfinite(step), ErrorCode::SolverDiverged, "unshrinkage Newton step is not finite");
    a += step;
    if (std::abs(step) < 1e-10 * std::max(1.0, std::abs(a))) break;
  }
  require(std::isfinite(a), ErrorCode::SolverDiverged, "unshrinkage factor is not finite");
  return a;
}

inline double weighted_log_loss(std::span<const double> logits, std::span<const double> y,
                                std::span<const double> w) {
  CompensatedSum loss;
  CompensatedSum total;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = std::clamp(sigmoid(logits[i]), kProbabilityClamp, 1.0 - kProbabilityClamp);
    loss.add(-w[i] * (y[i] == 1.0 ? std::log(p) : std::log1p(-p)));
    total.add(w[i]);
  }
  return loss.value() / total.value();
}

struct BoostSample {
  TreeMatrix matrix;  // inputs + logit column (last)
  std::vector<double> logits;
  std::vector<double> labels;
  std::vector<double> weights;
};

inline BoostSample boost_sample(const Dataset& data, const BoostedEnsemble& e) {
  BoostSample s;
  for (const auto& in : e.inputs) s.matrix.columns.push_back(TreeColumn{in.kind, {}});
  s.matrix.columns.push_back(TreeColumn{FeatureKind::Numeric, {}});
  for (auto& c : s.matrix.columns) c.values.reserve(data.size());
  for (const auto& r : data.rows()) {
    if (!r.label) fail(ErrorCode::MissingLabels, "calibration row without a label");
    if (!r.score) fail(ErrorCode::MissingScores, "calibration row without a score");
    const auto values = boost_inputs(e, r.features);
    const double f = logit(squash(*r.score, e.config.squash_epsilon));
    for (std::size_t j = 0; j + 1 < values.size(); ++j) s.matrix.columns[j].values.push_back(values[j]);
    s.matrix.columns.back().values.push_back(f);
    s.logits.push_back(f);
    s.labels.push_back(*r.label);
    s.weights.push_back(r.weight);
  }
  return s;
}

}  // namespace detail

/// Multicalibration by boosting in logit space. Each round fits one
/// depth-limited tree to the logistic-loss Newton step over features plus the
/// current logit, scales it by the learning rate, refits a positive
/// unshrinkage factor on (F + g), and early-stops on validation log loss.
inline Calibrator fit_boosted_multicalibrator(const Dataset& cal, const BoostConfig& config, RngSeed seed) {
  config.validate();
  require(cal.size() >= 10 * static_cast<std::size_t>(config.min_leaf), ErrorCode::InsufficientData,
          "boosted calibration needs at least 10 * min_leaf rows");

  BoostedEnsemble ensemble;
  ensemble.config = config;
  for (std::size_t j = 0; j < cal.schema().features.size(); ++j) {
    const auto& decl = cal.schema().features[j];
    ensemble.inputs.push_back({decl.name, static_cast<FeatureId>(j), decl.kind});
  }

  const std::vector<double> fractions = {1.0 - config.validation_fraction, config.validation_fraction};
  const auto parts = split(cal, fractions, seed);
  require(!parts[0].empty() && !parts[1].empty(), ErrorCode::InsufficientData,
          "training or validation split is empty");
  auto train = detail::boost_sample(parts[0], ensemble);
  auto valid = detail::boost_sample(parts[1], ensemble);

  const TreeConfig tree_config{config.tree_depth, config.min_leaf};
  const std::size_t logit_col = train.matrix.cols() - 1;
  std::vector<BoostRound> rounds;
  double best_loss = detail::weighted_log_loss(valid.logits, valid.labels, valid.weights);
  ensemble.validation_loss.push_back(best_loss);
  std::size_t best_rounds = 0;
  int since_best = 0;

  std::vector<double> targets(train.logits.size());
  std::vector<double> hess(train.logits.size());
  std::vector<double> shifted(train.logits.size());
  std::vector<double> valid_shifted(valid.logits.size());
  for (int t = 0; t < config.max_rounds; ++t) {
    for (std::size_t i = 0; i < train.logits.size(); ++i) train.matrix.columns[logit_col].values[i] = train.logits[i];
    for (std::size_t i = 0; i < valid.logits.size(); ++i) valid.matrix.columns[logit_col].values[i] = valid.logits[i];
    shifted = train.logits;
    valid_shifted = valid.logits;
    BoostRound round;
    // inner boosting from F_t; the logit input column stays at F_t
    for (int k = 0; k < config.trees_per_round; ++k) {
      for (std::size_t i = 0; i < shifted.size(); ++i) {
        const double p = sigmoid(shifted[i]);
        const double h = std::max(p * (1.0 - p), 1e-6);
        targets[i] = (train.labels[i] - p) / h;
        hess[i] = train.weights[i] * h;
      }
      RegressionTree tree = fit_regression_tree(train.matrix, targets, hess, tree_config);
      for (std::size_t i = 0; i < shifted.size(); ++i)
        shifted[i] += config.learning_rate * tree.predict_row(train.matrix, i);
      for (std::size_t i = 0; i < valid_shifted.size(); ++i)
        valid_shifted[i] += config.learning_rate * tree.predict_row(valid.matrix, i);
      round.trees.push_back(std::move(tree));
    }
    const double alpha = detail::fit_unshrinkage(shifted, train.labels, train.weights);
    require(alpha > 0.0, ErrorCode::SolverDiverged, "unshrinkage factor is not positive");
    for (std::size_t i = 0; i < train.logits.size(); ++i) train.logits[i] = alpha * shifted[i];
    for (std::size_t i = 0; i < valid.logits.size(); ++i) valid.logits[i] = alpha * valid_shifted[i];
    for (double f : train.logits) require(std::isfinite(f), ErrorCode::SolverDiverged, "logit became non-finite");
    round.alpha = alpha;
    rounds.push_back(std::move(round));

    const double loss = detail::weighted_log_loss(valid.logits, valid.labels, valid.weights);
    ensemble.validation_loss.push_back(loss);
    if (loss < best_loss - 1e-12) {
      best_loss = loss;
      best_rounds = rounds.size();
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      break;
    }
  }
  rounds.resize(best_rounds);
  ensemble.rounds = std::move(rounds);
  return Calibrator{"boosted", std::move(ensemble), cal.schema().fingerprint()};
}

/// Every feature a calibrator reads when applied.
inline std::vector<std::string> required_features(const Calibrator& calibrator) {
  std::vector<std::string> out;
  if (const auto* s = std::get_if<StratumAdditive>(&calibrator.model))
    for (const auto& t : s->groups.terms()) out.push_back(t.name);
  if (const auto* b = std::get_if<BoostedEnsemble>(&calibrator.model))
    for (const auto& in : b->inputs) out.push_back(in.name);
  return out;
}

}  // namespace prevalshift
