#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "prevalshift/calibration.hpp"
#include "prevalshift/dataset.hpp"
#include "prevalshift/error.hpp"
#include "prevalshift/numerics.hpp"

namespace prevalshift {

struct PrevalenceEstimate {
  double value = 0.0;
  std::string method;
  std::map<std::string, double> diagnostics;
};

struct ThresholdFit {
  double tau = 0.5;
};

struct ErrorRateFit {
  double tpr = 1.0;
  double fpr = 0.0;
  double tau = 0.5;
};

struct ClassMeanFit {
  double mu1 = 1.0;
  double mu0 = 0.0;
};

struct SourcePrevalence {
  double pi_s = 0.5;
};

/// Below this |TPR - FPR| (or |mu1 - mu0|) the adjusted estimators are undefined.
inline constexpr double kDenominatorTolerance = 1e-9;

namespace detail {

struct WeightedScores {
  std::vector<double> scores;
  std::vector<double> weights;
};

inline WeightedScores target_scores(const Dataset& target) {
  WeightedScores out;
  out.scores.reserve(target.size());
  out.weights.reserve(target.size());
  for (const auto& r : target.rows()) {
    if (!r.score) fail(ErrorCode::MissingScores, "target row without a score");
    out.scores.push_back(*r.score);
    out.weights.push_back(r.weight);
  }
  require(!out.scores.empty(), ErrorCode::EmptyDataset, "target has no rows");
  return out;
}

}  // namespace detail

/// Uncalibrated averaging of the scores.
inline PrevalenceEstimate mean_score(const Dataset& target) {
  const auto t = detail::target_scores(target);
  return {weighted_mean(t.scores, t.weights), "mean", {}};
}

/// Threshold whose classify-and-count rate on the calibration data is closest
/// to the calibration prevalence. Candidates: 0, midpoints of consecutive
/// distinct scores, 1; ties go to the smallest candidate.
inline ThresholdFit fit_prevalence_matched_threshold(const Dataset& cal) {
  require(!cal.empty(), ErrorCode::EmptyDataset, "empty calibration data");
  const auto d = detail::labeled_scores(cal);
  const double prevalence = weighted_mean(d.labels, d.weights);

  std::map<double, double> weight_at;  // score -> total weight
  double total = 0.0;
  for (std::size_t i = 0; i < d.scores.size(); ++i) {
    weight_at[d.scores[i]] += d.weights[i];
    total += d.weights[i];
  }
  std::vector<std::pair<double, double>> unique(weight_at.begin(), weight_at.end());
  // above[k] = weight of scores >= unique[k]
  std::vector<double> above(unique.size() + 1, 0.0);
  for (std::size_t k = unique.size(); k-- > 0;) above[k] = above[k + 1] + unique[k].second;

  double best_tau = 0.0;
  double best_gap = std::abs(1.0 - prevalence);  // tau = 0 counts every row
  auto consider = [&](double tau, double cc) {
    const double gap = std::abs(cc - prevalence);
    if (gap < best_gap) {
      best_gap = gap;
      best_tau = tau;
    }
  };
  for (std::size_t k = 0; k + 1 < unique.size(); ++k)
    consider(0.5 * (unique[k].first + unique[k + 1].first), above[k + 1] / total);
  consider(1.0, unique.back().first >= 1.0 ? unique.back().second / total : 0.0);
  return {best_tau};
}

/// Weighted fraction of rows scoring at or above tau.
inline PrevalenceEstimate classify_and_count(const Dataset& target, const ThresholdFit& fit) {
  const auto t = detail::target_scores(target);
  std::vector<double> hits(t.scores.size());
  for (std::size_t i = 0; i < hits.size(); ++i) hits[i] = t.scores[i] >= fit.tau ? 1.0 : 0.0;
  return {weighted_mean(hits, t.weights), "cc", {{"tau", fit.tau}}};
}

inline ErrorRateFit fit_error_rates(const Dataset& cal, const ThresholdFit& threshold) {
  const auto d = detail::labeled_scores(cal);
  CompensatedSum pos, neg, true_pos, false_pos;
  for (std::size_t i = 0; i < d.scores.size(); ++i) {
    const bool hit = d.scores[i] >= threshold.tau;
    if (d.labels[i] == 1.0) {
      pos.add(d.weights[i]);
      if (hit) true_pos.add(d.weights[i]);
    } else {
      neg.add(d.weights[i]);
      if (hit) false_pos.add(d.weights[i]);
    }
  }
  require(pos.value() > 0.0 && neg.value() > 0.0, ErrorCode::SingleClassCalibration,
          "error rates need both classes in the calibration data");
  return {true_pos.value() / pos.value(), false_pos.value() / neg.value(), threshold.tau};
}

/// Adjusted count (cc - FPR) / (TPR - FPR). Unclipped unless `clip`.
inline PrevalenceEstimate rogan_gladen(const PrevalenceEstimate& cc, const ErrorRateFit& rates, bool clip = false) {
  const double denom = rates.tpr - rates.fpr;
  require(std::abs(denom) > kDenominatorTolerance, ErrorCode::DegenerateRates, "TPR and FPR coincide");
  const double raw = (cc.value - rates.fpr) / denom;
  return {clip ? std::clamp(raw, 0.0, 1.0) : raw,
          "rg",
          {{"unclipped", raw}, {"cc", cc.value}, {"tpr", rates.tpr}, {"fpr", rates.fpr}}};
}

inline ClassMeanFit fit_class_means(const Dataset& cal) {
  const auto d = detail::labeled_scores(cal);
  CompensatedSum w1, w0, s1, s0;
  for (std::size_t i = 0; i < d.scores.size(); ++i) {
    if (d.labels[i] == 1.0) {
      w1.add(d.weights[i]);
      s1.add(d.weights[i] * d.scores[i]);
    } else {
      w0.add(d.weights[i]);
      s0.add(d.weights[i] * d.scores[i]);
    }
  }
  require(w1.value() > 0.0 && w0.value() > 0.0, ErrorCode::SingleClassCalibration,
          "class means need both classes in the calibration data");
  return {s1.value() / w1.value(), s0.value() / w0.value()};
}

/// Probabilistic adjusted count (mean score - mu0) / (mu1 - mu0).
inline PrevalenceEstimate pacc(const Dataset& target, const ClassMeanFit& means, bool clip = false) {
  const double denom = means.mu1 - means.mu0;
  require(std::abs(denom) > kDenominatorTolerance, ErrorCode::DegenerateMeans, "class-conditional means coincide");
  const double h = mean_score(target).value;
  const double raw = (h - means.mu0) / denom;
  return {clip ? std::clamp(raw, 0.0, 1.0) : raw,
          "pacc",
          {{"unclipped", raw}, {"mean_score", h}, {"mu1", means.mu1}, {"mu0", means.mu0}}};
}

struct SldOptions {
  double tol = 1e-6;
  int max_iter = 1000;
};

/// EM re-estimation of the class prior under label shift. Scores are clamped
/// to [1e-12, 1 - 1e-12] inside the posterior update.
inline PrevalenceEstimate sld_em(const Dataset& target, const SourcePrevalence& source, const SldOptions& options = {}) {
  require(source.pi_s > 0.0 && source.pi_s < 1.0, ErrorCode::InvalidSourcePrevalence,
          "source prevalence must lie strictly inside (0,1)");
  require(options.tol > 0.0 && options.max_iter >= 1, ErrorCode::InvalidArgument, "invalid EM options");
  const auto t = detail::target_scores(target);

  double prior = source.pi_s;
  double delta = 0.0;
  int iter = 0;
  bool converged = false;
  std::vector<double> posterior(t.scores.size());
  while (iter < options.max_iter) {
    const double up = prior / source.pi_s;
    const double down = (1.0 - prior) / (1.0 - source.pi_s);
    for (std::size_t i = 0; i < posterior.size(); ++i) {
      const double h = std::clamp(t.scores[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
      posterior[i] = up * h / (up * h + down * (1.0 - h));
    }
    const double next = weighted_mean(posterior, t.weights);
    delta = std::abs(next - prior);
    prior = next;
    ++iter;
    if (delta < options.tol) {
      converged = true;
      break;
    }
  }
  return {prior, "sld", {{"iterations", iter}, {"final_delta", delta}, {"converged", converged ? 1.0 : 0.0}}};
}

/// Weighted mean of calibrated scores.
inline PrevalenceEstimate calibrated_mean(const Dataset& target, const Calibrator& calibrator) {
  require(!target.empty(), ErrorCode::EmptyDataset, "target has no rows");
  CompensatedSum num, den;
  double fallback = 0.0;
  for (const auto& r : target.rows()) {
    if (!r.score) fail(ErrorCode::MissingScores, "target row without a score");
    const auto c = apply_detailed(calibrator, *r.score, r.features);
    num.add(r.weight * c.value);
    den.add(r.weight);
    if (c.used_fallback) fallback += 1.0;
  }
  PrevalenceEstimate out{num.value() / den.value(), "cal-mean:" + calibrator.id, {}};
  if (std::holds_alternative<StratumAdditive>(calibrator.model)) out.diagnostics["fallback_rows"] = fallback;
  return out;
}

// ---------------------------------------------------------------------------
// Density-ratio weighting

/// One-hot categoricals (first category dropped; unseen categories encode as
/// the dropped one) and raw numerics. Standardization happens in fit_logistic.
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  explicit FeatureEncoder(const Schema& schema) {
    for (std::size_t j = 0; j < schema.features.size(); ++j) {
      const auto& f = schema.features[j];
      const auto id = static_cast<FeatureId>(j);
      if (f.kind == FeatureKind::Numeric) {
        columns_.push_back({id, false, 0});
      } else {
        for (CategoryId c = 1; c < f.categories.size(); ++c) columns_.push_back({id, true, c});
      }
    }
  }

  std::size_t width() const { return columns_.size(); }

  Eigen::VectorXd encode(const FeatureVector& x) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(columns_.size()));
    for (std::size_t k = 0; k < columns_.size(); ++k) {
      const auto& c = columns_[k];
      if (c.one_hot) {
        auto cat = x.categorical(c.feature);
        if (!cat) fail(ErrorCode::SchemaMismatch, "row lacks a categorical feature");
        out[static_cast<Eigen::Index>(k)] = *cat == c.category ? 1.0 : 0.0;
      } else {
        auto v = x.numeric(c.feature);
        if (!v) fail(ErrorCode::SchemaMismatch, "row lacks a numeric feature");
        out[static_cast<Eigen::Index>(k)] = *v;
      }
    }
    return out;
  }

 private:
  struct Column {
    FeatureId feature;
    bool one_hot;
    CategoryId category;
  };
  std::vector<Column> columns_;
};

struct DomainClassifierFit {
  LogisticModel model;
  FeatureEncoder encoder;
  /// n_source / n_target; turns classifier odds into a density ratio.
  double normalization = 1.0;
  std::string schema_fingerprint;

  double density_ratio(const FeatureVector& x) const {
    const double eta = model.predict_logit(encoder.encode(x));
    return normalization * std::exp(std::clamp(eta, -700.0, 700.0));
  }
};

/// Logistic regression separating target rows (label 1) from source rows (label 0).
inline DomainClassifierFit fit_domain_classifier(const Dataset& source, const Dataset& target, double l2 = 1e-6) {
  require(!source.empty() && !target.empty(), ErrorCode::EmptyDataset, "domain classifier needs both samples");
  require(source.schema().fingerprint() == target.schema().fingerprint(), ErrorCode::SchemaMismatch,
          "source and target schemas differ");
  // The source dictionary defines the encoding; categories appended by the target
  // are unseen by construction and encode as the dropped baseline.
  FeatureEncoder encoder(source.schema());
  const auto n = static_cast<Eigen::Index>(source.size() + target.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(encoder.width()));
  std::vector<int> y;
  y.reserve(static_cast<std::size_t>(n));
  Eigen::Index at = 0;
  for (const auto* d : {&source, &target}) {
    for (const auto& r : d->rows()) {
      x.row(at++) = encoder.encode(r.features).transpose();
      y.push_back(d == &target ? 1 : 0);
    }
  }
  LogisticOptions options;
  options.l2 = l2;
  DomainClassifierFit fit;
  fit.model = fit_logistic(x, y, options);
  fit.encoder = std::move(encoder);
  fit.normalization = static_cast<double>(source.size()) / static_cast<double>(target.size());
  fit.schema_fingerprint = source.schema().fingerprint();
  return fit;
}

/// Self-normalized importance-weighted mean of calibration labels.
/// Diagnostics: effective sample size, mean density ratio over the calibration
/// rows (1 when the model is coherent) and a positivity flag when that mean
/// leaves [0.1, 10].
inline PrevalenceEstimate ipw_prevalence(const Dataset& cal, const DomainClassifierFit& fit) {
  require(!cal.empty(), ErrorCode::EmptyDataset, "empty calibration data");
  CompensatedSum sw, swy, sw2, ratio_sum;
  for (const auto& r : cal.rows()) {
    if (!r.label) fail(ErrorCode::MissingLabels, "calibration row without a label");
    const double ratio = fit.density_ratio(r.features);
    require(std::isfinite(ratio), ErrorCode::InvalidArgument, "density ratio is not finite");
    const double w = r.weight * ratio;
    sw.add(w);
    swy.add(w * *r.label);
    sw2.add(w * w);
    ratio_sum.add(ratio);
  }
  require(sw.value() > 0.0, ErrorCode::AllZeroWeights, "every importance weight is zero");
  const double mean_ratio = ratio_sum.value() / static_cast<double>(cal.size());
  return {swy.value() / sw.value(),
          "ipw",
          {{"effective_sample_size", sw.value() * sw.value() / sw2.value()},
           {"mean_density_ratio", mean_ratio},
           {"positivity_violation", (mean_ratio < 0.1 || mean_ratio > 10.0) ? 1.0 : 0.0}}};
}

// ---------------------------------------------------------------------------
// Method registry

enum class MethodKind { Mean, ClassifyAndCount, RoganGladen, Pacc, Sld, Ipw, CalibratedMean };

struct MethodId {
  MethodKind kind = MethodKind::Mean;
  /// Calibrator id for CalibratedMean.
  std::string calibrator;

  std::string str() const {
    switch (kind) {
      case MethodKind::Mean: return "mean";
      case MethodKind::ClassifyAndCount: return "cc";
      case MethodKind::RoganGladen: return "rg";
      case MethodKind::Pacc: return "pacc";
      case MethodKind::Sld: return "sld";
      case MethodKind::Ipw: return "ipw";
      case MethodKind::CalibratedMean: return "cal-mean:" + calibrator;
    }
    return "?";
  }

  friend bool operator==(const MethodId&, const MethodId&) = default;
};

inline MethodId parse_method(std::string_view text) {
  if (text == "mean") return {MethodKind::Mean, {}};
  if (text == "cc") return {MethodKind::ClassifyAndCount, {}};
  if (text == "rg") return {MethodKind::RoganGladen, {}};
  if (text == "pacc") return {MethodKind::Pacc, {}};
  if (text == "sld") return {MethodKind::Sld, {}};
  if (text == "ipw") return {MethodKind::Ipw, {}};
  constexpr std::string_view prefix = "cal-mean:";
  if (text.starts_with(prefix) && text.size() > prefix.size())
    return {MethodKind::CalibratedMean, std::string(text.substr(prefix.size()))};
  fail(ErrorCode::UnknownMethod, "unknown method id '" + std::string(text) + "'");
}

/// Everything estimated once on labeled calibration data and then held fixed
/// across targets.
struct QuantifierFits {
  std::optional<ThresholdFit> threshold;
  std::optional<ErrorRateFit> rates;
  std::optional<ClassMeanFit> means;
  std::optional<SourcePrevalence> source;
  std::map<std::string, Calibrator> calibrators;
  bool clip = false;
  SldOptions sld;
  double ipw_l2 = 1e-6;
};

/// Fits the threshold, error rates, class means and source prevalence needed
/// by the requested methods. Calibrators are supplied by the caller.
inline QuantifierFits fit_quantifiers(const Dataset& cal, const std::vector<MethodId>& methods) {
  QuantifierFits fits;
  auto needs = [&](MethodKind k) {
    return std::any_of(methods.begin(), methods.end(), [k](const MethodId& m) { return m.kind == k; });
  };
  if (needs(MethodKind::ClassifyAndCount) || needs(MethodKind::RoganGladen))
    fits.threshold = fit_prevalence_matched_threshold(cal);
  if (needs(MethodKind::RoganGladen)) fits.rates = fit_error_rates(cal, *fits.threshold);
  if (needs(MethodKind::Pacc)) fits.means = fit_class_means(cal);
  if (needs(MethodKind::Sld)) {
    const auto d = detail::labeled_scores(cal);
    fits.source = SourcePrevalence{weighted_mean(d.labels, d.weights)};
  }
  return fits;
}

/// `cal` is only consulted by IPW, which refits its density ratio per target.
inline PrevalenceEstimate estimate(const MethodId& method, const Dataset& target, const QuantifierFits& fits,
                                   const Dataset* cal = nullptr) {
  auto missing = [&](const char* what) {
    fail(ErrorCode::InvalidArgument, std::string("method ") + method.str() + " needs " + what);
  };
  PrevalenceEstimate out;
  switch (method.kind) {
    case MethodKind::Mean:
      out = mean_score(target);
      break;
    case MethodKind::ClassifyAndCount:
      if (!fits.threshold) missing("a fitted threshold");
      out = classify_and_count(target, *fits.threshold);
      break;
    case MethodKind::RoganGladen:
      if (!fits.threshold || !fits.rates) missing("fitted error rates");
      out = rogan_gladen(classify_and_count(target, *fits.threshold), *fits.rates, fits.clip);
      break;
    case MethodKind::Pacc:
      if (!fits.means) missing("fitted class means");
      out = pacc(target, *fits.means, fits.clip);
      break;
    case MethodKind::Sld:
      if (!fits.source) missing("a source prevalence");
      out = sld_em(target, *fits.source, fits.sld);
      break;
    case MethodKind::Ipw:
      if (cal == nullptr) missing("the labeled calibration data");
      out = ipw_prevalence(*cal, fit_domain_classifier(*cal, target, fits.ipw_l2));
      break;
    case MethodKind::CalibratedMean: {
      auto it = fits.calibrators.find(method.calibrator);
      if (it == fits.calibrators.end())
        fail(ErrorCode::UnknownMethod, "no calibrator with id '" + method.calibrator + "'");
      out = calibrated_mean(target, it->second);
      break;
    }
  }
  out.method = method.str();
  return out;
}

}  // namespace prevalshift
