#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "prevalshift/dataset.hpp"
#include "prevalshift/error.hpp"

namespace prevalshift {

/// Clamp used by log-loss and the EM posterior update.
inline constexpr double kProbabilityClamp = 1e-12;

inline double logit(double p) {
  require(p > 0.0 && p < 1.0, ErrorCode::BoundaryScore,
          "logit is undefined at " + std::to_string(p) + "; squash scores away from 0 and 1 first");
  return std::log(p) - std::log1p(-p);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Area under the ROC curve via the Mann-Whitney U statistic, ties at average rank.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorCode::LengthMismatch, "scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  double positives = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double average_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += average_rank;
        positives += 1.0;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(scores.size()) - positives;
  require(positives > 0.0 && negatives > 0.0, ErrorCode::SingleClass, "AUC needs both classes");
  const double u = positive_rank_sum - positives * (positives + 1.0) / 2.0;
  return u / (positives * negatives);
}

inline double log_loss(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorCode::LengthMismatch, "scores and labels differ in length");
  require(!scores.empty(), ErrorCode::EmptyDataset, "log loss of an empty sample");
  CompensatedSum total;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(scores[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    total.add(labels[i] == 1 ? -std::log(p) : -std::log1p(-p));
  }
  return total.value() / static_cast<double>(scores.size());
}

struct LogisticOptions {
  double l2 = 1e-6;
  int max_iter = 100;
  double tol = 1e-8;
  bool fit_intercept = true;
  /// Center and scale every column before fitting (stored on the model).
  bool standardize = true;
};

/// Binary logistic model. Weights live in the standardized space
/// (x - center) / scale; `predict_logit` accepts raw feature rows.
struct LogisticModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  Eigen::VectorXd center;
  Eigen::VectorXd scale;
  bool converged = false;
  int iterations = 0;
  /// Infinity norm of the objective gradient at the returned parameters.
  double gradient_norm = 0.0;

  double predict_logit(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return intercept + ((x - center).cwiseQuotient(scale)).dot(weights);
  }
  double predict(const Eigen::Ref<const Eigen::VectorXd>& x) const { return sigmoid(predict_logit(x)); }
};

namespace detail {

struct LogisticObjective {
  double value = 0.0;
  Eigen::VectorXd gradient;  // over [weights..., intercept]
  Eigen::MatrixXd hessian;   // negative Hessian (positive semi-definite)
};

// Mean log-likelihood minus (l2/2)*||theta||^2. The intercept is penalized too so
// that single-class labels still give a finite optimum.
inline double logistic_value(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, const Eigen::VectorXd& theta,
                             double l2) {
  const Eigen::VectorXd eta = design * theta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + exp(eta)) computed stably
    const double softplus = eta[i] > 0 ? eta[i] + std::log1p(std::exp(-eta[i])) : std::log1p(std::exp(eta[i]));
    ll += y[i] * eta[i] - softplus;
  }
  return ll / static_cast<double>(eta.size()) - 0.5 * l2 * theta.squaredNorm();
}

inline LogisticObjective logistic_objective(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                            const Eigen::VectorXd& theta, double l2) {
  const auto n = static_cast<double>(design.rows());
  LogisticObjective out;
  out.value = logistic_value(design, y, theta, l2);
  const Eigen::VectorXd eta = design * theta;
  Eigen::VectorXd p(eta.size());
  Eigen::VectorXd curvature(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    p[i] = sigmoid(eta[i]);
    curvature[i] = p[i] * (1.0 - p[i]);
  }
  out.gradient = design.transpose() * (y - p) / n - l2 * theta;
  out.hessian = design.transpose() * curvature.asDiagonal() * design / n;
  out.hessian.diagonal().array() += l2;
  return out;
}

}  // namespace detail

/// Newton-Raphson maximizer of the L2-penalized mean log-likelihood with
/// step halving whenever a full step lowers the objective.
inline LogisticModel fit_logistic(const Eigen::MatrixXd& features, std::span<const int> labels,
                                  const LogisticOptions& options = {}) {
  const auto n = features.rows();
  const auto d = features.cols();
  require(n >= 1, ErrorCode::InsufficientData, "logistic regression needs at least one row");
  require(static_cast<std::size_t>(n) == labels.size(), ErrorCode::LengthMismatch, "feature rows differ from labels");
  require(options.l2 >= 0.0 && options.max_iter >= 1 && options.tol > 0.0, ErrorCode::InvalidArgument,
          "invalid logistic options");
  require(features.allFinite(), ErrorCode::InvalidArgument, "non-finite feature value");

  LogisticModel model;
  model.center = Eigen::VectorXd::Zero(d);
  model.scale = Eigen::VectorXd::Ones(d);
  if (options.standardize) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double mean = features.col(j).mean();
      const double sd = std::sqrt((features.col(j).array() - mean).square().mean());
      model.center[j] = mean;
      model.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
  }

  const Eigen::Index p = d + (options.fit_intercept ? 1 : 0);
  Eigen::MatrixXd design(n, p);
  design.leftCols(d) = (features.rowwise() - model.center.transpose()).array().rowwise() / model.scale.transpose().array();
  if (options.fit_intercept) design.col(d).setOnes();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(labels[static_cast<std::size_t>(i)] == 0 || labels[static_cast<std::size_t>(i)] == 1,
            ErrorCode::InvalidArgument, "labels must be 0/1");
    y[i] = labels[static_cast<std::size_t>(i)];
  }

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  auto state = detail::logistic_objective(design, y, theta, options.l2);
  int iter = 0;
  for (; iter < options.max_iter; ++iter) {
    if (state.gradient.lpNorm<Eigen::Infinity>() < options.tol) break;
    // A tiny ridge keeps the system solvable when l2 == 0 and a column is constant;
    // it only changes the search direction, not the stationary point.
    Eigen::MatrixXd system = state.hessian;
    if (options.l2 < 1e-10) system.diagonal().array() += 1e-10;
    const Eigen::VectorXd step = system.ldlt().solve(state.gradient);
    require(step.allFinite(), ErrorCode::SolverDiverged, "Newton step is not finite");

    double t = 1.0;
    Eigen::VectorXd candidate = theta + step;
    double value = detail::logistic_value(design, y, candidate, options.l2);
    for (int halvings = 0; halvings < 40 && !(value >= state.value); ++halvings) {
      t *= 0.5;
      candidate = theta + t * step;
      value = detail::logistic_value(design, y, candidate, options.l2);
    }
    require(std::isfinite(value) && candidate.allFinite(), ErrorCode::SolverDiverged,
            "logistic objective became non-finite");
    if (!(value >= state.value)) break;  // no ascent possible at machine precision
    theta = candidate;
    state = detail::logistic_objective(design, y, theta, options.l2);
  }

  model.weights = theta.head(d);
  model.intercept = options.fit_intercept ? theta[d] : 0.0;
  model.iterations = iter;
  model.gradient_norm = state.gradient.lpNorm<Eigen::Infinity>();
  model.converged = model.gradient_norm < options.tol;
  return model;
}

}  // namespace prevalshift
