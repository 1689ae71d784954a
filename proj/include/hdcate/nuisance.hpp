#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hdcate/error.hpp"
#include "hdcate/normal.hpp"
#include "hdcate/penalized_regression.hpp"

namespace hdcate {

/// Observed data W = (D, Y, X). x is the final dictionary b(X); x1_cols
/// picks the conditioning coordinates X1 out of it.
struct Sample {
  Eigen::VectorXd y;
  Eigen::VectorXd d;
  Eigen::MatrixXd x;
  std::vector<Index> x1_cols;

  Index n() const { return y.size(); }
  Index p() const { return x.cols(); }
  Index d_cond() const { return static_cast<Index>(x1_cols.size()); }

  Eigen::MatrixXd x1() const {
    Eigen::MatrixXd out(n(), d_cond());
    for (Index k = 0; k < d_cond(); ++k) out.col(k) = x.col(x1_cols[static_cast<std::size_t>(k)]);
    return out;
  }

  void validate() const {
    if (n() < 2) throw DataError("sample needs at least 2 rows");
    if (d.size() != n() || x.rows() != n()) {
      throw DataError("y, d and x must have the same number of rows");
    }
    if (!y.allFinite() || !x.allFinite()) throw DataError("sample contains non-finite values");
    bool treated = false, control = false;
    for (Index i = 0; i < n(); ++i) {
      if (d[i] == 1.0) {
        treated = true;
      } else if (d[i] == 0.0) {
        control = true;
      } else {
        throw DataError("treatment must be 0 or 1 (row " + std::to_string(i) + ")");
      }
    }
    if (!treated || !control) throw DataError("sample needs both treated and control units");
    if (x1_cols.empty() || x1_cols.size() > 3) {
      throw DataError("between 1 and 3 conditioning coordinates are supported");
    }
    std::vector<Index> sorted = x1_cols;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw DataError("conditioning columns must be distinct");
    }
    for (Index c : x1_cols) {
      if (c < 0 || c >= p()) throw DataError("conditioning column index out of range");
    }
  }
};

struct NuisanceOptions {
  double penalty_c = 1.1;
  double trim_eps = 0.01;
  bool post_lasso = true;
  LassoOptions lasso;
};

struct NuisanceFit {
  LassoFit fit_mu0;  // outcome regression on controls
  LassoFit fit_mu1;  // outcome regression on treated units
  LassoFit fit_pi;   // logistic propensity score
  double trim_eps = 0.01;
  std::vector<Index> train_indices;
};

inline constexpr Index kMinArmSize = 5;

namespace detail {

inline LassoFit fit_one(const DesignMatrix& design, const Eigen::VectorXd& response,
                        PenaltyRole role, Family family, const NuisanceOptions& opts) {
  const double lambda = bch_penalty_level(design.rows(), design.cols(), role, opts.penalty_c);
  LassoFit lasso = lasso_fit(design, response, lambda, family, opts.lasso);
  if (!opts.post_lasso) return lasso;
  LassoFit refit = post_lasso_refit(design, response, lasso.support, family);
  refit.lambda = lambda;
  refit.separation = refit.separation || lasso.separation;
  return refit;
}

}  // namespace detail

/// Fit mu(0,.), mu(1,.) and pi(.) on the rows in `indices`. Outcome fits use
/// their own arm's rows (and arm size in the penalty level); the propensity
/// fit uses every row. `fold` only labels error messages.
inline NuisanceFit fit_nuisance(const Sample& sample, std::span<const Index> indices,
                                const NuisanceOptions& opts = {}, int fold = -1) {
  if (!(opts.trim_eps > 0.0 && opts.trim_eps < 0.5)) {
    throw ConfigError("trim_eps must lie in (0, 0.5)");
  }
  if (indices.empty()) throw DataError("fit_nuisance: empty index set");
  std::vector<Index> rows0, rows1;
  for (Index i : indices) {
    if (i < 0 || i >= sample.n()) throw std::out_of_range("fit_nuisance: row index out of range");
    (sample.d[i] == 1.0 ? rows1 : rows0).push_back(i);
  }
  const auto where = [fold] {
    return fold >= 0 ? " in the training set of fold " + std::to_string(fold + 1) : std::string();
  };
  if (static_cast<Index>(rows0.size()) < kMinArmSize) {
    throw ArmError("control arm has " + std::to_string(rows0.size()) + " units" + where() +
                       " (need at least " + std::to_string(kMinArmSize) + ")",
                   fold);
  }
  if (static_cast<Index>(rows1.size()) < kMinArmSize) {
    throw ArmError("treated arm has " + std::to_string(rows1.size()) + " units" + where() +
                       " (need at least " + std::to_string(kMinArmSize) + ")",
                   fold);
  }

  auto gather = [](const Eigen::VectorXd& v, const std::vector<Index>& rows) {
    Eigen::VectorXd out(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Index>(k)] = v[rows[k]];
    return out;
  };
  const std::vector<Index> all(indices.begin(), indices.end());

  NuisanceFit out;
  out.trim_eps = opts.trim_eps;
  out.train_indices = all;
  out.fit_mu0 = detail::fit_one(DesignMatrix::from_rows(sample.x, rows0), gather(sample.y, rows0),
                                PenaltyRole::outcome, Family::linear, opts);
  out.fit_mu1 = detail::fit_one(DesignMatrix::from_rows(sample.x, rows1), gather(sample.y, rows1),
                                PenaltyRole::outcome, Family::linear, opts);
  out.fit_pi = detail::fit_one(DesignMatrix::from_rows(sample.x, all), gather(sample.d, all),
                               PenaltyRole::propensity, Family::logistic, opts);
  return out;
}

inline double predict_mu(const NuisanceFit& fit, int arm,
                         const Eigen::Ref<const Eigen::RowVectorXd>& x_row) {
  return (arm == 1 ? fit.fit_mu1 : fit.fit_mu0).linear_predictor(x_row);
}

inline double clamp_propensity(double p, double trim_eps) {
  return std::clamp(p, trim_eps, 1.0 - trim_eps);
}

inline double predict_pi(const NuisanceFit& fit, const Eigen::Ref<const Eigen::RowVectorXd>& x_row) {
  return clamp_propensity(logistic(fit.fit_pi.linear_predictor(x_row)), fit.trim_eps);
}

}  // namespace hdcate
