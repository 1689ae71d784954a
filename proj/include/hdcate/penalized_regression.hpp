#pragma once

// Lasso and logistic lasso by cyclic coordinate descent, with the
// theory-driven penalty level and an unpenalized post-lasso refit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hdcate/error.hpp"
#include "hdcate/normal.hpp"

namespace hdcate {

using Index = Eigen::Index;

enum class Family { linear, logistic };
enum class PenaltyRole { outcome, propensity };

inline const char* to_string(Family f) { return f == Family::linear ? "linear" : "logistic"; }

/// Dictionary b(X) together with the per-column location and scale used for
/// penalty loadings. Scales are empirical standard deviations (1/n
/// normalisation) computed once from the rows handed in. Columns whose scale
/// is numerically zero are flagged as constant and never enter a fit.
class DesignMatrix {
 public:
  DesignMatrix() = default;

  explicit DesignMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
    if (values_.rows() < 2 || values_.cols() < 1) {
      throw DataError("design matrix needs at least 2 rows and 1 column");
    }
    if (!values_.allFinite()) {
      throw DataError("design matrix contains non-finite values");
    }
    const double n = static_cast<double>(values_.rows());
    means_ = values_.colwise().mean().transpose();
    scales_.resize(values_.cols());
    for (Index j = 0; j < values_.cols(); ++j) {
      const double ss = (values_.col(j).array() - means_[j]).square().sum();
      const double sd = std::sqrt(ss / n);
      scales_[j] = sd > 1e-12 * std::max(1.0, std::abs(means_[j])) ? sd : 0.0;
    }
  }

  // Rows of a larger matrix; statistics are computed on the subset only.
  static DesignMatrix from_rows(const Eigen::MatrixXd& x, std::span<const Index> rows) {
    Eigen::MatrixXd sub(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sub.row(static_cast<Index>(i)) = x.row(rows[i]);
    }
    return DesignMatrix(std::move(sub));
  }

  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }
  const Eigen::MatrixXd& values() const { return values_; }
  const Eigen::VectorXd& column_means() const { return means_; }
  const Eigen::VectorXd& column_scales() const { return scales_; }
  bool is_constant(Index j) const { return scales_[j] == 0.0; }

  // (x - mean) / scale; constant columns become zero.
  Eigen::MatrixXd standardized() const {
    Eigen::MatrixXd z(values_.rows(), values_.cols());
    for (Index j = 0; j < values_.cols(); ++j) {
      if (is_constant(j)) {
        z.col(j).setZero();
      } else {
        z.col(j) = (values_.col(j).array() - means_[j]) / scales_[j];
      }
    }
    return z;
  }

 private:
  Eigen::MatrixXd values_;
  Eigen::VectorXd means_;
  Eigen::VectorXd scales_;
};

struct LassoOptions {
  int max_iter = 10000;       // coordinate-descent sweeps
  double tol = 1e-7;          // max coefficient change per sweep, standardized scale
  double kkt_tol = 1e-6;
  bool record_objective = false;
};

struct LassoFit {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;  // original (unstandardized) scale
  std::vector<Index> support;
  double lambda = 0.0;
  Family family = Family::linear;
  int iterations = 0;
  bool converged = false;
  bool separation = false;        // logistic: linear predictor hit the clamp
  bool rank_deficient = false;    // post-lasso: columns were dropped
  std::vector<Index> dropped;
  std::vector<double> objective_trace;  // per sweep, if requested

  double linear_predictor(const Eigen::Ref<const Eigen::RowVectorXd>& x_row) const {
    return intercept + x_row.dot(coefficients.transpose());
  }

  Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x) const {
    return (x * coefficients).array() + intercept;
  }
};

inline constexpr double kLinearPredictorClamp = 30.0;

/// Penalty level 2c*sqrt(n)*Phi^{-1}(1 - 0.1/(log(n) 2p)) for outcome
/// regressions and c*sqrt(n)*Phi^{-1}(1 - 0.1/(log(n) 4p)) for the
/// propensity score. c = 1.1 is the usual choice.
inline double bch_penalty_level(Index n, Index p, PenaltyRole role, double c = 1.1) {
  if (n < 3) throw std::domain_error("bch_penalty_level: need n >= 3");
  if (p < 1) throw std::domain_error("bch_penalty_level: need p >= 1");
  if (!(c > 0.0)) throw std::domain_error("bch_penalty_level: need c > 0");
  const double nn = static_cast<double>(n);
  const double mult = role == PenaltyRole::outcome ? 2.0 : 4.0;
  const double tail = 0.1 / (std::log(nn) * mult * static_cast<double>(p));
  const double q = 1.0 - tail;
  if (!(q > 0.5 && q < 1.0)) {
    throw std::domain_error("bch_penalty_level: quantile argument outside (0.5, 1)");
  }
  const double scale = role == PenaltyRole::outcome ? 2.0 * c : c;
  return scale * std::sqrt(nn) * normal_quantile(q);
}

namespace detail {

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

inline void check_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) throw DataError(std::string(what) + " contains non-finite values");
}

inline void check_labels(const Eigen::VectorXd& d) {
  bool has0 = false, has1 = false;
  for (Index i = 0; i < d.size(); ++i) {
    if (d[i] == 0.0) {
      has0 = true;
    } else if (d[i] == 1.0) {
      has1 = true;
    } else {
      throw DataError("logistic labels must be 0 or 1");
    }
  }
  if (!has0 || !has1) throw DataError("logistic labels need both classes present");
}

// sum of log(1 + exp(eta)) - d * eta, with eta clamped.
inline double logistic_loss(const Eigen::VectorXd& eta, const Eigen::VectorXd& d) {
  double loss = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    const double e = std::clamp(eta[i], -kLinearPredictorClamp, kLinearPredictorClamp);
    const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    loss += softplus - d[i] * e;
  }
  return loss;
}

inline Eigen::VectorXd logistic_probs(const Eigen::VectorXd& eta) {
  Eigen::VectorXd p(eta.size());
  for (Index i = 0; i < eta.size(); ++i) {
    p[i] = logistic(std::clamp(eta[i], -kLinearPredictorClamp, kLinearPredictorClamp));
  }
  return p;
}

// Map standardized-scale coefficients back to the original columns.
inline void unstandardize(const DesignMatrix& design, const Eigen::VectorXd& beta_std,
                          double intercept_std, LassoFit& fit) {
  const auto& means = design.column_means();
  const auto& scales = design.column_scales();
  fit.coefficients = Eigen::VectorXd::Zero(design.cols());
  fit.support.clear();
  double shift = 0.0;
  for (Index j = 0; j < design.cols(); ++j) {
    if (beta_std[j] != 0.0 && !design.is_constant(j)) {
      fit.coefficients[j] = beta_std[j] / scales[j];
      shift += fit.coefficients[j] * means[j];
      fit.support.push_back(j);
    }
  }
  fit.intercept = intercept_std - shift;
}

inline double max_kkt_violation(const Eigen::MatrixXd& z, const Eigen::VectorXd& residual,
                                const Eigen::VectorXd& beta_std, double lambda,
                                const DesignMatrix& design) {
  const double n = static_cast<double>(z.rows());
  const Eigen::VectorXd grad = z.transpose() * residual / n;
  const double level = lambda / n;
  double worst = 0.0;
  for (Index j = 0; j < z.cols(); ++j) {
    if (design.is_constant(j)) continue;
    double v;
    if (beta_std[j] == 0.0) {
      v = std::max(0.0, std::abs(grad[j]) - level);
    } else {
      v = std::abs(grad[j] - level * (beta_std[j] > 0 ? 1.0 : -1.0));
    }
    worst = std::max(worst, v);
  }
  return worst;
}

}  // namespace detail

/// Smallest penalty (in the same units as the lambda argument of the
/// solvers) at which every coefficient is zero.
inline double null_penalty(const DesignMatrix& design, const Eigen::VectorXd& response) {
  const Eigen::MatrixXd z = design.standardized();
  const Eigen::VectorXd centered = response.array() - response.mean();
  return (z.transpose() * centered).cwiseAbs().maxCoeff();
}

/// Lasso with unpenalized intercept:
///   min_{a,b} (1/2) sum_i (y_i - a - x_i'b)^2 + lambda * sum_j scale_j |b_j|
/// Solved on the standardized design by cyclic coordinate descent with
/// soft-thresholding, alternating full sweeps with sweeps over the active set.
inline LassoFit lasso_linear(const DesignMatrix& design, const Eigen::VectorXd& y,
                             double lambda, const LassoOptions& opts = {}) {
  if (y.size() != design.rows()) throw DataError("response length does not match design rows");
  detail::check_finite(y, "response");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be nonnegative");

  const Eigen::MatrixXd z = design.standardized();
  const Index p = z.cols();
  const Eigen::VectorXd col_sq = z.colwise().squaredNorm().transpose();
  const double ybar = y.mean();
  Eigen::VectorXd r = y.array() - ybar;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);

  LassoFit fit;
  fit.family = Family::linear;
  fit.lambda = lambda;

  auto objective = [&] { return 0.5 * r.squaredNorm() + lambda * beta.lpNorm<1>(); };

  auto sweep = [&](bool active_only) {
    double max_delta = 0.0;
    for (Index j = 0; j < p; ++j) {
      if (col_sq[j] == 0.0) continue;
      if (active_only && beta[j] == 0.0) continue;
      const double rho = z.col(j).dot(r) + col_sq[j] * beta[j];
      const double updated = detail::soft_threshold(rho, lambda) / col_sq[j];
      const double delta = updated - beta[j];
      if (delta != 0.0) {
        r.noalias() -= delta * z.col(j);
        beta[j] = updated;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    ++fit.iterations;
    if (opts.record_objective) fit.objective_trace.push_back(objective());
    return max_delta;
  };

  while (fit.iterations < opts.max_iter) {
    const double full = sweep(false);
    if (full < opts.tol) {
      if (detail::max_kkt_violation(z, r, beta, lambda, design) <= 0.1 * opts.kkt_tol) {
        fit.converged = true;
        break;
      }
      continue;
    }
    while (fit.iterations < opts.max_iter) {
      if (sweep(true) < opts.tol) break;
    }
  }

  detail::unstandardize(design, beta, ybar, fit);
  return fit;
}

/// L1-penalized logistic regression:
///   min -n^{-1} sum_i [d_i log L(eta_i) + (1 - d_i) log(1 - L(eta_i))]
///       + (lambda / n) sum_j scale_j |theta_j|
/// via IRLS outer iterations, each solved by coordinate descent on the
/// weighted least-squares surrogate. Step halving keeps the outer objective
/// non-increasing. If the linear predictor reaches +/-30 the data are treated
/// as separated: predictions are clamped and the fit is flagged.
inline LassoFit lasso_logistic(const DesignMatrix& design, const Eigen::VectorXd& d,
                               double lambda, const LassoOptions& opts = {}) {
  if (d.size() != design.rows()) throw DataError("label length does not match design rows");
  detail::check_labels(d);
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be nonnegative");

  const Eigen::MatrixXd z = design.standardized();
  const Index n = z.rows();
  const Index p = z.cols();
  std::vector<bool> usable(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) usable[static_cast<std::size_t>(j)] = !design.is_constant(j);

  double a = logit(d.mean());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(n, a);

  LassoFit fit;
  fit.family = Family::logistic;
  fit.lambda = lambda;

  auto objective = [&](const Eigen::VectorXd& e, const Eigen::VectorXd& b) {
    return detail::logistic_loss(e, d) + lambda * b.lpNorm<1>();
  };
  double current = objective(eta, beta);

  constexpr double kMinWeight = 1e-5;
  const double inner_tol = 0.1 * opts.tol;
  Eigen::VectorXd w(n), r(n), wz(n);

  while (fit.iterations < opts.max_iter) {
    const Eigen::VectorXd prob = detail::logistic_probs(eta);
    for (Index i = 0; i < n; ++i) {
      w[i] = std::max(prob[i] * (1.0 - prob[i]), kMinWeight);
      r[i] = (d[i] - prob[i]) / w[i];
    }
    const double a_old = a;
    const Eigen::VectorXd beta_old = beta;
    const double w_sum = w.sum();
    Eigen::VectorXd wcol_sq(p);
    for (Index j = 0; j < p; ++j) wcol_sq[j] = (w.array() * z.col(j).array().square()).sum();

    // Inner coordinate descent on the quadratic surrogate; r is the working
    // residual z_work - a - Z beta.
    double inner_delta = std::numeric_limits<double>::infinity();
    while (inner_delta > inner_tol && fit.iterations < opts.max_iter) {
      inner_delta = 0.0;
      const double da = w.dot(r) / w_sum;
      if (da != 0.0) {
        a += da;
        r.array() -= da;
        inner_delta = std::abs(da);
      }
      for (Index j = 0; j < p; ++j) {
        if (!usable[static_cast<std::size_t>(j)] || wcol_sq[j] == 0.0) continue;
        wz = w.cwiseProduct(z.col(j));
        const double rho = wz.dot(r) + wcol_sq[j] * beta[j];
        const double updated = detail::soft_threshold(rho, lambda) / wcol_sq[j];
        const double delta = updated - beta[j];
        if (delta != 0.0) {
          r.noalias() -= delta * z.col(j);
          beta[j] = updated;
          inner_delta = std::max(inner_delta, std::abs(delta));
        }
      }
      ++fit.iterations;
    }

    Eigen::VectorXd eta_new = (z * beta).array() + a;
    double candidate = objective(eta_new, beta);
    for (int halving = 0; halving < 40 && candidate > current * (1.0 + 1e-13) + 1e-13;
         ++halving) {
      a = 0.5 * (a + a_old);
      beta = 0.5 * (beta + beta_old);
      eta_new = (z * beta).array() + a;
      candidate = objective(eta_new, beta);
    }
    eta = eta_new;
    current = candidate;
    if (opts.record_objective) fit.objective_trace.push_back(current);

    if (eta.cwiseAbs().maxCoeff() >= kLinearPredictorClamp) {
      fit.separation = true;
      break;
    }
    const double change = std::max(std::abs(a - a_old), (beta - beta_old).cwiseAbs().maxCoeff());
    if (change < opts.tol) {
      const Eigen::VectorXd resid = d - detail::logistic_probs(eta);
      if (detail::max_kkt_violation(z, resid, beta, lambda, design) <= 0.1 * opts.kkt_tol) {
        fit.converged = true;
        break;
      }
    }
  }

  detail::unstandardize(design, beta, a, fit);
  return fit;
}

/// Dispatch on family.
inline LassoFit lasso_fit(const DesignMatrix& design, const Eigen::VectorXd& response,
                          double lambda, Family family, const LassoOptions& opts = {}) {
  return family == Family::linear ? lasso_linear(design, response, lambda, opts)
                                  : lasso_logistic(design, response, lambda, opts);
}

/// Largest KKT violation of a lasso fit on the standardized scale (see
/// LassoFit). Constant columns are skipped.
inline double kkt_violation(const DesignMatrix& design, const Eigen::VectorXd& response,
                            const LassoFit& fit) {
  const Eigen::MatrixXd z = design.standardized();
  const Eigen::VectorXd eta = fit.linear_predictor(design.values());
  Eigen::VectorXd resid;
  if (fit.family == Family::linear) {
    resid = response - eta;
  } else {
    resid = response - detail::logistic_probs(eta);
  }
  Eigen::VectorXd beta_std = fit.coefficients.cwiseProduct(design.column_scales());
  return detail::max_kkt_violation(z, resid, beta_std, fit.lambda, design);
}

/// Unpenalized refit on a selected support. Rank-deficient supports are
/// reduced with a column-pivoted QR: columns beyond the numerical rank (the
/// smallest pivots) are dropped and reported.
inline LassoFit post_lasso_refit(const DesignMatrix& design, const Eigen::VectorXd& response,
                                 std::span<const Index> support, Family family) {
  if (response.size() != design.rows()) {
    throw DataError("response length does not match design rows");
  }
  if (family == Family::logistic) {
    detail::check_labels(response);
  } else {
    detail::check_finite(response, "response");
  }

  const Index n = design.rows();
  LassoFit fit;
  fit.family = family;
  fit.lambda = 0.0;
  fit.coefficients = Eigen::VectorXd::Zero(design.cols());
  fit.converged = true;

  std::vector<Index> cols;
  for (Index j : support) {
    if (j < 0 || j >= design.cols()) throw std::out_of_range("support index out of range");
    if (design.is_constant(j)) {
      fit.dropped.push_back(j);
    } else {
      cols.push_back(j);
    }
  }

  // Standardized submatrix, then rank detection.
  const Eigen::VectorXd& means = design.column_means();
  const Eigen::VectorXd& scales = design.column_scales();
  Eigen::MatrixXd zs(n, static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const Index j = cols[k];
    zs.col(static_cast<Index>(k)) = (design.values().col(j).array() - means[j]) / scales[j];
  }
  std::vector<Index> kept;
  if (!cols.empty()) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(zs);
    qr.setThreshold(1e-10);
    const Index rank = qr.rank();
    std::vector<Index> order(cols.size());
    for (Index k = 0; k < static_cast<Index>(cols.size()); ++k) {
      order[static_cast<std::size_t>(k)] = qr.colsPermutation().indices()[k];
    }
    for (Index k = 0; k < static_cast<Index>(cols.size()); ++k) {
      const Index orig = order[static_cast<std::size_t>(k)];
      if (k < rank) {
        kept.push_back(orig);
      } else {
        fit.dropped.push_back(cols[static_cast<std::size_t>(orig)]);
      }
    }
    std::sort(kept.begin(), kept.end());
  }
  fit.rank_deficient = !fit.dropped.empty();
  std::sort(fit.dropped.begin(), fit.dropped.end());

  Eigen::MatrixXd zk(n, static_cast<Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    zk.col(static_cast<Index>(k)) = zs.col(kept[k]);
  }
  Eigen::VectorXd beta_std = Eigen::VectorXd::Zero(design.cols());
  double intercept_std;

  if (family == Family::linear) {
    intercept_std = response.mean();
    if (!kept.empty()) {
      const Eigen::VectorXd centered = response.array() - intercept_std;
      const Eigen::VectorXd b = zk.colPivHouseholderQr().solve(centered);
      for (std::size_t k = 0; k < kept.size(); ++k) {
        beta_std[cols[static_cast<std::size_t>(kept[k])]] = b[static_cast<Index>(k)];
      }
    }
    fit.iterations = 1;
  } else {
    // Newton-Raphson with step halving on [1, zk].
    const Index m = zk.cols() + 1;
    Eigen::MatrixXd xa(n, m);
    xa.col(0).setOnes();
    xa.rightCols(zk.cols()) = zk;
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(m);
    theta[0] = logit(response.mean());
    Eigen::VectorXd eta = xa * theta;
    double loss = detail::logistic_loss(eta, response);
    fit.converged = false;
    for (int it = 0; it < 100; ++it) {
      fit.iterations = it + 1;
      const Eigen::VectorXd prob = detail::logistic_probs(eta);
      const Eigen::VectorXd w = (prob.array() * (1.0 - prob.array())).max(1e-10);
      const Eigen::VectorXd grad = xa.transpose() * (response - prob);
      const Eigen::MatrixXd hess = xa.transpose() * w.asDiagonal() * xa;
      Eigen::VectorXd step = hess.ldlt().solve(grad);
      Eigen::VectorXd next = theta + step;
      Eigen::VectorXd eta_next = xa * next;
      double next_loss = detail::logistic_loss(eta_next, response);
      for (int h = 0; h < 40 && next_loss > loss * (1.0 + 1e-13) + 1e-13; ++h) {
        step *= 0.5;
        next = theta + step;
        eta_next = xa * next;
        next_loss = detail::logistic_loss(eta_next, response);
      }
      theta = next;
      eta = eta_next;
      loss = next_loss;
      if (eta.cwiseAbs().maxCoeff() >= kLinearPredictorClamp) {
        fit.separation = true;
        break;
      }
      if (step.cwiseAbs().maxCoeff() < 1e-10) {
        fit.converged = true;
        break;
      }
    }
    intercept_std = theta[0];
    for (std::size_t k = 0; k < kept.size(); ++k) {
      beta_std[cols[static_cast<std::size_t>(kept[k])]] = theta[static_cast<Index>(k) + 1];
    }
  }

  detail::unstandardize(design, beta_std, intercept_std, fit);
  return fit;
}

}  // namespace hdcate
