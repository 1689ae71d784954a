#pragma once

// Full-sample and K-fold cross-fitting CATE estimators.
//
// Both share one second-stage engine: kernel weights between every grid point
// and every evaluation row are computed once, and any set of multipliers is
// turned into local regression moments with a matrix product. Estimation uses
// unit multipliers; the bootstrap reuses the same engine with random ones.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "hdcate/error.hpp"
#include "hdcate/local_regression.hpp"
#include "hdcate/nuisance.hpp"
#include "hdcate/parallel.hpp"
#include "hdcate/rng.hpp"
#include "hdcate/score.hpp"

namespace hdcate {

enum class Method { full_sample, cross_fit };
enum class SecondStage { local_linear, local_constant };

inline const char* to_string(Method m) {
  return m == Method::full_sample ? "full_sample" : "cross_fit";
}
inline const char* to_string(SecondStage s) {
  return s == SecondStage::local_linear ? "local_linear" : "local_constant";
}

/// Evaluation points inside a box of closed intervals.
struct EvalGrid {
  Eigen::MatrixXd points;  // one row per point
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Index size() const { return points.rows(); }
  Index dimension() const { return points.cols(); }

  static EvalGrid uniform(double lo, double hi, Index count) {
    Eigen::VectorXd l(1), u(1);
    l << lo;
    u << hi;
    return cartesian(l, u, {count});
  }

  // Cartesian product of equally spaced points; the first coordinate varies
  // slowest.
  static EvalGrid cartesian(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                            const std::vector<Index>& counts) {
    const Index d = lower.size();
    if (d < 1 || upper.size() != d || static_cast<Index>(counts.size()) != d) {
      throw ConfigError("grid bounds and counts must have matching dimension");
    }
    Index total = 1;
    for (Index j = 0; j < d; ++j) {
      if (!(lower[j] <= upper[j]) || !std::isfinite(lower[j]) || !std::isfinite(upper[j])) {
        throw ConfigError("grid bounds must be finite with lower <= upper");
      }
      if (counts[static_cast<std::size_t>(j)] < 1) throw ConfigError("grid needs >= 1 point");
      total *= counts[static_cast<std::size_t>(j)];
    }
    EvalGrid g;
    g.lower = lower;
    g.upper = upper;
    g.points.resize(total, d);
    for (Index r = 0; r < total; ++r) {
      Index rem = r;
      for (Index j = d - 1; j >= 0; --j) {
        const Index c = counts[static_cast<std::size_t>(j)];
        const Index k = rem % c;
        rem /= c;
        g.points(r, j) = c == 1 ? lower[j]
                                : lower[j] + (upper[j] - lower[j]) * static_cast<double>(k) /
                                                 static_cast<double>(c - 1);
      }
    }
    return g;
  }

  static EvalGrid from_points(Eigen::MatrixXd pts) {
    if (pts.rows() < 1 || pts.cols() < 1) throw ConfigError("grid needs at least one point");
    EvalGrid g;
    g.lower = pts.colwise().minCoeff().transpose();
    g.upper = pts.colwise().maxCoeff().transpose();
    g.points = std::move(pts);
    return g;
  }

  static Index default_count(Index d) { return d == 1 ? 201 : (d == 2 ? 41 : 15); }

  /// Equally spaced points between the 2nd and 98th empirical percentiles
  /// of each conditioning coordinate.
  static EvalGrid default_for(const Eigen::MatrixXd& x1, Index per_coordinate = 0) {
    const Index d = x1.cols();
    if (per_coordinate <= 0) per_coordinate = default_count(d);
    Eigen::VectorXd lo(d), hi(d);
    for (Index j = 0; j < d; ++j) {
      lo[j] = percentile(x1.col(j), 0.02);
      hi[j] = percentile(x1.col(j), 0.98);
    }
    return cartesian(lo, hi, std::vector<Index>(static_cast<std::size_t>(d), per_coordinate));
  }

  // Linear interpolation between order statistics.
  static double percentile(const Eigen::VectorXd& v, double q) {
    std::vector<double> s(v.data(), v.data() + v.size());
    std::sort(s.begin(), s.end());
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
  }
};

/// Kernel weights and regressors for one set of evaluation rows against a
/// grid. moments(first, last, multipliers) returns, for every grid point in
/// [first, last) and every multiplier column, the local regression moments
/// laid out point by point.
class SecondStageOperator {
 public:
  SecondStageOperator(const Eigen::MatrixXd& x1, const Eigen::VectorXd& psi,
                      const EvalGrid& grid, const KernelSpec& kernel, SecondStage kind)
      : x1_(x1), psi_(psi), grid_(grid), kind_(kind) {
    if (x1.rows() != psi.size()) throw DataError("second stage: length mismatch");
    if (x1.cols() != grid.dimension() || kernel.dimension() != x1.cols()) {
      throw DataError("second stage: dimension mismatch between data, grid and kernel");
    }
    const Index n = x1.rows();
    weights_.resize(grid.size(), n);
    for (Index g = 0; g < grid.size(); ++g) {
      for (Index i = 0; i < n; ++i) {
        weights_(g, i) = kernel_weight(kernel, x1.row(i), grid.points.row(g));
      }
    }
    const Index m = x1.cols() + 1;
    per_point_ = kind == SecondStage::local_linear ? m * (m + 1) / 2 + m : 2;
  }

  Index rows() const { return x1_.rows(); }
  Index grid_size() const { return grid_.size(); }
  Index moments_per_point() const { return per_point_; }
  const Eigen::MatrixXd& weights() const { return weights_; }
  const Eigen::VectorXd& scores() const { return psi_; }
  const Eigen::MatrixXd& x1() const { return x1_; }
  SecondStage kind() const { return kind_; }

  // ((last - first) * M) x B matrix of moments.
  Eigen::MatrixXd moments(Index first, Index last, const Eigen::MatrixXd& multipliers) const {
    return block(first, last) * multipliers;
  }

  /// Intercept only, without allocating for d = 1. Follows solve(): the
  /// degenerate fallback is the local constant value, NaN when there is no mass.
  double intercept(const double* mom) const {
    if (kind_ == SecondStage::local_constant) {
      return mom[0] != 0.0 ? mom[1] / mom[0] : std::numeric_limits<double>::quiet_NaN();
    }
    if (x1_.cols() == 1) {
      // moments: s00, s01, s11, t0, t1
      const double a = mom[0], b = mom[1], c = mom[2];
      const double trace = a + c;
      const double half_gap = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
      const double min_eig = 0.5 * trace - half_gap;
      if (!(trace > 0.0) || !(min_eig >= 1e-12 * trace)) {
        return a != 0.0 ? mom[3] / a : std::numeric_limits<double>::quiet_NaN();
      }
      return (c * mom[3] - b * mom[4]) / (a * c - b * b);
    }
    return solve(mom).intercept;
  }

  /// Turn one point's moments into a fit.
  LocalFit solve(const double* mom) const {
    const Index d = x1_.cols();
    if (kind_ == SecondStage::local_constant) {
      LocalFit out;
      out.slope = Eigen::VectorXd::Zero(d);
      out.effective_mass = mom[0];
      if (mom[0] == 0.0) {
        out.degenerate = true;
      } else {
        out.intercept = mom[1] / mom[0];
      }
      return out;
    }
    const Index m = d + 1;
    Eigen::MatrixXd normal(m, m);
    Index e = 0;
    for (Index a = 0; a < m; ++a) {
      for (Index b = a; b < m; ++b) {
        normal(a, b) = mom[e];
        normal(b, a) = mom[e];
        ++e;
      }
    }
    Eigen::VectorXd rhs(m);
    for (Index a = 0; a < m; ++a) rhs[a] = mom[e++];
    return solve_local_linear(normal, rhs);
  }

 private:
  Eigen::MatrixXd block(Index first, Index last) const {
    const Index n = x1_.rows();
    const Index d = x1_.cols();
    const Index m = d + 1;
    Eigen::MatrixXd a((last - first) * per_point_, n);
    Eigen::VectorXd z(m);
    z[0] = 1.0;
    for (Index g = first; g < last; ++g) {
      const Index base = (g - first) * per_point_;
      for (Index i = 0; i < n; ++i) {
        const double w = weights_(g, i);
        if (kind_ == SecondStage::local_constant) {
          a(base, i) = w;
          a(base + 1, i) = w * psi_[i];
          continue;
        }
        z.tail(d) = (x1_.row(i) - grid_.points.row(g)).transpose();
        Index e = 0;
        for (Index r = 0; r < m; ++r) {
          for (Index c = r; c < m; ++c) a(base + e++, i) = w * z[r] * z[c];
        }
        for (Index r = 0; r < m; ++r) a(base + e++, i) = w * z[r] * psi_[i];
      }
    }
    return a;
  }

  Eigen::MatrixXd x1_;
  Eigen::VectorXd psi_;
  EvalGrid grid_;
  SecondStage kind_;
  Eigen::MatrixXd weights_;
  Index per_point_ = 0;
};

struct SecondStageResult {
  Eigen::VectorXd tau;
  Eigen::MatrixXd slope;  // grid x d
  std::vector<std::uint8_t> degenerate;
};

/// Unweighted (unit multiplier) second stage at every grid point.
inline SecondStageResult fit_second_stage(const SecondStageOperator& op) {
  const Index g_count = op.grid_size();
  const Index d = op.x1().cols();
  const Eigen::MatrixXd mom = op.moments(0, g_count, Eigen::VectorXd::Ones(op.rows()));
  SecondStageResult out;
  out.tau.resize(g_count);
  out.slope.resize(g_count, d);
  out.degenerate.assign(static_cast<std::size_t>(g_count), 0);
  const Index m = op.moments_per_point();
  for (Index g = 0; g < g_count; ++g) {
    const LocalFit fit = op.solve(mom.data() + g * m);
    out.tau[g] = fit.intercept;
    out.slope.row(g) = fit.slope.transpose();
    out.degenerate[static_cast<std::size_t>(g)] = fit.degenerate ? 1 : 0;
  }
  return out;
}

inline SecondStageResult fit_second_stage(const Eigen::MatrixXd& x1, const Eigen::VectorXd& psi,
                                          const EvalGrid& grid, const KernelSpec& kernel,
                                          SecondStage kind = SecondStage::local_linear) {
  return fit_second_stage(SecondStageOperator(x1, psi, grid, kernel, kind));
}

struct VarianceResult {
  Eigen::VectorXd sigma2;   // NaN where the density vanishes
  Eigen::VectorXd density;  // kernel density of the rows at each grid point
};

/// sigma^2(x) = (n h^d f(x)^2)^{-1} sum_i (psi_i - center(x))^2 K_h(X1_i - x)^2
/// with f the kernel density of the same rows. n is the number of rows.
inline VarianceResult second_stage_variance(const Eigen::MatrixXd& weights,
                                            const Eigen::VectorXd& psi,
                                            const Eigen::VectorXd& center,
                                            const KernelSpec& kernel) {
  const Index g_count = weights.rows();
  const double n = static_cast<double>(weights.cols());
  const double hd = kernel.volume();
  VarianceResult out;
  out.sigma2.resize(g_count);
  out.density.resize(g_count);
  for (Index g = 0; g < g_count; ++g) {
    const double mass = weights.row(g).sum();
    const double f = mass / (n * hd);
    out.density[g] = f;
    if (!(f > 0.0)) {
      out.sigma2[g] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    double acc = 0.0;
    for (Index i = 0; i < weights.cols(); ++i) {
      const double w = weights(g, i);
      if (w == 0.0) continue;
      const double r = psi[i] - center[g];
      acc += r * r * w * w;
    }
    out.sigma2[g] = acc / (n * hd * f * f);
  }
  return out;
}

/// Full-sample standard deviation sigma_N at every grid point from scores
/// on all rows. Throws if the density vanishes at a grid point.
inline Eigen::VectorXd variance_full(const Eigen::MatrixXd& x1, const Eigen::VectorXd& scores,
                                     const Eigen::VectorXd& tau, const EvalGrid& grid,
                                     const KernelSpec& kernel) {
  const SecondStageOperator op(x1, scores, grid, kernel, SecondStage::local_constant);
  const VarianceResult v = second_stage_variance(op.weights(), scores, tau, kernel);
  for (Index g = 0; g < grid.size(); ++g) {
    if (!(v.density[g] > 0.0)) {
      throw NumericalError("kernel density vanishes at grid point " + std::to_string(g));
    }
  }
  return v.sigma2.cwiseSqrt();
}

/// Cross-fit sigma_N: mean over folds of the fold variance, each centred at
/// that fold's estimate and using that fold's density. fold_x1[k] and
/// fold_scores[k] hold the rows of I_k.
inline Eigen::VectorXd variance_cross_fit(const std::vector<Eigen::MatrixXd>& fold_x1,
                                          const std::vector<Eigen::VectorXd>& fold_scores,
                                          const Eigen::MatrixXd& fold_tau, const EvalGrid& grid,
                                          const KernelSpec& kernel) {
  const std::size_t k_count = fold_x1.size();
  if (k_count == 0 || fold_scores.size() != k_count ||
      fold_tau.cols() != static_cast<Index>(k_count)) {
    throw DataError("variance_cross_fit: fold count mismatch");
  }
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(grid.size());
  for (std::size_t k = 0; k < k_count; ++k) {
    const SecondStageOperator op(fold_x1[k], fold_scores[k], grid, kernel,
                                 SecondStage::local_constant);
    const VarianceResult v =
        second_stage_variance(op.weights(), fold_scores[k], fold_tau.col(static_cast<Index>(k)),
                              kernel);
    for (Index g = 0; g < grid.size(); ++g) {
      if (!(v.density[g] > 0.0)) {
        throw NumericalError("kernel density vanishes at grid point " + std::to_string(g) +
                             " in fold " + std::to_string(k + 1));
      }
    }
    acc += v.sigma2;
  }
  return (acc / static_cast<double>(k_count)).cwiseSqrt();
}

/// One fold of the second stage: the nuisance fit trained off-fold and the
/// scores of the fold's own rows.
struct FoldData {
  std::shared_ptr<const NuisanceFit> fit;
  ScoreVector scores;
};

struct CateCurve {
  EvalGrid grid;
  Eigen::VectorXd tau;
  Eigen::MatrixXd slope;
  Eigen::VectorXd sigma;     // sigma_N, standard-deviation scale
  Eigen::MatrixXd fold_tau;  // grid x K (single column for full sample)
  Eigen::VectorXd h;
  Index n = 0;
  Method method = Method::full_sample;
  int K = 1;
  SecondStage second_stage = SecondStage::local_linear;
  std::vector<FoldData> folds;
  std::vector<int> fold_assignment;        // cross-fit only
  std::vector<std::uint8_t> degenerate;    // low density or degenerate local design

  KernelSpec kernel() const { return KernelSpec(h); }

  // sqrt(N h^d)
  double root_nhd() const { return std::sqrt(static_cast<double>(n) * h.prod()); }

  double standard_error(Index g) const { return sigma[g] / root_nhd(); }
};

struct EstimatorOptions {
  NuisanceOptions nuisance;
  SecondStage second_stage = SecondStage::local_linear;
  unsigned threads = 1;  // fold fits
};

// Grid points whose density falls below this are flagged.
inline constexpr double kMinDensity = 1e-6;

namespace detail {

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<Index>& rows) {
  Eigen::MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = m.row(rows[k]);
  return out;
}

// Second stage and variance for every fold, combined by averaging.
inline void finish_curve(const Sample& sample, CateCurve& curve) {
  const EvalGrid& grid = curve.grid;
  const KernelSpec kernel(curve.h);
  const Eigen::MatrixXd x1 = sample.x1();
  const Index g_count = grid.size();
  const auto k_count = static_cast<Index>(curve.folds.size());

  curve.fold_tau.resize(g_count, k_count);
  curve.slope = Eigen::MatrixXd::Zero(g_count, grid.dimension());
  curve.degenerate.assign(static_cast<std::size_t>(g_count), 0);
  Eigen::VectorXd sigma2 = Eigen::VectorXd::Zero(g_count);

  for (Index k = 0; k < k_count; ++k) {
    const FoldData& fold = curve.folds[static_cast<std::size_t>(k)];
    const SecondStageOperator op(gather_rows(x1, fold.scores.eval_indices), fold.scores.values,
                                 grid, kernel, curve.second_stage);
    const SecondStageResult ss = fit_second_stage(op);
    curve.fold_tau.col(k) = ss.tau;
    curve.slope += ss.slope;
    const VarianceResult v = second_stage_variance(op.weights(), fold.scores.values, ss.tau, kernel);
    sigma2 += v.sigma2;
    for (Index g = 0; g < g_count; ++g) {
      if (ss.degenerate[static_cast<std::size_t>(g)] || !(v.density[g] >= kMinDensity)) {
        curve.degenerate[static_cast<std::size_t>(g)] = 1;
      }
    }
  }
  curve.tau = curve.fold_tau.rowwise().sum() / static_cast<double>(k_count);
  curve.slope /= static_cast<double>(k_count);
  curve.sigma = (sigma2 / static_cast<double>(k_count)).cwiseSqrt();
}

}  // namespace detail

/// Nuisances fit on all rows, scores on all rows, local regression of the
/// scores on X1 at every grid point.
inline CateCurve cate_full_sample(const Sample& sample, const EvalGrid& grid,
                                  const Eigen::VectorXd& h, const EstimatorOptions& opts = {}) {
  sample.validate();
  const KernelSpec kernel(h);
  if (kernel.dimension() != sample.d_cond() || grid.dimension() != sample.d_cond()) {
    throw ConfigError("bandwidth and grid dimension must match the conditioning coordinates");
  }
  std::vector<Index> all(static_cast<std::size_t>(sample.n()));
  std::iota(all.begin(), all.end(), Index{0});
  auto fit = std::make_shared<const NuisanceFit>(fit_nuisance(sample, all, opts.nuisance));

  CateCurve curve;
  curve.grid = grid;
  curve.h = h;
  curve.n = sample.n();
  curve.method = Method::full_sample;
  curve.K = 1;
  curve.second_stage = opts.second_stage;
  curve.folds.push_back(FoldData{fit, score_vector(sample, all, fit)});
  detail::finish_curve(sample, curve);
  return curve;
}

/// Random partition of {0..n-1} into K folds whose sizes differ by at most
/// one. Returns the fold label of every row.
inline std::vector<int> partition_folds(Index n, int K, std::uint64_t seed) {
  if (K < 2) throw ConfigError("cross-fitting needs K >= 2");
  if (n < 2 * static_cast<Index>(K)) throw DataError("cross-fitting needs n >= 2K");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  RngStream rng(seed, StreamTag::folds, 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (std::size_t pos = 0; pos < perm.size(); ++pos) {
    labels[static_cast<std::size_t>(perm[pos])] = static_cast<int>(pos % static_cast<std::size_t>(K));
  }
  return labels;
}

/// K-fold cross-fitting: nuisances trained on the complement of each fold,
/// scores and local regression within the fold, estimates averaged over
/// folds.
inline CateCurve cate_cross_fit(const Sample& sample, int K, const EvalGrid& grid,
                                const Eigen::VectorXd& h, std::uint64_t seed,
                                const EstimatorOptions& opts = {}) {
  sample.validate();
  const KernelSpec kernel(h);
  if (kernel.dimension() != sample.d_cond() || grid.dimension() != sample.d_cond()) {
    throw ConfigError("bandwidth and grid dimension must match the conditioning coordinates");
  }
  CateCurve curve;
  curve.grid = grid;
  curve.h = h;
  curve.n = sample.n();
  curve.method = Method::cross_fit;
  curve.K = K;
  curve.second_stage = opts.second_stage;
  curve.fold_assignment = partition_folds(sample.n(), K, seed);

  std::vector<std::vector<Index>> eval(static_cast<std::size_t>(K)), train(static_cast<std::size_t>(K));
  for (Index i = 0; i < sample.n(); ++i) {
    const int f = curve.fold_assignment[static_cast<std::size_t>(i)];
    for (int k = 0; k < K; ++k) {
      (k == f ? eval : train)[static_cast<std::size_t>(k)].push_back(i);
    }
  }
  curve.folds.resize(static_cast<std::size_t>(K));
  parallel_for(static_cast<std::size_t>(K), opts.threads, [&](std::size_t k) {
    auto fit = std::make_shared<const NuisanceFit>(
        fit_nuisance(sample, train[k], opts.nuisance, static_cast<int>(k)));
    curve.folds[k] = FoldData{fit, score_vector(sample, eval[k], fit)};
  });
  detail::finish_curve(sample, curve);
  return curve;
}

/// Re-run the second stage of an existing curve on another grid, keeping
/// its first-stage fits, scores and bandwidth.
inline CateCurve reevaluate(const CateCurve& curve, const Sample& sample, const EvalGrid& grid) {
  CateCurve out = curve;
  out.grid = grid;
  detail::finish_curve(sample, out);
  return out;
}

}  // namespace hdcate
