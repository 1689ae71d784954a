#pragma once

// Monte Carlo designs: a strictly sparse linear design and an approximately
// sparse one with dwindling coefficients. In both, Y(0) = 0, Y = D Y(1) and
// D = 1{L(x'gamma) > U} with U ~ unif(0, 1).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "hdcate/error.hpp"
#include "hdcate/normal.hpp"
#include "hdcate/nuisance.hpp"
#include "hdcate/rng.hpp"

namespace hdcate {

enum class Design { strict_sparse, approx_sparse };

inline const char* to_string(Design d) {
  return d == Design::strict_sparse ? "strict_sparse" : "approx_sparse";
}

struct DgpSpec {
  Design design = Design::strict_sparse;
  Index n = 1000;
  Index p = 100;
  double r2 = 0.1;  // approx_sparse only; R^2_d = R^2_y
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 2) throw ConfigError("dgp: n must be >= 2");
    if (design == Design::strict_sparse && p < 4) throw ConfigError("dgp: strict_sparse needs p >= 4");
    if (design == Design::approx_sparse) {
      if (p < 2) throw ConfigError("dgp: approx_sparse needs p >= 2");
      if (!(r2 > 0.0 && r2 < 1.0)) throw ConfigError("dgp: r2 must lie in (0, 1)");
    }
  }
};

// tau0(x1) = intercept + slope * x1
struct TrueCate {
  double intercept = 0.0;
  double slope = 0.0;
  double operator()(double x1) const { return intercept + slope * x1; }
};

struct GeneratedSample {
  Sample sample;
  TrueCate true_cate;
  Eigen::VectorXd beta;   // outcome coefficients of Y(1)
  Eigen::VectorXd gamma;  // propensity index coefficients
};

/// theta' Sigma theta with theta_k = k^{-2} and Sigma_kj = 0.5^{|k-j|}, in
/// O(p) using the AR(1) recursion s_k = 0.5 s_{k-1} + theta_k for the
/// partial sums sum_{j<=k} 0.5^{k-j} theta_j.
inline double toeplitz_quadform(Index p) {
  if (p < 1) throw std::invalid_argument("toeplitz_quadform: p must be >= 1");
  double total = 0.0;
  double s = 0.0;
  for (Index k = 1; k <= p; ++k) {
    const double theta = 1.0 / (static_cast<double>(k) * static_cast<double>(k));
    // diagonal term plus twice the lower-triangle row k
    total += theta * theta + 2.0 * theta * 0.5 * s;
    s = 0.5 * s + theta;
  }
  return total;
}

struct DwindlingScales {
  double c_d;
  double c_y;
};

inline DwindlingScales dwindling_scales(Index p, double r2) {
  const double q = toeplitz_quadform(p);
  const double denom = (1.0 - r2) * q;
  return {std::sqrt((std::numbers::pi * std::numbers::pi / 3.0) * r2 / denom),
          std::sqrt(r2 / denom)};
}

namespace detail {

inline GeneratedSample finish_dgp(Eigen::MatrixXd x, const Eigen::VectorXd& beta,
                                  const Eigen::VectorXd& gamma, double y1_intercept,
                                  RngStream& rng, TrueCate truth) {
  const Index n = x.rows();
  GeneratedSample g;
  g.beta = beta;
  g.gamma = gamma;
  g.true_cate = truth;
  g.sample.y.resize(n);
  g.sample.d.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double eps = rng.normal();
    const double u = rng.uniform();
    const double y1 = y1_intercept + x.row(i).dot(beta) + eps;
    const double treated = logistic(x.row(i).dot(gamma)) > u ? 1.0 : 0.0;
    g.sample.d[i] = treated;
    g.sample.y[i] = treated * y1;
  }
  g.sample.x = std::move(x);
  g.sample.x1_cols = {0};
  return g;
}

}  // namespace detail

/// Strictly sparse design: X ~ N(0, I_p), Y(1) = 10 + x1 + .. + x4 + eps,
/// gamma_k = 0.5 for k <= 4. CATE(x1) = 10 + x1.
inline GeneratedSample gen_dgp1(Index n, Index p, std::uint64_t seed) {
  DgpSpec{Design::strict_sparse, n, p, 0.1, seed}.validate();
  constexpr Index kActive = 4;
  RngStream rng(seed, StreamTag::dgp, 0);
  Eigen::MatrixXd x(n, p);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) x(i, j) = rng.normal();
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(p);
  beta.head(kActive).setConstant(1.0);
  gamma.head(kActive).setConstant(0.5);
  return detail::finish_dgp(std::move(x), beta, gamma, 10.0, rng, TrueCate{10.0, 1.0});
}

/// Approximately sparse design: theta_k = k^{-2}, gamma = c_d theta,
/// beta = c_y theta. X1 ~ N(0, 1) independent of (X2..Xp), which are jointly
/// normal with covariance 0.5^{|j-k|} (drawn by the AR(1) recursion).
/// CATE(x1) = c_y x1.
inline GeneratedSample gen_dgp2(Index n, Index p, double r2, std::uint64_t seed) {
  DgpSpec{Design::approx_sparse, n, p, r2, seed}.validate();
  const DwindlingScales scales = dwindling_scales(p, r2);
  RngStream rng(seed, StreamTag::dgp, 0);
  const double innovation_sd = std::sqrt(1.0 - 0.25);
  Eigen::MatrixXd x(n, p);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    if (p > 1) x(i, 1) = rng.normal();
    for (Index j = 2; j < p; ++j) x(i, j) = 0.5 * x(i, j - 1) + innovation_sd * rng.normal();
  }
  Eigen::VectorXd theta(p);
  for (Index k = 0; k < p; ++k) {
    theta[k] = 1.0 / (static_cast<double>(k + 1) * static_cast<double>(k + 1));
  }
  return detail::finish_dgp(std::move(x), scales.c_y * theta, scales.c_d * theta, 0.0, rng,
                            TrueCate{0.0, scales.c_y});
}

inline GeneratedSample generate(const DgpSpec& spec) {
  return spec.design == Design::strict_sparse ? gen_dgp1(spec.n, spec.p, spec.seed)
                                              : gen_dgp2(spec.n, spec.p, spec.r2, spec.seed);
}

}  // namespace hdcate
