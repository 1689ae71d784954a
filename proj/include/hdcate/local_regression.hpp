#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "hdcate/error.hpp"
#include "hdcate/normal.hpp"

namespace hdcate {

using Index = Eigen::Index;

enum class KernelKind { gaussian };

/// Product kernel with one bandwidth per conditioning coordinate:
/// K_h(u) = prod_j k(u_j / h_j).
struct KernelSpec {
  KernelKind kind = KernelKind::gaussian;
  Eigen::VectorXd bandwidths;

  KernelSpec() = default;
  explicit KernelSpec(Eigen::VectorXd h) : bandwidths(std::move(h)) { validate(); }

  Index dimension() const { return bandwidths.size(); }
  double volume() const { return bandwidths.prod(); }  // h^d

  void validate() const {
    if (bandwidths.size() < 1) throw ConfigError("kernel needs at least one bandwidth");
    for (Index j = 0; j < bandwidths.size(); ++j) {
      if (!(bandwidths[j] > 0.0) || !std::isfinite(bandwidths[j])) {
        throw ConfigError("bandwidths must be positive and finite");
      }
    }
  }
};

// Weights below this are treated as exactly zero.
inline constexpr double kKernelFloor = 1e-300;

inline double gaussian_product_kernel(const Eigen::Ref<const Eigen::VectorXd>& u) {
  double w = 1.0;
  for (Index j = 0; j < u.size(); ++j) w *= normal_pdf(u[j]);
  return w;
}

inline double kernel_weight(const KernelSpec& kernel,
                            const Eigen::Ref<const Eigen::RowVectorXd>& x,
                            const Eigen::Ref<const Eigen::RowVectorXd>& x0) {
  // Sum of squared scaled offsets, so the product of densities is a single exp.
  double q = 0.0;
  for (Index j = 0; j < kernel.dimension(); ++j) {
    const double u = (x[j] - x0[j]) / kernel.bandwidths[j];
    q += u * u;
  }
  const double w = std::exp(-0.5 * q) *
                   std::pow(2.0 * std::numbers::pi, -0.5 * static_cast<double>(kernel.dimension()));
  return w < kKernelFloor ? 0.0 : w;
}

/// Undersmoothed rule-of-thumb bandwidth for one coordinate:
/// 1.06 * sd * N^{-1/(4+d)} * N^{1/(4+d)} * N^{-2/(4+3d)} = 1.06 * sd * N^{-2/(4+3d)}.
inline double rot_bandwidth(double sd, Index n, Index d_cond) {
  if (n < 2) throw DataError("bandwidth rule needs n >= 2");
  if (!(sd > 0.0)) {
    throw DataError("conditioning variable has zero variance; it must be continuous");
  }
  const double nn = static_cast<double>(n);
  const double dd = static_cast<double>(d_cond);
  return 1.06 * sd * std::pow(nn, -2.0 / (4.0 + 3.0 * dd));
}

/// Per-coordinate bandwidths from the sample standard deviations (n - 1
/// denominator) of the columns of x1.
inline Eigen::VectorXd rot_bandwidth(const Eigen::MatrixXd& x1) {
  const Index n = x1.rows();
  if (n < 2) throw DataError("bandwidth rule needs n >= 2");
  Eigen::VectorXd h(x1.cols());
  for (Index j = 0; j < x1.cols(); ++j) {
    const double mean = x1.col(j).mean();
    const double var = (x1.col(j).array() - mean).square().sum() / static_cast<double>(n - 1);
    h[j] = rot_bandwidth(std::sqrt(var), n, x1.cols());
  }
  return h;
}

struct LocalFit {
  double intercept = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd slope;
  double effective_mass = 0.0;
  bool degenerate = false;
};

/// Solve the local linear normal equations given accumulated moments
/// S = sum w z z' and t = sum w z psi with z = (1, X1 - x0). A system whose
/// smallest eigenvalue is below 1e-12 * trace falls back to the local
/// constant estimate t0 / S00 with zero slope.
inline LocalFit solve_local_linear(const Eigen::MatrixXd& normal, const Eigen::VectorXd& rhs) {
  LocalFit out;
  const Index m = normal.rows();
  out.slope = Eigen::VectorXd::Zero(m - 1);
  out.effective_mass = normal(0, 0);
  const double trace = normal.trace();
  bool degenerate = !(trace > 0.0) || !normal.allFinite();
  if (!degenerate) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
    degenerate = eig.eigenvalues().minCoeff() < 1e-12 * trace;
  }
  if (degenerate) {
    out.degenerate = true;
    out.intercept = normal(0, 0) != 0.0 ? rhs[0] / normal(0, 0)
                                        : std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const Eigen::VectorXd coef = normal.ldlt().solve(rhs);
  out.intercept = coef[0];
  out.slope = coef.tail(m - 1);
  return out;
}

/// argmin_{a,b} sum_i xi_i [psi_i - a - (X1_i - x0)'b]^2 K_h(X1_i - x0).
inline LocalFit local_linear_fit(const Eigen::MatrixXd& x1, const Eigen::VectorXd& responses,
                                 const Eigen::VectorXd& multipliers,
                                 const Eigen::Ref<const Eigen::RowVectorXd>& x0,
                                 const KernelSpec& kernel) {
  const Index n = x1.rows();
  const Index d = x1.cols();
  if (responses.size() != n || multipliers.size() != n) {
    throw DataError("local_linear_fit: length mismatch");
  }
  if (d != kernel.dimension() || x0.size() != d) {
    throw DataError("local_linear_fit: dimension mismatch");
  }
  if (!multipliers.allFinite()) throw DataError("local_linear_fit: non-finite multipliers");
  Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(d + 1, d + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd z(d + 1);
  z[0] = 1.0;
  for (Index i = 0; i < n; ++i) {
    const double w = multipliers[i] * kernel_weight(kernel, x1.row(i), x0);
    if (w == 0.0) continue;
    z.tail(d) = (x1.row(i) - x0).transpose();
    normal.noalias() += w * z * z.transpose();
    rhs.noalias() += (w * responses[i]) * z;
  }
  if (normal(0, 0) == 0.0) {
    throw NumericalError("local_linear_fit: no kernel mass at the evaluation point");
  }
  return solve_local_linear(normal, rhs);
}

/// Nadaraya-Watson estimate sum xi K psi / sum xi K.
inline double local_constant_fit(const Eigen::MatrixXd& x1, const Eigen::VectorXd& responses,
                                 const Eigen::VectorXd& multipliers,
                                 const Eigen::Ref<const Eigen::RowVectorXd>& x0,
                                 const KernelSpec& kernel) {
  const Index n = x1.rows();
  if (responses.size() != n || multipliers.size() != n) {
    throw DataError("local_constant_fit: length mismatch");
  }
  double mass = 0.0, acc = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double w = multipliers[i] * kernel_weight(kernel, x1.row(i), x0);
    mass += w;
    acc += w * responses[i];
  }
  if (mass == 0.0) throw NumericalError("local_constant_fit: zero kernel mass");
  return acc / mass;
}

/// f(x0) = (n prod_j h_j)^{-1} sum_i K_h(X1_i - x0). `n` defaults to the row
/// count when passed as 0.
inline double kernel_density(const Eigen::MatrixXd& x1,
                             const Eigen::Ref<const Eigen::RowVectorXd>& x0,
                             const KernelSpec& kernel, Index n = 0) {
  if (n == 0) n = x1.rows();
  if (n < 1) throw DataError("kernel_density: need n >= 1");
  double sum = 0.0;
  for (Index i = 0; i < x1.rows(); ++i) sum += kernel_weight(kernel, x1.row(i), x0);
  return sum / (static_cast<double>(n) * kernel.volume());
}

}  // namespace hdcate
