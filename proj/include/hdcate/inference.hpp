#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "hdcate/error.hpp"
#include "hdcate/estimator.hpp"
#include "hdcate/normal.hpp"
#include "hdcate/parallel.hpp"
#include "hdcate/rng.hpp"

namespace hdcate {

enum class WeightLaw { normal_mean1_var1 };
enum class Side { left, right, two };
enum class BandScope { pointwise, uniform };

inline const char* to_string(Side s) {
  switch (s) {
    case Side::left: return "left";
    case Side::right: return "right";
    case Side::two: return "two";
  }
  return "two";
}

/// i.i.d. N(1, 1) multipliers.
inline Eigen::VectorXd draw_multipliers(Index n, RngStream& rng) {
  if (n < 1) throw std::invalid_argument("draw_multipliers: n must be >= 1");
  Eigen::VectorXd xi(n);
  for (Index i = 0; i < n; ++i) xi[i] = rng.normal(1.0, 1.0);
  return xi;
}

struct BootstrapDraws {
  Index B = 0;
  Eigen::VectorXd sup_one_sided;
  Eigen::VectorXd sup_two_sided;
  std::uint64_t seed = 0;
  WeightLaw weight_law = WeightLaw::normal_mean1_var1;
};

// Multipliers for replication b over all N rows (indexed like the sample).
using MultiplierSource = std::function<Eigen::VectorXd(Index b, Index n)>;

struct BootstrapOptions {
  unsigned threads = 1;
  Index chunk = 50;  // replications per matrix product
};

/// Multiplier bootstrap of the second stage. First-stage fits, scores, fold
/// assignment, bandwidth and sigma are those of `curve`; only the
/// multipliers change. For each replication
///   M1 = max_g sqrt(N h^d) (tau_b - tau) / sigma,  M2 = max_g |...|,
/// over grid points that are not flagged degenerate. A degenerate weighted
/// fit falls back to the local constant value; if even that has zero mass the
/// point contributes no deviation for that draw.
inline BootstrapDraws bootstrap_curves(const Sample& sample, const CateCurve& curve, Index B,
                                       const MultiplierSource& source,
                                       const BootstrapOptions& opts = {}) {
  if (B < 1) throw ConfigError("bootstrap needs B >= 1");
  const Index g_count = curve.grid.size();
  const Index n = sample.n();
  const KernelSpec kernel(curve.h);
  const Eigen::MatrixXd x1 = sample.x1();
  const double scale = curve.root_nhd();

  std::vector<SecondStageOperator> ops;
  ops.reserve(curve.folds.size());
  for (const FoldData& fold : curve.folds) {
    ops.emplace_back(detail::gather_rows(x1, fold.scores.eval_indices), fold.scores.values,
                     curve.grid, kernel, curve.second_stage);
  }
  const auto k_count = static_cast<double>(curve.folds.size());

  BootstrapDraws out;
  out.B = B;
  out.sup_one_sided.resize(B);
  out.sup_two_sided.resize(B);

  const Index chunk = std::max<Index>(1, opts.chunk);
  const auto chunks = static_cast<std::size_t>((B + chunk - 1) / chunk);
  constexpr Index kGridBlock = 32;

  parallel_for(chunks, opts.threads, [&](std::size_t c) {
    const Index b0 = static_cast<Index>(c) * chunk;
    const Index bc = std::min(chunk, B - b0);
    Eigen::MatrixXd xi(n, bc);
    for (Index j = 0; j < bc; ++j) {
      Eigen::VectorXd col = source(b0 + j, n);
      if (col.size() != n) throw DataError("multiplier source returned the wrong length");
      xi.col(j) = col;
    }
    Eigen::MatrixXd tau_b = Eigen::MatrixXd::Zero(g_count, bc);
    for (std::size_t k = 0; k < ops.size(); ++k) {
      const auto& rows = curve.folds[k].scores.eval_indices;
      const Eigen::MatrixXd xi_k = detail::gather_rows(xi, rows);
      const Index m = ops[k].moments_per_point();
      for (Index g0 = 0; g0 < g_count; g0 += kGridBlock) {
        const Index g1 = std::min(g_count, g0 + kGridBlock);
        const Eigen::MatrixXd mom = ops[k].moments(g0, g1, xi_k);
        for (Index j = 0; j < bc; ++j) {
          for (Index g = g0; g < g1; ++g) {
            const double a = ops[k].intercept(mom.col(j).data() + (g - g0) * m);
            const double v = std::isfinite(a) ? a : curve.fold_tau(g, static_cast<Index>(k));
            tau_b(g, j) += v;
          }
        }
      }
    }
    tau_b /= k_count;
    for (Index j = 0; j < bc; ++j) {
      double m1 = -std::numeric_limits<double>::infinity();
      double m2 = 0.0;
      for (Index g = 0; g < g_count; ++g) {
        if (curve.degenerate[static_cast<std::size_t>(g)] || !(curve.sigma[g] > 0.0)) continue;
        const double t = scale * (tau_b(g, j) - curve.tau[g]) / curve.sigma[g];
        m1 = std::max(m1, t);
        m2 = std::max(m2, std::abs(t));
      }
      if (!std::isfinite(m1)) m1 = 0.0;
      out.sup_one_sided[b0 + j] = m1;
      out.sup_two_sided[b0 + j] = m2;
    }
  });
  return out;
}

/// Bootstrap with N(1,1) multipliers; replication b draws from the stream
/// (seed, bootstrap, b), so results do not depend on thread count.
inline BootstrapDraws bootstrap_curves(const Sample& sample, const CateCurve& curve, Index B,
                                       std::uint64_t seed, const BootstrapOptions& opts = {}) {
  BootstrapDraws out = bootstrap_curves(
      sample, curve, B,
      [seed](Index b, Index n) {
        RngStream rng(seed, StreamTag::bootstrap, static_cast<std::uint64_t>(b));
        return draw_multipliers(n, rng);
      },
      opts);
  out.seed = seed;
  return out;
}

/// Order statistic of rank ceil(B (1 - alpha)).
inline double critical_value(const Eigen::VectorXd& draws, double alpha) {
  if (draws.size() < 1) throw std::invalid_argument("critical_value: no draws");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  std::vector<double> s(draws.data(), draws.data() + draws.size());
  std::sort(s.begin(), s.end());
  const auto b = static_cast<double>(s.size());
  // The small offset keeps B(1 - alpha) that is integral up to rounding
  // from jumping to the next rank.
  auto rank = static_cast<Index>(std::ceil(b * (1.0 - alpha) - 1e-9));
  rank = std::clamp<Index>(rank, 1, static_cast<Index>(s.size()));
  return s[static_cast<std::size_t>(rank - 1)];
}

struct ConfidenceBand {
  EvalGrid grid;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double alpha = 0.05;
  Side side = Side::two;
  double critical_value = 0.0;
  BandScope scope = BandScope::uniform;

  bool contains(Index g, double value) const { return lower[g] <= value && value <= upper[g]; }
};

namespace detail {

inline ConfidenceBand make_band(const CateCurve& curve, double c, double alpha, Side side,
                                BandScope scope) {
  ConfidenceBand band;
  band.grid = curve.grid;
  band.alpha = alpha;
  band.side = side;
  band.critical_value = c;
  band.scope = scope;
  const Index g_count = curve.grid.size();
  band.lower.resize(g_count);
  band.upper.resize(g_count);
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (Index g = 0; g < g_count; ++g) {
    const double half = c * curve.standard_error(g);
    band.lower[g] = side == Side::right ? -inf : curve.tau[g] - half;
    band.upper[g] = side == Side::left ? inf : curve.tau[g] + half;
  }
  return band;
}

}  // namespace detail

/// Bands tau -+ C sigma / sqrt(N h^d). For one-sided bands pass the
/// one-sided critical value.
inline ConfidenceBand uniform_band(const CateCurve& curve, double c, double alpha, Side side) {
  if (!(c >= 0.0)) throw std::invalid_argument("critical value must be nonnegative");
  return detail::make_band(curve, c, alpha, side, BandScope::uniform);
}

inline ConfidenceBand uniform_band(const CateCurve& curve, const BootstrapDraws& draws,
                                   double alpha, Side side) {
  const double c = critical_value(side == Side::two ? draws.sup_two_sided : draws.sup_one_sided,
                                  alpha);
  return uniform_band(curve, c, alpha, side);
}

/// Normal-approximation band: z_{1-alpha/2} (two-sided) or z_{1-alpha}.
inline ConfidenceBand pointwise_band(const CateCurve& curve, double alpha, Side side) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  const double z = normal_quantile(side == Side::two ? 1.0 - alpha / 2.0 : 1.0 - alpha);
  return detail::make_band(curve, z, alpha, side, BandScope::pointwise);
}

}  // namespace hdcate
