#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hdcate/nuisance.hpp"

namespace hdcate {

/// Doubly-robust (AIPW) score
///   d (y - mu1) / pi + mu1 - (1 - d)(y - mu0) / (1 - pi) - mu0.
inline double dr_score(double y, double d, double mu0, double mu1, double pi) {
  return d * (y - mu1) / pi + mu1 - (1.0 - d) * (y - mu0) / (1.0 - pi) - mu0;
}

struct ScoreVector {
  Eigen::VectorXd values;
  std::shared_ptr<const NuisanceFit> source_fit;
  std::vector<Index> eval_indices;
};

inline ScoreVector score_vector(const Sample& sample, std::span<const Index> eval_indices,
                                std::shared_ptr<const NuisanceFit> fit) {
  ScoreVector out;
  out.values.resize(static_cast<Index>(eval_indices.size()));
  out.eval_indices.assign(eval_indices.begin(), eval_indices.end());
  for (std::size_t k = 0; k < eval_indices.size(); ++k) {
    const Index i = eval_indices[k];
    if (i < 0 || i >= sample.n()) throw std::out_of_range("score_vector: row index out of range");
    const auto row = sample.x.row(i);
    out.values[static_cast<Index>(k)] =
        dr_score(sample.y[i], sample.d[i], predict_mu(*fit, 0, row), predict_mu(*fit, 1, row),
                 predict_pi(*fit, row));
  }
  out.source_fit = std::move(fit);
  return out;
}

inline ScoreVector score_vector(const Sample& sample, std::span<const Index> eval_indices,
                                const NuisanceFit& fit) {
  return score_vector(sample, eval_indices, std::make_shared<const NuisanceFit>(fit));
}

}  // namespace hdcate
