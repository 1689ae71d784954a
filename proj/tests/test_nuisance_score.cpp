#include <gtest/gtest.h>

#include <numeric>

#include "helpers.hpp"

using namespace hdcate;
using testing_util::random_matrix;
using testing_util::random_vector;

namespace {

std::vector<Index> iota_rows(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

LassoFit fixed_fit(double intercept, Eigen::VectorXd coef, Family fam = Family::linear) {
  LassoFit f;
  f.intercept = intercept;
  f.coefficients = std::move(coef);
  f.family = fam;
  for (Index j = 0; j < f.coefficients.size(); ++j) {
    if (f.coefficients[j] != 0.0) f.support.push_back(j);
  }
  return f;
}

bool has(const std::vector<Index>& s, Index j) { return std::find(s.begin(), s.end(), j) != s.end(); }

}  // namespace

TEST(Nuisance, ZeroOutcomeGivesZeroOutcomeFits) {
  Sample s;
  s.x = random_matrix(40, 5, 1);
  s.y = Eigen::VectorXd::Zero(40);
  s.d.resize(40);
  for (Index i = 0; i < 40; ++i) s.d[i] = i % 2;
  s.x1_cols = {0};
  const NuisanceFit f = fit_nuisance(s, iota_rows(40));
  for (const LassoFit* m : {&f.fit_mu0, &f.fit_mu1}) {
    EXPECT_EQ(m->intercept, 0.0);
    EXPECT_TRUE(m->support.empty());
  }
}

TEST(Nuisance, IndependentTreatmentSelectsNothing) {
  Sample s;
  s.x = random_matrix(400, 30, 2);
  s.y = random_vector(400, 3);
  s.d.resize(400);
  std::mt19937_64 gen(4);
  for (Index i = 0; i < 400; ++i) s.d[i] = std::bernoulli_distribution(0.5)(gen) ? 1.0 : 0.0;
  s.x1_cols = {0};
  // oracle: the realized null threshold is below the penalty level
  const double lambda = bch_penalty_level(400, 30, PenaltyRole::propensity);
  ASSERT_LT(null_penalty(DesignMatrix(s.x), s.d), lambda);
  const NuisanceFit f = fit_nuisance(s, iota_rows(400));
  EXPECT_TRUE(f.fit_pi.support.empty());
  EXPECT_NEAR(f.fit_pi.intercept, logit(s.d.mean()), 1e-7);
}

TEST(Nuisance, Dgp1OutcomeSupportRecovery) {
  int mu_hits = 0, pi_consistent = 0;
  const int runs = 50;
  for (int r = 0; r < runs; ++r) {
    const GeneratedSample g = gen_dgp1(500, 100, 500 + r);
    const NuisanceFit f = fit_nuisance(g.sample, iota_rows(500));
    const auto& s1 = f.fit_mu1.support;
    if (has(s1, 0) && has(s1, 1) && has(s1, 2) && has(s1, 3)) ++mu_hits;
    // the propensity penalty exceeds the realized null threshold, so the
    // lasso solution is the null model
    const double lambda = bch_penalty_level(500, 100, PenaltyRole::propensity);
    const bool null_expected = null_penalty(DesignMatrix(g.sample.x), g.sample.d) < lambda;
    if (null_expected == f.fit_pi.support.empty()) ++pi_consistent;
    EXPECT_TRUE(f.fit_mu0.support.empty());  // Y(0) = 0
  }
  EXPECT_GE(mu_hits, static_cast<int>(0.9 * runs));
  EXPECT_EQ(pi_consistent, runs);
}

TEST(Nuisance, ArmErrorNamesTheFold) {
  Sample s;
  s.x = random_matrix(20, 3, 5);
  s.y = random_vector(20, 6);
  s.d = Eigen::VectorXd::Zero(20);
  for (Index i = 0; i < 3; ++i) s.d[i] = 1.0;
  s.x1_cols = {0};
  try {
    fit_nuisance(s, iota_rows(20), {}, 2);
    FAIL() << "expected ArmError";
  } catch (const ArmError& e) {
    EXPECT_EQ(e.fold(), 2);
    EXPECT_NE(std::string(e.what()).find("fold 3"), std::string::npos);
  }
}

TEST(Nuisance, ArmPermutationInvariance) {
  const GeneratedSample g = gen_dgp1(300, 20, 7);
  const NuisanceFit a = fit_nuisance(g.sample, iota_rows(300));
  // reverse the order of the treated rows only
  std::vector<Index> treated, control;
  for (Index i = 0; i < 300; ++i) (g.sample.d[i] == 1.0 ? treated : control).push_back(i);
  Sample permuted = g.sample;
  for (std::size_t k = 0; k < treated.size(); ++k) {
    const Index src = treated[treated.size() - 1 - k], dst = treated[k];
    permuted.x.row(dst) = g.sample.x.row(src);
    permuted.y[dst] = g.sample.y[src];
  }
  const NuisanceFit b = fit_nuisance(permuted, iota_rows(300));
  const Eigen::VectorXd fa = a.fit_mu1.linear_predictor(g.sample.x);
  const Eigen::VectorXd fb = b.fit_mu1.linear_predictor(g.sample.x);
  EXPECT_LT((fa - fb).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((a.fit_mu0.linear_predictor(g.sample.x) - b.fit_mu0.linear_predictor(g.sample.x))
                .cwiseAbs()
                .maxCoeff(),
            1e-10);
}

TEST(Nuisance, FoldIsolation) {
  const GeneratedSample g = gen_dgp1(200, 10, 8);
  std::vector<Index> train;
  for (Index i = 0; i < 200; ++i) {
    if (i % 4 != 0) train.push_back(i);
  }
  const NuisanceFit a = fit_nuisance(g.sample, train);
  Sample changed = g.sample;
  for (Index i = 0; i < 200; i += 4) {
    changed.y[i] = 1e6;
    changed.x.row(i).setConstant(-50.0);
  }
  const NuisanceFit b = fit_nuisance(changed, train);
  EXPECT_EQ(a.fit_mu1.intercept, b.fit_mu1.intercept);
  EXPECT_TRUE((a.fit_mu1.coefficients.array() == b.fit_mu1.coefficients.array()).all());
  EXPECT_TRUE((a.fit_pi.coefficients.array() == b.fit_pi.coefficients.array()).all());
}

TEST(Nuisance, PredictMuExamples) {
  NuisanceFit f;
  f.fit_mu0 = fixed_fit(3.0, Eigen::VectorXd::Zero(4));
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(4);
  e1[0] = 1.0;
  f.fit_mu1 = fixed_fit(0.0, e1);
  Eigen::RowVectorXd row(4);
  row << 2.0, 0.0, 5.0, -1.0;
  EXPECT_EQ(predict_mu(f, 0, row), 3.0);
  EXPECT_EQ(predict_mu(f, 1, row), 2.0);

  const Eigen::VectorXd c = random_vector(5, 9);
  const Eigen::RowVectorXd r = random_vector(5, 10).transpose();
  f.fit_mu1 = fixed_fit(0.7, c);
  double hand = 0.7;
  for (int j = 0; j < 5; ++j) hand += c[j] * r[j];
  EXPECT_NEAR(predict_mu(f, 1, r), hand, 1e-12);
}

TEST(Nuisance, PredictPiExamplesAndClamp) {
  NuisanceFit f;
  f.trim_eps = 0.01;
  Eigen::RowVectorXd row(1);
  row << 1.0;
  f.fit_pi = fixed_fit(0.0, Eigen::VectorXd::Zero(1), Family::logistic);
  EXPECT_DOUBLE_EQ(predict_pi(f, row), 0.5);
  f.fit_pi = fixed_fit(50.0, Eigen::VectorXd::Zero(1), Family::logistic);
  EXPECT_DOUBLE_EQ(predict_pi(f, row), 0.99);
  f.fit_pi = fixed_fit(-50.0, Eigen::VectorXd::Zero(1), Family::logistic);
  EXPECT_DOUBLE_EQ(predict_pi(f, row), 0.01);
  f.fit_pi = fixed_fit(std::log(3.0), Eigen::VectorXd::Zero(1), Family::logistic);
  EXPECT_NEAR(predict_pi(f, row), 0.75, 1e-15);
  for (double t = -100; t <= 100; t += 0.5) {
    f.fit_pi = fixed_fit(t, Eigen::VectorXd::Zero(1), Family::logistic);
    const double p = predict_pi(f, row);
    EXPECT_GE(p, 0.01);
    EXPECT_LE(p, 0.99);
  }
}

TEST(Nuisance, RejectsBadTrim) {
  const GeneratedSample g = gen_dgp1(50, 5, 1);
  NuisanceOptions o;
  o.trim_eps = 0.5;
  EXPECT_THROW(fit_nuisance(g.sample, iota_rows(50), o), ConfigError);
}

TEST(SampleValidate, Rejections) {
  const GeneratedSample g = gen_dgp1(30, 5, 1);
  Sample s = g.sample;
  s.d[0] = 2.0;
  EXPECT_THROW(s.validate(), DataError);
  s = g.sample;
  s.d.setZero();
  EXPECT_THROW(s.validate(), DataError);
  s = g.sample;
  s.x1_cols = {0, 1, 2, 3};
  EXPECT_THROW(s.validate(), DataError);
  s = g.sample;
  s.x1_cols = {1, 1};
  EXPECT_THROW(s.validate(), DataError);
  s = g.sample;
  s.y[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(s.validate(), DataError);
}

// ---- score

TEST(Score, HandExamples) {
  EXPECT_DOUBLE_EQ(dr_score(5.0, 1.0, 2.0, 5.0, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(dr_score(2.0, 0.0, 2.0, 5.0, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(dr_score(3.0, 1.0, 1.0, 2.0, 0.25), 5.0);
}

TEST(Score, ZeroNuisanceReduction) {
  const GeneratedSample g = gen_dgp1(25, 4, 11);
  NuisanceFit f;
  f.fit_mu0 = fixed_fit(0.0, Eigen::VectorXd::Zero(4));
  f.fit_mu1 = fixed_fit(0.0, Eigen::VectorXd::Zero(4));
  f.fit_pi = fixed_fit(0.0, Eigen::VectorXd::Zero(4), Family::logistic);
  const ScoreVector sv = score_vector(g.sample, iota_rows(25), f);
  for (Index i = 0; i < 25; ++i) {
    EXPECT_NEAR(sv.values[i], 2.0 * g.sample.y[i] * (2.0 * g.sample.d[i] - 1.0), 1e-12);
  }
}

TEST(Score, VectorMatchesStraightLineRecomputation) {
  const GeneratedSample g = gen_dgp1(10, 6, 12);
  NuisanceFit f;
  f.trim_eps = 0.05;
  f.fit_mu0 = fixed_fit(0.3, random_vector(6, 13));
  f.fit_mu1 = fixed_fit(9.0, random_vector(6, 14));
  f.fit_pi = fixed_fit(-0.2, random_vector(6, 15), Family::logistic);
  const std::vector<Index> rows{9, 3, 0, 5};
  const ScoreVector sv = score_vector(g.sample, rows, f);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index i = rows[k];
    double m0 = 0.3, m1 = 9.0, eta = -0.2;
    for (int j = 0; j < 6; ++j) {
      m0 += f.fit_mu0.coefficients[j] * g.sample.x(i, j);
      m1 += f.fit_mu1.coefficients[j] * g.sample.x(i, j);
      eta += f.fit_pi.coefficients[j] * g.sample.x(i, j);
    }
    double pi = 1.0 / (1.0 + std::exp(-eta));
    pi = std::min(std::max(pi, 0.05), 0.95);
    const double y = g.sample.y[i], d = g.sample.d[i];
    const double ref = d * (y - m1) / pi + m1 - (1 - d) * (y - m0) / (1 - pi) - m0;
    EXPECT_NEAR(sv.values[static_cast<Index>(k)], ref, 1e-12);
    EXPECT_EQ(sv.values[static_cast<Index>(k)],
              dr_score(y, d, predict_mu(f, 0, g.sample.x.row(i)), predict_mu(f, 1, g.sample.x.row(i)),
                       predict_pi(f, g.sample.x.row(i))));
  }
  EXPECT_EQ(sv.eval_indices, rows);
  ASSERT_TRUE(sv.source_fit);
}

TEST(Score, ExactWithTrueOutcomeModelsAnyPropensity) {
  // noise-free outcomes, true mu, arbitrary clamped pi
  const Index n = 200;
  Sample s;
  s.x = random_matrix(n, 3, 16);
  s.d.resize(n);
  s.y.resize(n);
  Eigen::VectorXd b1(3), b0(3);
  b1 << 1.0, -2.0, 0.5;
  b0 << 0.3, 0.0, 1.0;
  for (Index i = 0; i < n; ++i) {
    s.d[i] = i % 3 == 0 ? 1.0 : 0.0;
    s.y[i] = s.d[i] == 1.0 ? 4.0 + s.x.row(i).dot(b1) : -1.0 + s.x.row(i).dot(b0);
  }
  s.x1_cols = {0};
  NuisanceFit f;
  f.fit_mu1 = fixed_fit(4.0, b1);
  f.fit_mu0 = fixed_fit(-1.0, b0);
  f.fit_pi = fixed_fit(0.4, random_vector(3, 17) * 3.0, Family::logistic);
  const ScoreVector sv = score_vector(s, iota_rows(n), f);
  for (Index i = 0; i < n; ++i) {
    EXPECT_NEAR(sv.values[i], 5.0 + s.x.row(i).dot(b1 - b0), 1e-10);
  }
}

TEST(Score, LinearInOutcome) {
  const GeneratedSample g = gen_dgp1(50, 4, 18);
  NuisanceFit f;
  f.fit_mu0 = fixed_fit(0.0, Eigen::VectorXd::Zero(4));
  f.fit_mu1 = fixed_fit(0.0, Eigen::VectorXd::Zero(4));
  f.fit_pi = fixed_fit(0.2, random_vector(4, 19), Family::logistic);
  Sample s2 = g.sample;
  s2.y *= 3.0;
  const ScoreVector a = score_vector(g.sample, iota_rows(50), f);
  const ScoreVector b = score_vector(s2, iota_rows(50), f);
  EXPECT_LT((b.values - 3.0 * a.values).cwiseAbs().maxCoeff(), 1e-10);
}
