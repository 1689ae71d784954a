#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"

using namespace hdcate;

namespace {

McConfig tiny_config() {
  McConfig c;
  c.dgp = DgpSpec{Design::strict_sparse, 80, 8, 0.1, 0};
  c.replications = 6;
  c.K = 2;
  c.B = 20;
  c.grid = GridSpec{-1.0, 1.0, 11};
  c.eval_points = {-0.5, 0.0, 0.5};
  c.root_seed = 31;
  c.threads = 1;
  return c;
}

ReplicationRecord record(Index rep, std::vector<double> crit, std::vector<std::uint8_t> cov,
                         std::vector<double> tau, std::vector<double> se, std::vector<double> truth) {
  ReplicationRecord r;
  r.rep = rep;
  r.ok = true;
  r.attempts = 1;
  r.critical = std::move(crit);
  r.covered = std::move(cov);
  r.tau_eval = tau;
  r.sigma_eval = se;
  r.se_eval = std::move(se);
  r.truth_eval = std::move(truth);
  return r;
}

}  // namespace

TEST(Coverage, InfiniteAndZeroCritical) {
  const GeneratedSample gs = gen_dgp1(200, 10, 1);
  const CateCurve c = cate_full_sample(gs.sample, EvalGrid::uniform(-1, 1, 11),
                                       rot_bandwidth(gs.sample.x1()));
  EXPECT_TRUE(band_covers(c, gs.true_cate, std::numeric_limits<double>::infinity()));
  EXPECT_FALSE(band_covers(c, gs.true_cate, 0.0));
}

TEST(Aggregate, HandOracle) {
  // alpha 0.05 and 0.1; one evaluation point with truth 1
  std::vector<ReplicationRecord> recs;
  const double crit[10] = {2.0, 2.5, 3.0, 2.2, 2.8, 2.6, 2.4, 2.9, 3.1, 2.5};
  const std::uint8_t cov[10] = {1, 1, 1, 0, 1, 1, 1, 1, 0, 1};
  const double tau[10] = {1.1, 0.9, 1.3, 0.8, 1.0, 1.2, 0.7, 1.05, 0.95, 1.0};
  const double se[10] = {0.1, 0.2, 0.1, 0.2, 0.1, 0.2, 0.1, 0.2, 0.1, 0.2};
  for (int r = 0; r < 10; ++r) {
    recs.push_back(record(r, {crit[r], crit[r] - 0.3}, {cov[r], 0}, {tau[r]}, {se[r]}, {1.0}));
  }
  const McReport rep = aggregate(recs, {0.05, 0.10}, {0.0});
  EXPECT_EQ(rep.successful, 10);
  EXPECT_NEAR(rep.per_alpha[0].emp, 0.8, 1e-12);
  EXPECT_NEAR(rep.per_alpha[1].emp, 0.0, 1e-12);
  EXPECT_NEAR(rep.per_alpha[0].mcri, 2.6, 1e-12);
  EXPECT_NEAR(rep.per_alpha[1].mcri, 2.3, 1e-12);
  EXPECT_NEAR(rep.per_alpha[0].min_cri, 2.0, 1e-12);
  // population sd of crit: sum of squared deviations from 2.6 = 1.12
  EXPECT_NEAR(rep.per_alpha[0].sdcri, std::sqrt(1.12 / 10), 1e-12);
  const PointSummary& p = rep.per_point[0];
  // errors sum to 0; squared errors sum to 0.285
  EXPECT_NEAR(p.bias, 0.0, 1e-12);
  EXPECT_NEAR(p.rmse, std::sqrt(0.285 / 10), 1e-12);
  EXPECT_NEAR(p.sd, std::sqrt(0.285 / 10), 1e-12);
  EXPECT_NEAR(p.ase, 0.15, 1e-12);
}

TEST(Aggregate, SingleRecordAndFailures) {
  std::vector<ReplicationRecord> recs{record(0, {2.7}, {1}, {10.2}, {0.3}, {10.0})};
  ReplicationRecord bad;
  bad.rep = 1;
  recs.push_back(bad);
  const McReport rep = aggregate(recs, {0.05}, {0.0});
  EXPECT_EQ(rep.successful, 1);
  EXPECT_EQ(rep.failed, 1);
  EXPECT_EQ(rep.per_alpha[0].emp, 1.0);
  EXPECT_EQ(rep.per_alpha[0].sdcri, 0.0);
  EXPECT_NEAR(rep.per_point[0].bias, 0.2, 1e-12);
  EXPECT_NEAR(rep.per_point[0].rmse, 0.2, 1e-12);
  EXPECT_EQ(rep.per_point[0].sd, 0.0);
  EXPECT_THROW(aggregate(std::vector<ReplicationRecord>{bad}, {0.05}, {0.0}), NumericalError);
}

TEST(Aggregate, RmseDecompositionAndShuffleInvariance) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd(0.1, 0.5);
  std::vector<ReplicationRecord> recs;
  for (int r = 0; r < 100; ++r) {
    recs.push_back(record(r, {2.0 + 0.01 * r}, {static_cast<std::uint8_t>(r % 3 != 0)},
                          {nd(gen), nd(gen)}, {0.4, 0.5}, {0.0, 0.0}));
  }
  const McReport a = aggregate(recs, {0.05}, {0.0, 1.0});
  for (const auto& p : a.per_point) {
    EXPECT_NEAR(p.rmse * p.rmse, p.bias * p.bias + p.sd * p.sd, 1e-12);
  }
  EXPECT_NEAR(a.per_alpha[0].emp, 0.66, 1e-12);
  std::shuffle(recs.begin(), recs.end(), gen);
  const McReport b = aggregate(recs, {0.05}, {0.0, 1.0});
  EXPECT_EQ(a.per_point[0].rmse, b.per_point[0].rmse);
  EXPECT_EQ(a.per_alpha[0].sdcri, b.per_alpha[0].sdcri);
}

TEST(Replication, SeedsAreDistinctAndStable) {
  const ReplicationSeeds a = replication_seeds(1, 0, 0), b = replication_seeds(1, 1, 0),
                         c = replication_seeds(1, 0, 1), d = replication_seeds(1, 0, 0);
  EXPECT_EQ(a.data, d.data);
  EXPECT_NE(a.data, b.data);
  EXPECT_NE(a.data, c.data);
  EXPECT_NE(a.data, a.folds);
  EXPECT_NE(a.folds, a.bootstrap);
}

TEST(Replication, RecordShape) {
  const McConfig c = tiny_config();
  const ReplicationRecord r = run_replication(c, 2);
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_EQ(r.critical.size(), 3u);
  EXPECT_EQ(r.tau_eval.size(), 3u);
  EXPECT_EQ(r.truth_eval[1], 10.0);
  EXPECT_TRUE(std::isfinite(r.critical[0]));
  EXPECT_GE(r.critical[0], r.critical[1]);                 // 99% >= 95%
  EXPECT_GE(r.critical[1], r.critical[2]);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_GT(r.se_eval[k], 0.0);
  // the record round-trips through JSON
  const ReplicationRecord back = record_from_json(to_json(r));
  EXPECT_EQ(back.tau_eval, r.tau_eval);
  EXPECT_EQ(back.covered, r.covered);
}

TEST(Experiment, ThreadCountInvariance) {
  McConfig c = tiny_config();
  const McRunResult one = run_experiment(c);
  c.threads = 3;
  const McRunResult three = run_experiment(c);
  ASSERT_EQ(one.records.size(), three.records.size());
  for (std::size_t r = 0; r < one.records.size(); ++r) {
    EXPECT_EQ(to_json(one.records[r]), to_json(three.records[r]));
  }
}

TEST(Experiment, CheckpointResumeIsIdentical) {
  const McConfig c = tiny_config();
  const auto dir = testing_util::temp_dir("mc_resume");
  McRunOptions opts;
  opts.checkpoint_path = (dir / "ck.json").string();
  opts.stop_after = 2;
  const McRunResult part = run_experiment(c, opts);
  EXPECT_FALSE(part.complete);
  EXPECT_EQ(part.records.size(), 2u);
  opts.stop_after = -1;
  const McRunResult rest = run_experiment(c, opts);
  EXPECT_TRUE(rest.complete);
  const McRunResult direct = run_experiment(c);
  ASSERT_EQ(rest.records.size(), direct.records.size());
  for (std::size_t r = 0; r < direct.records.size(); ++r) {
    EXPECT_EQ(to_json(rest.records[r]), to_json(direct.records[r]));
  }
  McConfig other = c;
  other.root_seed = 99;
  EXPECT_THROW(run_experiment(other, opts), ConfigError);
}

TEST(Config, ListsEveryProblem) {
  const nlohmann::json j = {{"dgp", {{"design", "dense"}, {"n", 10}, {"p", 100}}},
                            {"replications", 0},
                            {"B", "many"},
                            {"alphas", {0.05, 1.5}},
                            {"bogus", 1}};
  try {
    mc_config_from_json(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* needle : {"dgp.design", "replications", "B: wrong type", "not in (0, 1)", "bogus"}) {
      EXPECT_NE(msg.find(needle), std::string::npos) << needle << " missing from\n" << msg;
    }
  }
  EXPECT_THROW(mc_config_from_json(nlohmann::json::array()), ConfigError);
  EXPECT_THROW(mc_config_from_json(nlohmann::json::object()), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  McConfig c = tiny_config();
  c.dgp.design = Design::approx_sparse;
  c.dgp.p = 30;
  c.dgp.r2 = 0.2;
  c.method = Method::full_sample;
  const McConfig back = mc_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Experiment, WalkThroughReport) {
  McConfig c = tiny_config();
  c.replications = 10;
  c.dgp.n = 100;
  const McReport rep = simulate(c);
  EXPECT_EQ(rep.successful + rep.failed, 10);
  const nlohmann::json j = to_json(rep, c);
  EXPECT_EQ(j["format_version"], kFormatVersion);
  EXPECT_EQ(j["coverage"].size(), 3u);
  EXPECT_EQ(j["accuracy"].size(), 3u);
  for (const auto& a : rep.per_alpha) {
    EXPECT_GE(a.emp, 0.0);
    EXPECT_LE(a.emp, 1.0);
    EXPECT_GE(a.mcri, a.min_cri);
  }
  const std::string text = format_report(rep, c);
  EXPECT_NE(text.find("EMP"), std::string::npos);
  EXPECT_NE(text.find("RMSE"), std::string::npos);
}
