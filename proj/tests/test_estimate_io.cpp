#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"

using namespace hdcate;

namespace {

Table parse(const std::string& text, char delim = ',') {
  std::istringstream in(text);
  return read_table(in, delim, "t.csv");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

EstimateConfig basic_config() {
  return estimate_config_from_json(
      {{"input", "data.csv"}, {"outcome", "y"}, {"treatment", "d"}, {"conditioning", "a"}});
}

}  // namespace

TEST(Csv, ParsesValues) {
  const Table t = parse("y,d,\"a\"\n1.5,0,-2\n 2 ,1,+3e-1\n\n");
  EXPECT_EQ(t.names, (std::vector<std::string>{"y", "d", "a"}));
  ASSERT_EQ(t.values.rows(), 2);
  EXPECT_EQ(t.values(0, 0), 1.5);
  EXPECT_EQ(t.values(1, 0), 2.0);
  EXPECT_EQ(t.values(1, 2), 0.3);
  EXPECT_EQ(t.column("a"), 2);
  EXPECT_EQ(t.column("zz"), -1);
  const Table tabs = parse("y\td\n1\t0\n", '\t');
  EXPECT_EQ(tabs.values(0, 0), 1.0);
}

TEST(Csv, ErrorsNameLineAndColumn) {
  EXPECT_NE(error_of("y,d\n1,0\n2,NA\n").find("line 3, column 'd': missing value"), std::string::npos);
  EXPECT_NE(error_of("y,d\n1,\n").find("line 2, column 'd': missing value"), std::string::npos);
  EXPECT_NE(error_of("y,d\n1,abc\n").find("cannot parse 'abc'"), std::string::npos);
  EXPECT_NE(error_of("y,d\n1,2,3\n").find("line 2 has 3 fields"), std::string::npos);
  EXPECT_NE(error_of("y,y\n1,2\n").find("duplicate column name 'y'"), std::string::npos);
  EXPECT_NE(error_of("y,d\n").find("no data rows"), std::string::npos);
  EXPECT_NE(error_of("").find("empty file"), std::string::npos);
  EXPECT_NE(error_of("y,d\n1,inf\n").find("non-finite"), std::string::npos);
}

TEST(Dictionary, ExpansionCountsAndNames) {
  const Eigen::MatrixXd base = testing_util::random_matrix(10, 3, 1);
  const std::vector<std::string> names{"a", "b", "c"};
  const Dictionary none = expand_dictionary(base, names, Expansion::none, 1);
  EXPECT_EQ(none.names, names);
  const Dictionary sq = expand_dictionary(base, names, Expansion::squares, 2);
  EXPECT_EQ(sq.names, (std::vector<std::string>{"a", "b", "c", "a^2", "b^2", "c^2"}));
  const Dictionary p2 = expand_dictionary(base, names, Expansion::polynomial, 2);
  EXPECT_EQ(p2.names.size(), 9u);  // 3 + C(4, 2)
  EXPECT_EQ(p2.names[4], "a*b");
  EXPECT_NEAR(p2.x(3, 4), base(3, 0) * base(3, 1), 1e-15);
  const Dictionary p3 = expand_dictionary(base, names, Expansion::polynomial, 3);
  EXPECT_EQ(p3.names.size(), 19u);  // 3 + 6 + 10
  EXPECT_NE(std::find(p3.names.begin(), p3.names.end(), "a^2*c"), p3.names.end());
  const auto it = std::find(p3.names.begin(), p3.names.end(), "a^2*c");
  EXPECT_NEAR(p3.x(2, it - p3.names.begin()), base(2, 0) * base(2, 0) * base(2, 2), 1e-14);
}

TEST(Dictionary, BinaryColumnsAreNotPowered) {
  Eigen::MatrixXd base = testing_util::random_matrix(10, 3, 2);
  for (Index i = 0; i < 10; ++i) base(i, 1) = i % 2;
  const std::vector<std::string> names{"a", "b", "c"};
  const Dictionary sq = expand_dictionary(base, names, Expansion::squares, 2);
  EXPECT_EQ(sq.names, (std::vector<std::string>{"a", "b", "c", "a^2", "c^2"}));
  EXPECT_EQ(expand_dictionary(base, names, Expansion::polynomial, 2).names.size(), 8u);
}

TEST(Dictionary, SizeCap) {
  const Eigen::MatrixXd base = testing_util::random_matrix(3, 60, 3);
  std::vector<std::string> names;
  for (int j = 0; j < 60; ++j) names.push_back("x" + std::to_string(j));
  EXPECT_THROW(expand_dictionary(base, names, Expansion::polynomial, 4), ConfigError);
}

TEST(EstimateConfig, Defaults) {
  const EstimateConfig c = basic_config();
  EXPECT_EQ(c.conditioning, std::vector<std::string>{"a"});
  EXPECT_TRUE(c.covariates.empty());
  EXPECT_EQ(c.method, Method::cross_fit);
  EXPECT_EQ(c.B, 1000);
  EXPECT_TRUE(c.bandwidth.empty());
  EXPECT_FALSE(c.grid.has_value());
}

TEST(EstimateConfig, ParsesVariants) {
  const EstimateConfig c = estimate_config_from_json(
      {{"input", "in/data.csv"},
       {"output", "/abs/out"},
       {"outcome", "y"},
       {"treatment", "d"},
       {"conditioning", {"a"}},
       {"covariates", {"b", "c"}},
       {"dictionary", {{"expansion", "polynomial"}, {"degree", 3}}},
       {"method", "full_sample"},
       {"B", 200},
       {"alphas", {0.1}},
       {"bandwidth", 0.3},
       {"grid", {{"lower", -2}, {"upper", 2}, {"points", 5}}},
       {"delimiter", "tab"}},
      "/cfg");
  EXPECT_EQ(c.input, std::filesystem::path("/cfg/in/data.csv"));
  EXPECT_EQ(c.output, std::filesystem::path("/abs/out"));
  EXPECT_EQ(c.delimiter, '\t');
  EXPECT_EQ(c.expansion, Expansion::polynomial);
  EXPECT_EQ(c.degree, 3);
  EXPECT_EQ(c.method, Method::full_sample);
  EXPECT_EQ(c.bandwidth, std::vector<double>{0.3});
  ASSERT_TRUE(c.grid.has_value());
  EXPECT_EQ(c.grid->points, 5);
}

TEST(EstimateConfig, CollectsAllProblems) {
  try {
    estimate_config_from_json({{"outcome", 3}, {"method", "magic"}, {"B", 0}, {"whatever", true}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* needle : {"outcome", "method", "whatever"}) {
      EXPECT_NE(msg.find(needle), std::string::npos) << needle << " missing from\n" << msg;
    }
  }
}

TEST(PrepareSample, SelectsColumns) {
  const Table t = parse("y,d,a,b\n1,0,0.5,2\n2,1,-0.5,3\n3,0,1.5,1\n4,1,0.1,0\n");
  EstimateConfig c = basic_config();
  const PreparedData all = prepare_sample(t, c);
  EXPECT_EQ(all.x_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(all.sample.x1_cols, std::vector<Index>{0});
  EXPECT_EQ(all.sample.y[3], 4.0);
  c.covariates = {"b"};
  const PreparedData some = prepare_sample(t, c);
  EXPECT_EQ(some.x_names, (std::vector<std::string>{"b", "a"}));
  EXPECT_EQ(some.sample.x1_cols, std::vector<Index>{1});
}

TEST(PrepareSample, DataErrors) {
  EstimateConfig c = basic_config();
  EXPECT_THROW(prepare_sample(parse("y,d,a\n1,2,0\n2,1,1\n"), c), DataError);
  EXPECT_THROW(prepare_sample(parse("y,d,a\n1,0,1\n2,1,1\n"), c), DataError);
  EXPECT_THROW(prepare_sample(parse("y,dd,a\n1,0,0\n2,1,1\n"), c), DataError);
}

TEST(Output, CsvAndJsonLayout) {
  const GeneratedSample gs = gen_dgp1(200, 6, 5);
  const auto dir = testing_util::temp_dir("estimate_io");
  testing_util::write_csv(gs.sample, dir / "data.csv");
  EstimateConfig c = estimate_config_from_json(
      {{"input", "data.csv"}, {"outcome", "y"}, {"treatment", "d"}, {"conditioning", "x1"},
       {"B", 50}, {"alphas", {0.05, 0.1}}, {"grid", {{"lower", -1}, {"upper", 1}, {"points", 11}}},
       {"K", 2}},
      dir);
  const EstimateResult r = run_estimate(c, dir / "out");
  std::istringstream csv(testing_util::slurp(dir / "out" / "curve.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("# format_version=1", 0), 0u);
  std::getline(csv, line);
  EXPECT_EQ(line, "x1,tau,slope,sigma,pw_lo,pw_hi,unif_lo_0.05,unif_hi_0.05,unif_lo_0.1,unif_hi_0.1");
  int rows = 0;
  while (std::getline(csv, line)) rows += !line.empty();
  EXPECT_EQ(rows, 11);
  const auto j = nlohmann::json::parse(testing_util::slurp(dir / "out" / "result.json"));
  EXPECT_EQ(j["format_version"], 1);
  EXPECT_EQ(j["tau"].size(), 11u);
  EXPECT_EQ(j["uniform_bands"].size(), 2u);
  EXPECT_NEAR(j["tau"][5].get<double>(), r.curve.tau[5], 1e-12);
}
