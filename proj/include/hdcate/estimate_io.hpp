#pragma once

// Estimation on user data: config parsing, delimited-text ingestion,
// dictionary expansion and the result artifacts (result.json, curve.csv).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hdcate/error.hpp"
#include "hdcate/estimator.hpp"
#include "hdcate/inference.hpp"
#include "hdcate/local_regression.hpp"
#include "hdcate/mc_harness.hpp"

namespace hdcate {

// ---------------------------------------------------------------------------
// Delimited text

struct Table {
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // rows x columns

  Index column(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<Index>(it - names.begin());
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string_view unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i < line.size() && line[i] == '"') quoted = !quoted;
    if (i == line.size() || (line[i] == delim && !quoted)) {
      out.push_back(unquote(trim(line.substr(start, i - start))));
      start = i + 1;
    }
  }
  return out;
}

inline bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "na" || s == "N/A" || s == "NaN" || s == "nan" ||
         s == "." || s == "null" || s == "NULL";
}

}  // namespace detail

/// Header row plus numeric body. Missing or unparsable cells and ragged rows
/// are DataErrors naming the line and column.
inline Table read_table(std::istream& in, char delim = ',', const std::string& source = "input") {
  Table t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) break;
  }
  if (detail::trim(line).empty()) throw DataError(source + ": empty file (no header row)");
  for (auto f : detail::split_fields(line, delim)) t.names.emplace_back(f);
  {
    std::set<std::string> seen;
    for (std::size_t c = 0; c < t.names.size(); ++c) {
      if (t.names[c].empty()) {
        throw DataError(source + ": header column " + std::to_string(c + 1) + " has no name");
      }
      if (!seen.insert(t.names[c]).second) {
        throw DataError(source + ": duplicate column name '" + t.names[c] + "'");
      }
    }
  }
  const std::size_t cols = t.names.size();
  std::vector<double> cells;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line, delim);
    if (fields.size() != cols) {
      throw DataError(source + ": line " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, header has " + std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const std::string_view f = fields[c];
      const std::string where = source + ": line " + std::to_string(line_no) + ", column '" +
                                t.names[c] + "'";
      if (detail::is_missing_token(f)) throw DataError(where + ": missing value");
      double v = 0.0;
      const char* first = f.data();
      if (*first == '+') ++first;
      const auto [ptr, ec] = std::from_chars(first, f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw DataError(where + ": cannot parse '" + std::string(f) + "' as a number");
      }
      if (!std::isfinite(v)) throw DataError(where + ": non-finite value");
      cells.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(source + ": no data rows");
  t.values.resize(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      t.values(static_cast<Index>(r), static_cast<Index>(c)) = cells[r * cols + c];
    }
  }
  return t;
}

inline Table read_table_file(const std::filesystem::path& path, char delim = ',') {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file " + path.string());
  return read_table(in, delim, path.filename().string());
}

// ---------------------------------------------------------------------------
// Dictionary b(X)

enum class Expansion { none, squares, polynomial };

inline const char* to_string(Expansion e) {
  switch (e) {
    case Expansion::none: return "none";
    case Expansion::squares: return "squares";
    case Expansion::polynomial: return "polynomial";
  }
  return "none";
}

struct Dictionary {
  std::vector<std::string> names;
  Eigen::MatrixXd x;
};

inline constexpr Index kMaxDictionaryColumns = 50000;

namespace detail {

inline bool is_binary(const Eigen::VectorXd& v) {
  return (v.array() == 0.0 || v.array() == 1.0).all();
}

}  // namespace detail

/// Base columns first (in the given order), then higher-order terms:
/// squares adds x_j^2; polynomial adds every monomial of degree 2..degree.
/// Powers of 0/1 columns equal the column itself and are skipped.
inline Dictionary expand_dictionary(const Eigen::MatrixXd& base, const std::vector<std::string>& names,
                                    Expansion kind, int degree) {
  const Index p = base.cols();
  const Index n = base.rows();
  std::vector<bool> binary(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) binary[static_cast<std::size_t>(j)] = detail::is_binary(base.col(j));

  std::vector<std::vector<Index>> terms;
  for (Index j = 0; j < p; ++j) terms.push_back({j});
  const int max_deg = kind == Expansion::none ? 1 : (kind == Expansion::squares ? 2 : degree);
  if (kind == Expansion::squares) {
    for (Index j = 0; j < p; ++j) {
      if (!binary[static_cast<std::size_t>(j)]) terms.push_back({j, j});
    }
  } else if (kind == Expansion::polynomial) {
    // nondecreasing index tuples
    std::vector<std::vector<Index>> frontier;
    for (Index j = 0; j < p; ++j) frontier.push_back({j});
    for (int deg = 2; deg <= max_deg; ++deg) {
      std::vector<std::vector<Index>> next;
      for (const auto& t : frontier) {
        for (Index j = t.back(); j < p; ++j) {
          if (j == t.back() && binary[static_cast<std::size_t>(j)]) continue;
          auto u = t;
          u.push_back(j);
          next.push_back(std::move(u));
          if (static_cast<Index>(terms.size() + next.size()) > kMaxDictionaryColumns) {
            throw ConfigError("dictionary expansion exceeds " + std::to_string(kMaxDictionaryColumns) +
                              " columns; lower the degree or the number of covariates");
          }
        }
      }
      for (const auto& t : next) terms.push_back(t);
      frontier = std::move(next);
    }
  }

  Dictionary out;
  out.x.resize(n, static_cast<Index>(terms.size()));
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto& t = terms[k];
    Eigen::VectorXd col = base.col(t[0]);
    for (std::size_t m = 1; m < t.size(); ++m) col.array() *= base.col(t[m]).array();
    out.x.col(static_cast<Index>(k)) = col;
    // name: a, a^2, a*b, a^2*b ...
    std::string name;
    for (std::size_t m = 0; m < t.size();) {
      std::size_t run = 1;
      while (m + run < t.size() && t[m + run] == t[m]) ++run;
      if (!name.empty()) name += "*";
      name += names[static_cast<std::size_t>(t[m])];
      if (run > 1) name += "^" + std::to_string(run);
      m += run;
    }
    out.names.push_back(std::move(name));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config

struct EstimateConfig {
  std::filesystem::path input;
  char delimiter = ',';
  std::string outcome;
  std::string treatment;
  std::vector<std::string> conditioning;
  std::vector<std::string> covariates;  // empty: all remaining columns
  Expansion expansion = Expansion::none;
  int degree = 1;
  Method method = Method::cross_fit;
  int K = 4;
  Index B = 1000;
  std::vector<double> alphas{0.01, 0.05, 0.10};
  std::vector<double> bandwidth;  // empty: rule of thumb
  std::optional<GridSpec> grid;   // d = 1 only; otherwise percentile default
  Index grid_points = 0;          // default-grid points per coordinate (0: default)
  std::uint64_t seed = 1;
  EstimatorOptions estimator;
  unsigned threads = 1;
  std::filesystem::path output;

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (input.empty()) out.emplace_back("input: required");
    if (outcome.empty()) out.emplace_back("outcome: required");
    if (treatment.empty()) out.emplace_back("treatment: required");
    if (conditioning.empty() || conditioning.size() > 3) {
      out.emplace_back("conditioning: between 1 and 3 column names required");
    }
    if (!outcome.empty() && outcome == treatment) out.emplace_back("outcome and treatment must differ");
    for (const auto& c : conditioning) {
      if (c == outcome || c == treatment) out.emplace_back("conditioning column '" + c + "' is the outcome or treatment");
    }
    if (expansion == Expansion::polynomial && (degree < 2 || degree > 3)) {
      out.emplace_back("dictionary.degree must be 2 or 3 for polynomial expansion");
    }
    if (method == Method::cross_fit && K < 2) out.emplace_back("K must be >= 2 for cross_fit");
    if (B < 1) out.emplace_back("B must be >= 1");
    if (alphas.empty()) out.emplace_back("alphas must not be empty");
    for (double a : alphas) {
      if (!(a > 0.0 && a < 1.0)) out.emplace_back("alpha " + std::to_string(a) + " not in (0, 1)");
    }
    if (!bandwidth.empty()) {
      if (bandwidth.size() != conditioning.size()) {
        out.emplace_back("bandwidth must have one entry per conditioning column");
      }
      for (double h : bandwidth) {
        if (!(h > 0.0) || !std::isfinite(h)) out.emplace_back("bandwidth entries must be positive");
      }
    }
    if (grid) {
      if (conditioning.size() != 1) out.emplace_back("grid bounds are supported for one conditioning column only");
      if (!(grid->lower <= grid->upper)) out.emplace_back("grid.lower must be <= grid.upper");
      if (grid->points < 1) out.emplace_back("grid.points must be >= 1");
    }
    if (grid_points < 0) out.emplace_back("grid.points must be >= 1");
    const auto& nz = estimator.nuisance;
    if (!(nz.trim_eps > 0.0 && nz.trim_eps < 0.5)) out.emplace_back("trim_eps must lie in (0, 0.5)");
    if (!(nz.penalty_c > 0.0)) out.emplace_back("penalty_c must be > 0");
    return out;
  }
};

/// Relative input/output paths resolve against `base_dir` (the config file's
/// directory).
inline EstimateConfig estimate_config_from_json(const nlohmann::json& j,
                                                const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw ConfigError("estimate config must be a JSON object");
  std::vector<std::string> problems;
  EstimateConfig c;
  detail::FieldReader top(j, "", problems);
  top.reject_unknown({"input", "delimiter", "outcome", "treatment", "conditioning", "covariates",
                      "dictionary", "method", "K", "B", "alphas", "bandwidth", "grid", "seed",
                      "second_stage", "post_lasso", "penalty_c", "trim_eps", "threads", "output",
                      "format_version"});
  std::string input, output, delim = ",";
  top.get("input", input);
  top.get("output", output);
  top.get("delimiter", delim);
  if (delim == "\\t" || delim == "tab") delim = "\t";
  if (delim.size() != 1) {
    problems.emplace_back("delimiter: must be a single character");
  } else {
    c.delimiter = delim[0];
  }
  top.get("outcome", c.outcome);
  top.get("treatment", c.treatment);
  if (j.contains("conditioning") && j.at("conditioning").is_string()) {
    c.conditioning = {j.at("conditioning").get<std::string>()};
  } else {
    top.get("conditioning", c.conditioning);
  }
  if (j.contains("covariates") && j.at("covariates").is_string()) {
    if (j.at("covariates").get<std::string>() != "all") {
      problems.emplace_back("covariates: expected \"all\" or a list of column names");
    }
  } else {
    top.get("covariates", c.covariates);
  }
  if (j.contains("dictionary")) {
    const auto& d = j.at("dictionary");
    if (d.is_string()) {
      detail::FieldReader dr(j, "", problems);
      dr.get_enum("dictionary", c.expansion,
                  {{"none", Expansion::none}, {"squares", Expansion::squares},
                   {"polynomial", Expansion::polynomial}});
    } else if (d.is_object()) {
      detail::FieldReader dr(d, "dictionary.", problems);
      dr.reject_unknown({"expansion", "degree"});
      dr.get_enum("expansion", c.expansion,
                  {{"none", Expansion::none}, {"squares", Expansion::squares},
                   {"polynomial", Expansion::polynomial}});
      dr.get("degree", c.degree);
    } else {
      problems.emplace_back("dictionary: expected a string or an object");
    }
  }
  if (c.expansion == Expansion::squares) c.degree = 2;
  if (c.expansion == Expansion::polynomial && !(j.contains("dictionary") && j.at("dictionary").is_object() &&
                                                j.at("dictionary").contains("degree"))) {
    c.degree = 2;
  }
  top.get_enum("method", c.method,
               {{"full_sample", Method::full_sample}, {"cross_fit", Method::cross_fit}});
  top.get("K", c.K);
  top.get("B", c.B);
  top.get("alphas", c.alphas);
  if (j.contains("bandwidth") && j.at("bandwidth").is_number()) {
    c.bandwidth = {j.at("bandwidth").get<double>()};
  } else if (j.contains("bandwidth") && !j.at("bandwidth").is_null()) {
    top.get("bandwidth", c.bandwidth);
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    if (!g.is_object()) {
      problems.emplace_back("grid: expected an object");
    } else {
      detail::FieldReader gr(g, "grid.", problems);
      gr.reject_unknown({"lower", "upper", "points"});
      if (g.contains("lower") || g.contains("upper")) {
        if (!(g.contains("lower") && g.contains("upper"))) {
          problems.emplace_back("grid: lower and upper must be given together");
        }
        GridSpec spec;
        gr.get("lower", spec.lower);
        gr.get("upper", spec.upper);
        gr.get("points", spec.points);
        c.grid = spec;
      } else {
        gr.get("points", c.grid_points);
        if (c.grid_points == 0) problems.emplace_back("grid.points must be >= 1");
      }
    }
  }
  top.get("seed", c.seed);
  top.get_enum("second_stage", c.estimator.second_stage,
               {{"local_linear", SecondStage::local_linear},
                {"local_constant", SecondStage::local_constant}});
  top.get("post_lasso", c.estimator.nuisance.post_lasso);
  top.get("penalty_c", c.estimator.nuisance.penalty_c);
  top.get("trim_eps", c.estimator.nuisance.trim_eps);
  top.get("threads", c.threads);

  auto resolve = [&](const std::string& s) -> std::filesystem::path {
    if (s.empty()) return {};
    std::filesystem::path p(s);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  c.input = resolve(input);
  c.output = resolve(output);

  for (auto& p : c.problems()) problems.push_back(std::move(p));
  if (!problems.empty()) {
    std::string msg = "invalid estimate config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
  return c;
}

inline EstimateConfig load_estimate_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return estimate_config_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Assembling the sample

struct PreparedData {
  Sample sample;
  std::vector<std::string> x_names;  // dictionary column names
};

inline PreparedData prepare_sample(const Table& t, const EstimateConfig& c) {
  auto need = [&](const std::string& name, const char* role) {
    const Index j = t.column(name);
    if (j < 0) throw DataError(std::string(role) + " column '" + name + "' not found in input");
    return j;
  };
  const Index jy = need(c.outcome, "outcome");
  const Index jd = need(c.treatment, "treatment");
  std::vector<Index> cond;
  for (const auto& name : c.conditioning) cond.push_back(need(name, "conditioning"));

  std::vector<Index> cov;
  if (c.covariates.empty()) {
    for (Index j = 0; j < static_cast<Index>(t.names.size()); ++j) {
      if (j != jy && j != jd) cov.push_back(j);
    }
  } else {
    for (const auto& name : c.covariates) {
      const Index j = need(name, "covariate");
      if (j == jy || j == jd) throw DataError("covariate '" + name + "' is the outcome or treatment");
      cov.push_back(j);
    }
  }
  // conditioning coordinates are always covariates too
  for (Index j : cond) {
    if (std::find(cov.begin(), cov.end(), j) == cov.end()) cov.push_back(j);
  }

  const Eigen::VectorXd d = t.values.col(jd);
  for (Index i = 0; i < d.size(); ++i) {
    if (d[i] != 0.0 && d[i] != 1.0) {
      throw DataError("treatment column '" + c.treatment + "' must be 0/1; data row " +
                      std::to_string(i + 1) + " has " + std::to_string(d[i]));
    }
  }
  for (std::size_t k = 0; k < cond.size(); ++k) {
    const Eigen::VectorXd v = t.values.col(cond[k]);
    if (!((v.array() - v.mean()).abs().maxCoeff() > 0.0)) {
      throw DataError("conditioning column '" + c.conditioning[k] + "' is constant");
    }
  }

  Eigen::MatrixXd base(t.values.rows(), static_cast<Index>(cov.size()));
  std::vector<std::string> names;
  for (std::size_t k = 0; k < cov.size(); ++k) {
    base.col(static_cast<Index>(k)) = t.values.col(cov[k]);
    names.push_back(t.names[static_cast<std::size_t>(cov[k])]);
  }
  Dictionary dict = expand_dictionary(base, names, c.expansion, c.degree);

  PreparedData out;
  out.sample.y = t.values.col(jy);
  out.sample.d = d;
  out.sample.x = std::move(dict.x);
  for (const auto& name : c.conditioning) {
    const auto it = std::find(dict.names.begin(), dict.names.end(), name);
    out.sample.x1_cols.push_back(static_cast<Index>(it - dict.names.begin()));
  }
  out.x_names = std::move(dict.names);
  out.sample.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Running and writing

struct EstimateResult {
  CateCurve curve;
  BootstrapDraws draws;
  std::vector<ConfidenceBand> uniform;    // two-sided, per alpha
  std::vector<ConfidenceBand> pointwise;  // two-sided, per alpha
  std::vector<double> one_sided_critical;
  std::vector<std::string> x_names;
};

inline EstimateResult estimate(const PreparedData& data, const EstimateConfig& c) {
  const Sample& s = data.sample;
  const Eigen::MatrixXd x1 = s.x1();
  Eigen::VectorXd h;
  if (c.bandwidth.empty()) {
    h = rot_bandwidth(x1);
  } else {
    h = Eigen::Map<const Eigen::VectorXd>(c.bandwidth.data(), static_cast<Index>(c.bandwidth.size()));
  }
  const EvalGrid grid = c.grid ? EvalGrid::uniform(c.grid->lower, c.grid->upper, c.grid->points)
                               : EvalGrid::default_for(x1, c.grid_points);
  EstimatorOptions opts = c.estimator;
  opts.threads = c.threads;

  EstimateResult r;
  r.x_names = data.x_names;
  r.curve = c.method == Method::full_sample ? cate_full_sample(s, grid, h, opts)
                                            : cate_cross_fit(s, c.K, grid, h, c.seed, opts);
  BootstrapOptions bopts;
  bopts.threads = c.threads;
  r.draws = bootstrap_curves(s, r.curve, c.B, c.seed, bopts);
  for (double a : c.alphas) {
    r.uniform.push_back(uniform_band(r.curve, r.draws, a, Side::two));
    r.pointwise.push_back(pointwise_band(r.curve, a, Side::two));
    r.one_sided_critical.push_back(critical_value(r.draws.sup_one_sided, a));
  }
  return r;
}

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string alpha_tag(double a) { return fmt(a); }

inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline nlohmann::json names_of(const std::vector<Index>& idx, const std::vector<std::string>& names) {
  nlohmann::json out = nlohmann::json::array();
  for (Index j : idx) out.push_back(names[static_cast<std::size_t>(j)]);
  return out;
}

}  // namespace detail

// Preferred alpha for the single pointwise band in the flat table.
inline std::size_t pointwise_table_alpha(const std::vector<double>& alphas) {
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    if (std::abs(alphas[k] - 0.05) < 1e-12) return k;
  }
  return 0;
}

inline nlohmann::json result_json(const EstimateResult& r, const EstimateConfig& c) {
  const CateCurve& cv = r.curve;
  const Index d = cv.grid.dimension();
  nlohmann::json grid = nlohmann::json::array();
  for (Index g = 0; g < cv.grid.size(); ++g) {
    if (d == 1) {
      grid.push_back(cv.grid.points(g, 0));
    } else {
      grid.push_back(detail::vec_json(cv.grid.points.row(g).transpose()));
    }
  }
  nlohmann::json slope = nlohmann::json::array();
  for (Index g = 0; g < cv.grid.size(); ++g) {
    if (d == 1) {
      slope.push_back(cv.slope(g, 0));
    } else {
      slope.push_back(detail::vec_json(cv.slope.row(g).transpose()));
    }
  }
  Eigen::VectorXd se(cv.grid.size());
  for (Index g = 0; g < cv.grid.size(); ++g) se[g] = cv.standard_error(g);

  nlohmann::json uniform = nlohmann::json::array();
  nlohmann::json pointwise = nlohmann::json::array();
  for (std::size_t k = 0; k < c.alphas.size(); ++k) {
    uniform.push_back({{"alpha", c.alphas[k]},
                       {"critical_value", r.uniform[k].critical_value},
                       {"critical_value_one_sided", r.one_sided_critical[k]},
                       {"lower", detail::vec_json(r.uniform[k].lower)},
                       {"upper", detail::vec_json(r.uniform[k].upper)}});
    pointwise.push_back({{"alpha", c.alphas[k]},
                         {"critical_value", r.pointwise[k].critical_value},
                         {"lower", detail::vec_json(r.pointwise[k].lower)},
                         {"upper", detail::vec_json(r.pointwise[k].upper)}});
  }

  nlohmann::json folds = nlohmann::json::array();
  std::set<std::string> union_names;
  for (std::size_t k = 0; k < cv.folds.size(); ++k) {
    const NuisanceFit& f = *cv.folds[k].fit;
    folds.push_back({{"fold", static_cast<int>(k) + 1},
                     {"train_rows", f.train_indices.size()},
                     {"mu0", detail::names_of(f.fit_mu0.support, r.x_names)},
                     {"mu1", detail::names_of(f.fit_mu1.support, r.x_names)},
                     {"pi", detail::names_of(f.fit_pi.support, r.x_names)},
                     {"pi_separation", f.fit_pi.separation}});
    for (const auto* fit : {&f.fit_mu0, &f.fit_mu1, &f.fit_pi}) {
      for (Index j : fit->support) union_names.insert(r.x_names[static_cast<std::size_t>(j)]);
    }
  }
  std::vector<std::string> union_sorted;
  for (std::size_t j = 0; j < r.x_names.size(); ++j) {
    if (union_names.count(r.x_names[j])) union_sorted.push_back(r.x_names[j]);
  }
  std::vector<int> degenerate(cv.degenerate.begin(), cv.degenerate.end());

  return nlohmann::json{
      {"format_version", kFormatVersion},
      {"kind", "estimate"},
      {"metadata",
       {{"input", c.input.filename().string()},
        {"n", cv.n},
        {"dictionary_size", r.x_names.size()},
        {"dictionary", to_string(c.expansion)},
        {"degree", c.degree},
        {"conditioning", c.conditioning},
        {"method", to_string(cv.method)},
        {"K", cv.K},
        {"B", r.draws.B},
        {"seed", c.seed},
        {"second_stage", to_string(cv.second_stage)},
        {"post_lasso", c.estimator.nuisance.post_lasso},
        {"penalty_c", c.estimator.nuisance.penalty_c},
        {"trim_eps", c.estimator.nuisance.trim_eps},
        {"bandwidth", detail::vec_json(cv.h)},
        {"bandwidth_rule", c.bandwidth.empty() ? "rule_of_thumb" : "override"},
        {"multiplier_law", "normal(1,1)"}}},
      {"selected_variables", {{"per_fold", folds}, {"union", union_sorted}}},
      {"grid", grid},
      {"tau", detail::vec_json(cv.tau)},
      {"slope", slope},
      {"sigma", detail::vec_json(cv.sigma)},
      {"standard_error", detail::vec_json(se)},
      {"degenerate", degenerate},
      {"pointwise_bands", pointwise},
      {"uniform_bands", uniform}};
}

inline std::string curve_csv(const EstimateResult& r, const EstimateConfig& c) {
  const CateCurve& cv = r.curve;
  const Index d = cv.grid.dimension();
  const std::size_t pw = pointwise_table_alpha(c.alphas);
  std::ostringstream os;
  os << "# format_version=" << kFormatVersion << " pointwise_alpha=" << detail::fmt(c.alphas[pw])
     << "\n";
  auto suffixed = [&](const char* base, Index j) {
    return d == 1 ? std::string(base) : std::string(base) + "_" + std::to_string(j + 1);
  };
  for (Index j = 0; j < d; ++j) os << (j ? "," : "") << suffixed("x1", j);
  os << ",tau";
  for (Index j = 0; j < d; ++j) os << "," << suffixed("slope", j);
  os << ",sigma,pw_lo,pw_hi";
  for (double a : c.alphas) {
    os << ",unif_lo_" << detail::alpha_tag(a) << ",unif_hi_" << detail::alpha_tag(a);
  }
  os << "\n";
  for (Index g = 0; g < cv.grid.size(); ++g) {
    for (Index j = 0; j < d; ++j) os << (j ? "," : "") << detail::fmt(cv.grid.points(g, j));
    os << "," << detail::fmt(cv.tau[g]);
    for (Index j = 0; j < d; ++j) os << "," << detail::fmt(cv.slope(g, j));
    os << "," << detail::fmt(cv.sigma[g]) << "," << detail::fmt(r.pointwise[pw].lower[g]) << ","
       << detail::fmt(r.pointwise[pw].upper[g]);
    for (const auto& band : r.uniform) {
      os << "," << detail::fmt(band.lower[g]) << "," << detail::fmt(band.upper[g]);
    }
    os << "\n";
  }
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << text;
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Full estimate pipeline: read, expand, estimate, bootstrap, write
/// result.json and curve.csv into `out_dir`.
inline EstimateResult run_estimate(const EstimateConfig& c, const std::filesystem::path& out_dir) {
  const Table t = read_table_file(c.input, c.delimiter);
  const PreparedData data = prepare_sample(t, c);
  EstimateResult r = estimate(data, c);
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir / "result.json", result_json(r, c).dump(2) + "\n");
  write_text_file(out_dir / "curve.csv", curve_csv(r, c));
  return r;
}

}  // namespace hdcate
