#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hdcate/dgp.hpp"
#include "hdcate/error.hpp"
#include "hdcate/estimator.hpp"
#include "hdcate/inference.hpp"
#include "hdcate/local_regression.hpp"
#include "hdcate/parallel.hpp"
#include "hdcate/rng.hpp"

namespace hdcate {

inline constexpr int kFormatVersion = 1;

struct GridSpec {
  double lower = -1.0;
  double upper = 1.0;
  Index points = 201;
};

struct McConfig {
  DgpSpec dgp;
  Index replications = 100;
  Method method = Method::cross_fit;
  int K = 4;
  Index B = 500;
  std::vector<double> alphas{0.01, 0.05, 0.10};
  GridSpec grid;
  std::vector<double> eval_points{-1.0, -0.5, 0.0, 0.5, 1.0};
  std::uint64_t root_seed = 1;
  EstimatorOptions estimator;
  unsigned threads = 0;  // replications in flight; 0 = hardware concurrency

  // Every problem found, not just the first.
  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    try {
      dgp.validate();
    } catch (const ConfigError& e) {
      out.emplace_back(e.what());
    }
    if (replications < 1) out.emplace_back("replications must be >= 1");
    if (B < 1) out.emplace_back("B must be >= 1");
    if (method == Method::cross_fit && K < 2) out.emplace_back("K must be >= 2 for cross_fit");
    if (method == Method::cross_fit && dgp.n < 2 * static_cast<Index>(K)) {
      out.emplace_back("n must be >= 2K for cross_fit");
    }
    if (alphas.empty()) out.emplace_back("alphas must not be empty");
    for (double a : alphas) {
      if (!(a > 0.0 && a < 1.0)) out.emplace_back("alpha " + std::to_string(a) + " not in (0, 1)");
    }
    if (!(grid.lower <= grid.upper)) out.emplace_back("grid.lower must be <= grid.upper");
    if (grid.points < 1) out.emplace_back("grid.points must be >= 1");
    if (eval_points.empty()) out.emplace_back("eval_points must not be empty");
    const auto& nz = estimator.nuisance;
    if (!(nz.trim_eps > 0.0 && nz.trim_eps < 0.5)) out.emplace_back("trim_eps must lie in (0, 0.5)");
    if (!(nz.penalty_c > 0.0)) out.emplace_back("penalty_c must be > 0");
    return out;
  }

  void validate() const {
    const auto list = problems();
    if (list.empty()) return;
    std::string msg = "invalid simulation config:";
    for (const auto& p : list) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
};

struct ReplicationRecord {
  Index rep = 0;
  bool ok = false;
  int attempts = 0;
  std::string error;
  double bandwidth = 0.0;
  std::vector<double> critical;        // two-sided uniform critical value per alpha
  std::vector<std::uint8_t> covered;   // truth inside the two-sided uniform band, per alpha
  std::vector<double> tau_eval;
  std::vector<double> sigma_eval;
  std::vector<double> se_eval;         // sigma / sqrt(N h^d)
  std::vector<double> truth_eval;
};

struct AlphaSummary {
  double alpha = 0.0;
  double emp = 0.0;
  double mcri = 0.0;
  double sdcri = 0.0;
  double min_cri = 0.0;
};

struct PointSummary {
  double x = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double ase = 0.0;
  double rmse = 0.0;
};

struct McReport {
  std::vector<AlphaSummary> per_alpha;
  std::vector<PointSummary> per_point;
  Index successful = 0;
  Index failed = 0;
  double wall_seconds = 0.0;
};

/// Seeds of one attempt of one replication. Each purpose gets its own
/// value so data, folds and bootstrap never share a stream.
struct ReplicationSeeds {
  std::uint64_t data;
  std::uint64_t folds;
  std::uint64_t bootstrap;
};

inline ReplicationSeeds replication_seeds(std::uint64_t root_seed, Index rep, int attempt) {
  RngStream s(root_seed, StreamTag::replication, static_cast<std::uint64_t>(rep),
              static_cast<std::uint64_t>(attempt));
  ReplicationSeeds out{};
  out.data = s.next_seed();
  out.folds = s.next_seed();
  out.bootstrap = s.next_seed();
  return out;
}

/// True when truth(x) lies in tau -+ c * se at every usable grid point.
inline bool band_covers(const CateCurve& curve, const TrueCate& truth, double c) {
  for (Index g = 0; g < curve.grid.size(); ++g) {
    if (curve.degenerate[static_cast<std::size_t>(g)]) continue;
    const double dev = std::abs(curve.tau[g] - truth(curve.grid.points(g, 0)));
    if (std::isinf(c)) continue;
    if (!(dev <= c * curve.standard_error(g))) return false;
  }
  return true;
}

inline constexpr int kMaxRetries = 3;

inline ReplicationRecord run_replication(const McConfig& config, Index rep) {
  ReplicationRecord rec;
  rec.rep = rep;
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    rec.attempts = attempt + 1;
    const ReplicationSeeds seeds = replication_seeds(config.root_seed, rep, attempt);
    DgpSpec spec = config.dgp;
    spec.seed = seeds.data;
    try {
      const GeneratedSample gen = generate(spec);
      const Sample& sample = gen.sample;
      const Eigen::VectorXd h = rot_bandwidth(sample.x1());
      const EvalGrid grid = EvalGrid::uniform(config.grid.lower, config.grid.upper, config.grid.points);
      const CateCurve curve =
          config.method == Method::full_sample
              ? cate_full_sample(sample, grid, h, config.estimator)
              : cate_cross_fit(sample, config.K, grid, h, seeds.folds, config.estimator);
      const BootstrapDraws draws = bootstrap_curves(sample, curve, config.B, seeds.bootstrap);

      rec.bandwidth = h[0];
      rec.critical.clear();
      rec.covered.clear();
      for (double alpha : config.alphas) {
        const double c = critical_value(draws.sup_two_sided, alpha);
        rec.critical.push_back(c);
        rec.covered.push_back(band_covers(curve, gen.true_cate, c) ? 1 : 0);
      }

      Eigen::MatrixXd pts(static_cast<Index>(config.eval_points.size()), 1);
      for (std::size_t k = 0; k < config.eval_points.size(); ++k) {
        pts(static_cast<Index>(k), 0) = config.eval_points[k];
      }
      const CateCurve at = reevaluate(curve, sample, EvalGrid::from_points(pts));
      rec.tau_eval.assign(at.tau.data(), at.tau.data() + at.tau.size());
      rec.sigma_eval.assign(at.sigma.data(), at.sigma.data() + at.sigma.size());
      rec.se_eval.clear();
      rec.truth_eval.clear();
      for (Index g = 0; g < at.grid.size(); ++g) {
        rec.se_eval.push_back(at.standard_error(g));
        rec.truth_eval.push_back(gen.true_cate(pts(g, 0)));
      }
      rec.ok = true;
      rec.error.clear();
      return rec;
    } catch (const ArmError& e) {
      rec.error = e.what();
    } catch (const NumericalError& e) {
      rec.error = e.what();
      break;
    }
  }
  rec.ok = false;
  return rec;
}

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Population standard deviation (1/R), so RMSE^2 = BIAS^2 + SD^2.
inline double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace detail

/// EMP / Mcri / Sdcri per alpha and BIAS / SD / ASE / RMSE per evaluation
/// point over the successful records. Records are sorted by index first so
/// the result does not depend on completion order.
inline McReport aggregate(std::vector<ReplicationRecord> records,
                          const std::vector<double>& alphas,
                          const std::vector<double>& eval_points) {
  std::sort(records.begin(), records.end(),
            [](const ReplicationRecord& a, const ReplicationRecord& b) { return a.rep < b.rep; });
  McReport report;
  std::vector<const ReplicationRecord*> ok;
  for (const auto& r : records) {
    if (r.ok) {
      ok.push_back(&r);
    } else {
      ++report.failed;
    }
  }
  report.successful = static_cast<Index>(ok.size());
  if (ok.empty()) throw NumericalError("aggregate: no successful replications");

  for (std::size_t a = 0; a < alphas.size(); ++a) {
    std::vector<double> crit;
    double covered = 0.0;
    for (const auto* r : ok) {
      crit.push_back(r->critical.at(a));
      covered += r->covered.at(a);
    }
    AlphaSummary s;
    s.alpha = alphas[a];
    s.emp = covered / static_cast<double>(ok.size());
    s.mcri = detail::mean_of(crit);
    s.sdcri = detail::sd_of(crit);
    s.min_cri = *std::min_element(crit.begin(), crit.end());
    report.per_alpha.push_back(s);
  }
  for (std::size_t k = 0; k < eval_points.size(); ++k) {
    std::vector<double> tau, err, se;
    for (const auto* r : ok) {
      tau.push_back(r->tau_eval.at(k));
      err.push_back(r->tau_eval.at(k) - r->truth_eval.at(k));
      se.push_back(r->se_eval.at(k));
    }
    PointSummary s;
    s.x = eval_points[k];
    s.bias = detail::mean_of(err);
    s.sd = detail::sd_of(tau);
    s.ase = detail::mean_of(se);
    double sq = 0.0;
    for (double e : err) sq += e * e;
    s.rmse = std::sqrt(sq / static_cast<double>(err.size()));
    report.per_point.push_back(s);
  }
  return report;
}

inline McReport aggregate(const std::vector<ReplicationRecord>& records, const McConfig& config) {
  return aggregate(records, config.alphas, config.eval_points);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const DgpSpec& d) {
  nlohmann::json j{{"design", to_string(d.design)}, {"n", d.n}, {"p", d.p}};
  if (d.design == Design::approx_sparse) j["r2"] = d.r2;
  return j;
}

inline nlohmann::json to_json(const McConfig& c) {
  return nlohmann::json{
      {"dgp", to_json(c.dgp)},
      {"replications", c.replications},
      {"method", to_string(c.method)},
      {"K", c.K},
      {"B", c.B},
      {"alphas", c.alphas},
      {"grid", {{"lower", c.grid.lower}, {"upper", c.grid.upper}, {"points", c.grid.points}}},
      {"eval_points", c.eval_points},
      {"seed", c.root_seed},
      {"second_stage", to_string(c.estimator.second_stage)},
      {"post_lasso", c.estimator.nuisance.post_lasso},
      {"penalty_c", c.estimator.nuisance.penalty_c},
      {"trim_eps", c.estimator.nuisance.trim_eps},
  };
}

namespace detail {

// Reads optional fields, collecting every type or value problem.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string prefix, std::vector<std::string>& problems)
      : j_(j), prefix_(std::move(prefix)), problems_(problems) {}

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      problems_.push_back(prefix_ + key + ": wrong type");
    }
  }

  template <class E>
  void get_enum(const char* key, E& out, std::initializer_list<std::pair<const char*, E>> values) {
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_string()) {
      problems_.push_back(prefix_ + key + ": expected a string");
      return;
    }
    const auto s = j_.at(key).get<std::string>();
    for (const auto& [name, v] : values) {
      if (s == name) {
        out = v;
        return;
      }
    }
    problems_.push_back(prefix_ + key + ": unknown value '" + s + "'");
  }

  void reject_unknown(std::initializer_list<const char*> known) {
    for (const auto& [k, v] : j_.items()) {
      if (std::find_if(known.begin(), known.end(), [&](const char* x) { return k == x; }) ==
          known.end()) {
        problems_.push_back(prefix_ + k + ": unknown key");
      }
    }
  }

 private:
  const nlohmann::json& j_;
  std::string prefix_;
  std::vector<std::string>& problems_;
};

}  // namespace detail

/// Parse a simulation config; every problem (type errors, unknown keys,
/// invalid values) is reported together in one ConfigError.
inline McConfig mc_config_from_json(const nlohmann::json& j) {
  std::vector<std::string> problems;
  McConfig c;
  if (!j.is_object()) throw ConfigError("simulation config must be a JSON object");
  detail::FieldReader top(j, "", problems);
  top.reject_unknown({"dgp", "replications", "method", "K", "B", "alphas", "grid", "eval_points",
                      "seed", "second_stage", "post_lasso", "penalty_c", "trim_eps", "threads",
                      "format_version"});
  if (j.contains("dgp") && j.at("dgp").is_object()) {
    detail::FieldReader d(j.at("dgp"), "dgp.", problems);
    d.reject_unknown({"design", "n", "p", "r2"});
    d.get_enum("design", c.dgp.design,
               {{"strict_sparse", Design::strict_sparse}, {"approx_sparse", Design::approx_sparse}});
    d.get("n", c.dgp.n);
    d.get("p", c.dgp.p);
    d.get("r2", c.dgp.r2);
  } else {
    problems.emplace_back("dgp: required object missing");
  }
  top.get("replications", c.replications);
  top.get_enum("method", c.method,
               {{"full_sample", Method::full_sample}, {"cross_fit", Method::cross_fit}});
  top.get("K", c.K);
  top.get("B", c.B);
  top.get("alphas", c.alphas);
  if (j.contains("grid") && j.at("grid").is_object()) {
    detail::FieldReader g(j.at("grid"), "grid.", problems);
    g.reject_unknown({"lower", "upper", "points"});
    g.get("lower", c.grid.lower);
    g.get("upper", c.grid.upper);
    g.get("points", c.grid.points);
  }
  top.get("eval_points", c.eval_points);
  top.get("seed", c.root_seed);
  top.get_enum("second_stage", c.estimator.second_stage,
               {{"local_linear", SecondStage::local_linear},
                {"local_constant", SecondStage::local_constant}});
  top.get("post_lasso", c.estimator.nuisance.post_lasso);
  top.get("penalty_c", c.estimator.nuisance.penalty_c);
  top.get("trim_eps", c.estimator.nuisance.trim_eps);
  top.get("threads", c.threads);
  for (auto& p : c.problems()) problems.push_back(std::move(p));
  if (!problems.empty()) {
    std::string msg = "invalid simulation config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
  return c;
}

inline nlohmann::json to_json(const ReplicationRecord& r) {
  return nlohmann::json{{"rep", r.rep},           {"ok", r.ok},
                        {"attempts", r.attempts}, {"error", r.error},
                        {"bandwidth", r.bandwidth}, {"critical", r.critical},
                        {"covered", r.covered},   {"tau_eval", r.tau_eval},
                        {"sigma_eval", r.sigma_eval}, {"se_eval", r.se_eval},
                        {"truth_eval", r.truth_eval}};
}

inline ReplicationRecord record_from_json(const nlohmann::json& j) {
  ReplicationRecord r;
  j.at("rep").get_to(r.rep);
  j.at("ok").get_to(r.ok);
  j.at("attempts").get_to(r.attempts);
  j.at("error").get_to(r.error);
  j.at("bandwidth").get_to(r.bandwidth);
  j.at("critical").get_to(r.critical);
  j.at("covered").get_to(r.covered);
  j.at("tau_eval").get_to(r.tau_eval);
  j.at("sigma_eval").get_to(r.sigma_eval);
  j.at("se_eval").get_to(r.se_eval);
  j.at("truth_eval").get_to(r.truth_eval);
  return r;
}

inline nlohmann::json to_json(const McReport& rep, const McConfig& config) {
  nlohmann::json alphas = nlohmann::json::array();
  for (const auto& a : rep.per_alpha) {
    alphas.push_back({{"alpha", a.alpha}, {"confidence", 1.0 - a.alpha}, {"EMP", a.emp},
                      {"Mcri", a.mcri}, {"Sdcri", a.sdcri}, {"min_cri", a.min_cri}});
  }
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : rep.per_point) {
    points.push_back(
        {{"x", p.x}, {"BIAS", p.bias}, {"SD", p.sd}, {"ASE", p.ase}, {"RMSE", p.rmse}});
  }
  return nlohmann::json{{"format_version", kFormatVersion},
                        {"coverage", alphas},
                        {"accuracy", points},
                        {"metadata",
                         {{"config", to_json(config)},
                          {"successful_replications", rep.successful},
                          {"failed_replications", rep.failed},
                          {"wall_seconds", rep.wall_seconds}}}};
}

/// Human-readable tables in the layout of the usual simulation summaries.
inline std::string format_report(const McReport& rep, const McConfig& config) {
  std::ostringstream os;
  os << "design=" << to_string(config.dgp.design) << " n=" << config.dgp.n << " p=" << config.dgp.p;
  if (config.dgp.design == Design::approx_sparse) os << " r2=" << config.dgp.r2;
  os << " method=" << to_string(config.method);
  if (config.method == Method::cross_fit) os << " K=" << config.K;
  os << " B=" << config.B << " replications=" << rep.successful << " (failed " << rep.failed
     << ")\n\n";
  os << std::fixed << std::setprecision(3);
  os << "conf.level      EMP     Mcri    Sdcri\n";
  for (const auto& a : rep.per_alpha) {
    os << std::setw(9) << 100.0 * (1.0 - a.alpha) << "%  " << std::setw(7) << a.emp << "  "
       << std::setw(7) << a.mcri << "  " << std::setw(7) << a.sdcri << "\n";
  }
  os << "\n       x     BIAS       SD      ASE     RMSE\n";
  for (const auto& p : rep.per_point) {
    os << std::setw(8) << p.x << " " << std::setw(8) << p.bias << " " << std::setw(8) << p.sd
       << " " << std::setw(8) << p.ase << " " << std::setw(8) << p.rmse << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Orchestration

struct McRunOptions {
  std::string checkpoint_path;  // empty: no checkpointing
  // Stop after this many newly computed replications (testing interruption);
  // negative means run to completion.
  Index stop_after = -1;
  std::function<void(Index done, Index total)> progress;
};

struct McRunResult {
  std::vector<ReplicationRecord> records;  // sorted by rep
  bool complete = false;
};

namespace detail {

inline void write_checkpoint(const std::string& path, const McConfig& config,
                             const std::vector<std::optional<ReplicationRecord>>& slots) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& s : slots) {
    if (s) recs.push_back(to_json(*s));
  }
  const nlohmann::json state{{"format_version", kFormatVersion},
                             {"config", to_json(config)},
                             {"records", recs}};
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write checkpoint file " + tmp);
    out << state.dump() << "\n";
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

/// Run (or resume) all replications. Replication r always uses the streams
/// derived from (root seed, r), so the records are identical whatever the
/// thread count and whether or not the run was resumed.
inline McRunResult run_experiment(const McConfig& config, const McRunOptions& opts = {}) {
  config.validate();
  const auto total = static_cast<std::size_t>(config.replications);
  std::vector<std::optional<ReplicationRecord>> slots(total);

  if (!opts.checkpoint_path.empty() && std::filesystem::exists(opts.checkpoint_path)) {
    std::ifstream in(opts.checkpoint_path);
    nlohmann::json state;
    try {
      in >> state;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("unreadable checkpoint " + opts.checkpoint_path + ": " + e.what());
    }
    if (state.value("config", nlohmann::json()) != to_json(config)) {
      throw ConfigError("checkpoint " + opts.checkpoint_path + " was written for a different config");
    }
    for (const auto& r : state.at("records")) {
      ReplicationRecord rec = record_from_json(r);
      if (rec.rep >= 0 && static_cast<std::size_t>(rec.rep) < total) {
        slots[static_cast<std::size_t>(rec.rep)] = std::move(rec);
      }
    }
  }

  std::vector<std::size_t> todo;
  for (std::size_t r = 0; r < total; ++r) {
    if (!slots[r]) todo.push_back(r);
  }
  if (opts.stop_after >= 0 && todo.size() > static_cast<std::size_t>(opts.stop_after)) {
    todo.resize(static_cast<std::size_t>(opts.stop_after));
  }

  const Index every = std::max<Index>(1, config.replications / 20);
  std::mutex mutex;
  Index done = static_cast<Index>(total - std::count(slots.begin(), slots.end(), std::nullopt));
  Index since_checkpoint = 0;

  parallel_for(todo.size(), config.threads, [&](std::size_t k) {
    const std::size_t r = todo[k];
    ReplicationRecord rec = run_replication(config, static_cast<Index>(r));
    std::lock_guard lock(mutex);
    slots[r] = std::move(rec);
    ++done;
    if (opts.progress) opts.progress(done, config.replications);
    if (!opts.checkpoint_path.empty() && ++since_checkpoint >= every) {
      since_checkpoint = 0;
      detail::write_checkpoint(opts.checkpoint_path, config, slots);
    }
  });
  if (!opts.checkpoint_path.empty()) detail::write_checkpoint(opts.checkpoint_path, config, slots);

  McRunResult result;
  result.complete = true;
  for (auto& s : slots) {
    if (s) {
      result.records.push_back(std::move(*s));
    } else {
      result.complete = false;
    }
  }
  return result;
}

/// Run to completion and aggregate.
inline McReport simulate(const McConfig& config, const McRunOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  const McRunResult run = run_experiment(config, opts);
  McReport report = aggregate(run.records, config);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace hdcate
