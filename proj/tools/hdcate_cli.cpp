// hdcate: CATE curve estimation and Monte Carlo experiments.
//
//   hdcate estimate --config est.json --output out/
//   hdcate simulate --config mc.json --output out/ --threads 0

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hdcate/hdcate.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string output;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--threads", c.threads, "worker threads (0 = all cores)");
  cmd->add_option("--output", c.output, "output directory");
}

int cmd_estimate(const Common& opt) {
  hdcate::EstimateConfig cfg = hdcate::load_estimate_config(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.threads) cfg.threads = *opt.threads;
  fs::path out = opt.output.empty() ? cfg.output : fs::path(opt.output);
  if (out.empty()) throw hdcate::ConfigError("no output directory (use --output or \"output\" in the config)");

  const hdcate::EstimateResult r = hdcate::run_estimate(cfg, out);
  std::size_t degenerate = 0;
  for (auto f : r.curve.degenerate) degenerate += f;
  std::cout << "n=" << r.curve.n << " dictionary=" << r.x_names.size()
            << " method=" << hdcate::to_string(r.curve.method) << " h=" << r.curve.h.transpose()
            << " grid=" << r.curve.grid.size() << " degenerate=" << degenerate << "\n";
  for (const auto& band : r.uniform) {
    std::cout << "  uniform " << 100.0 * (1.0 - band.alpha) << "%: C=" << band.critical_value << "\n";
  }
  std::cout << "wrote " << (out / "result.json").string() << ", " << (out / "curve.csv").string() << "\n";
  return kOk;
}

int cmd_simulate(const Common& opt, bool fresh, bool quiet) {
  std::ifstream in(opt.config);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw hdcate::ConfigError("config " + opt.config + " is not valid JSON: " + e.what());
  }
  hdcate::McConfig cfg = hdcate::mc_config_from_json(j);
  if (opt.seed) cfg.root_seed = *opt.seed;
  if (opt.threads) cfg.threads = *opt.threads;
  const fs::path out = opt.output.empty() ? fs::path("hdcate_simulate") : fs::path(opt.output);
  fs::create_directories(out);

  hdcate::McRunOptions run;
  run.checkpoint_path = (out / "checkpoint.json").string();
  if (fresh) fs::remove(run.checkpoint_path);
  if (!quiet) {
    run.progress = [](hdcate::Index done, hdcate::Index total) {
      std::cerr << "\r" << done << "/" << total << std::flush;
      if (done == total) std::cerr << "\n";
    };
  }
  const auto start = std::chrono::steady_clock::now();
  const hdcate::McRunResult res = hdcate::run_experiment(cfg, run);
  hdcate::McReport rep = hdcate::aggregate(res.records, cfg);
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  hdcate::write_text_file(out / "report.json", hdcate::to_json(rep, cfg).dump(2) + "\n");
  const std::string text = hdcate::format_report(rep, cfg);
  hdcate::write_text_file(out / "report.txt", text);
  std::cout << text;
  return res.complete ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hdcate - conditional average treatment effects with high-dimensional controls"};
  app.require_subcommand(1);

  Common est_opt, sim_opt;
  bool fresh = false, quiet = false;
  auto* est = app.add_subcommand("estimate", "estimate a CATE curve with uniform bands from a CSV file");
  add_common(est, est_opt);
  auto* sim = app.add_subcommand("simulate", "run a Monte Carlo experiment (resumes from checkpoint)");
  add_common(sim, sim_opt);
  sim->add_flag("--fresh", fresh, "ignore and overwrite an existing checkpoint");
  sim->add_flag("--quiet", quiet, "no progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (est->parsed()) return cmd_estimate(est_opt);
    return cmd_simulate(sim_opt, fresh, quiet);
  } catch (const hdcate::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const hdcate::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const hdcate::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  }
}
