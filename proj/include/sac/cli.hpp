#pragma once

// Command-line driver: sac <command> [--config PATH] [--seed N] [--out DIR]
//                                   [--threads N] [--snapshot-stride N]
// Exit status: 0 success, 1 failed check or runtime failure, 2 usage/config error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sac/config.hpp"
#include "sac/experiments.hpp"
#include "sac/stepper.hpp"

#ifndef SAC_VERSION
#define SAC_VERSION "0.1.0"
#endif

namespace sac {

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"simulate", "uniform",    "cauchy", "dependence",
                                              "strong",   "derivative", "oracles"};
  return names;
}

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<int> snapshot_stride;
};

inline void apply_overrides(RunConfig& cfg, const CliOverrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output_directory = *o.out;
  if (o.threads) cfg.threads = *o.threads;
  if (o.snapshot_stride) cfg.snapshot_stride = *o.snapshot_stride;
  validate(cfg);
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string lambda_tag(double lam) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", lam);
  return buf;
}

/// Replicate 0 at every lambda level, with optional snapshots.
inline EstimateReport simulate_command(const RunConfig& rc, const EnsembleConfig& cfg,
                                       const std::filesystem::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  EstimateReport rep;
  rep.study = "simulate";
  rep.config_hash = cfg.config_hash;
  rep.seed = cfg.seed;
  rep.replicates = 1;
  const Field ones(cfg.grid, 1.0);
  for (double lam : cfg.lambda_levels) {
    const YosidaLevel level = cfg.level(lam);
    std::function<void(const TrajectoryState&)> on_state;
    std::filesystem::path snap_dir = out_dir / "snapshots";
    if (rc.snapshot_stride > 0) {
      std::filesystem::create_directories(snap_dir);
      on_state = [&](const TrajectoryState& s) {
        if (s.step_index % rc.snapshot_stride != 0) return;
        const std::string name = "lambda_" + lambda_tag(lam) + "_step_" + std::to_string(s.step_index) + ".acf";
        write_snapshot((snap_dir / name).string(), cfg.grid, s.u);
      };
    }
    SimulationResult res;
    try {
      res = simulate(cfg.u0, ConstantForcing{cfg.forcing}, level, cfg.noise, cfg.stepper, cfg.grid, cfg.potential,
                     cfg.seed, 0, on_state);
    } catch (const std::exception& e) {
      throw StudyError("study simulate, replicate 0, lambda " + lambda_tag(lam) + ", " + e.what());
    }
    const PathStats& s = res.stats;
    auto one = [&](const std::string& q, double v) { rep.rows.push_back(estimate(q, lam, {v})); };
    one("sup_h_sq", s.sup_h_sq);
    one("sup_grad_sq", s.sup_grad_sq);
    one("int_grad_sq", s.int_grad_sq);
    one("int_fprime_sq", s.int_fprime_sq);
    one("int_beta_sq", s.int_beta_sq);
    one("int_lap_sq", s.int_lap_sq);
    one("excursion_fraction", s.excursion_fraction());
    one("final_energy", energy(cfg.grid, cfg.potential, level, res.final_state.u));
    one("weak_residual_const", weak_residual_check(cfg.grid, res.final_state, ones));
    for (const GaugeSeries& gs : s.gauges) one("G_integral_n" + std::to_string(gs.order), gs.integral);
    const bool finite = std::isfinite(s.sup_h_sq) && std::isfinite(s.int_fprime_sq);
    rep.add_check("finite@" + lambda_tag(lam), finite, finite ? "ok" : "non-finite path statistics");
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace detail

/// Runs one command and writes <study>.csv, <study>_summary.json,
/// config.json and manifest.json into the output directory.
inline int run(const std::string& command, const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto& names = commands();
  if (std::find(names.begin(), names.end(), command) == names.end()) {
    err << "error: unknown command '" << command << "'\n";
    return 2;
  }
  EnsembleConfig cfg;
  try {
    cfg = to_ensemble(rc);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  }

  const std::filesystem::path dir(rc.output_directory);
  try {
    std::filesystem::create_directories(dir);
  } catch (const std::exception& e) {
    err << "error: cannot create output directory '" << dir.string() << "': " << e.what() << '\n';
    return 2;
  }

  std::vector<EstimateReport> reports;
  try {
    if (command == "simulate") {
      reports.push_back(detail::simulate_command(rc, cfg, dir));
    } else if (command == "uniform") {
      reports.push_back(uniform_bounds_study(cfg));
    } else if (command == "cauchy") {
      reports.push_back(cauchy_study(cfg));
    } else if (command == "strong") {
      reports.push_back(strong_solution_study(cfg));
    } else if (command == "dependence") {
      reports.push_back(dependence_study(cfg));
    } else if (command == "derivative") {
      reports.push_back(derivative_study(cfg));
    } else {
      reports.push_back(heat_and_ode_oracles(cfg));
    }
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  nlohmann::ordered_json manifest;
  manifest["command"] = command;
  manifest["config_hash"] = reports.front().hex_hash();
  manifest["seed"] = rc.seed;
  manifest["code_version"] = SAC_VERSION;
  manifest["threads"] = rc.threads;
  manifest["outputs"] = nlohmann::ordered_json::array();
  manifest["timings"] = nlohmann::ordered_json::object();
  try {
    detail::write_text(dir / "config.json", config_to_json(rc).dump(2) + "\n");
    for (const EstimateReport& rep : reports) {
      const std::string csv = rep.study + ".csv";
      const std::string summary = rep.study + "_summary.json";
      detail::write_text(dir / csv, rep.to_csv());
      detail::write_text(dir / summary, rep.summary().dump(2) + "\n");
      manifest["outputs"].push_back(csv);
      manifest["outputs"].push_back(summary);
      manifest["timings"][rep.study] = rep.wall_seconds;
    }
    detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  int status = 0;
  for (const EstimateReport& rep : reports) {
    out << rep.study << ": " << (rep.passed() ? "passed" : "FAILED") << " (" << rep.rows.size() << " rows, "
        << rep.checks.size() << " checks)\n";
    for (const std::string& f : rep.failures()) {
      err << "assertion failed: " << rep.study << " " << f << '\n';
      status = 1;
    }
  }
  return status;
}

/// Full argument handling; returns the process exit status.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Stochastic Allen-Cahn solver and estimate verification"};
  std::string command;
  std::string config_path;
  CliOverrides o;
  std::uint64_t seed = 0;
  std::string out_dir;
  int threads = 0;
  int stride = 0;
  app.add_option("command", command, "simulate | uniform | cauchy | dependence | strong | derivative | oracles")
      ->required();
  app.add_option("--config", config_path, "JSON configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "master seed");
  auto* out_opt = app.add_option("--out", out_dir, "output directory");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads (0 = all cores)");
  auto* stride_opt = app.add_option("--snapshot-stride", stride, "write a snapshot every N steps (simulate)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  }
  if (std::find(commands().begin(), commands().end(), command) == commands().end()) {
    err << "usage error: unknown command '" << command << "'\n" << app.help();
    return 2;
  }
  if (*seed_opt) o.seed = seed;
  if (*out_opt) o.out = out_dir;
  if (*threads_opt) o.threads = threads;
  if (*stride_opt) o.snapshot_stride = stride;

  RunConfig rc;
  try {
    rc = config_path.empty() ? RunConfig{} : parse_config(config_path);
    apply_overrides(rc, o);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  }
  return run(command, rc, out, err);
}

}  // namespace sac
