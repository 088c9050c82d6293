// Command-line front end: pdemee --config run.json [--mode ...] [--out-dir ...]
#include <iostream>

#include <CLI11.hpp>

#include "pdemee/error.hpp"
#include "pdemee/io.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Per-decision EMEE fits, simulations and efficiency sweeps"};
  std::string config_path, mode, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> reps, threads;
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--mode", mode, "fit | simulate | sweep (overrides the config)");
  app.add_option("--out-dir", out_dir, "Output directory (overrides the config)");
  app.add_option("--seed", seed, "Base seed (overrides the config)");
  app.add_option("--reps", reps, "Replications (overrides the config)");
  app.add_option("--threads", threads, "OpenMP threads (overrides the config)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  pdemee::RunConfig config;
  try {
    config = pdemee::load_run_config(config_path);
    if (!mode.empty()) {
      nlohmann::json patch = {{"mode", mode}};
      config.mode = pdemee::parse_run_config(patch).mode;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    std::cout << nlohmann::json{{"status", "error"}, {"exit_code", 2}, {"error", e.what()}}.dump() << '\n';
    return 2;
  }
  if (!out_dir.empty()) config.out_dir = out_dir;
  if (seed) config.seed = *seed;
  if (reps) config.reps = *reps;
  if (threads) config.threads = *threads;
  return pdemee::run(config, std::cout, std::cerr);
}
