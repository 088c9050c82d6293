#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdemee/bench.hpp"

namespace pdemee {

enum class Transform { Identity, Center, DayIndex };

/// A covariate built from a CSV column. DayIndex ignores `column` and uses
/// decision_point - 1.
struct ColumnSpec {
  std::string column;
  Transform transform = Transform::Identity;
  std::string name;  // defaults to the column without its mod_/ctl_ prefix
};

struct IngestOptions {
  /// Empty: every mod_* (ctl_*) column as is. An intercept column named
  /// "intercept" is always prepended.
  std::vector<ColumnSpec> moderators;
  std::vector<ColumnSpec> controls;
};

struct IngestResult {
  MrtDataset dataset;
  std::vector<std::string> warnings;
};

/// Reads the long format: id, decision_point, available, treatment,
/// rand_prob, sub_outcome, then optional mod_* and ctl_* columns. Each id has
/// its decision rows followed by at least `delta` follow-up rows whose
/// available/treatment/rand_prob/covariate cells are empty or NA.
/// sub_outcome on row d is the event observed after decision point d.
IngestResult ingest_csv(const std::filesystem::path& path, int delta, const IngestOptions& options = {});
IngestResult ingest_csv(std::istream& in, int delta, const IngestOptions& options = {});

/// Canonical writer; re-ingesting the output with default options returns
/// the same dataset when both covariate sets start with the intercept.
void write_csv(const MrtDataset& data, std::ostream& out);
void write_csv(const MrtDataset& data, const std::filesystem::path& path);

/// Shortest decimal text that reads back to the same double (17 significant
/// digits at most).
std::string format_number(double x);

/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

enum class RunMode { Fit, Simulate, Sweep };

struct EstimatorConfig {
  std::string label;
  std::string kind;  // pd-emee | emee | ref-k | ref-k-full | gee-ind | gee-exch
  int k = 0;
  std::vector<std::string> moderators{"intercept"};
  std::optional<std::vector<std::string>> controls;  // default: every control
  std::string numerator = "default";                 // default | constant:<p> | empirical | logistic
  std::optional<std::vector<double>> truth;           // simulate mode
};

struct RunConfig {
  RunMode mode = RunMode::Fit;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: OpenMP default
  std::filesystem::path out_dir = ".";

  std::filesystem::path input;
  int delta = 1;
  IngestOptions ingest;

  std::vector<EstimatorConfig> estimators;
  InferenceConfig inference;
  GenerativeConfig generative;
  int reps = 1000;

  SweepAxis axis = SweepAxis::Delta;
  std::vector<double> grid;

  /// Throws ConfigError when a mode-specific field is missing or invalid.
  void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Resolves an estimator entry against a dataset's covariate names.
AnalysisSpec resolve_estimator(const EstimatorConfig& config, const MrtDataset& data);

/// Runs one mode, writes its artifacts under config.out_dir and a JSON
/// summary to `summary`. Returns the process exit code: 0 on success,
/// 2 config, 3 data, 4 numeric, 5 nonconvergence.
int run(const RunConfig& config, std::ostream& summary, std::ostream& log);

/// Exit code for an exception raised by the library.
int exit_code_for(const std::exception& e);

}  // namespace pdemee
