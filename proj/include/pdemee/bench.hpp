#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pdemee/estimators.hpp"
#include "pdemee/gee.hpp"
#include "pdemee/simgen.hpp"

namespace pdemee {

/// One estimator under comparison, labelled for reports.
struct AnalysisSpec {
  std::string label;
  std::variant<EstimatorSpec, GeeSpec> spec;

  const std::vector<int>& moderator_cols() const;
};

FitResult fit_analysis(const MrtDataset& data, const ProximalOutcomes& outcomes, const AnalysisSpec& analysis,
                       const InferenceConfig& inference = {}, ExecPolicy exec = ExecPolicy::Serial);

/// Metrics of one coefficient of one estimator across replications. SD,
/// RMSE and coverage are absent when fewer than two replications remain.
struct ParameterRecord {
  std::string estimator;
  std::string parameter;
  double truth = 0.0;
  int replications = 0;
  double mean = 0.0;
  double bias = 0.0;
  std::optional<double> sd;    // population SD over replications
  std::optional<double> rmse;  // so rmse^2 = bias^2 + sd^2
  std::optional<double> cp_unadj;
  std::optional<double> cp_adj;
  std::optional<double> mean_se;    // adjusted sandwich SE
  std::optional<double> median_se;
  std::optional<double> median_se_unadj;  // plain sandwich
  int adj_narrower = 0;  // replications whose adjusted CI was narrower than the unadjusted one
};

struct SimulationReport {
  std::vector<ParameterRecord> records;
  int replications = 0;       // requested
  int used = 0;               // replications where every estimator converged
  std::vector<int> failures;  // per estimator
  std::vector<std::string> labels;
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;
  /// estimates[e][j] holds beta_j of estimator e over the used replications.
  std::vector<std::vector<std::vector<double>>> estimates;

  const ParameterRecord& record(const std::string& estimator, const std::string& parameter) const;
  const std::vector<double>& estimates_of(const std::string& estimator, std::size_t parameter) const;
};

/// Fits every analysis on reps trials drawn from substreams 0..reps-1 of
/// config.seed. `truth[e]` lists the true beta of analysis e. Coverage
/// "unadj" uses the plain sandwich with normal quantiles, "adj" the
/// residual-corrected sandwich with t quantiles on n - p - q df.
SimulationReport run_replications(const GenerativeConfig& config, const std::vector<AnalysisSpec>& analyses, int reps,
                                  const std::vector<std::vector<double>>& truth, double eta = 0.05,
                                  ExecPolicy exec = ExecPolicy::Parallel);

struct RatioEstimate {
  double value = 0.0;
  double se = 0.0;  // delete-one jackknife
};

/// Var(numerator) / Var(denominator) over paired replications.
RatioEstimate relative_efficiency(const std::vector<double>& numerator, const std::vector<double>& denominator);

enum class SweepAxis { Delta, RandProb, K };

const char* to_string(SweepAxis axis);

struct EfficiencyPoint {
  double x = 0.0;
  double rel_eff = 0.0;
  double mc_se = 0.0;
  int replications = 0;
};

struct EfficiencyCurve {
  SweepAxis axis = SweepAxis::Delta;
  std::vector<EfficiencyPoint> points;
};

/// Relative efficiency of beta_0 along one axis, S = 1 and g = (1, Z).
/// Delta and RandProb compare EMEE with pd-EMEE; K compares the truncated
/// full weight with the truncated per-decision weight at base.delta.
EfficiencyCurve efficiency_sweep(SweepAxis axis, const std::vector<double>& grid, const GenerativeConfig& base,
                                 int reps, ExecPolicy exec = ExecPolicy::Parallel);

/// Closed-form AVar(EMEE) / AVar(pd-EMEE) in the simplified i.i.d. setting.
double analytic_relative_efficiency(double p, double q, int delta);

/// Roots of the simplified single-decision estimating functions with alpha
/// fixed at 0: log{(1 - p) sum_{A=1} Y W / (p sum_{A=0} Y W)}.
struct SimplifiedEstimates {
  std::optional<double> per_decision;
  std::optional<double> full;
};

SimplifiedEstimates fit_simplified(const MrtDataset& data, double p);

struct SimplifiedEfficiency {
  RatioEstimate re;
  int used = 0;
  int failed = 0;
};

SimplifiedEfficiency simplified_relative_efficiency(double p, double q, int delta, int n, int reps,
                                                    std::uint64_t seed, ExecPolicy exec = ExecPolicy::Parallel);

}  // namespace pdemee
