#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pdemee/equation.hpp"

namespace pdemee {

struct InferenceConfig {
  double eta = 0.05;  // two-sided significance level
  bool residual_correction = true;
  bool t_critical = true;
  std::optional<int> df_override{};

  void validate() const;
};

struct FitDiagnostics {
  int iterations = 0;
  double final_residual_norm = 0.0;
  bool converged = false;
  int df_used = 0;  // 0 when the normal reference distribution is used
  int clamp_warnings = 0;
  int leverage_fallbacks = 0;  // individuals whose (I - H_ii) was singular
  double jacobian_condition = 0.0;
  double working_correlation = 0.0;  // GEE exchangeable only
};

/// Estimates of (alpha, beta) and their sandwich covariance.
struct FitResult {
  std::vector<std::string> alpha_names;
  std::vector<std::string> beta_names;
  Vector alpha_hat;
  Vector beta_hat;
  Matrix vcov;             // per the inference config (adjusted if requested)
  Matrix vcov_unadjusted;  // plain sandwich
  Matrix vcov_adjusted;    // residual-corrected sandwich
  Vector se_beta;
  std::vector<std::pair<double, double>> ci_beta;
  Vector p_values;
  double critical_value = 0.0;
  int n_individuals = 0;
  FitDiagnostics diagnostics;

  int p() const { return static_cast<int>(beta_hat.size()); }
  int q() const { return static_cast<int>(alpha_hat.size()); }
  /// Covariance block of beta from either sandwich.
  Matrix beta_vcov(bool adjusted) const;
};

/// bread^{-1} meat bread^{-T} / n, where bread is the mean Jacobian and meat
/// the mean outer product of the per-individual scores (rows of `scores`).
/// Throws SingularJacobian; condition numbers above 1e10 are reported through
/// `condition` when given.
Matrix sandwich_vcov(const Matrix& scores, const Matrix& mean_jacobian, double* condition = nullptr);

struct CorrectedScores {
  Matrix scores;  // n x dim, residual-corrected U_i
  int fallbacks = 0;
};

/// Residual correction by the inverse of (I - H_ii) with
/// H_ii = D_i (sum_j B_j^T D_j)^{-1} B_i^T. Works on the dim x dim blocks
/// C_i = B_i^T D_i through the Woodbury identity, so the corrected score is
/// U_i + C_i (sum_j C_j - C_i)^{-1} U_i.
CorrectedScores apply_small_sample_correction(const std::vector<IndividualTerms>& terms);

/// Two-sided critical value: t quantile with `df` degrees of freedom when df > 0,
/// normal quantile otherwise.
double critical_value(double eta, int df);

/// Two-sided p-value of estimate / se under the same reference distribution.
double two_sided_p_value(double z, int df);

/// Degrees of freedom for the critical value: 0 (normal) unless t_critical,
/// then df_override or n - dim. Throws ConfigError when that is below 1.
int degrees_of_freedom(const InferenceConfig& config, int n, int dim);

/// Runs sandwich inference at the root and fills the covariance, SE, CI and
/// p-value fields of `fit` (whose alpha_hat/beta_hat must already be set).
/// Parameters are stacked as (alpha, beta).
void fill_inference(FitResult& fit, const EstimatingEquation& eq, const Vector& theta, const InferenceConfig& config,
                    ExecPolicy exec = ExecPolicy::Serial);

struct CoefficientRow {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
  bool degenerate = false;
};

/// p-values smaller than this are reported at the floor.
inline constexpr double kPValueFloor = 1e-300;

/// Per-coefficient table of beta (estimate, SE, CI, p-value).
std::vector<CoefficientRow> summarize(const FitResult& fit, const InferenceConfig& config);

/// One row from an estimate and SE; used by summarize.
CoefficientRow summarize_coefficient(std::string name, double estimate, double se, double eta, int df);

}  // namespace pdemee
