#pragma once

#include <vector>

#include "pdemee/dataset.hpp"
#include "pdemee/equation.hpp"
#include "pdemee/inference.hpp"

namespace pdemee {

enum class WorkingCorrelation { Independent, Exchangeable };

const char* to_string(WorkingCorrelation c);

/// Log-link GEE with mean exp(g'alpha + A S'beta) and binary variance
/// mu(1 - mu). Parameters are ordered (alpha, beta) as for the EMEE fits.
struct GeeSpec {
  WorkingCorrelation correlation = WorkingCorrelation::Independent;
  std::vector<int> moderator_cols;
  std::vector<int> control_cols;
  SolverConfig solver;
  int max_correlation_updates = 50;
  double correlation_tol = 1e-8;

  void validate(const MrtDataset& data) const;
};

/// Fitted means are kept at or below this value.
inline constexpr double kMaxGeeMean = 1.0 - 1e-6;

/// sum_t dmu_t/dtheta V^{-1} (Y - mu) over available decision points, with
/// V = A^{1/2} R(rho) A^{1/2} and R exchangeable (rho = 0 gives independence).
class GeeEquation final : public EstimatingEquation {
 public:
  GeeEquation(const MrtDataset& data, const ProximalOutcomes& outcomes, const GeeSpec& spec);

  int dim() const override { return q_ + p_; }
  int individuals() const override { return n_; }
  void evaluate(int i, const Vector& theta, IndividualTerms& out, Need need) const override;

  void set_correlation(double rho) { rho_ = rho; }
  double correlation() const { return rho_; }

  /// Moment estimate of rho from Pearson residuals at theta, clamped so R
  /// stays positive definite for every cluster size.
  double estimate_correlation(const Vector& theta) const;

  /// Number of fitted means that had to be clamped at theta.
  int clamped_means(const Vector& theta) const;

  /// log of the mean outcome, the intercept start that keeps every mean below 1.
  Vector initial_value() const;

  int p() const { return p_; }
  int q() const { return q_; }

 private:
  double mean(Eigen::Index k, const Vector& theta, int* clamped) const;

  int n_ = 0;
  int p_ = 0;
  int q_ = 0;
  double rho_ = 0.0;
  int intercept_ = -1;  // position of an all-ones control column
  std::vector<std::size_t> begin_;
  Vector treatment_;
  Vector y_;
  RowMatrix g_;
  RowMatrix s_;
};

FitResult fit_gee(const MrtDataset& data, const ProximalOutcomes& outcomes, const GeeSpec& spec,
                  const InferenceConfig& inference = {}, ExecPolicy exec = ExecPolicy::Serial);

}  // namespace pdemee
