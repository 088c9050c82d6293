#pragma once

#include <optional>
#include <vector>

#include "pdemee/dataset.hpp"
#include "pdemee/equation.hpp"
#include "pdemee/inference.hpp"

namespace pdemee {

/// Which inverse-probability weight enters the estimating function.
enum class EstimatorKind {
  PdEmee,         // per-decision weight W_it
  Emee,           // full-window weight W'_it
  RefRegimeK,     // per-decision weight truncated at t + k
  RefRegimeKFull  // full weight truncated at t + k (generalized EMEE)
};

const char* to_string(EstimatorKind kind);

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::PdEmee;
  int k = 0;                        // reference regime, RefRegimeK* only
  std::vector<int> moderator_cols;  // S_t, must include column 0 (intercept)
  std::vector<int> control_cols;    // g(H_t)
  std::optional<NumeratorPolicy> numerator;  // default: NumeratorPolicy::default_for
  SolverConfig solver;

  /// Throws ValidationError when the spec does not fit the dataset.
  void validate(const MrtDataset& data) const;
  /// The reference-regime horizon used for weights: delta-1 for PdEmee/Emee.
  int horizon(const MrtDataset& data) const;
};

/// The weight column of `weights` matching the spec's kind.
const Vector& select_weight(const WeightSet& weights, EstimatorKind kind);

/// Stacked estimating equation sum_t I e^{-A S'b} eps M W [g; (A - p~) S].
/// Parameters are ordered (alpha, beta).
class EmeeEquation final : public EstimatingEquation {
 public:
  EmeeEquation(const MrtDataset& data, const ProximalOutcomes& outcomes, const WeightSet& weights,
               const EstimatorSpec& spec);

  int dim() const override { return q_ + p_; }
  int individuals() const override { return n_; }
  void evaluate(int i, const Vector& theta, IndividualTerms& out, Need need) const override;

  int p() const { return p_; }
  int q() const { return q_; }

 private:
  int n_ = 0;
  int p_ = 0;
  int q_ = 0;
  std::vector<std::size_t> begin_;  // per individual, into the compacted rows
  std::vector<int> decision_;       // decision index of each compacted row
  std::vector<int> individual_;     // for error messages
  std::vector<std::string> ids_;
  Vector weight_;                   // I * M * W, rows with weight 0 dropped
  Vector treatment_;
  Vector y_;
  Vector centered_;                 // A - p~
  RowMatrix g_;
  RowMatrix s_;
};

/// Linear predictors are clamped to this magnitude before exponentiation.
inline constexpr double kMaxLinearPredictor = 30.0;

/// (1/n) sum_i U_i(alpha, beta).
Vector estimating_function(const MrtDataset& data, const ProximalOutcomes& outcomes, const WeightSet& weights,
                           const EstimatorSpec& spec, const Vector& alpha, const Vector& beta);

/// Analytic (or, per spec.solver.jacobian, central-difference) derivative of
/// the averaged estimating function with respect to (alpha, beta).
Matrix jacobian(const MrtDataset& data, const ProximalOutcomes& outcomes, const WeightSet& weights,
                const EstimatorSpec& spec, const Vector& alpha, const Vector& beta);

/// Solves (1/n) sum_i U_i = 0 from (alpha, beta) = 0 and attaches sandwich
/// inference. Computes weights from the spec's numerator policy.
FitResult fit(const MrtDataset& data, const ProximalOutcomes& outcomes, const EstimatorSpec& spec,
              const InferenceConfig& inference = {}, ExecPolicy exec = ExecPolicy::Serial);

/// Same, with precomputed weights (shared across estimators of one dataset).
FitResult fit(const MrtDataset& data, const ProximalOutcomes& outcomes, const WeightSet& weights,
              const EstimatorSpec& spec, const InferenceConfig& inference = {},
              ExecPolicy exec = ExecPolicy::Serial, const Vector* start = nullptr);

}  // namespace pdemee
