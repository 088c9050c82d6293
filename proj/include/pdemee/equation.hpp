#pragma once

#include <string>
#include <vector>

#include "pdemee/dataset.hpp"
#include "pdemee/exec.hpp"

namespace pdemee {

/// What an evaluation must fill in besides the score.
enum class Need { Score, ScoreAndJacobian, All };

/// One individual's contribution to a stacked estimating equation.
struct IndividualTerms {
  Vector score;     // U_i(theta)
  Matrix jacobian;  // dU_i / dtheta^T
  Matrix cross;     // B_i^T D_i, the leverage building block (see inference)
  int clamped = 0;  // linear predictors clamped to +-30

  void reset(int dim, Need need);
};

/// A sum over individuals of per-individual estimating functions.
class EstimatingEquation {
 public:
  virtual ~EstimatingEquation() = default;
  virtual int dim() const = 0;
  virtual int individuals() const = 0;
  /// Overwrites `out` with individual i's terms at theta.
  virtual void evaluate(int i, const Vector& theta, IndividualTerms& out, Need need) const = 0;
};

/// Averages (1/n) sum_i of the score and, optionally, of the Jacobian.
struct MeanTerms {
  Vector score;
  Matrix jacobian;
  int clamped = 0;
};

MeanTerms mean_terms(const EstimatingEquation& eq, const Vector& theta, Need need,
                     ExecPolicy exec = ExecPolicy::Serial);

std::vector<IndividualTerms> individual_terms(const EstimatingEquation& eq, const Vector& theta, Need need,
                                              ExecPolicy exec = ExecPolicy::Serial);

/// Central finite-difference Jacobian of the averaged score with step h.
Matrix finite_difference_jacobian(const EstimatingEquation& eq, const Vector& theta, double h,
                                  ExecPolicy exec = ExecPolicy::Serial);

struct SolverConfig {
  enum class Jacobian { Analytic, FiniteDifference };

  double tol = 1e-10;  // sup-norm of the averaged estimating function
  int max_iter = 100;
  double step_damping = 1.0;  // initial step fraction, halved on non-decrease
  int max_halvings = 30;
  Jacobian jacobian = Jacobian::Analytic;
  double fd_step = 1e-6;

  void validate() const;
};

struct SolveResult {
  Vector theta;
  int iterations = 0;
  double residual_norm = 0.0;
  bool converged = false;
  int clamped = 0;
};

/// Damped Newton iteration on the stacked system. Throws NonConvergence when
/// iterations or step halvings run out and SingularJacobian when the Newton
/// system cannot be solved.
SolveResult solve_newton(const EstimatingEquation& eq, Vector theta0, const SolverConfig& config,
                         ExecPolicy exec = ExecPolicy::Serial);

}  // namespace pdemee
