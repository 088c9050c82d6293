#include "pdemee/equation.hpp"

#include <cmath>
#include <exception>

#include "pdemee/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pdemee {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int threads) {
#ifdef _OPENMP
  if (threads >= 1) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

void IndividualTerms::reset(int dim, Need need) {
  score.setZero(dim);
  if (need != Need::Score) jacobian.setZero(dim, dim);
  if (need == Need::All) cross.setZero(dim, dim);
  clamped = 0;
}

std::vector<IndividualTerms> individual_terms(const EstimatingEquation& eq, const Vector& theta, Need need,
                                              ExecPolicy exec) {
  const int n = eq.individuals();
  std::vector<IndividualTerms> out(n);
  if (exec == ExecPolicy::Serial) {
    for (int i = 0; i < n; ++i) eq.evaluate(i, theta, out[i], need);
    return out;
  }
  std::exception_ptr failure;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    try {
      eq.evaluate(i, theta, out[i], need);
    } catch (...) {
#pragma omp critical(pdemee_terms_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

MeanTerms mean_terms(const EstimatingEquation& eq, const Vector& theta, Need need, ExecPolicy exec) {
  const int n = eq.individuals();
  const int dim = eq.dim();
  MeanTerms total;
  total.score.setZero(dim);
  if (need != Need::Score) total.jacobian.setZero(dim, dim);

  if (exec == ExecPolicy::Serial) {
    IndividualTerms scratch;
    for (int i = 0; i < n; ++i) {
      eq.evaluate(i, theta, scratch, need);
      total.score += scratch.score;
      if (need != Need::Score) total.jacobian += scratch.jacobian;
      total.clamped += scratch.clamped;
    }
  } else {
    // Ordered reduction over the parallel buffers keeps results identical
    // to the serial loop.
    auto terms = individual_terms(eq, theta, need, exec);
    for (const auto& t : terms) {
      total.score += t.score;
      if (need != Need::Score) total.jacobian += t.jacobian;
      total.clamped += t.clamped;
    }
  }
  total.score /= n;
  if (need != Need::Score) total.jacobian /= n;
  return total;
}

Matrix finite_difference_jacobian(const EstimatingEquation& eq, const Vector& theta, double h, ExecPolicy exec) {
  const int dim = eq.dim();
  Matrix jac(dim, dim);
  for (int j = 0; j < dim; ++j) {
    Vector up = theta, down = theta;
    up[j] += h;
    down[j] -= h;
    jac.col(j) = (mean_terms(eq, up, Need::Score, exec).score - mean_terms(eq, down, Need::Score, exec).score) /
                 (2.0 * h);
  }
  return jac;
}

void SolverConfig::validate() const {
  if (!(tol > 0.0)) throw ConfigError("solver tol must be > 0");
  if (max_iter < 1) throw ConfigError("solver max_iter must be >= 1");
  if (!(step_damping > 0.0 && step_damping <= 1.0)) throw ConfigError("solver step_damping must lie in (0,1]");
  if (jacobian == Jacobian::FiniteDifference && !(fd_step > 0.0)) throw ConfigError("finite-difference step must be > 0");
}

SolveResult solve_newton(const EstimatingEquation& eq, Vector theta0, const SolverConfig& config, ExecPolicy exec) {
  config.validate();
  SolveResult result;
  result.theta = std::move(theta0);
  const Need need = config.jacobian == SolverConfig::Jacobian::Analytic ? Need::ScoreAndJacobian : Need::Score;

  auto current = mean_terms(eq, result.theta, need, exec);
  for (int iter = 0;; ++iter) {
    const double sup = current.score.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(sup)) throw NumericError("estimating function is not finite");
    result.iterations = iter;
    result.residual_norm = sup;
    result.clamped = current.clamped;
    if (sup <= config.tol) {
      result.converged = true;
      return result;
    }
    if (iter >= config.max_iter)
      throw NonConvergence("Newton iteration did not converge in " + std::to_string(config.max_iter) +
                               " iterations (residual " + std::to_string(sup) + ")",
                           result.theta, sup);

    const Matrix jac = need == Need::Score ? finite_difference_jacobian(eq, result.theta, config.fd_step, exec)
                                           : current.jacobian;
    Eigen::PartialPivLU<Matrix> lu(jac);
    if (!(std::abs(lu.determinant()) > 0.0) || lu.rcond() < 1e-14)
      throw SingularJacobian("Jacobian of the estimating equation is singular");
    const Vector step = lu.solve(-current.score);
    if (!step.allFinite()) throw SingularJacobian("Newton step is not finite");

    const double norm = current.score.norm();
    double fraction = config.step_damping;
    bool accepted = false;
    bool leaves_range = false;
    for (int halving = 0; halving <= config.max_halvings; ++halving, fraction *= 0.5) {
      Vector candidate = result.theta + fraction * step;
      auto trial = mean_terms(eq, candidate, need, exec);
      // A step that pushes more predictors into the clamped region is shortened
      // like one that fails to reduce the residual.
      if (halving == 0 && trial.clamped > current.clamped) leaves_range = true;
      if (trial.score.allFinite() && trial.score.norm() < norm && trial.clamped <= current.clamped) {
        result.theta = std::move(candidate);
        current = std::move(trial);
        accepted = true;
        break;
      }
    }
    if (!accepted && leaves_range)
      throw NumericError("Newton steps keep leaving the valid range of the model (a fitted value is at its bound)");
    if (!accepted)
      throw NonConvergence("step halving failed to reduce the estimating function", result.theta, sup);
  }
}

}  // namespace pdemee
