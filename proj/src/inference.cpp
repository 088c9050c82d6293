#include "pdemee/inference.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "pdemee/error.hpp"

namespace pdemee {

void InferenceConfig::validate() const {
  if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("eta must lie in (0,1)");
  if (df_override && *df_override < 1) throw ConfigError("df_override must be >= 1");
}

Matrix FitResult::beta_vcov(bool adjusted) const {
  const Matrix& v = adjusted ? vcov_adjusted : vcov_unadjusted;
  return v.bottomRightCorner(p(), p());
}

Matrix sandwich_vcov(const Matrix& scores, const Matrix& mean_jacobian, double* condition) {
  const auto n = scores.rows();
  const auto dim = scores.cols();
  if (n == 0 || mean_jacobian.rows() != dim || mean_jacobian.cols() != dim)
    throw StructuralError("sandwich inputs have inconsistent dimensions");
  Eigen::JacobiSVD<Matrix> svd(mean_jacobian);
  const auto& sv = svd.singularValues();
  const double cond = sv[dim - 1] > 0.0 ? sv[0] / sv[dim - 1] : std::numeric_limits<double>::infinity();
  if (condition) *condition = cond;
  if (!std::isfinite(cond) || cond > 1e14) throw SingularJacobian("mean Jacobian is singular at the root");

  const Matrix meat = scores.transpose() * scores / static_cast<double>(n);
  Eigen::PartialPivLU<Matrix> lu(mean_jacobian);
  const Matrix bread_inv = lu.inverse();
  Matrix v = bread_inv * meat * bread_inv.transpose() / static_cast<double>(n);
  return 0.5 * (v + v.transpose());
}

CorrectedScores apply_small_sample_correction(const std::vector<IndividualTerms>& terms) {
  CorrectedScores out;
  if (terms.empty()) return out;
  const auto dim = terms.front().score.size();
  Matrix total = Matrix::Zero(dim, dim);
  for (const auto& t : terms) total += t.cross;
  out.scores.resize(static_cast<Eigen::Index>(terms.size()), dim);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& t = terms[i];
    Eigen::PartialPivLU<Matrix> lu(total - t.cross);
    const auto row = static_cast<Eigen::Index>(i);
    if (!(std::abs(lu.determinant()) > 0.0) || lu.rcond() < 1e-12) {
      out.scores.row(row) = t.score.transpose();
      ++out.fallbacks;
      continue;
    }
    const Vector adjusted = t.score + t.cross * lu.solve(t.score);
    if (!adjusted.allFinite()) {
      out.scores.row(row) = t.score.transpose();
      ++out.fallbacks;
      continue;
    }
    out.scores.row(row) = adjusted.transpose();
  }
  return out;
}

double critical_value(double eta, int df) {
  if (df > 0) return boost::math::quantile(boost::math::students_t(df), 1.0 - eta / 2.0);
  return boost::math::quantile(boost::math::normal(), 1.0 - eta / 2.0);
}

double two_sided_p_value(double z, int df) {
  const double a = std::abs(z);
  if (std::isinf(a)) return 0.0;
  if (df > 0) return 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(df), a));
  return 2.0 * boost::math::cdf(boost::math::complement(boost::math::normal(), a));
}

int degrees_of_freedom(const InferenceConfig& config, int n, int dim) {
  if (!config.t_critical) return 0;
  if (config.df_override) return *config.df_override;
  const int df = n - dim;
  if (df < 1) throw ConfigError("t critical values need n - p - q >= 1 (have " + std::to_string(df) + ")");
  return df;
}

CoefficientRow summarize_coefficient(std::string name, double estimate, double se, double eta, int df) {
  CoefficientRow row;
  row.name = std::move(name);
  row.estimate = estimate;
  row.se = se;
  const double crit = critical_value(eta, df);
  row.ci_low = estimate - crit * se;
  row.ci_high = estimate + crit * se;
  if (se > 0.0) {
    row.p_value = std::max(two_sided_p_value(estimate / se, df), kPValueFloor);
  } else {
    row.degenerate = true;
    row.p_value = estimate == 0.0 ? 1.0 : kPValueFloor;
  }
  return row;
}

void fill_inference(FitResult& fit, const EstimatingEquation& eq, const Vector& theta, const InferenceConfig& config,
                    ExecPolicy exec) {
  config.validate();
  const int n = eq.individuals();
  const int dim = eq.dim();
  auto terms = individual_terms(eq, theta, Need::All, exec);

  Matrix scores(n, dim);
  Matrix jac = Matrix::Zero(dim, dim);
  for (int i = 0; i < n; ++i) {
    scores.row(i) = terms[i].score.transpose();
    jac += terms[i].jacobian;
  }
  jac /= n;

  double cond = 0.0;
  fit.vcov_unadjusted = sandwich_vcov(scores, jac, &cond);
  auto corrected = apply_small_sample_correction(terms);
  fit.vcov_adjusted = sandwich_vcov(corrected.scores, jac);
  fit.diagnostics.jacobian_condition = cond;
  fit.diagnostics.leverage_fallbacks = corrected.fallbacks;
  fit.n_individuals = n;

  const int df = degrees_of_freedom(config, n, dim);
  fit.diagnostics.df_used = df;
  fit.vcov = config.residual_correction ? fit.vcov_adjusted : fit.vcov_unadjusted;
  fit.critical_value = critical_value(config.eta, df);

  const int p = fit.p();
  fit.se_beta.resize(p);
  fit.p_values.resize(p);
  fit.ci_beta.clear();
  for (int j = 0; j < p; ++j) {
    const double var = fit.vcov(dim - p + j, dim - p + j);
    const auto row = summarize_coefficient(fit.beta_names.empty() ? "" : fit.beta_names[j], fit.beta_hat[j],
                                           std::sqrt(std::max(var, 0.0)), config.eta, df);
    fit.se_beta[j] = row.se;
    fit.ci_beta.emplace_back(row.ci_low, row.ci_high);
    fit.p_values[j] = row.p_value;
  }
}

std::vector<CoefficientRow> summarize(const FitResult& fit, const InferenceConfig& config) {
  config.validate();
  const int dim = fit.p() + fit.q();
  const int df = degrees_of_freedom(config, fit.n_individuals, dim);
  const Matrix& v = config.residual_correction ? fit.vcov_adjusted : fit.vcov_unadjusted;
  std::vector<CoefficientRow> rows;
  for (int j = 0; j < fit.p(); ++j) {
    const double var = v(dim - fit.p() + j, dim - fit.p() + j);
    rows.push_back(summarize_coefficient(j < static_cast<int>(fit.beta_names.size()) ? fit.beta_names[j]
                                                                                    : "beta" + std::to_string(j),
                                         fit.beta_hat[j], std::sqrt(std::max(var, 0.0)), config.eta, df));
  }
  return rows;
}

}  // namespace pdemee
