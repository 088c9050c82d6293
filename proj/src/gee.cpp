#include "pdemee/gee.hpp"

#include <algorithm>
#include <cmath>

#include "pdemee/error.hpp"
#include "pdemee/estimators.hpp"

namespace pdemee {

const char* to_string(WorkingCorrelation c) {
  return c == WorkingCorrelation::Independent ? "GEE.ind" : "GEE.exch";
}

void GeeSpec::validate(const MrtDataset& data) const {
  EstimatorSpec as_emee;
  as_emee.moderator_cols = moderator_cols;
  as_emee.control_cols = control_cols;
  as_emee.solver = solver;
  as_emee.validate(data);
  if (max_correlation_updates < 1) throw ConfigError("max_correlation_updates must be >= 1");
  if (!(correlation_tol > 0.0)) throw ConfigError("correlation_tol must be > 0");
}

GeeEquation::GeeEquation(const MrtDataset& data, const ProximalOutcomes& outcomes, const GeeSpec& spec) {
  spec.validate(data);
  if (outcomes.y.size() != data.rows()) throw StructuralError("outcomes do not match the dataset");
  n_ = data.n();
  p_ = static_cast<int>(spec.moderator_cols.size());
  q_ = static_cast<int>(spec.control_cols.size());

  std::vector<std::size_t> keep;
  for (int i = 0; i < n_; ++i) {
    begin_.push_back(keep.size());
    for (int t = 0; t < data.length(i); ++t)
      if (data.available(data.row(i, t))) keep.push_back(data.row(i, t));
  }
  begin_.push_back(keep.size());

  const auto rows = static_cast<Eigen::Index>(keep.size());
  treatment_.resize(rows);
  y_.resize(rows);
  g_.resize(rows, q_);
  s_.resize(rows, p_);
  for (Eigen::Index k = 0; k < rows; ++k) {
    const auto r = static_cast<Eigen::Index>(keep[k]);
    treatment_[k] = data.treatment(keep[k]);
    y_[k] = outcomes.y[keep[k]];
    for (int j = 0; j < q_; ++j) g_(k, j) = data.controls()(r, spec.control_cols[j]);
    for (int j = 0; j < p_; ++j) s_(k, j) = data.moderators()(r, spec.moderator_cols[j]);
  }
  for (int j = 0; j < q_ && intercept_ < 0; ++j)
    if (rows > 0 && (g_.col(j).array() == 1.0).all()) intercept_ = j;
}

double GeeEquation::mean(Eigen::Index k, const Vector& theta, int* clamped) const {
  double lin = g_.row(k).dot(theta.head(q_));
  if (treatment_[k] != 0.0) lin += s_.row(k).dot(theta.tail(p_));
  if (std::abs(lin) > kMaxLinearPredictor) {
    lin = std::clamp(lin, -kMaxLinearPredictor, kMaxLinearPredictor);
    if (clamped) ++*clamped;
  }
  double mu = std::exp(lin);
  if (mu > kMaxGeeMean) {
    mu = kMaxGeeMean;
    if (clamped) ++*clamped;
  }
  return mu;
}

void GeeEquation::evaluate(int i, const Vector& theta, IndividualTerms& out, Need need) const {
  const int dim = q_ + p_;
  out.reset(dim, need);
  const auto first = static_cast<Eigen::Index>(begin_[i]);
  const auto size = static_cast<Eigen::Index>(begin_[i + 1]) - first;
  if (size == 0) return;

  Matrix x(size, dim);
  Matrix big_g(size, dim);
  Vector mu(size), scale(size), e(size);
  for (Eigen::Index t = 0; t < size; ++t) {
    const auto k = first + t;
    x.row(t).head(q_) = g_.row(k);
    x.row(t).tail(p_) = treatment_[k] * s_.row(k);
    mu[t] = mean(k, theta, &out.clamped);
    const double var = mu[t] * (1.0 - mu[t]);
    scale[t] = std::sqrt(mu[t] / (1.0 - mu[t]));
    e[t] = (y_[k] - mu[t]) / std::sqrt(var);
    big_g.row(t) = scale[t] * x.row(t);
  }
  if (!e.allFinite()) throw NumericError("non-finite Pearson residual in GEE fit");

  const double a = 1.0 / (1.0 - rho_);
  const double b = -rho_ / ((1.0 - rho_) * (1.0 - rho_ + static_cast<double>(size) * rho_));
  const double sum_e = e.sum();
  const Vector sum_g = big_g.colwise().sum().transpose();
  out.score = a * big_g.transpose() * e + (b * sum_e) * sum_g;
  if (need == Need::Score) return;

  for (Eigen::Index t = 0; t < size; ++t) {
    const auto k = first + t;
    const double m = mu[t];
    const double var = m * (1.0 - m);
    const double dg = m / (2.0 * scale[t] * (1.0 - m) * (1.0 - m));
    const double de = -1.0 / std::sqrt(var) - (y_[k] - m) * (1.0 - 2.0 * m) / (2.0 * var * std::sqrt(var));
    const auto xt = x.row(t).transpose();
    out.jacobian.noalias() += ((a * e[t] + b * sum_e) * dg) * (xt * xt.transpose());
    out.jacobian.noalias() += (a * big_g.row(t).transpose() + b * sum_g) * ((de * m) * xt.transpose());
  }
  if (need == Need::All) out.cross = a * big_g.transpose() * big_g + b * sum_g * sum_g.transpose();
}

double GeeEquation::estimate_correlation(const Vector& theta) const {
  double pairs_sum = 0.0, squares = 0.0, pairs = 0.0, total = 0.0;
  Eigen::Index largest = 0;
  for (int i = 0; i < n_; ++i) {
    const auto first = static_cast<Eigen::Index>(begin_[i]);
    const auto size = static_cast<Eigen::Index>(begin_[i + 1]) - first;
    double s = 0.0, s2 = 0.0;
    for (Eigen::Index k = first; k < first + size; ++k) {
      const double m = mean(k, theta, nullptr);
      const double e = (y_[k] - m) / std::sqrt(m * (1.0 - m));
      s += e;
      s2 += e * e;
    }
    pairs_sum += 0.5 * (s * s - s2);
    squares += s2;
    pairs += 0.5 * static_cast<double>(size) * static_cast<double>(size - 1);
    total += static_cast<double>(size);
    largest = std::max(largest, size);
  }
  const double k = q_ + p_;
  if (largest < 2 || pairs - k <= 0.0 || total - k <= 0.0 || squares <= 0.0) return 0.0;
  const double rho = (pairs_sum / (pairs - k)) / (squares / (total - k));
  const double lower = -1.0 / static_cast<double>(largest - 1) + 1e-6;
  return std::clamp(rho, lower, 0.99);
}

int GeeEquation::clamped_means(const Vector& theta) const {
  int clamped = 0;
  for (Eigen::Index k = 0; k < y_.size(); ++k) mean(k, theta, &clamped);
  return clamped;
}

Vector GeeEquation::initial_value() const {
  Vector theta = Vector::Zero(dim());
  if (intercept_ >= 0 && y_.size() > 0) theta[intercept_] = std::log(std::clamp(y_.mean(), 1e-3, 0.9));
  return theta;
}

FitResult fit_gee(const MrtDataset& data, const ProximalOutcomes& outcomes, const GeeSpec& spec,
                  const InferenceConfig& inference, ExecPolicy exec) {
  GeeEquation eq(data, outcomes, spec);
  inference.validate();
  degrees_of_freedom(inference, eq.individuals(), eq.dim());
  auto solved = solve_newton(eq, eq.initial_value(), spec.solver, exec);
  if (spec.correlation == WorkingCorrelation::Exchangeable) {
    bool settled = false;
    for (int update = 0; update < spec.max_correlation_updates; ++update) {
      const double rho = eq.estimate_correlation(solved.theta);
      if (std::abs(rho - eq.correlation()) <= spec.correlation_tol) {
        settled = true;
        break;
      }
      eq.set_correlation(rho);
      const int iterations = solved.iterations;
      solved = solve_newton(eq, solved.theta, spec.solver, exec);
      solved.iterations += iterations;
    }
    if (!settled)
      throw NonConvergence("working correlation did not settle in " + std::to_string(spec.max_correlation_updates) +
                               " updates",
                           solved.theta, solved.residual_norm);
  }
  if (eq.clamped_means(solved.theta) > 0)
    throw NumericError("fitted GEE means leave (0,1) at the root");

  FitResult result;
  for (int c : spec.control_cols) result.alpha_names.push_back(data.control_names()[c]);
  for (int c : spec.moderator_cols) result.beta_names.push_back(data.moderator_names()[c]);
  result.alpha_hat = solved.theta.head(eq.q());
  result.beta_hat = solved.theta.tail(eq.p());
  result.diagnostics.iterations = solved.iterations;
  result.diagnostics.final_residual_norm = solved.residual_norm;
  result.diagnostics.converged = solved.converged;
  result.diagnostics.clamp_warnings = solved.clamped;
  result.diagnostics.working_correlation = eq.correlation();
  fill_inference(result, eq, solved.theta, inference, exec);
  return result;
}

}  // namespace pdemee
