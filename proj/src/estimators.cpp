#include "pdemee/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "pdemee/error.hpp"

namespace pdemee {

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::PdEmee: return "pd-EMEE";
    case EstimatorKind::Emee: return "EMEE";
    case EstimatorKind::RefRegimeK: return "pd-EMEE(K)";
    case EstimatorKind::RefRegimeKFull: return "EMEE(K)";
  }
  return "?";
}

void EstimatorSpec::validate(const MrtDataset& data) const {
  if (moderator_cols.empty()) throw ValidationError("moderator set must be nonempty");
  if (std::find(moderator_cols.begin(), moderator_cols.end(), 0) == moderator_cols.end())
    throw ValidationError("moderator set must include the intercept column");
  for (int c : moderator_cols)
    if (c < 0 || c >= data.moderators().cols()) throw ValidationError("moderator column out of range");
  for (int c : control_cols)
    if (c < 0 || c >= data.controls().cols()) throw ValidationError("control column out of range");
  if ((kind == EstimatorKind::RefRegimeK || kind == EstimatorKind::RefRegimeKFull) &&
      (k < 0 || k > data.delta() - 1))
    throw ValidationError("reference regime k must lie in [0, delta-1]");
  solver.validate();
}

int EstimatorSpec::horizon(const MrtDataset& data) const {
  return kind == EstimatorKind::RefRegimeK || kind == EstimatorKind::RefRegimeKFull ? k : data.delta() - 1;
}

const Vector& select_weight(const WeightSet& weights, EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::PdEmee: return weights.w_pd;
    case EstimatorKind::Emee: return weights.w_full;
    case EstimatorKind::RefRegimeK: return weights.w_k;
    case EstimatorKind::RefRegimeKFull: return weights.w_full_k;
  }
  return weights.w_pd;
}

EmeeEquation::EmeeEquation(const MrtDataset& data, const ProximalOutcomes& outcomes, const WeightSet& weights,
                           const EstimatorSpec& spec) {
  spec.validate(data);
  if (outcomes.y.size() != data.rows() || weights.m.size() != static_cast<Eigen::Index>(data.rows()))
    throw StructuralError("outcomes/weights do not match the dataset");
  if ((spec.kind == EstimatorKind::RefRegimeK || spec.kind == EstimatorKind::RefRegimeKFull) && weights.k != spec.k)
    throw ValidationError("weights were computed for a different reference regime k");

  n_ = data.n();
  p_ = static_cast<int>(spec.moderator_cols.size());
  q_ = static_cast<int>(spec.control_cols.size());
  const Vector& w = select_weight(weights, spec.kind);

  std::vector<std::size_t> keep;
  begin_.reserve(n_ + 1);
  for (int i = 0; i < n_; ++i) {
    begin_.push_back(keep.size());
    for (int t = 0; t < data.length(i); ++t) {
      const auto r = data.row(i, t);
      const auto ri = static_cast<Eigen::Index>(r);
      if (!data.available(r)) continue;
      if (weights.m[ri] * w[ri] == 0.0) continue;
      keep.push_back(r);
      decision_.push_back(t);
      individual_.push_back(i);
    }
  }
  begin_.push_back(keep.size());
  ids_.reserve(n_);
  for (int i = 0; i < n_; ++i) ids_.push_back(data.id(i));

  const auto rows = static_cast<Eigen::Index>(keep.size());
  weight_.resize(rows);
  treatment_.resize(rows);
  y_.resize(rows);
  centered_.resize(rows);
  g_.resize(rows, q_);
  s_.resize(rows, p_);
  for (Eigen::Index k = 0; k < rows; ++k) {
    const auto r = keep[k];
    const auto ri = static_cast<Eigen::Index>(r);
    weight_[k] = weights.m[ri] * w[ri];
    treatment_[k] = data.treatment(r);
    y_[k] = outcomes.y[r];
    centered_[k] = data.treatment(r) - weights.p_tilde[ri];
    for (int j = 0; j < q_; ++j) g_(k, j) = data.controls()(ri, spec.control_cols[j]);
    for (int j = 0; j < p_; ++j) s_(k, j) = data.moderators()(ri, spec.moderator_cols[j]);
  }
}

void EmeeEquation::evaluate(int i, const Vector& theta, IndividualTerms& out, Need need) const {
  const int dim = q_ + p_;
  out.reset(dim, need);
  const auto alpha = theta.head(q_);
  const auto beta = theta.tail(p_);
  Vector x(dim);
  Vector d(dim);
  for (auto k = static_cast<Eigen::Index>(begin_[i]); k < static_cast<Eigen::Index>(begin_[i + 1]); ++k) {
    const auto g = g_.row(k);
    const auto s = s_.row(k);
    double lin_g = g.dot(alpha);
    if (std::abs(lin_g) > kMaxLinearPredictor) {
      lin_g = std::clamp(lin_g, -kMaxLinearPredictor, kMaxLinearPredictor);
      ++out.clamped;
    }
    const double eg = std::exp(lin_g);
    const bool treated = treatment_[k] != 0.0;
    double blip = 1.0;
    if (treated) {
      double lin_s = s.dot(beta);
      if (std::abs(lin_s) > kMaxLinearPredictor) {
        lin_s = std::clamp(lin_s, -kMaxLinearPredictor, kMaxLinearPredictor);
        ++out.clamped;
      }
      blip = std::exp(-lin_s);
    }
    const double w = weight_[k];
    const double c = w * (y_[k] * blip - eg);
    if (!std::isfinite(c))
      throw NumericError("non-finite estimating function term for individual '" + ids_[i] + "' at decision point " +
                         std::to_string(decision_[k] + 1));
    x.head(q_) = g.transpose();
    x.tail(p_) = centered_[k] * s.transpose();
    out.score.noalias() += c * x;
    if (need == Need::Score) continue;
    d.head(q_) = (-w * eg) * g.transpose();
    if (treated)
      d.tail(p_) = (-w * y_[k] * blip) * s.transpose();
    else
      d.tail(p_).setZero();
    out.jacobian.noalias() += x * d.transpose();
    if (need == Need::All) {
      d.head(q_) = (w * eg) * g.transpose();
      if (treated)
        d.tail(p_) = (w * eg) * s.transpose();
      else
        d.tail(p_).setZero();
      out.cross.noalias() += x * d.transpose();
    }
  }
}

namespace {

Vector stack(const Vector& alpha, const Vector& beta) {
  Vector theta(alpha.size() + beta.size());
  theta << alpha, beta;
  return theta;
}

void check_dims(const EstimatorSpec& spec, const Vector& alpha, const Vector& beta) {
  if (alpha.size() != static_cast<Eigen::Index>(spec.control_cols.size()) ||
      beta.size() != static_cast<Eigen::Index>(spec.moderator_cols.size()))
    throw StructuralError("(alpha, beta) dimensions do not match the estimator spec");
}

}  // namespace

Vector estimating_function(const MrtDataset& data, const ProximalOutcomes& outcomes, const WeightSet& weights,
                           const EstimatorSpec& spec, const Vector& alpha, const Vector& beta) {
  check_dims(spec, alpha, beta);
  EmeeEquation eq(data, outcomes, weights, spec);
  return mean_terms(eq, stack(alpha, beta), Need::Score).score;
}

Matrix jacobian(const MrtDataset& data, const ProximalOutcomes& outcomes, const WeightSet& weights,
                const EstimatorSpec& spec, const Vector& alpha, const Vector& beta) {
  check_dims(spec, alpha, beta);
  EmeeEquation eq(data, outcomes, weights, spec);
  if (spec.solver.jacobian == SolverConfig::Jacobian::FiniteDifference)
    return finite_difference_jacobian(eq, stack(alpha, beta), spec.solver.fd_step);
  return mean_terms(eq, stack(alpha, beta), Need::ScoreAndJacobian).jacobian;
}

FitResult fit(const MrtDataset& data, const ProximalOutcomes& outcomes, const EstimatorSpec& spec,
              const InferenceConfig& inference, ExecPolicy exec) {
  spec.validate(data);
  const auto numerator = spec.numerator.value_or(NumeratorPolicy::default_for(data));
  const auto weights = compute_weights(data, outcomes, numerator, spec.horizon(data), spec.moderator_cols);
  return fit(data, outcomes, weights, spec, inference, exec);
}

FitResult fit(const MrtDataset& data, const ProximalOutcomes& outcomes, const WeightSet& weights,
              const EstimatorSpec& spec, const InferenceConfig& inference, ExecPolicy exec, const Vector* start) {
  bool arm[2] = {false, false};
  for (std::size_t r = 0; r < data.rows(); ++r)
    if (data.available(r)) arm[data.treatment(r)] = true;
  if (!arm[0] || !arm[1])
    throw ValidationError("need at least one available decision point in each treatment arm");

  EmeeEquation eq(data, outcomes, weights, spec);
  inference.validate();
  degrees_of_freedom(inference, eq.individuals(), eq.dim());
  Vector theta0 = start ? *start : Vector::Zero(eq.dim());
  if (theta0.size() != eq.dim()) throw StructuralError("starting value has the wrong dimension");
  const auto solved = solve_newton(eq, std::move(theta0), spec.solver, exec);

  FitResult result;
  for (int c : spec.control_cols) result.alpha_names.push_back(data.control_names()[c]);
  for (int c : spec.moderator_cols) result.beta_names.push_back(data.moderator_names()[c]);
  result.alpha_hat = solved.theta.head(eq.q());
  result.beta_hat = solved.theta.tail(eq.p());
  result.diagnostics.iterations = solved.iterations;
  result.diagnostics.final_residual_norm = solved.residual_norm;
  result.diagnostics.converged = solved.converged;
  result.diagnostics.clamp_warnings = solved.clamped;
  fill_inference(result, eq, solved.theta, inference, exec);
  return result;
}

}  // namespace pdemee
