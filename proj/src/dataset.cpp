#include "pdemee/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pdemee/error.hpp"

namespace pdemee {

namespace {

std::string where(const MrtColumns& c, int i, int t) {
  return "individual '" + c.ids[i] + "', decision point " + std::to_string(t + 1);
}

}  // namespace

MrtDataset::MrtDataset(MrtColumns columns) : cols_(std::move(columns)) {
  auto& c = cols_;
  const auto n = c.lengths.size();
  if (c.delta < 1) throw ValidationError("delta must be >= 1");
  if (n == 0) throw StructuralError("dataset has no individuals");
  if (c.ids.empty()) {
    c.ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) c.ids[i] = std::to_string(i + 1);
  }
  if (c.ids.size() != n) throw StructuralError("ids and lengths differ in size");

  std::size_t rows = 0;
  std::size_t subs = 0;
  row_begin_.resize(n);
  sub_begin_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (c.lengths[i] < 1) throw StructuralError("individual '" + c.ids[i] + "' has no decision points");
    row_begin_[i] = rows;
    sub_begin_[i] = subs;
    rows += c.lengths[i];
    subs += c.lengths[i] + c.delta;
    max_length_ = std::max(max_length_, c.lengths[i]);
  }
  if (c.available.size() != rows || c.treatment.size() != rows || c.rand_prob.size() != rows)
    throw StructuralError("availability/treatment/rand_prob must have one entry per decision point");
  if (c.sub_outcome.size() != subs)
    throw StructuralError("sub_outcome needs T_i + delta entries per individual (" + std::to_string(subs) +
                          " expected, " + std::to_string(c.sub_outcome.size()) + " given)");
  if (static_cast<std::size_t>(c.moderators.rows()) != rows || c.moderators.cols() < 1)
    throw StructuralError("moderators must have one row per decision point and at least the intercept");
  if (static_cast<std::size_t>(c.controls.rows()) != rows)
    throw StructuralError("controls must have one row per decision point");
  if (c.moderator_names.empty())
    for (Eigen::Index j = 0; j < c.moderators.cols(); ++j)
      c.moderator_names.push_back(j == 0 ? "intercept" : "S" + std::to_string(j));
  if (c.control_names.empty())
    for (Eigen::Index j = 0; j < c.controls.cols(); ++j) c.control_names.push_back("g" + std::to_string(j));
  if (c.moderator_names.size() != static_cast<std::size_t>(c.moderators.cols()) ||
      c.control_names.size() != static_cast<std::size_t>(c.controls.cols()))
    throw StructuralError("covariate name count does not match column count");

  for (std::size_t i = 0; i < n; ++i) {
    for (int t = 0; t < c.lengths[i]; ++t) {
      const auto r = row_begin_[i] + t;
      if (c.available[r] > 1 || c.treatment[r] > 1)
        throw ValidationError("availability and treatment must be 0/1 at " + where(c, i, t));
      if (!c.available[r]) {
        if (c.treatment[r]) throw ValidationError("treatment given while unavailable at " + where(c, i, t));
        if (c.rand_prob[r] != 0.0)
          throw ValidationError("rand_prob must be 0 while unavailable at " + where(c, i, t));
      } else if (!(c.rand_prob[r] > 0.0 && c.rand_prob[r] < 1.0)) {
        throw PositivityError("rand_prob outside (0,1) at available " + where(c, i, t));
      }
      if (c.moderators(r, 0) != 1.0)
        throw ValidationError("first moderator column must be 1 at " + where(c, i, t));
    }
    for (int s = 0; s < c.lengths[i] + c.delta; ++s)
      if (c.sub_outcome[sub_begin_[i] + s] > 1)
        throw ValidationError("sub_outcome must be 0/1 for individual '" + c.ids[i] + "'");
  }
  if (!c.moderators.allFinite() || !c.controls.allFinite())
    throw ValidationError("covariates must be finite");
}

bool MrtDataset::constant_rand_prob() const noexcept {
  double first = -1.0;
  for (std::size_t r = 0; r < rows(); ++r) {
    if (!available(r)) continue;
    if (first < 0.0)
      first = rand_prob(r);
    else if (rand_prob(r) != first)
      return false;
  }
  return true;
}

MrtDataset MrtDataset::permuted(std::span<const int> order) const {
  if (order.size() != static_cast<std::size_t>(n())) throw StructuralError("permutation size mismatch");
  MrtColumns out;
  out.delta = cols_.delta;
  out.moderator_names = cols_.moderator_names;
  out.control_names = cols_.control_names;
  out.moderators.resize(static_cast<Eigen::Index>(rows()), cols_.moderators.cols());
  out.controls.resize(static_cast<Eigen::Index>(rows()), cols_.controls.cols());
  Eigen::Index dst = 0;
  for (int i : order) {
    out.ids.push_back(cols_.ids[i]);
    out.lengths.push_back(cols_.lengths[i]);
    const auto b = row_begin_[i];
    for (int t = 0; t < cols_.lengths[i]; ++t, ++dst) {
      out.available.push_back(cols_.available[b + t]);
      out.treatment.push_back(cols_.treatment[b + t]);
      out.rand_prob.push_back(cols_.rand_prob[b + t]);
      out.moderators.row(dst) = cols_.moderators.row(static_cast<Eigen::Index>(b + t));
      out.controls.row(dst) = cols_.controls.row(static_cast<Eigen::Index>(b + t));
    }
    auto subs = sub_outcomes(i);
    out.sub_outcome.insert(out.sub_outcome.end(), subs.begin(), subs.end());
  }
  return MrtDataset(std::move(out));
}

ProximalOutcomes build_proximal_outcomes(std::span<const std::uint8_t> sub_outcome,
                                         std::span<const int> lengths, int delta) {
  if (delta < 1) throw ValidationError("delta must be >= 1");
  ProximalOutcomes out;
  out.delta = delta;
  const auto rows = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
  out.y.reserve(rows);
  out.first_hit.reserve(rows);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const auto width = static_cast<std::size_t>(lengths[i] + delta);
    if (offset + width > sub_outcome.size())
      throw StructuralError("individual " + std::to_string(i + 1) + " is missing follow-up sub-outcomes (needs " +
                            std::to_string(width) + " entries)");
    const auto* row = sub_outcome.data() + offset;
    for (int t = 0; t < lengths[i]; ++t) {
      int hit = ProximalOutcomes::kNoEvent;
      for (int u = 1; u <= delta; ++u) {
        if (row[t + u - 1] > 1) throw ValidationError("sub-outcomes must be binary");
        if (row[t + u - 1]) {
          hit = u;
          break;
        }
      }
      out.first_hit.push_back(hit);
      out.y.push_back(hit != ProximalOutcomes::kNoEvent ? 1 : 0);
    }
    offset += width;
  }
  if (offset != sub_outcome.size()) throw StructuralError("sub-outcome array has trailing entries");
  return out;
}

ProximalOutcomes build_proximal_outcomes(const MrtDataset& data) {
  return build_proximal_outcomes(data.columns().sub_outcome, data.columns().lengths, data.delta());
}

ProximalOutcomes build_proximal_outcomes_generalized(std::span<const std::uint8_t> window_outcome,
                                                     std::size_t rows, int delta) {
  if (delta < 1) throw ValidationError("delta must be >= 1");
  if (window_outcome.size() != rows * static_cast<std::size_t>(delta))
    throw StructuralError("window outcomes need delta entries per decision point");
  ProximalOutcomes out;
  out.delta = delta;
  out.y.resize(rows);
  out.first_hit.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto* w = window_outcome.data() + r * delta;
    int hit = ProximalOutcomes::kNoEvent;
    for (int s = 0; s < delta; ++s) {
      if (w[s] > 1) throw ValidationError("window outcomes must be binary");
      if (s > 0 && w[s] < w[s - 1])
        throw ValidationError("cumulative window outcome decreases at row " + std::to_string(r) +
                              ": an occurred event cannot un-occur");
      if (w[s] && hit == ProximalOutcomes::kNoEvent) hit = s + 1;
    }
    out.first_hit[r] = hit;
    out.y[r] = w[delta - 1];
  }
  return out;
}

std::vector<std::uint8_t> cumulative_window_outcomes(const MrtDataset& data) {
  const int delta = data.delta();
  std::vector<std::uint8_t> out;
  out.reserve(data.rows() * delta);
  for (int i = 0; i < data.n(); ++i) {
    auto subs = data.sub_outcomes(i);
    for (int t = 0; t < data.length(i); ++t) {
      std::uint8_t seen = 0;
      for (int s = 0; s < delta; ++s) {
        seen = std::max(seen, subs[t + s]);
        out.push_back(seen);
      }
    }
  }
  return out;
}

NumeratorPolicy NumeratorPolicy::default_for(const MrtDataset& data) {
  if (data.constant_rand_prob()) {
    for (std::size_t r = 0; r < data.rows(); ++r)
      if (data.available(r)) return {Constant{data.rand_prob(r)}};
  }
  return {LogisticOnS{}};
}

Vector fit_logistic_numerator(const MrtDataset& data, std::span<const int> moderator_cols) {
  std::vector<int> cols(moderator_cols.begin(), moderator_cols.end());
  if (cols.empty()) {
    cols.resize(data.moderators().cols());
    std::iota(cols.begin(), cols.end(), 0);
  }
  const auto p = static_cast<Eigen::Index>(cols.size());
  const auto& S = data.moderators();
  Vector coef = Vector::Zero(p);
  Vector grad(p);
  Matrix info(p, p);
  Vector x(p);
  for (int iter = 0; iter < 100; ++iter) {
    grad.setZero();
    info.setZero();
    for (std::size_t r = 0; r < data.rows(); ++r) {
      if (!data.available(r)) continue;
      for (Eigen::Index j = 0; j < p; ++j) x[j] = S(static_cast<Eigen::Index>(r), cols[j]);
      const double prob = 1.0 / (1.0 + std::exp(-x.dot(coef)));
      grad.noalias() += (data.treatment(r) - prob) * x;
      info.noalias() += prob * (1.0 - prob) * x * x.transpose();
    }
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
      throw SingularJacobian("logistic numerator model is not identifiable");
    Vector step = ldlt.solve(grad);
    coef += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-12) break;
  }
  Vector out = Vector::Zero(static_cast<Eigen::Index>(data.rows()));
  for (std::size_t r = 0; r < data.rows(); ++r) {
    if (!data.available(r)) continue;
    for (Eigen::Index j = 0; j < p; ++j) x[j] = S(static_cast<Eigen::Index>(r), cols[j]);
    out[static_cast<Eigen::Index>(r)] = 1.0 / (1.0 + std::exp(-x.dot(coef)));
  }
  return out;
}

WeightSet compute_weights(const MrtDataset& data, const ProximalOutcomes& outcomes,
                          const NumeratorPolicy& numerator, int k, std::span<const int> moderator_cols) {
  const int delta = data.delta();
  if (k < 0 || k > delta - 1) throw ValidationError("reference regime k must lie in [0, delta-1]");
  if (outcomes.delta != delta || outcomes.y.size() != data.rows())
    throw StructuralError("proximal outcomes were not built from this dataset");

  const auto rows = static_cast<Eigen::Index>(data.rows());
  WeightSet w;
  w.k = k;
  w.p_tilde = Vector::Zero(rows);
  if (const auto* c = std::get_if<NumeratorPolicy::Constant>(&numerator.choice)) {
    if (!(c->value > 0.0 && c->value < 1.0)) throw ValidationError("numerator probability must lie in (0,1)");
    for (Eigen::Index r = 0; r < rows; ++r)
      if (data.available(r)) w.p_tilde[r] = c->value;
  } else if (std::holds_alternative<NumeratorPolicy::EmpiricalMean>(numerator.choice)) {
    double treated = 0.0;
    double total = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r)
      if (data.available(r)) {
        treated += data.treatment(r);
        total += 1.0;
      }
    const double mean = total > 0.0 ? treated / total : 0.0;
    if (!(mean > 0.0 && mean < 1.0)) throw ValidationError("empirical treatment rate must lie in (0,1)");
    for (Eigen::Index r = 0; r < rows; ++r)
      if (data.available(r)) w.p_tilde[r] = mean;
  } else {
    w.p_tilde = fit_logistic_numerator(data, moderator_cols);
  }

  w.m = Vector::Zero(rows);
  w.w_pd = Vector::Ones(rows);
  w.w_full = Vector::Ones(rows);
  w.w_k = Vector::Ones(rows);
  w.w_full_k = Vector::Ones(rows);

  for (int i = 0; i < data.n(); ++i) {
    const int len = data.length(i);
    for (int t = 0; t < len; ++t) {
      const auto r = data.row(i, t);
      const auto ri = static_cast<Eigen::Index>(r);
      if (data.available(r)) {
        const double p = data.rand_prob(r);
        const double pt = w.p_tilde[ri];
        w.m[ri] = data.treatment(r) ? pt / p : (1.0 - pt) / (1.0 - p);
      }
      const int hit = outcomes.first_hit[r];
      double pd = 1.0, full = 1.0, pd_k = 1.0, full_k = 1.0;
      for (int s = 1; s < delta; ++s) {
        const int j = t + s;
        double factor = 1.0;
        if (j < len) {
          const auto rj = data.row(i, j);
          if (data.available(rj)) {
            const double pj = data.rand_prob(rj);
            if (!(pj > 0.0 && pj < 1.0))
              throw PositivityError("rand_prob outside (0,1) inside the window of individual '" + data.id(i) + "'");
            factor = data.treatment(rj) ? 0.0 : 1.0 / (1.0 - pj);
          }
        }
        // Factor j enters the per-decision product only while no event has
        // occurred among the first s sub-outcomes of the window.
        const bool open = hit == ProximalOutcomes::kNoEvent || hit > s;
        full *= factor;
        if (open) pd *= factor;
        if (s <= k) {
          full_k *= factor;
          if (open) pd_k *= factor;
        }
      }
      w.w_pd[ri] = pd;
      w.w_full[ri] = full;
      w.w_k[ri] = pd_k;
      w.w_full_k[ri] = full_k;
    }
  }
  return w;
}

}  // namespace pdemee
