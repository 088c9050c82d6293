#include "pdemee/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>

#include "pdemee/error.hpp"

namespace pdemee {

const std::vector<int>& AnalysisSpec::moderator_cols() const {
  return std::visit([](const auto& s) -> const std::vector<int>& { return s.moderator_cols; }, spec);
}

FitResult fit_analysis(const MrtDataset& data, const ProximalOutcomes& outcomes, const AnalysisSpec& analysis,
                       const InferenceConfig& inference, ExecPolicy exec) {
  if (const auto* gee = std::get_if<GeeSpec>(&analysis.spec)) return fit_gee(data, outcomes, *gee, inference, exec);
  return fit(data, outcomes, std::get<EstimatorSpec>(analysis.spec), inference, exec);
}

const ParameterRecord& SimulationReport::record(const std::string& estimator, const std::string& parameter) const {
  for (const auto& r : records)
    if (r.estimator == estimator && r.parameter == parameter) return r;
  throw ValidationError("no record for " + estimator + " / " + parameter);
}

const std::vector<double>& SimulationReport::estimates_of(const std::string& estimator, std::size_t parameter) const {
  for (std::size_t e = 0; e < labels.size(); ++e)
    if (labels[e] == estimator) return estimates.at(e).at(parameter);
  throw ValidationError("no estimator labelled " + estimator);
}

namespace {

struct Outcome {
  bool ok = false;
  Vector beta;
  Vector se_unadj;
  Vector se_adj;
  double crit_unadj = 0.0;
  double crit_adj = 0.0;
};

using Replication = std::vector<Outcome>;

Replication run_one(const GenerativeConfig& config, const std::vector<AnalysisSpec>& analyses, int rep, double eta) {
  const auto data = generate_trial(config, static_cast<std::uint64_t>(rep));
  const auto outcomes = build_proximal_outcomes(data);
  Replication out(analyses.size());
  std::map<int, WeightSet> cache;  // default-numerator weights per horizon

  InferenceConfig inference;
  inference.eta = eta;
  for (std::size_t e = 0; e < analyses.size(); ++e) {
    try {
      FitResult fit_result;
      if (const auto* spec = std::get_if<EstimatorSpec>(&analyses[e].spec); spec && !spec->numerator) {
        const int k = spec->horizon(data);
        auto it = cache.find(k);
        if (it == cache.end())
          it = cache.emplace(k, compute_weights(data, outcomes, NumeratorPolicy::default_for(data), k)).first;
        fit_result = fit(data, outcomes, it->second, *spec, inference);
      } else {
        fit_result = fit_analysis(data, outcomes, analyses[e], inference);
      }
      auto& o = out[e];
      o.beta = fit_result.beta_hat;
      const int p = fit_result.p();
      o.se_unadj = fit_result.beta_vcov(false).diagonal().cwiseMax(0.0).cwiseSqrt();
      o.se_adj = fit_result.beta_vcov(true).diagonal().cwiseMax(0.0).cwiseSqrt();
      o.crit_unadj = critical_value(eta, 0);
      o.crit_adj = critical_value(eta, fit_result.n_individuals - p - fit_result.q());
      o.ok = o.beta.allFinite() && o.se_adj.allFinite() && o.se_unadj.allFinite();
    } catch (const Error&) {
      out[e].ok = false;
    }
  }
  return out;
}

double median(std::vector<double> v) {
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  return m;
}

}  // namespace

SimulationReport run_replications(const GenerativeConfig& config, const std::vector<AnalysisSpec>& analyses, int reps,
                                  const std::vector<std::vector<double>>& truth, double eta, ExecPolicy exec) {
  if (reps < 1) throw ConfigError("reps must be >= 1");
  if (analyses.empty()) throw ConfigError("at least one estimator is required");
  if (truth.size() != analyses.size()) throw ConfigError("one truth vector per estimator is required");
  for (std::size_t e = 0; e < analyses.size(); ++e)
    if (truth[e].size() != analyses[e].moderator_cols().size())
      throw ConfigError("truth for '" + analyses[e].label + "' must have one value per moderator");
  config.validate();

  const auto start = std::chrono::steady_clock::now();
  std::vector<Replication> results(reps);
  if (exec == ExecPolicy::Serial) {
    for (int r = 0; r < reps; ++r) results[r] = run_one(config, analyses, r, eta);
  } else {
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (int r = 0; r < reps; ++r) {
      try {
        results[r] = run_one(config, analyses, r, eta);
      } catch (...) {
#pragma omp critical(pdemee_bench_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  SimulationReport report;
  report.replications = reps;
  report.failures.assign(analyses.size(), 0);
  for (const auto& a : analyses) report.labels.push_back(a.label);
  report.estimates.resize(analyses.size());
  for (std::size_t e = 0; e < analyses.size(); ++e) report.estimates[e].resize(truth[e].size());

  struct Sums {
    int cover_unadj = 0, cover_adj = 0, narrower = 0;
    std::vector<double> se;
    std::vector<double> se_unadj;
  };
  std::vector<std::vector<Sums>> sums(analyses.size());
  for (std::size_t e = 0; e < analyses.size(); ++e) sums[e].resize(truth[e].size());

  for (const auto& rep : results) {
    bool all_ok = true;
    for (std::size_t e = 0; e < rep.size(); ++e)
      if (!rep[e].ok) {
        ++report.failures[e];
        all_ok = false;
      }
    if (!all_ok) continue;
    ++report.used;
    for (std::size_t e = 0; e < rep.size(); ++e) {
      const auto& o = rep[e];
      for (std::size_t j = 0; j < truth[e].size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const double est = o.beta[jj];
        report.estimates[e][j].push_back(est);
        auto& s = sums[e][j];
        const double half_unadj = o.crit_unadj * o.se_unadj[jj];
        const double half_adj = o.crit_adj * o.se_adj[jj];
        if (std::abs(est - truth[e][j]) <= half_unadj) ++s.cover_unadj;
        if (std::abs(est - truth[e][j]) <= half_adj) ++s.cover_adj;
        if (half_adj < half_unadj) ++s.narrower;
        s.se.push_back(o.se_adj[jj]);
        s.se_unadj.push_back(o.se_unadj[jj]);
      }
    }
  }

  for (std::size_t e = 0; e < analyses.size(); ++e) {
    const auto& names = analyses[e].moderator_cols();
    for (std::size_t j = 0; j < truth[e].size(); ++j) {
      ParameterRecord rec;
      rec.estimator = analyses[e].label;
      static const char* const kGeneratedNames[] = {"intercept", "Z"};
      rec.parameter = names[j] >= 0 && names[j] < 2 ? kGeneratedNames[names[j]] : "S" + std::to_string(names[j]);
      rec.truth = truth[e][j];
      const auto& est = report.estimates[e][j];
      rec.replications = static_cast<int>(est.size());
      if (!est.empty()) {
        const double m = std::accumulate(est.begin(), est.end(), 0.0) / static_cast<double>(est.size());
        rec.mean = m;
        rec.bias = m - rec.truth;
        if (est.size() >= 2) {
          double ss = 0.0;
          for (double x : est) ss += (x - m) * (x - m);
          const double sd = std::sqrt(ss / static_cast<double>(est.size()));
          rec.sd = sd;
          rec.rmse = std::sqrt(rec.bias * rec.bias + sd * sd);
          const auto& s = sums[e][j];
          const double used = static_cast<double>(est.size());
          rec.cp_unadj = s.cover_unadj / used;
          rec.cp_adj = s.cover_adj / used;
          rec.mean_se = std::accumulate(s.se.begin(), s.se.end(), 0.0) / used;
          rec.median_se = median(s.se);
          rec.median_se_unadj = median(s.se_unadj);
          rec.adj_narrower = s.narrower;
        }
      }
      report.records.push_back(std::move(rec));
    }
  }

  for (std::size_t e = 0; e < analyses.size(); ++e)
    if (report.failures[e] > 0.05 * reps)
      report.warnings.push_back(analyses[e].label + ": " + std::to_string(report.failures[e]) + " of " +
                                std::to_string(reps) + " fits failed");
  if (report.used < 2) report.warnings.push_back("fewer than two usable replications; SD is not reported");
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

RatioEstimate relative_efficiency(const std::vector<double>& numerator, const std::vector<double>& denominator) {
  if (numerator.size() != denominator.size()) throw ValidationError("relative efficiency needs paired samples");
  const auto n = numerator.size();
  if (n < 3) throw ValidationError("relative efficiency needs at least three replications");
  double sa = 0, sb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sa += numerator[i];
    sb += denominator[i];
  }
  const double ma = sa / n, mb = sb / n;
  double ca = 0, cb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ca += (numerator[i] - ma) * (numerator[i] - ma);
    cb += (denominator[i] - mb) * (denominator[i] - mb);
  }
  if (!(cb > 0.0)) throw ValidationError("denominator estimates have zero variance");
  RatioEstimate out;
  out.value = ca / cb;

  // Leave-one-out centered sums: removing x from a sample with mean m and
  // centered sum C gives C - (n/(n-1)) (x - m)^2.
  const double scale = static_cast<double>(n) / static_cast<double>(n - 1);
  std::vector<double> loo(n);
  double mean_loo = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = numerator[i] - ma, db = denominator[i] - mb;
    loo[i] = (ca - scale * da * da) / (cb - scale * db * db);
    mean_loo += loo[i];
  }
  mean_loo /= n;
  double ss = 0.0;
  for (double v : loo) ss += (v - mean_loo) * (v - mean_loo);
  out.se = std::sqrt((static_cast<double>(n - 1) / n) * ss);
  return out;
}

const char* to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Delta: return "delta";
    case SweepAxis::RandProb: return "rand_prob";
    case SweepAxis::K: return "k";
  }
  return "?";
}

EfficiencyCurve efficiency_sweep(SweepAxis axis, const std::vector<double>& grid, const GenerativeConfig& base,
                                 int reps, ExecPolicy exec) {
  if (grid.empty()) throw ConfigError("sweep grid must be nonempty");
  EfficiencyCurve curve;
  curve.axis = axis;
  for (double x : grid) {
    GenerativeConfig config = base;
    EstimatorSpec pd, full;
    pd.moderator_cols = full.moderator_cols = {0};
    pd.control_cols = full.control_cols = {0, 1};
    pd.kind = EstimatorKind::PdEmee;
    full.kind = EstimatorKind::Emee;
    switch (axis) {
      case SweepAxis::Delta:
        if (x < 1 || x != std::floor(x)) throw ConfigError("delta grid values must be positive integers");
        config.delta = static_cast<int>(x);
        break;
      case SweepAxis::RandProb:
        config.p_a = x;
        break;
      case SweepAxis::K:
        if (x < 0 || x != std::floor(x) || x > base.delta - 1)
          throw ConfigError("k grid values must be integers in [0, delta-1]");
        pd.kind = EstimatorKind::RefRegimeK;
        full.kind = EstimatorKind::RefRegimeKFull;
        pd.k = full.k = static_cast<int>(x);
        break;
    }
    const std::vector<AnalysisSpec> analyses = {{"pd", pd}, {"full", full}};
    const auto report = run_replications(config, analyses, reps, {{0.0}, {0.0}}, 0.05, exec);
    EfficiencyPoint point;
    point.x = x;
    point.replications = report.used;
    const auto re = relative_efficiency(report.estimates[1][0], report.estimates[0][0]);
    point.rel_eff = re.value;
    point.mc_se = re.se;
    curve.points.push_back(point);
  }
  return curve;
}

double analytic_relative_efficiency(double p, double q, int delta) {
  if (!(p > 0.0 && p < 1.0) || !(q > 0.0 && q < 1.0)) throw ValidationError("p and q must lie in (0,1)");
  if (delta < 1) throw ValidationError("delta must be >= 1");
  if (delta == 1) return 1.0;
  const double hit = 1.0 - std::pow(1.0 - q, delta);
  if (p == q) return hit / (q * delta * std::pow(1.0 - p, delta - 1));
  return hit / (std::pow(1.0 - p, delta) - std::pow(1.0 - q, delta)) * (q - p) / q;
}

SimplifiedEstimates fit_simplified(const MrtDataset& data, double p) {
  const int delta = data.delta();
  double treated[2] = {0, 0}, control[2] = {0, 0};  // [per-decision, full]
  for (int i = 0; i < data.n(); ++i) {
    if (data.length(i) < delta) throw StructuralError("simplified setting needs delta decision points per individual");
    const auto sub = data.sub_outcomes(i);
    int y = 0;
    for (int s = 0; s < delta; ++s) y = std::max<int>(y, sub[s]);
    if (!y) continue;
    double w_pd = 1.0, w_full = 1.0;
    bool seen = sub[0] != 0;
    for (int j = 1; j < delta; ++j) {
      const double factor = data.treatment(data.row(i, j)) ? 0.0 : 1.0 / (1.0 - p);
      w_full *= factor;
      if (!seen) w_pd *= factor;
      seen = seen || sub[j] != 0;
    }
    const bool a = data.treatment(data.row(i, 0)) != 0;
    (a ? treated : control)[0] += w_pd;
    (a ? treated : control)[1] += w_full;
  }
  SimplifiedEstimates out;
  if (treated[0] > 0 && control[0] > 0) out.per_decision = std::log((1 - p) * treated[0] / (p * control[0]));
  if (treated[1] > 0 && control[1] > 0) out.full = std::log((1 - p) * treated[1] / (p * control[1]));
  return out;
}

SimplifiedEfficiency simplified_relative_efficiency(double p, double q, int delta, int n, int reps,
                                                    std::uint64_t seed, ExecPolicy exec) {
  if (reps < 3) throw ConfigError("reps must be >= 3");
  std::vector<SimplifiedEstimates> results(reps);
  auto one = [&](int r) { results[r] = fit_simplified(generate_simplified_trial(p, q, delta, n, seed, r), p); };
  if (exec == ExecPolicy::Serial) {
    for (int r = 0; r < reps; ++r) one(r);
  } else {
    std::exception_ptr failure;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < reps; ++r) {
      try {
        one(r);
      } catch (...) {
#pragma omp critical(pdemee_simplified_failure)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  std::vector<double> pd, full;
  SimplifiedEfficiency out;
  for (const auto& r : results) {
    if (r.per_decision && r.full) {
      pd.push_back(*r.per_decision);
      full.push_back(*r.full);
    } else {
      ++out.failed;
    }
  }
  out.used = static_cast<int>(pd.size());
  out.re = relative_efficiency(full, pd);
  return out;
}

}  // namespace pdemee
