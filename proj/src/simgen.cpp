#include "pdemee/simgen.hpp"

#include <cmath>
#include <string>

#include "pdemee/error.hpp"

namespace pdemee {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : engine_(splitmix64(splitmix64(seed) ^ splitmix64(~stream))) {}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double normalizing_constant(int delta, double gamma) {
  const double h = 1.0 / (2.0 * delta);
  return std::pow(gamma, -h) + std::pow(gamma, h) + 1.0;
}

std::array<double, 3> z_distribution(int delta, double gamma) {
  const double h = 1.0 / (2.0 * delta);
  const double c = normalizing_constant(delta, gamma);
  return {std::pow(gamma, -h) / c, 1.0 / c, std::pow(gamma, h) / c};
}

double no_event_probability(int z, int a, int delta, double gamma) {
  const double phi0 = std::pow(gamma, (1.5 - 0.5 * z) / delta);
  if (a == 0) return phi0;
  const double kappa = std::pow(3.0 / normalizing_constant(delta, gamma) * std::pow(gamma, 1.0 / delta), delta - 1);
  return (1.0 - (1.0 - phi0 * kappa) * std::exp(0.1 + 0.2 * z)) / kappa;
}

void GenerativeConfig::validate() const {
  if (n < 1) throw ConfigError("n must be >= 1");
  if (T < 1) throw ConfigError("T must be >= 1");
  if (delta < 1) throw ConfigError("delta must be >= 1");
  if (!(p_a > 0.0 && p_a < 1.0)) throw ConfigError("p_a must lie in (0,1)");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0,1)");
  for (int z = 0; z <= 2; ++z)
    for (int a = 0; a <= 1; ++a) {
      const double phi = no_event_probability(z, a, delta, gamma);
      const double m = true_conditional_mean(z, a, *this);
      if (!(phi > 0.0 && phi < 1.0) || !(m > 0.0 && m < 1.0))
        throw ConfigError("generative probabilities leave (0,1) at z=" + std::to_string(z) +
                          ", a=" + std::to_string(a) + " for delta=" + std::to_string(delta));
    }
}

double true_conditional_mean(int z, int a, const GenerativeConfig& config) {
  const int d = config.delta;
  const double c = normalizing_constant(d, config.gamma);
  const double base = 1.0 - std::pow(config.gamma, (d + 0.5 - 0.5 * z) / d) * std::pow(3.0 / c, d - 1);
  return base * std::exp(a * (0.1 + 0.2 * z));
}

double true_marginal_beta0(const GenerativeConfig& config) {
  const auto pz = z_distribution(config.delta, config.gamma);
  double treated = 0.0, control = 0.0;
  for (int z = 0; z <= 2; ++z) {
    treated += pz[z] * true_conditional_mean(z, 1, config);
    control += pz[z] * true_conditional_mean(z, 0, config);
  }
  return std::log(treated / control);
}

namespace {

MrtColumns empty_columns(int n, int T, int delta, int covariates) {
  MrtColumns cols;
  cols.delta = delta;
  const auto rows = static_cast<std::size_t>(n) * T;
  cols.ids.reserve(n);
  for (int i = 0; i < n; ++i) cols.ids.push_back(std::to_string(i + 1));
  cols.lengths.assign(n, T);
  cols.available.assign(rows, 1);
  cols.treatment.assign(rows, 0);
  cols.rand_prob.assign(rows, 0.0);
  cols.sub_outcome.assign(static_cast<std::size_t>(n) * (T + delta), 0);
  cols.moderators.setOnes(static_cast<Eigen::Index>(rows), covariates);
  cols.controls.setOnes(static_cast<Eigen::Index>(rows), covariates);
  return cols;
}

}  // namespace

MrtDataset generate_trial(const GenerativeConfig& config, std::uint64_t stream) {
  config.validate();
  const int T = config.T, d = config.delta;
  auto cols = empty_columns(config.n, T, d, 2);
  cols.moderator_names = {"intercept", "Z"};
  cols.control_names = {"intercept", "Z"};

  const auto pz = z_distribution(d, config.gamma);
  double phi[3][2];
  for (int z = 0; z <= 2; ++z)
    for (int a = 0; a <= 1; ++a) phi[z][a] = no_event_probability(z, a, d, config.gamma);

  Rng rng(config.seed, stream);
  for (int i = 0; i < config.n; ++i) {
    for (int t = 0; t < T; ++t) {
      const auto r = static_cast<std::size_t>(i) * T + t;
      const double u = rng.uniform();
      const int z = u < pz[0] ? 0 : (u < pz[0] + pz[1] ? 1 : 2);
      const int a = rng.bernoulli(config.p_a) ? 1 : 0;
      cols.treatment[r] = static_cast<std::uint8_t>(a);
      cols.rand_prob[r] = config.p_a;
      cols.moderators(static_cast<Eigen::Index>(r), 1) = z;
      cols.controls(static_cast<Eigen::Index>(r), 1) = z;
      cols.sub_outcome[static_cast<std::size_t>(i) * (T + d) + t] = rng.bernoulli(phi[z][a]) ? 0 : 1;
    }
  }
  return MrtDataset(std::move(cols));
}

MrtDataset generate_simplified_trial(double p, double q, int delta, int n, std::uint64_t seed, std::uint64_t stream) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("p must lie in (0,1)");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("q must lie in [0,1]");
  if (delta < 1) throw ConfigError("delta must be >= 1");
  if (n < 1) throw ConfigError("n must be >= 1");
  auto cols = empty_columns(n, delta, delta, 1);
  cols.moderator_names = {"intercept"};
  cols.control_names = {"intercept"};
  Rng rng(seed, stream);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < delta; ++t) {
      const auto r = static_cast<std::size_t>(i) * delta + t;
      cols.treatment[r] = rng.bernoulli(p) ? 1 : 0;
      cols.rand_prob[r] = p;
    }
    for (int s = 0; s < 2 * delta; ++s)
      cols.sub_outcome[static_cast<std::size_t>(i) * 2 * delta + s] = rng.bernoulli(q) ? 1 : 0;
  }
  return MrtDataset(std::move(cols));
}

}  // namespace pdemee
