#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "pdemee/dataset.hpp"

namespace pdemee {

/// Deterministic stream: mt19937_64 seeded from splitmix64(seed, stream).
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);

  double uniform();  // [0, 1) with 53 random bits
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

struct GenerativeConfig {
  int n = 100;
  int T = 100;
  int delta = 3;
  double p_a = 0.2;
  std::uint64_t seed = 0;
  double gamma = 0.5;

  /// Rejects configs whose Bernoulli probabilities leave (0,1).
  void validate() const;
};

/// C = gamma^{-1/(2 delta)} + gamma^{1/(2 delta)} + 1.
double normalizing_constant(int delta, double gamma = 0.5);

/// P(Z = 0), P(Z = 1), P(Z = 2).
std::array<double, 3> z_distribution(int delta, double gamma = 0.5);

/// P(R_{t+1} = 0 | A_t = a, Z_t = z).
double no_event_probability(int z, int a, int delta, double gamma = 0.5);

/// E[Y_{t,delta}(a, 0...) | Z_t = z] away from the end of the trial.
double true_conditional_mean(int z, int a, const GenerativeConfig& config);

/// log(E_Z m(Z,1) / E_Z m(Z,0)), the fully marginal effect.
double true_marginal_beta0(const GenerativeConfig& config);

/// One trial: moderators and controls are (intercept, Z). `stream` selects an
/// independent substream of config.seed (the replication index in bench).
MrtDataset generate_trial(const GenerativeConfig& config, std::uint64_t stream = 0);

/// Always-available trial with constant probability p and i.i.d. Bernoulli(q)
/// sub-outcomes. Each individual has delta decision points so the first
/// decision's window carries delta treatment occasions; only that first
/// decision point is analysed.
MrtDataset generate_simplified_trial(double p, double q, int delta, int n, std::uint64_t seed,
                                     std::uint64_t stream = 0);

}  // namespace pdemee
