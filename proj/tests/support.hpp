#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "pdemee/dataset.hpp"
#include "pdemee/simgen.hpp"

namespace testing {

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(PDEMEE_TEST_DATA) / name;
}

/// One individual written out by hand. `x` feeds both the second moderator
/// and the second control; sub has T + delta entries.
struct Person {
  std::vector<int> avail;
  std::vector<int> treat;
  std::vector<double> prob;
  std::vector<int> sub;
  std::vector<double> x;
};

inline pdemee::MrtDataset make_dataset(int delta, const std::vector<Person>& people) {
  pdemee::MrtColumns c;
  c.delta = delta;
  std::size_t rows = 0;
  for (const auto& p : people) rows += p.avail.size();
  c.moderators.resize(static_cast<Eigen::Index>(rows), 2);
  c.controls.resize(static_cast<Eigen::Index>(rows), 2);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < people.size(); ++i) {
    const auto& p = people[i];
    c.ids.push_back("i" + std::to_string(i + 1));
    c.lengths.push_back(static_cast<int>(p.avail.size()));
    for (std::size_t t = 0; t < p.avail.size(); ++t, ++r) {
      c.available.push_back(static_cast<std::uint8_t>(p.avail[t]));
      c.treatment.push_back(static_cast<std::uint8_t>(p.treat[t]));
      c.rand_prob.push_back(p.avail[t] ? p.prob[t] : 0.0);
      const double x = p.x.empty() ? 0.0 : p.x[t];
      c.moderators(r, 0) = 1.0;
      c.moderators(r, 1) = x;
      c.controls(r, 0) = 1.0;
      c.controls(r, 1) = x;
    }
    for (int s : p.sub) c.sub_outcome.push_back(static_cast<std::uint8_t>(s));
  }
  c.moderator_names = {"intercept", "x"};
  c.control_names = {"intercept", "x"};
  return pdemee::MrtDataset(std::move(c));
}

/// Small random panel with availability, varying randomization
/// probabilities and a continuous covariate.
inline pdemee::MrtDataset random_dataset(std::uint64_t seed, int n, int T, int delta, bool constant_prob = false,
                                         double avail = 0.85, double event = 0.3) {
  pdemee::Rng rng(seed, 0);
  std::vector<Person> people(n);
  for (auto& p : people) {
    for (int t = 0; t < T; ++t) {
      const int a = rng.bernoulli(avail) ? 1 : 0;
      const double x = std::round((rng.uniform() * 4.0 - 2.0) * 10.0) / 10.0;
      const double prob = constant_prob ? 0.4 : 0.2 + 0.6 * rng.uniform();
      const int trt = a && rng.bernoulli(prob) ? 1 : 0;
      p.avail.push_back(a);
      p.treat.push_back(trt);
      p.prob.push_back(prob);
      p.x.push_back(x);
      p.sub.push_back(rng.bernoulli(event + 0.1 * trt) ? 1 : 0);
    }
    for (int s = 0; s < delta; ++s) p.sub.push_back(rng.bernoulli(event) ? 1 : 0);
  }
  return make_dataset(delta, people);
}

}  // namespace testing
