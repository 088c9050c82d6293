#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace pdemee {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raw columns of a long-format MRT panel. Decision rows of all individuals
/// are stacked in order; `lengths[i]` is individual i's number of decision
/// points T_i. Sub-outcomes are stacked the same way with T_i + delta entries
/// per individual: entry d is the binary event indicator observed after
/// decision point d (0-based), so the window of decision d is d..d+delta-1.
struct MrtColumns {
  int delta = 1;
  std::vector<std::string> ids;
  std::vector<int> lengths;
  std::vector<std::uint8_t> available;
  std::vector<std::uint8_t> treatment;
  std::vector<double> rand_prob;
  std::vector<std::uint8_t> sub_outcome;
  RowMatrix moderators;  // rows x p, first column all ones
  RowMatrix controls;    // rows x q
  std::vector<std::string> moderator_names;
  std::vector<std::string> control_names;
};

/// Validated, immutable MRT panel of individuals x decision points.
class MrtDataset {
 public:
  /// Validates every invariant (availability/treatment consistency,
  /// positivity at available points, follow-up sub-outcomes, intercept
  /// moderator) and throws StructuralError / ValidationError otherwise.
  explicit MrtDataset(MrtColumns columns);

  int n() const noexcept { return static_cast<int>(cols_.lengths.size()); }
  int delta() const noexcept { return cols_.delta; }
  int length(int i) const noexcept { return cols_.lengths[i]; }
  int max_length() const noexcept { return max_length_; }
  std::size_t rows() const noexcept { return cols_.available.size(); }

  /// Index of decision point t (0-based) of individual i in the stacked rows.
  std::size_t row(int i, int t) const noexcept { return row_begin_[i] + t; }
  std::size_t row_begin(int i) const noexcept { return row_begin_[i]; }

  const std::string& id(int i) const noexcept { return cols_.ids[i]; }
  bool available(std::size_t r) const noexcept { return cols_.available[r] != 0; }
  int treatment(std::size_t r) const noexcept { return cols_.treatment[r]; }
  double rand_prob(std::size_t r) const noexcept { return cols_.rand_prob[r]; }

  /// Sub-outcomes of individual i, T_i + delta entries.
  std::span<const std::uint8_t> sub_outcomes(int i) const noexcept {
    return {cols_.sub_outcome.data() + sub_begin_[i],
            static_cast<std::size_t>(cols_.lengths[i] + cols_.delta)};
  }

  const RowMatrix& moderators() const noexcept { return cols_.moderators; }
  const RowMatrix& controls() const noexcept { return cols_.controls; }
  const std::vector<std::string>& moderator_names() const noexcept { return cols_.moderator_names; }
  const std::vector<std::string>& control_names() const noexcept { return cols_.control_names; }
  const MrtColumns& columns() const noexcept { return cols_; }

  /// True when every available point shares one randomization probability.
  bool constant_rand_prob() const noexcept;

  /// Returns a copy whose individuals appear in the given order.
  MrtDataset permuted(std::span<const int> order) const;

 private:
  MrtColumns cols_;
  std::vector<std::size_t> row_begin_;
  std::vector<std::size_t> sub_begin_;
  int max_length_ = 0;
};

/// Y_{t,delta} and the index of the first event in each window.
struct ProximalOutcomes {
  static constexpr int kNoEvent = 0;

  int delta = 1;
  std::vector<std::uint8_t> y;   // per stacked row
  std::vector<int> first_hit;    // 1..delta, or kNoEvent
};

/// Maximum property: y = max of the delta sub-outcomes after each decision.
/// `sub_outcome` holds lengths[i] + delta entries per individual.
ProximalOutcomes build_proximal_outcomes(std::span<const std::uint8_t> sub_outcome,
                                         std::span<const int> lengths, int delta);

ProximalOutcomes build_proximal_outcomes(const MrtDataset& data);

/// Generalized maximum property. `window_outcome` holds, for each stacked
/// decision row, delta cumulative indicators R_{t,t+1..t+delta} that must be
/// nondecreasing (an event cannot un-occur).
ProximalOutcomes build_proximal_outcomes_generalized(
    std::span<const std::uint8_t> window_outcome, std::size_t rows, int delta);

/// Converts instantaneous sub-outcomes into cumulative window indicators.
std::vector<std::uint8_t> cumulative_window_outcomes(const MrtDataset& data);

/// Numerator probability p~_t(S_t) of the stabilized weight M_it.
struct NumeratorPolicy {
  struct Constant {
    double value;
  };
  struct EmpiricalMean {};
  struct LogisticOnS {};

  std::variant<Constant, EmpiricalMean, LogisticOnS> choice = EmpiricalMean{};

  /// Constant(p) when the dataset has a constant randomization probability,
  /// otherwise LogisticOnS.
  static NumeratorPolicy default_for(const MrtDataset& data);
};

/// All inverse-probability weights of one dataset.
struct WeightSet {
  int k = 0;
  Vector p_tilde;   // numerator probability per row (0 where unavailable)
  Vector m;         // stabilized marginal weight M_it (0 where unavailable)
  Vector w_pd;      // per-decision weight W_it
  Vector w_full;    // full-window weight W'_it
  Vector w_k;       // per-decision weight truncated at t + k
  Vector w_full_k;  // full weight truncated at t + k
};

/// Computes M, W, W', W^(k) and the truncated full weight. `moderator_cols`
/// selects S_t for the LogisticOnS numerator (empty = all moderators).
WeightSet compute_weights(const MrtDataset& data, const ProximalOutcomes& outcomes,
                          const NumeratorPolicy& numerator, int k,
                          std::span<const int> moderator_cols = {});

/// Fitted probabilities of a logistic regression of A on S over available rows.
Vector fit_logistic_numerator(const MrtDataset& data, std::span<const int> moderator_cols);

}  // namespace pdemee
