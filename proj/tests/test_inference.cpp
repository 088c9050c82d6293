#include <doctest.h>

#include <cmath>
#include <random>

#include "pdemee/error.hpp"
#include "pdemee/estimators.hpp"
#include "pdemee/inference.hpp"
#include "support.hpp"

using namespace pdemee;

namespace {

MrtDataset duplicated(const MrtDataset& data, int copies) {
  const auto& c = data.columns();
  MrtColumns out;
  out.delta = c.delta;
  out.moderator_names = c.moderator_names;
  out.control_names = c.control_names;
  const auto rows = c.moderators.rows();
  out.moderators.resize(rows * copies, c.moderators.cols());
  out.controls.resize(rows * copies, c.controls.cols());
  for (int k = 0; k < copies; ++k) {
    for (std::size_t i = 0; i < c.ids.size(); ++i) out.ids.push_back(c.ids[i] + "_" + std::to_string(k));
    out.lengths.insert(out.lengths.end(), c.lengths.begin(), c.lengths.end());
    out.available.insert(out.available.end(), c.available.begin(), c.available.end());
    out.treatment.insert(out.treatment.end(), c.treatment.begin(), c.treatment.end());
    out.rand_prob.insert(out.rand_prob.end(), c.rand_prob.begin(), c.rand_prob.end());
    out.sub_outcome.insert(out.sub_outcome.end(), c.sub_outcome.begin(), c.sub_outcome.end());
    out.moderators.middleRows(k * rows, rows) = c.moderators;
    out.controls.middleRows(k * rows, rows) = c.controls;
  }
  return MrtDataset(std::move(out));
}

EstimatorSpec two_by_two() {
  EstimatorSpec spec;
  spec.moderator_cols = {0, 1};
  spec.control_cols = {0, 1};
  return spec;
}

}  // namespace

TEST_CASE("Woodbury correction equals the explicit leverage inverse") {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> z;
  const int dim = 3, n = 6;
  std::vector<Matrix> b(n), d(n);
  std::vector<Vector> eps(n);
  Matrix total = Matrix::Zero(dim, dim);
  std::vector<IndividualTerms> terms(n);
  for (int i = 0; i < n; ++i) {
    const int rows = 2 + i % 3;
    b[i] = Matrix::NullaryExpr(rows, dim, [&] { return z(gen); });
    d[i] = b[i] + 0.3 * Matrix::NullaryExpr(rows, dim, [&] { return z(gen); });
    eps[i] = Vector::NullaryExpr(rows, [&] { return z(gen); });
    terms[i].score = b[i].transpose() * eps[i];
    terms[i].cross = b[i].transpose() * d[i];
    total += terms[i].cross;
  }
  const auto corrected = apply_small_sample_correction(terms);
  CHECK(corrected.fallbacks == 0);
  const Matrix total_inv = total.inverse();
  for (int i = 0; i < n; ++i) {
    const auto rows = b[i].rows();
    const Matrix h = d[i] * total_inv * b[i].transpose();
    const Vector adjusted = (Matrix::Identity(rows, rows) - h).lu().solve(eps[i]);
    const Vector expected = b[i].transpose() * adjusted;
    CHECK((corrected.scores.row(i).transpose() - expected).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("singular leverage falls back to the raw score") {
  IndividualTerms only;
  only.score = Vector::Constant(2, 0.7);
  only.cross = Matrix::Identity(2, 2);
  const auto corrected = apply_small_sample_correction({only});
  CHECK(corrected.fallbacks == 1);
  CHECK(corrected.scores.row(0).transpose() == only.score);
}

TEST_CASE("sandwich edge cases") {
  const Matrix jac = Matrix::Identity(2, 2) * -1.5;
  CHECK(sandwich_vcov(Matrix::Zero(4, 2), jac).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(sandwich_vcov(Matrix::Ones(4, 2), Matrix::Ones(2, 2)), SingularJacobian);

  std::mt19937_64 gen(9);
  std::normal_distribution<double> z;
  const Matrix scores = Matrix::NullaryExpr(20, 3, [&] { return z(gen); });
  const Matrix bread = Matrix::NullaryExpr(3, 3, [&] { return z(gen); }) + 3.0 * Matrix::Identity(3, 3);
  const Matrix v = sandwich_vcov(scores, bread);
  CHECK((v - v.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(v);
  CHECK(eig.eigenvalues().minCoeff() > -1e-8);
}

TEST_CASE("one individual copied many times has zero variance at its root") {
  testing::Person p{{1, 1, 1}, {1, 0, 1}, {0.5, 0.5, 0.5}, {1, 1, 0, 1}, {}};
  const auto data = testing::make_dataset(1, {p, p, p, p});
  EstimatorSpec spec;
  spec.moderator_cols = {0};
  spec.control_cols = {0};
  const auto res = fit(data, build_proximal_outcomes(data), spec, {.eta = 0.05, .t_critical = false});
  // Root: e^alpha = 1, e^-beta = 2.
  CHECK(res.alpha_hat[0] == doctest::Approx(0.0));
  CHECK(res.beta_hat[0] == doctest::Approx(-std::log(2.0)));
  CHECK(res.vcov_unadjusted.cwiseAbs().maxCoeff() < 1e-20);
}

TEST_CASE("duplicating every individual k times divides the covariance by k") {
  const auto data = testing::random_dataset(71, 15, 6, 2);
  auto spec = two_by_two();
  const auto base = fit(data, build_proximal_outcomes(data), spec);
  for (int k : {2, 3}) {
    const auto big = duplicated(data, k);
    const auto res = fit(big, build_proximal_outcomes(big), spec);
    CHECK((res.beta_hat - base.beta_hat).cwiseAbs().maxCoeff() < 1e-9);
    const Matrix scaled = res.vcov_unadjusted * k;
    CHECK(((scaled - base.vcov_unadjusted).cwiseAbs().array() /
           base.vcov_unadjusted.cwiseAbs().array().max(1e-300))
              .maxCoeff() < 1e-8);
  }
}

TEST_CASE("corrected sandwich and t quantiles") {
  const auto data = testing::random_dataset(72, 12, 5, 2);
  const auto res = fit(data, build_proximal_outcomes(data), two_by_two());
  CHECK(res.diagnostics.df_used == 12 - 4);
  CHECK(res.vcov == res.vcov_adjusted);
  CHECK(res.critical_value == doctest::Approx(2.306004135).epsilon(1e-9));
  for (int j = 0; j < 2; ++j) {
    const double half = 0.5 * (res.ci_beta[j].second - res.ci_beta[j].first);
    CHECK(half == doctest::Approx(res.critical_value * res.se_beta[j]));
  }
  const auto plain = fit(data, build_proximal_outcomes(data), two_by_two(),
                         {.eta = 0.05, .residual_correction = false, .t_critical = false});
  CHECK(plain.diagnostics.df_used == 0);
  CHECK(plain.vcov == plain.vcov_unadjusted);
  CHECK(plain.critical_value == doctest::Approx(1.959963985).epsilon(1e-9));

  const auto rows = summarize(res, {.eta = 0.1});
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].name == "x");
  CHECK(rows[1].se == doctest::Approx(res.se_beta[1]));
  CHECK(rows[1].ci_high - rows[1].estimate == doctest::Approx(critical_value(0.1, 8) * res.se_beta[1]));
}

TEST_CASE("inference configuration errors") {
  CHECK_THROWS_AS(InferenceConfig{.eta = 0.0}.validate(), ConfigError);
  CHECK_THROWS_AS(InferenceConfig{.eta = 1.0}.validate(), ConfigError);
  const auto data = testing::random_dataset(73, 4, 12, 2);
  CHECK_THROWS_AS(fit(data, build_proximal_outcomes(data), two_by_two()), ConfigError);
  const auto ok = fit(data, build_proximal_outcomes(data), two_by_two(), {.df_override = 3});
  CHECK(ok.diagnostics.df_used == 3);
}

TEST_CASE("coefficient summaries") {
  auto row = summarize_coefficient("b", 0.0, 1.0, 0.05, 0);
  CHECK(row.p_value == doctest::Approx(1.0));

  row = summarize_coefficient("b", 0.127, 0.027, 0.05, 0);
  CHECK(row.ci_low == doctest::Approx(0.127 - 1.959963984540054 * 0.027).epsilon(1e-12));
  CHECK(row.ci_high == doctest::Approx(0.127 + 1.959963984540054 * 0.027).epsilon(1e-12));
  CHECK(std::abs(row.ci_low - 0.074) < 1e-3);
  CHECK(std::abs(row.ci_high - 0.180) < 1e-3);

  row = summarize_coefficient("b", 0.5, 0.0, 0.05, 10);
  CHECK(row.degenerate);
  CHECK(row.p_value == kPValueFloor);

  row = summarize_coefficient("b", 60.0, 1.0, 0.05, 0);
  CHECK(row.p_value == kPValueFloor);

  // Same reference distribution for p-value and interval: the interval edge
  // sits exactly at p = eta.
  row = summarize_coefficient("b", 1.0, 0.4, 0.05, 7);
  CHECK(two_sided_p_value(1.0 / 0.4, 7) == doctest::Approx(row.p_value));
  CHECK(two_sided_p_value(critical_value(0.05, 7), 7) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("t critical value approaches the normal one") {
  CHECK(critical_value(0.05, 10000 - 2) / critical_value(0.05, 0) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(critical_value(0.05, 30) > critical_value(0.05, 300));
}
