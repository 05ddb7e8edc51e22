#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mvmr/errors.hpp"
#include "mvmr/estimators.hpp"
#include "mvmr/rng.hpp"
#include "mvmr/summary_data.hpp"
#include "mvmr/thinning.hpp"

using namespace mvmr;

namespace {

SummaryDataset small_dataset(int p, int k, std::uint64_t seed, double rho = 0.3) {
  rng::Stream s(seed);
  SummaryDataset ds;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(k, k, rho);
  sigma.diagonal().setOnes();
  ds.correlation = SharedCorrelation{sigma};
  for (int i = 0; i < k; ++i) ds.exposure_names.push_back("X" + std::to_string(i + 1));
  for (int j = 0; j < p; ++j) {
    SnpAssociation a;
    a.snp_id = "rs" + std::to_string(j + 1);
    a.gamma_hat.resize(k);
    a.se_x.resize(k);
    for (int i = 0; i < k; ++i) {
      a.gamma_hat(i) = s.next_normal();
      a.se_x(i) = 0.2 + 0.5 * s.next_double();
    }
    a.gamma_outcome_hat = s.next_normal();
    a.se_y = 0.3 + 0.5 * s.next_double();
    ds.snps.push_back(a);
  }
  return ds;
}

}  // namespace

TEST_CASE("thinning plan validation") {
  CHECK_THROWS_AS(ThinningPlan({{0.5, 0.6}, 1}).validate(), ValidationError);
  CHECK_THROWS_AS(ThinningPlan({{1.0}, 1}).validate(), ValidationError);
  CHECK_THROWS_AS(ThinningPlan({{0.0, 1.0}, 1}).validate(), ValidationError);
  CHECK_NOTHROW(ThinningPlan::even(5, 1).validate());
}

TEST_CASE("zero-noise hook halves estimates and scales SEs by sqrt(1/2)") {
  const auto ds = small_dataset(6, 2, 1);
  ThinningOptions opts;
  opts.zero_noise = true;
  const auto reps = thin_two_fold(ds, 7, opts);
  for (int m = 0; m < 2; ++m) {
    for (int j = 0; j < ds.n_snps(); ++j) {
      const auto& fold = reps.folds[m].snps[j];
      const auto& orig = ds.snps[j];
      CHECK((fold.gamma_hat - 0.5 * orig.gamma_hat).cwiseAbs().maxCoeff() <= 1e-15);
      CHECK(fold.gamma_outcome_hat ==
            doctest::Approx(0.5 * orig.gamma_outcome_hat).epsilon(1e-15));
      CHECK((fold.se_x - orig.se_x * std::sqrt(0.5)).cwiseAbs().maxCoeff() <= 1e-15);
      CHECK(fold.se_y == doctest::Approx(orig.se_y * std::sqrt(0.5)));
    }
  }
}

TEST_CASE("fold sum identity is exact") {
  const auto ds = small_dataset(8, 3, 2);
  for (int m_folds : {2, 5}) {
    const auto reps = thin_multi_fold(ds, ThinningPlan::even(m_folds, 11));
    for (int j = 0; j < ds.n_snps(); ++j) {
      Eigen::VectorXd total = Eigen::VectorXd::Zero(3);
      double total_out = 0;
      for (int m = 0; m < m_folds; ++m) {
        total += reps.folds[m].snps[j].gamma_hat;
        total_out += reps.folds[m].snps[j].gamma_outcome_hat;
      }
      CHECK((total - ds.snps[j].gamma_hat).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(total_out == doctest::Approx(ds.snps[j].gamma_outcome_hat).epsilon(1e-12));
    }
  }
}

TEST_CASE("two-fold equals multi-fold with M=2 and even split, same seed") {
  const auto ds = small_dataset(5, 2, 3);
  const auto a = thin_two_fold(ds, 42);
  const auto b = thin_multi_fold(ds, ThinningPlan::even(2, 42));
  for (int m = 0; m < 2; ++m)
    for (int j = 0; j < ds.n_snps(); ++j) {
      CHECK((a.folds[m].snps[j].gamma_hat - b.folds[m].snps[j].gamma_hat)
                .cwiseAbs()
                .maxCoeff() == 0.0);
      CHECK(a.folds[m].snps[j].gamma_outcome_hat == b.folds[m].snps[j].gamma_outcome_hat);
    }
}

TEST_CASE("determinism: identical seed and plan give bit-identical folds") {
  const auto ds = small_dataset(5, 2, 4);
  const auto a = thin_multi_fold(ds, ThinningPlan{{0.5, 0.3, 0.2}, 9});
  const auto b = thin_multi_fold(ds, ThinningPlan{{0.5, 0.3, 0.2}, 9});
  const auto c = thin_multi_fold(ds, ThinningPlan{{0.5, 0.3, 0.2}, 10});
  bool any_diff = false;
  for (int m = 0; m < 3; ++m)
    for (int j = 0; j < ds.n_snps(); ++j) {
      CHECK((a.folds[m].snps[j].gamma_hat - b.folds[m].snps[j].gamma_hat)
                .cwiseAbs()
                .maxCoeff() == 0.0);
      if ((a.folds[m].snps[j].gamma_hat - c.folds[m].snps[j].gamma_hat)
              .cwiseAbs()
              .maxCoeff() > 0)
        any_diff = true;
    }
  CHECK(any_diff);
}

namespace {

// Fresh estimate draw: gamma_hat ~ N(gamma, Sigma_Xj). The thinning
// guarantees (fold variance eps*Sigma, mutual independence) are marginal over
// the estimate's own sampling noise, so the Monte Carlo redraws it each time.
SnpAssociation draw_estimate(const Eigen::VectorXd& gamma, const Eigen::VectorXd& se,
                             const Eigen::MatrixXd& sigma, double gamma_out, double se_y,
                             rng::Stream& s) {
  const Eigen::MatrixXd chol =
      Eigen::LLT<Eigen::MatrixXd>(
          Eigen::MatrixXd(se.asDiagonal() * sigma * se.asDiagonal()))
          .matrixL();
  Eigen::VectorXd z(gamma.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = s.next_normal();
  SnpAssociation a;
  a.snp_id = "rs0";
  a.gamma_hat = gamma + chol * z;
  a.se_x = se;
  a.gamma_outcome_hat = gamma_out + se_y * s.next_normal();
  a.se_y = se_y;
  return a;
}

}  // namespace

TEST_CASE("two-fold moments: cov of fold within 5% and cross-covariance near 0") {
  // One SNP, K=2, known Sigma_Xj; 10^4 draws of (estimate, thinning).
  SummaryDataset base = small_dataset(3, 2, 5, 0.5);
  Eigen::VectorXd gamma(2), se(2);
  gamma << 0.8, -0.3;
  se << 0.4, 0.7;
  const Eigen::MatrixXd sigma_xj =
      se.asDiagonal() * base.correlation.sigma * se.asDiagonal();

  rng::Stream s(97);
  const int n = 10000;
  Eigen::MatrixXd f1(n, 2), f2(n, 2);
  for (int t = 0; t < n; ++t) {
    SummaryDataset ds = base;
    ds.snps[0] = draw_estimate(gamma, se, base.correlation.sigma, 0.2, 0.5, s);
    const auto reps = thin_two_fold(ds, 1000 + static_cast<std::uint64_t>(t));
    f1.row(t) = reps.folds[0].snps[0].gamma_hat.transpose();
    f2.row(t) = reps.folds[1].snps[0].gamma_hat.transpose();
  }
  const Eigen::RowVectorXd m1 = f1.colwise().mean();
  const Eigen::RowVectorXd m2 = f2.colwise().mean();
  const Eigen::MatrixXd c1 =
      (f1.rowwise() - m1).transpose() * (f1.rowwise() - m1) / (n - 1);
  const Eigen::MatrixXd c12 =
      (f1.rowwise() - m1).transpose() * (f2.rowwise() - m2) / (n - 1);

  const Eigen::MatrixXd target = 0.5 * sigma_xj;
  CHECK((c1 - target).cwiseAbs().maxCoeff() <= 0.05 * target.cwiseAbs().maxCoeff());
  // cross-covariances within ~3 standard errors of zero
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const double se_cov = std::sqrt(c1(a, a) * c1(b, b) / n);
      CHECK(std::abs(c12(a, b)) <= 3.5 * se_cov);
    }
  // fold means at gamma/2
  CHECK((m1.transpose() - 0.5 * gamma).cwiseAbs().maxCoeff() <=
        3.5 * std::sqrt(target.diagonal().maxCoeff() / n));
}

TEST_CASE("multi-fold moments with uneven plan (0.5, 0.3, 0.2)") {
  SummaryDataset base = small_dataset(3, 2, 6, 0.4);
  Eigen::VectorXd gamma(2), se(2);
  gamma << 1.2, 0.4;
  se << 0.5, 0.3;
  const std::vector<double> eps = {0.5, 0.3, 0.2};
  const Eigen::MatrixXd sigma_xj =
      se.asDiagonal() * base.correlation.sigma * se.asDiagonal();

  rng::Stream s(131);
  const int n = 10000;
  std::vector<Eigen::MatrixXd> folds(3, Eigen::MatrixXd(n, 2));
  for (int t = 0; t < n; ++t) {
    SummaryDataset ds = base;
    ds.snps[0] = draw_estimate(gamma, se, base.correlation.sigma, 0.1, 0.4, s);
    const auto reps =
        thin_multi_fold(ds, ThinningPlan{eps, 5000 + static_cast<std::uint64_t>(t)});
    for (int m = 0; m < 3; ++m) folds[m].row(t) = reps.folds[m].snps[0].gamma_hat.transpose();
  }
  for (int m = 0; m < 3; ++m) {
    const Eigen::RowVectorXd mean = folds[m].colwise().mean();
    for (int i = 0; i < 2; ++i) {
      const double se_mean = std::sqrt(eps[m] * sigma_xj(i, i) / n);
      CHECK(std::abs(mean(i) - eps[m] * gamma(i)) <= 3.5 * se_mean);
    }
  }
  // pairwise correlations between folds near zero
  for (int m1 = 0; m1 < 3; ++m1)
    for (int m2 = m1 + 1; m2 < 3; ++m2)
      for (int i = 0; i < 2; ++i) {
        Eigen::VectorXd a = folds[m1].col(i), b = folds[m2].col(i);
        a.array() -= a.mean();
        b.array() -= b.mean();
        const double r = a.dot(b) / (a.norm() * b.norm());
        CHECK(std::abs(r) <= 3.5 / std::sqrt(static_cast<double>(n)));
      }
}

TEST_CASE("training complement") {
  const auto ds = small_dataset(7, 2, 7);
  SUBCASE("two folds: complement of fold 1 is fold 2 exactly") {
    const auto reps = thin_two_fold(ds, 13);
    const auto t1 = training_complement(ds, reps, 0);
    for (int j = 0; j < ds.n_snps(); ++j) {
      CHECK((t1.snps[j].gamma_hat - reps.folds[1].snps[j].gamma_hat).cwiseAbs().maxCoeff() ==
            0.0);
      CHECK(t1.snps[j].gamma_outcome_hat == reps.folds[1].snps[j].gamma_outcome_hat);
      CHECK((t1.snps[j].se_x - reps.folds[1].snps[j].se_x).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
  SUBCASE("five equal folds: complement variance scale is 0.8") {
    const auto reps = thin_multi_fold(ds, ThinningPlan::even(5, 17));
    const auto t = training_complement(ds, reps, 2);
    for (int j = 0; j < ds.n_snps(); ++j)
      CHECK((t.snps[j].se_x.array() / ds.snps[j].se_x.array() -
             std::sqrt(0.8)).abs().maxCoeff() <= 1e-12);
  }
  SUBCASE("complement + fold = original on random instances") {
    const auto reps = thin_multi_fold(ds, ThinningPlan{{0.25, 0.35, 0.4}, 23});
    for (int m = 0; m < 3; ++m) {
      const auto t = training_complement(ds, reps, m);
      for (int j = 0; j < ds.n_snps(); ++j) {
        CHECK((t.snps[j].gamma_hat + reps.folds[m].snps[j].gamma_hat -
               ds.snps[j].gamma_hat)
                  .cwiseAbs()
                  .maxCoeff() <= 1e-15);
        CHECK(t.snps[j].gamma_outcome_hat + reps.folds[m].snps[j].gamma_outcome_hat ==
              doctest::Approx(ds.snps[j].gamma_outcome_hat).epsilon(1e-15));
      }
    }
  }
}

TEST_CASE("instrument strength of a fold averages to eps_m of the original") {
  // E over thinning noise of the fold's debiased matrix = eps_m * original.
  const auto ds = small_dataset(25, 2, 8, 0.2);
  const auto dq = build_design(ds);
  const Eigen::MatrixXd original =
      dq.pi_hat.transpose() * dq.w.asDiagonal() * dq.pi_hat - dq.v;

  const int n = 1500;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(2, 2);
  for (int t = 0; t < n; ++t) {
    const auto reps = thin_two_fold(ds, 40000 + static_cast<std::uint64_t>(t));
    const auto dqf = build_design(reps.folds[0]);
    acc += dqf.pi_hat.transpose() * dqf.w.asDiagonal() * dqf.pi_hat - dqf.v;
  }
  acc /= n;
  const Eigen::MatrixXd target = 0.5 * original;
  CHECK((acc - target).cwiseAbs().maxCoeff() <= 0.05 * target.cwiseAbs().maxCoeff());
}
