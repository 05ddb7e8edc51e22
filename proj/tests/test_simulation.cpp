#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "mvmr/errors.hpp"
#include "mvmr/estimators.hpp"
#include "mvmr/matrix_core.hpp"
#include "mvmr/rng.hpp"
#include "mvmr/simulation.hpp"
#include "mvmr/summary_data.hpp"

using namespace mvmr;

namespace {

DgpConfig small_cfg(std::int64_t n = 4000, int p = 80) {
  DgpConfig cfg;
  cfg.n = n;
  cfg.n_snps = p;
  cfg.seed = 5;
  cfg.n_null_snps = 60;
  return cfg;
}

}  // namespace

TEST_CASE("compound symmetry smallest eigenvalue is 1 - rho") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(3, 3, 0.995);
  m.diagonal().setOnes();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues().minCoeff() == doctest::Approx(0.005).epsilon(1e-10));
}

TEST_CASE("generate_true_gammas enforces the block sparsity pattern") {
  const DgpConfig cfg = small_cfg();
  const auto gammas = generate_true_gammas(cfg, 3);
  REQUIRE(gammas.rows() == 80);
  REQUIRE(gammas.cols() == 10);
  const int p_all = 16, p_first = 32;  // 20% / 40% of 80
  for (int j = p_all; j < p_all + p_first; ++j)
    CHECK(gammas.row(j).tail(4).cwiseAbs().maxCoeff() == 0.0);
  for (int j = p_all + p_first; j < 80; ++j)
    CHECK(gammas.row(j).head(6).cwiseAbs().maxCoeff() == 0.0);
  int nonzero_all = 0;
  for (int j = 0; j < p_all; ++j)
    nonzero_all += gammas.row(j).cwiseAbs().minCoeff() > 0 ? 1 : 0;
  CHECK(nonzero_all == p_all);
}

TEST_CASE("cluster-1 rows have sample covariance near gamma_var * Sigma_cluster1") {
  DgpConfig cfg;
  cfg.n_snps = 4000;  // plenty of draws for a 10% moment check
  cfg.n = 1000;
  const auto gammas = generate_true_gammas(cfg, 11);
  const int p_all = 800, p_first = 1600;
  Eigen::MatrixXd rows(p_first, 6);
  for (int j = 0; j < p_first; ++j) rows.row(j) = gammas.row(p_all + j).head(6);
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  const Eigen::MatrixXd cov =
      (rows.rowwise() - mean).transpose() * (rows.rowwise() - mean) / (p_first - 1);

  Eigen::MatrixXd expected(6, 6);
  expected.topLeftCorner(3, 3) = Eigen::MatrixXd::Constant(3, 3, 0.995);
  expected.bottomRightCorner(3, 3) = Eigen::MatrixXd::Constant(3, 3, 0.9);
  expected.topRightCorner(3, 3).setConstant(0.5);
  expected.bottomLeftCorner(3, 3).setConstant(0.5);
  expected.diagonal().setOnes();
  expected *= cfg.gamma_var;
  CHECK((cov - expected).cwiseAbs().maxCoeff() <= 0.10 * expected.cwiseAbs().maxCoeff());
}

TEST_CASE("heritability of each exposure is near 2 percent") {
  DgpConfig cfg;  // paper-scale defaults
  const auto design = make_design(cfg);
  for (int k = 0; k < cfg.n_exposures; ++k) {
    double g = 0.0;
    for (int j = 0; j < cfg.n_snps; ++j) {
      const double vz = 2.0 * design.maf(j) * (1.0 - design.maf(j));
      g += vz * design.gammas(j, k) * design.gammas(j, k);
    }
    const double h2 = g / (g + cfg.sigma_u * cfg.sigma_u + cfg.sigma_e * cfg.sigma_e);
    CHECK(h2 > 0.01);
    CHECK(h2 < 0.035);
  }
}

TEST_CASE("noiseless diagonal design recovers gamma exactly") {
  DgpConfig cfg;
  cfg.n = 500;
  cfg.n_snps = 6;
  cfg.n_exposures = 4;
  cfg.cluster1_size = 2;
  cfg.cluster2_size = 2;
  cfg.sigma_u = 0.0;
  cfg.sigma_e = 0.0;
  cfg.standardize = false;
  cfg.sigma_policy = DgpConfig::SigmaPolicy::kIdentity;
  cfg.beta_true = Eigen::VectorXd::Zero(4);
  cfg.seed = 2;
  DgpDesign design = make_design(cfg);
  design.gammas.setZero();
  for (int k = 0; k < 4; ++k) design.gammas(k, k) = 0.3 + 0.1 * k;  // one SNP per exposure
  const auto ds = simulate_summary_stats(cfg, design, 77);
  for (int k = 0; k < 4; ++k)
    CHECK(ds.snps[k].gamma_hat(k) == doctest::Approx(design.gammas(k, k)).epsilon(1e-10));
}

TEST_CASE("streaming OLS matches a dense reference on a 50-individual instance") {
  DgpConfig cfg;
  cfg.n = 50;
  cfg.n_snps = 12;
  cfg.n_exposures = 4;
  cfg.cluster1_size = 2;
  cfg.cluster2_size = 2;
  cfg.beta_true = Eigen::VectorXd::Zero(4);
  cfg.beta_true(0) = 1.0;
  cfg.sigma_policy = DgpConfig::SigmaPolicy::kIdentity;
  cfg.seed = 9;
  const DgpDesign design = make_design(cfg);
  const std::uint64_t seed = 1234;
  const auto ds = simulate_summary_stats(cfg, design, seed);

  // Dense reference: materialize both cohorts with the same keyed fills.
  const int n = 50, p = 12, k = 4;
  const detail::GenotypeThresholds thr(design.maf.head(p));
  const std::uint64_t seed_y = mvmr::rng::mix(seed, 0x0C0207ULL);

  auto dense_cohort = [&](std::uint64_t cohort_seed, int cohort) {
    detail::RowMat z(n, p), e(n, k);
    Eigen::VectorXd u(n);
    detail::fill_genotypes(z, thr, cohort_seed, cohort, 0);
    detail::fill_confounder_noise(u, e, cfg.sigma_u, cfg.sigma_e, cohort_seed, cohort, 0);
    Eigen::MatrixXd x = z * design.gammas + e;
    x.colwise() += u;
    return std::make_tuple(Eigen::MatrixXd(z), x, u);
  };

  auto ols = [&](const Eigen::VectorXd& zc, const Eigen::VectorXd& yc) {
    const double zm = zc.mean(), ym = yc.mean();
    const Eigen::VectorXd zd = zc.array() - zm;
    const Eigen::VectorXd yd = yc.array() - ym;
    const double slope = zd.dot(yd) / zd.squaredNorm();
    const double rss = (yd - slope * zd).squaredNorm();
    const double se = std::sqrt(rss / (n - 2) / zd.squaredNorm());
    return std::make_pair(slope, se);
  };

  {
    auto [z, x, u] = dense_cohort(seed, 1);
    for (int i = 0; i < k; ++i) {
      Eigen::VectorXd xc = x.col(i);
      const double sd = std::sqrt((xc.array() - xc.mean()).square().sum() / (n - 1));
      xc /= sd;
      for (int j = 0; j < p; ++j) {
        auto [slope, se] = ols(z.col(j), xc);
        CHECK(ds.snps[j].gamma_hat(i) == doctest::Approx(slope).epsilon(1e-10));
        CHECK(ds.snps[j].se_x(i) == doctest::Approx(se).epsilon(1e-10));
      }
    }
  }
  {
    auto [z, x, u] = dense_cohort(seed_y, 2);
    Eigen::VectorXd noise(n);
    detail::fill_outcome_noise(noise, cfg.sigma_e, seed_y, 0);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < k; ++i) {
      Eigen::VectorXd xc = x.col(i);
      const double m = xc.mean();
      const double sd = std::sqrt((xc.array() - m).square().sum() / (n - 1));
      y += cfg.beta_true(i) * (xc.array() - m).matrix() / sd;
    }
    y += u + noise;
    for (int j = 0; j < p; ++j) {
      auto [slope, se] = ols(z.col(j), y);
      CHECK(ds.snps[j].gamma_outcome_hat == doctest::Approx(slope).epsilon(1e-10));
      CHECK(ds.snps[j].se_y == doctest::Approx(se).epsilon(1e-10));
    }
  }
}

TEST_CASE("swapping the outcome-cohort seed changes outcome stats only") {
  const DgpConfig cfg = small_cfg();
  const auto design = make_design(cfg);
  const auto a = simulate_summary_stats(cfg, design, 10, 20);
  const auto b = simulate_summary_stats(cfg, design, 10, 21);
  bool outcome_changed = false;
  for (int j = 0; j < cfg.n_snps; ++j) {
    CHECK((a.snps[j].gamma_hat - b.snps[j].gamma_hat).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.snps[j].se_x - b.snps[j].se_x).cwiseAbs().maxCoeff() == 0.0);
    if (a.snps[j].gamma_outcome_hat != b.snps[j].gamma_outcome_hat) outcome_changed = true;
  }
  CHECK(outcome_changed);
}

TEST_CASE("empirical-null sigma policy yields a PD correlation near the truth") {
  DgpConfig cfg = small_cfg(20000, 60);
  cfg.n_null_snps = 400;
  const auto design = make_design(cfg);
  const auto ds = simulate_summary_stats(cfg, design, 31);
  CHECK_NOTHROW(ds.correlation.validate());
  // shared confounder with sigma_u=2, sigma_e=1 gives error correlation near 0.8
  double off = 0.0;
  int count = 0;
  for (int a = 0; a < 10; ++a)
    for (int b = a + 1; b < 10; ++b) {
      off += ds.correlation.sigma(a, b);
      ++count;
    }
  CHECK(off / count == doctest::Approx(0.79).epsilon(0.12));
}

TEST_CASE("compute_metrics pinned examples") {
  Eigen::VectorXd truth(10);
  truth << 1, 1, 1, 0, 0, 0, 0, 0, 0.5, 0;
  SUBCASE("zero estimate") {
    const auto m = compute_metrics(Eigen::VectorXd::Zero(10), truth);
    CHECK(m.sensitivity == 0.0);
    CHECK(m.fpr == 0.0);
    CHECK(m.correct_sparsity == doctest::Approx(0.6));
    CHECK(m.mse == doctest::Approx(0.325));
  }
  SUBCASE("perfect estimate") {
    const auto m = compute_metrics(truth, truth);
    CHECK(m.sensitivity == 1.0);
    CHECK(m.fpr == 0.0);
    CHECK(m.correct_sparsity == 1.0);
    CHECK(m.mse == 0.0);
  }
  SUBCASE("wrong sign on coordinate 1 is not a correct selection") {
    Eigen::VectorXd est = truth;
    est(0) = -1.0;
    const auto m = compute_metrics(est, truth);
    CHECK(m.sensitivity == doctest::Approx(0.75));
    CHECK(m.fpr == 0.0);
    CHECK(m.correct_sparsity == doctest::Approx(0.9));
    CHECK(m.mse == doctest::Approx(0.4));
  }
  SUBCASE("explicit mask overrides the threshold rule") {
    Eigen::VectorXd est = truth;
    std::vector<bool> mask(10, false);
    mask[0] = true;
    const auto m = compute_metrics(est, truth, mask);
    CHECK(m.sensitivity == doctest::Approx(0.25));
    CHECK(m.fpr == 0.0);
  }
}

TEST_CASE("fast summary-level generator centers on the standardized truth") {
  DgpConfig cfg = small_cfg(50000, 100);
  const auto design = make_design(cfg);
  // expected standardized gamma for one strong SNP
  Eigen::VectorXd sd(10);
  for (int k = 0; k < 10; ++k) {
    double g = 0;
    for (int j = 0; j < 100; ++j) {
      const double vz = 2.0 * design.maf(j) * (1.0 - design.maf(j));
      g += vz * design.gammas(j, k) * design.gammas(j, k);
    }
    sd(k) = std::sqrt(g + cfg.sigma_u * cfg.sigma_u + cfg.sigma_e * cfg.sigma_e);
  }
  const int reps = 400;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(10);
  double se0 = 0;
  for (int r = 0; r < reps; ++r) {
    const auto ds = simulate_summary_stats_fast(cfg, design, 100 + r);
    acc += ds.snps[0].gamma_hat;
    se0 = ds.snps[0].se_x(0);
  }
  acc /= reps;
  const Eigen::VectorXd expected = design.gammas.row(0).transpose().cwiseQuotient(sd);
  CHECK((acc - expected).cwiseAbs().maxCoeff() <= 4.0 * se0 / std::sqrt(double(reps)));
}

TEST_CASE("run_experiment is deterministic and reports per-estimator rows") {
  DgpConfig cfg = small_cfg(3000, 60);
  cfg.n_null_snps = 40;
  const auto a = run_experiment(cfg, {"ivw", "dlasso"}, 2, 77);
  const auto b = run_experiment(cfg, {"ivw", "dlasso"}, 2, 77);
  REQUIRE(a.rows.size() == 2);
  CHECK(a.rows[0].estimator == "ivw");
  CHECK(a.rows[1].estimator == "dlasso");
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].median_mse == b.rows[i].median_mse);
    CHECK(a.rows[i].correct_sparsity == b.rows[i].correct_sparsity);
    CHECK(a.rows[i].sensitivity == b.rows[i].sensitivity);
    CHECK(a.rows[i].fpr == b.rows[i].fpr);
    CHECK(a.rows[i].n_ok + a.rows[i].n_failed == 2);
  }
  REQUIRE(a.records.size() == 4);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    if (a.records[i].ok && b.records[i].ok)
      CHECK((a.records[i].beta_hat - b.records[i].beta_hat).cwiseAbs().maxCoeff() == 0.0);
  }
  // threaded run reduces identically
  const auto c = run_experiment(cfg, {"ivw", "dlasso"}, 2, 77, 2);
  for (std::size_t i = 0; i < a.rows.size(); ++i)
    CHECK(a.rows[i].median_mse == c.rows[i].median_mse);
}

TEST_CASE("dgp config validation") {
  DgpConfig cfg;
  cfg.frac_all = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  DgpConfig cfg2;
  cfg2.cluster1_size = 5;
  CHECK_THROWS_AS(cfg2.validate(), ValidationError);
  DgpConfig ok;
  CHECK_NOTHROW(ok.validate());
}
