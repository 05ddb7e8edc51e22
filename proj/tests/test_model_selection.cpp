#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mvmr/errors.hpp"
#include "mvmr/estimators.hpp"
#include "mvmr/model_selection.hpp"
#include "mvmr/rng.hpp"
#include "mvmr/summary_data.hpp"

using namespace mvmr;

namespace {

SummaryDataset strong_dataset(int p, int k, std::uint64_t seed, const Eigen::VectorXd& beta,
                              double noise = 0.05) {
  rng::Stream s(seed);
  SummaryDataset ds;
  ds.correlation = SharedCorrelation::identity(k);
  for (int i = 0; i < k; ++i) ds.exposure_names.push_back("X" + std::to_string(i + 1));
  for (int j = 0; j < p; ++j) {
    SnpAssociation a;
    a.snp_id = "rs" + std::to_string(j + 1);
    a.gamma_hat.resize(k);
    for (int i = 0; i < k; ++i) a.gamma_hat(i) = s.next_normal();
    a.se_x = Eigen::VectorXd::Constant(k, 0.05);
    a.se_y = 0.1;
    a.gamma_outcome_hat = a.gamma_hat.dot(beta) + noise * s.next_normal();
    ds.snps.push_back(a);
  }
  return ds;
}

}  // namespace

TEST_CASE("build_lambda_grid anchors") {
  SUBCASE("mu_min below p uses (p/2)^(1/3)") {
    InstrumentStrength st;
    st.mu_min = 0.0;
    const auto grid = build_lambda_grid(st, 128, 5);
    CHECK(grid.base_rate == doctest::Approx(4.0).epsilon(1e-12));
  }
  SUBCASE("mu_min above p uses the rate (mu/sqrt(mu+p))^(2/3)") {
    InstrumentStrength st;
    st.mu_min = 400.0;
    const auto grid = build_lambda_grid(st, 100, 5);
    CHECK(grid.base_rate ==
          doctest::Approx(std::pow(400.0 / std::sqrt(500.0), 2.0 / 3.0)).epsilon(1e-12));
  }
  SUBCASE("grid is ascending with the requested length and span") {
    InstrumentStrength st;
    st.mu_min = -3.0;
    const auto grid = build_lambda_grid(st, 50, 25);
    REQUIRE(grid.lambdas.size() == 25);
    for (std::size_t i = 1; i < grid.lambdas.size(); ++i)
      CHECK(grid.lambdas[i] > grid.lambdas[i - 1]);
    CHECK(grid.lambdas.front() == doctest::Approx(grid.base_rate * 1e-2));
    CHECK(grid.lambdas.back() == doctest::Approx(grid.base_rate * 1e2));
    CHECK(grid.taus == std::vector<double>{0.5, 1.0, 2.0, 3.0});
  }
}

TEST_CASE("ridge grid anchor and endpoints") {
  InstrumentStrength st;
  st.mu_min = -5.0;
  CHECK(ridge_grid_anchor(st, 32) == doctest::Approx(4.0).epsilon(1e-12));
  const auto grid = ridge_grid(4.0, 25);
  REQUIRE(grid.size() == 25);
  CHECK(grid.front() == doctest::Approx(4e-4).epsilon(1e-10));
  CHECK(grid.back() == doctest::Approx(4e2).epsilon(1e-10));
}

TEST_CASE("cv_ridge picks immaterial shrinkage on strong-instrument data") {
  Eigen::VectorXd beta(3);
  beta << 1.0, -0.5, 0.25;
  const auto ds = strong_dataset(60, 3, 5, beta);
  const auto dq = build_design(ds);
  const auto st = instrument_strength(dq);
  REQUIRE(st.mu_min > 3.0 * dq.n_snps());  // comfortably strong
  const double phi = cv_ridge(ds, ThinningPlan::even(5, 7));
  const double anchor = ridge_grid_anchor(st, dq.n_snps());
  // phi* lands in the lower half of the [B*1e-4, B*1e2] grid span
  CHECK(phi <= anchor * 0.5 * (1e-4 + 1e2));
  // and the selected shrinkage barely moves the estimate
  const auto at_star = fit_dridge(dq, phi);
  const auto at_zero = fit_dridge(dq, 0.0);
  CHECK((at_star.beta - at_zero.beta).norm() <= 0.01 * at_zero.beta.norm());
}

TEST_CASE("cv fold separation: training fit ignores the held-out fold") {
  Eigen::VectorXd beta(3);
  beta << 0.8, 0.0, -0.3;
  const auto ds = strong_dataset(50, 3, 9, beta);
  auto folds = make_cv_folds(ds, ThinningPlan::even(5, 11));
  REQUIRE(folds.size() == 5);
  const auto fit_before = fit_dridge(folds[0].train, 0.5);
  // Mutating the validation copy must not change anything about the training fit.
  folds[0].validation.b.setConstant(1e9);
  folds[0].validation.a.setIdentity();
  const auto fit_after = fit_dridge(folds[0].train, 0.5);
  CHECK((fit_before.beta - fit_after.beta).cwiseAbs().maxCoeff() == 0.0);
  // And the loss depends only on the validation fold.
  const double loss1 = validation_loss(folds[1].validation, fit_before.beta);
  const double loss0 = validation_loss(folds[0].validation, fit_before.beta);
  CHECK(loss0 != loss1);
}

TEST_CASE("cv_pacs single-candidate grid returns that candidate under either rule") {
  Eigen::VectorXd beta(2);
  beta << 0.6, 0.0;
  const auto ds = strong_dataset(40, 2, 13, beta);
  TuningGrid grid;
  grid.lambdas = {0.37};
  grid.taus = {2.0};
  for (auto rule : {SelectionRule::MIN, SelectionRule::ONE_SE}) {
    CvOptions opts;
    opts.rule = rule;
    const auto cv = cv_pacs(ds, grid, ThinningPlan::even(5, 17), 1, opts);
    CHECK(cv.lambda_star == 0.37);
    CHECK(cv.tau_star == 2.0);
  }
}

TEST_CASE("1SE rule breaks ties toward the larger lambda then larger tau") {
  // With lambda far below the scale of the problem the fits coincide, so the
  // losses tie and the 1SE rule must take the largest lambda, then tau.
  Eigen::VectorXd beta(2);
  beta << 0.6, -0.2;
  const auto ds = strong_dataset(40, 2, 19, beta, 0.0);
  TuningGrid grid;
  grid.lambdas = {1e-13, 2e-13};
  grid.taus = {0.5, 1.0};
  CvOptions opts;
  opts.rule = SelectionRule::ONE_SE;
  const auto cv = cv_pacs(ds, grid, ThinningPlan::even(5, 23), 1, opts);
  CHECK(cv.lambda_star == 2e-13);
  CHECK(cv.tau_star == 1.0);
}

TEST_CASE("ONE_SE never selects a smaller lambda than MIN") {
  Eigen::VectorXd beta(3);
  beta << 1.0, 1.0, 0.0;
  const auto ds = strong_dataset(60, 3, 29, beta, 0.1);
  const auto dq = build_design(ds);
  TuningGrid grid = build_lambda_grid(instrument_strength(dq), dq.n_snps(), 8);
  grid.taus = {1.0, 2.0};
  CvOptions mino, onese;
  mino.rule = SelectionRule::MIN;
  onese.rule = SelectionRule::ONE_SE;
  const auto a = cv_pacs(ds, grid, ThinningPlan::even(5, 31), 1, mino);
  const auto b = cv_pacs(ds, grid, ThinningPlan::even(5, 31), 1, onese);
  CHECK(b.lambda_star >= a.lambda_star);
}

TEST_CASE("repeat averaging matches a manual recomputation and is order-free") {
  Eigen::VectorXd beta(2);
  beta << 0.7, 0.0;
  const auto ds = strong_dataset(40, 2, 37, beta);
  TuningGrid grid;
  grid.lambdas = {0.2};
  grid.taus = {1.0};
  CvOptions opts;
  opts.phi = 0.3;
  const ThinningPlan plan = ThinningPlan::even(5, 41);
  const auto cv = cv_pacs(ds, grid, plan, 2, opts);
  REQUIRE(cv.candidates.size() == 1);

  // Manual recomputation with the two per-repeat seeds in reverse order.
  std::vector<double> losses;
  for (int rep = 1; rep >= 0; --rep) {
    const ThinningPlan rp{plan.epsilons, rng::mix(plan.seed, static_cast<std::uint64_t>(rep))};
    const auto folds = make_cv_folds(ds, rp);
    for (const auto& fold : folds) {
      const auto init = fit_dridge(fold.train, 0.3);
      const auto w = pacs_weights(init.beta, exposure_correlation(fold.training), 1.0);
      const auto fit = fit_pacs(fold.train, w, 0.2, init.beta);
      losses.push_back(validation_loss(fold.validation, fit.beta));
    }
  }
  double mean = 0;
  for (double l : losses) mean += l / losses.size();
  CHECK(cv.candidates[0].mean_loss == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("cv_pacs validates inputs") {
  Eigen::VectorXd beta(2);
  beta << 0.5, 0.0;
  const auto ds = strong_dataset(30, 2, 43, beta);
  TuningGrid empty;
  CHECK_THROWS_AS(cv_pacs(ds, empty, ThinningPlan::even(5, 1)), ValidationError);
  TuningGrid grid;
  grid.lambdas = {0.1};
  CHECK_THROWS_AS(cv_pacs(ds, grid, ThinningPlan::even(5, 1), 0), ValidationError);
}
