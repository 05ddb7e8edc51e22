#include "mvmr/thinning.hpp"

#include <Eigen/Cholesky>
#include <cmath>

#include "mvmr/errors.hpp"
#include "mvmr/rng.hpp"

namespace mvmr {

namespace {
// Stream lanes so exposure and outcome noise never share draws.
constexpr std::uint64_t kLaneExposure = 0xE1;
constexpr std::uint64_t kLaneOutcome = 0xE2;
}  // namespace

ThinningPlan ThinningPlan::even(int folds, std::uint64_t seed) {
  ThinningPlan plan;
  plan.epsilons.assign(static_cast<std::size_t>(folds), 1.0 / folds);
  plan.seed = seed;
  return plan;
}

void ThinningPlan::validate() const {
  if (epsilons.size() < 2) throw ValidationError("thinning plan needs at least 2 folds");
  double total = 0.0;
  for (double e : epsilons) {
    if (!(e > 0.0 && e < 1.0))
      throw ValidationError("thinning fractions must lie in (0,1)");
    total += e;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw ValidationError("thinning fractions must sum to 1 (got " + std::to_string(total) + ")");
}

ThinnedReplicates thin_multi_fold(const SummaryDataset& ds, const ThinningPlan& plan,
                                  const ThinningOptions& opts) {
  plan.validate();
  const int p = ds.n_snps();
  const int k = ds.n_exposures();
  const int m_folds = plan.n_folds();

  const Eigen::MatrixXd chol_sigma =
      Eigen::LLT<Eigen::MatrixXd>(ds.correlation.sigma).matrixL();

  ThinnedReplicates out;
  out.plan = plan;
  out.folds.assign(static_cast<std::size_t>(m_folds), SummaryDataset{});
  for (int m = 0; m < m_folds; ++m) {
    auto& fold = out.folds[static_cast<std::size_t>(m)];
    fold.correlation = ds.correlation;
    fold.exposure_names = ds.exposure_names;
    fold.snps.resize(static_cast<std::size_t>(p));
  }

  Eigen::VectorXd z(k);
  for (int j = 0; j < p; ++j) {
    const auto& snp = ds.snps[static_cast<std::size_t>(j)];
    // Cholesky factor of Sigma_Xj = diag(se) * Sigma * diag(se).
    const Eigen::MatrixXd lj = snp.se_x.asDiagonal() * chol_sigma;

    Eigen::VectorXd rem_gamma = snp.gamma_hat;
    double rem_outcome = snp.gamma_outcome_hat;
    double budget = 1.0;

    for (int m = 0; m < m_folds; ++m) {
      const double eps = plan.epsilons[static_cast<std::size_t>(m)];
      auto& dst = out.folds[static_cast<std::size_t>(m)].snps[static_cast<std::size_t>(j)];
      dst.snp_id = snp.snp_id;
      dst.se_x = snp.se_x * std::sqrt(eps);
      dst.se_y = snp.se_y * std::sqrt(eps);

      if (m == m_folds - 1) {
        // Last fold takes the remainder: the sum identity is exact.
        dst.gamma_hat = rem_gamma;
        dst.gamma_outcome_hat = rem_outcome;
        break;
      }

      const double f = eps / budget;
      const double scale = opts.zero_noise ? 0.0 : std::sqrt(f * (1.0 - f) * budget);

      rng::Stream sx(plan.seed, kLaneExposure, static_cast<std::uint64_t>(j),
                     static_cast<std::uint64_t>(m));
      for (int i = 0; i < k; ++i) z(i) = sx.next_normal();
      dst.gamma_hat = f * rem_gamma + scale * (lj * z);

      rng::Stream sy(plan.seed, kLaneOutcome, static_cast<std::uint64_t>(j),
                     static_cast<std::uint64_t>(m));
      dst.gamma_outcome_hat = f * rem_outcome + scale * snp.se_y * sy.next_normal();

      rem_gamma -= dst.gamma_hat;
      rem_outcome -= dst.gamma_outcome_hat;
      budget -= eps;
    }
  }
  return out;
}

ThinnedReplicates thin_two_fold(const SummaryDataset& ds, std::uint64_t seed,
                                const ThinningOptions& opts) {
  return thin_multi_fold(ds, ThinningPlan::even(2, seed), opts);
}

SummaryDataset training_complement(const SummaryDataset& ds, const ThinnedReplicates& reps,
                                   int m) {
  if (m < 0 || m >= reps.plan.n_folds())
    throw ValidationError("training_complement: fold index out of range");
  if (static_cast<int>(reps.folds.size()) != reps.plan.n_folds() ||
      reps.folds[static_cast<std::size_t>(m)].n_snps() != ds.n_snps())
    throw ValidationError("training_complement: replicates do not match dataset");
  const double eps = reps.plan.epsilons[static_cast<std::size_t>(m)];
  const double sqrt_keep = std::sqrt(1.0 - eps);

  SummaryDataset out;
  out.correlation = ds.correlation;
  out.exposure_names = ds.exposure_names;
  out.snps.resize(ds.snps.size());
  const auto& fold = reps.folds[static_cast<std::size_t>(m)];
  for (std::size_t j = 0; j < ds.snps.size(); ++j) {
    const auto& orig = ds.snps[j];
    const auto& held = fold.snps[j];
    auto& dst = out.snps[j];
    dst.snp_id = orig.snp_id;
    dst.gamma_hat = orig.gamma_hat - held.gamma_hat;
    dst.gamma_outcome_hat = orig.gamma_outcome_hat - held.gamma_outcome_hat;
    dst.se_x = orig.se_x * sqrt_keep;
    dst.se_y = orig.se_y * sqrt_keep;
  }
  return out;
}

}  // namespace mvmr
