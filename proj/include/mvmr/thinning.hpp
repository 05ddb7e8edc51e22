#pragma once

#include <cstdint>
#include <vector>

#include "mvmr/summary_data.hpp"

namespace mvmr {

struct ThinningPlan {
  std::vector<double> epsilons;  ///< information fractions, each in (0,1), summing to 1
  std::uint64_t seed = 0;

  static ThinningPlan even(int folds, std::uint64_t seed);
  int n_folds() const { return static_cast<int>(epsilons.size()); }
  void validate() const;
};

/// Mutually independent summary-data replicates; fold m carries estimates
/// with variance eps_m * Sigma_Xj (SEs scaled by sqrt(eps_m)) and the folds
/// sum exactly to the original estimates.
struct ThinnedReplicates {
  std::vector<SummaryDataset> folds;
  ThinningPlan plan;
};

struct ThinningOptions {
  bool zero_noise = false;  ///< degenerate hook: suppress the Gaussian perturbation
};

ThinnedReplicates thin_two_fold(const SummaryDataset& ds, std::uint64_t seed,
                                const ThinningOptions& opts = {});

/// Multi-fold thinning by recursive two-fold peeling; distributionally
/// identical to the joint Gaussian construction and O(M) per SNP.
ThinnedReplicates thin_multi_fold(const SummaryDataset& ds, const ThinningPlan& plan,
                                  const ThinningOptions& opts = {});

/// Training set D - D_m: per-SNP estimates minus fold m, variances scaled by
/// (1 - eps_m).
SummaryDataset training_complement(const SummaryDataset& ds, const ThinnedReplicates& reps,
                                   int m);

}  // namespace mvmr
