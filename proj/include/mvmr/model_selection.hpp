#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "mvmr/estimators.hpp"
#include "mvmr/matrix_core.hpp"
#include "mvmr/thinning.hpp"

namespace mvmr {

struct TuningGrid {
  std::vector<double> lambdas;            ///< ascending
  std::vector<double> taus = {0.5, 1.0, 2.0, 3.0};
  double base_rate = 0.0;                 ///< the grid anchor
};

/// Lambda grid anchored at (mu_min/sqrt(mu_min+p))^(2/3) when mu_min > p and
/// (p/2)^(1/3) otherwise, spread over log-spaced multipliers in [1e-2, 1e2].
TuningGrid build_lambda_grid(const InstrumentStrength& strength, int p, int n_points = 25);

enum class SelectionRule { MIN, ONE_SE };

struct CvCandidate {
  double lambda = 0;
  double tau = 0;
  double mean_loss = 0;
  double se_loss = 0;
  int n_failures = 0;
};

struct CvResult {
  std::vector<CvCandidate> candidates;
  double lambda_star = 0;
  double tau_star = 0;
  SelectionRule rule = SelectionRule::ONE_SE;
  double phi = 0;  ///< ridge level used for the initial estimators
};

struct CvOptions {
  SelectionRule rule = SelectionRule::ONE_SE;
  /// Recompute adaptive weights from each training fold (honest CV); when
  /// false, full-data weights are reused across folds.
  bool per_fold_weights = true;
  /// Correlation threshold for the -x variant.
  std::optional<double> threshold;
  /// Ridge level for the initial estimators; chosen by cv_ridge when unset.
  std::optional<double> phi;
  double lqa_tol = 1e-6;
  int lqa_max_iter = 500;
  /// Compute the exposure correlation from z-scores instead of raw columns.
  bool correlation_from_zscores = false;
};

/// One fold of a data-thinning CV split. Training fits use `train` (built
/// from the complement D - D_m) and the loss uses `validation` (built from
/// the held-out fold) only.
struct CvFoldData {
  SummaryDataset training;    ///< the complement dataset D - D_m
  DebiasedNormal train;
  DebiasedNormal validation;
};

/// Builds the M folds for one thinning draw. Exposed so the fold separation
/// (training fit from the complement, loss from the held-out fold) is
/// directly testable.
std::vector<CvFoldData> make_cv_folds(const SummaryDataset& ds, const ThinningPlan& plan);

/// Projected debiased validation loss of beta on a held-out fold.
double validation_loss(const DebiasedNormal& validation, const Eigen::VectorXd& beta);

/// Five-fold data-thinning cross-validation over (lambda, tau), averaged over
/// `repeats` independent thinning draws, selected by the 1SE rule (largest
/// lambda, then largest tau among candidates within one SE of the minimum).
CvResult cv_pacs(const SummaryDataset& ds, const TuningGrid& grid, const ThinningPlan& plan,
                 int repeats = 1, const CvOptions& options = {});

/// Ridge level for the initial estimator, minimizing the same validation loss
/// over a log-spaced grid in [B*1e-4, B*1e2], B = (max(mu_min,0)+p)^(2/5).
double cv_ridge(const SummaryDataset& ds, const ThinningPlan& plan, int n_points = 25);

/// Grid bound helper, exposed for tests.
double ridge_grid_anchor(const InstrumentStrength& strength, int p);

/// The log-spaced ridge grid in [anchor*1e-4, anchor*1e2].
std::vector<double> ridge_grid(double anchor, int n_points);

}  // namespace mvmr
