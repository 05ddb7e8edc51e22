#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvmr/estimators.hpp"
#include "mvmr/model_selection.hpp"
#include "mvmr/summary_data.hpp"

namespace mvmr {

/// One signal-group: exposures with nonzero estimates of equal magnitude.
struct SignalGroup {
  std::vector<int> members;  ///< exposure indices, ascending
  std::vector<int> signs;    ///< +-1 per member
  double magnitude = 0;      ///< shared |beta|, > 0
  int group_sign = 1;        ///< sign of the smallest-index member
};

struct SignalGroupSet {
  std::vector<SignalGroup> groups;  ///< canonical order: by smallest member index
  std::vector<int> nonmembers;      ///< exposures with zero estimates
  Eigen::MatrixXd c_g;              ///< L x K averaging matrix
  Eigen::MatrixXd g_mat;            ///< L x K summing/differencing matrix
  int n_exposures = 0;

  int n_groups() const { return static_cast<int>(groups.size()); }
  /// Signed group-level estimates C_g beta would produce for consistent beta.
  Eigen::VectorXd group_effects() const;
};

/// Partition the selected exposures (|beta_k| > 0.001) into groups of equal
/// magnitude up to `precision`.
SignalGroupSet extract_signal_groups(const FitResult& fit, double precision = 1e-3);
SignalGroupSet extract_signal_groups(const Eigen::VectorXd& beta, double precision = 1e-3);

/// (C_g, G) for a given group structure.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_group_matrices(const SignalGroupSet& sgs,
                                                                 int n_exposures);

/// Label string in the style "1-1-1-0-0-...": exposures sharing a group get
/// the same positive id (in canonical group order), nonmembers get 0.
std::string selection_pattern(const SignalGroupSet& sgs);

struct GroupInference {
  Eigen::VectorXd estimates;  ///< L group-level effects
  Eigen::MatrixXd variance;   ///< L x L
  Eigen::VectorXd se;
  Eigen::VectorXd ci_low, ci_high;
  Eigen::VectorXd p_values;
  double level = 0.95;
};

/// Group-level debiased (SRIVW-style) estimation and Wald inference on the
/// design collapsed through G.
GroupInference grouped_inference(const SummaryDataset& ds, const SignalGroupSet& sgs,
                                 double level = 0.95);
GroupInference grouped_inference(const DesignQuantities& dq, const SignalGroupSet& sgs,
                                 double level = 0.95);

struct PipelineConfig {
  int grid_points = 25;
  std::vector<double> taus = {0.5, 1.0, 2.0, 3.0};
  int cv_repeats = 1;
  int cv_folds = 5;
  double precision = 1e-3;
  double level = 0.95;
  std::optional<double> threshold;  ///< pacs-x correlation threshold
  SelectionRule rule = SelectionRule::ONE_SE;
  bool per_fold_weights = true;
  bool correlation_from_zscores = false;
  double lqa_tol = 1e-6;
  int lqa_max_iter = 500;
};

struct PipelineResult {
  SignalGroupSet selection;
  std::optional<GroupInference> inference;
  FitResult selection_fit;
  CvResult cv;
  InstrumentStrength strength_select;
  InstrumentStrength strength_infer;
  std::string status;  ///< "ok" or why inference was skipped
};

/// Thin two-fold, select on the first fold (CV + PACS + grouping), infer on
/// the second.
PipelineResult post_selection_pipeline(const SummaryDataset& ds, const PipelineConfig& config,
                                       std::uint64_t seed);

struct StabilityRun {
  std::uint64_t sub_seed = 0;
  std::string pattern;
  std::vector<int> group_of;        ///< per exposure: canonical group id, 0 if none
  Eigen::VectorXd exposure_estimate;  ///< per exposure: its group estimate, 0 if none
  Eigen::VectorXd exposure_p;        ///< per exposure: its group p-value, 1 if none
  bool ok = false;
  std::string status;
};

struct StabilitySummary {
  Eigen::MatrixXd coassignment;  ///< K x K co-grouping frequency; diagonal = selection rate
  std::vector<StabilityRun> runs;
  std::string most_frequent_pattern;
  int most_frequent_count = 0;
  /// Median estimate / SE over runs with the most frequent pattern, one entry
  /// per group of that pattern.
  std::vector<double> median_estimates;
  std::vector<double> median_ses;
  std::vector<int> significant_runs_per_exposure;  ///< p < 1 - level counts
};

StabilitySummary stability_summary(const SummaryDataset& ds, const PipelineConfig& config,
                                   int repeats, std::uint64_t seed, int threads = 0);

}  // namespace mvmr
