#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvmr/summary_data.hpp"

namespace mvmr {

/// Individual-level data generating process: block-correlated true SNP
/// effects, a shared confounder, two independent cohorts, marginal per-SNP
/// OLS on standardized exposures.
struct DgpConfig {
  int n_exposures = 10;
  int n_snps = 500;
  std::int64_t n = 100000;
  Eigen::VectorXd beta_true;    ///< defaults to (1,1,1,0,0,0,0,0,0.5,0)
  double gamma_var = 0.001;     ///< variance of the true association draws
  double sigma_u = 2.0;         ///< confounder SD
  double sigma_e = 1.0;         ///< noise SD (exposures and outcome)
  double frac_all = 0.2;        ///< SNPs associated with all exposures
  double frac_first = 0.4;      ///< SNPs associated with the first cluster only
  double frac_last = 0.4;       ///< SNPs associated with the second cluster only
  int cluster1_size = 6;        ///< split 3 + 3 internally
  int cluster2_size = 4;
  double rho_tight = 0.995;     ///< within the first triple
  double rho_mid = 0.9;         ///< within the second triple
  double rho_cross = 0.5;       ///< between the two triples of cluster 1
  double rho_cluster2 = 0.3;    ///< within cluster 2
  double rho_between = 0.3;     ///< between the clusters
  double maf_min = 0.01;
  double maf_max = 0.5;
  bool standardize = true;      ///< scale exposures to unit sample SD
  /// How the shared correlation handed to estimators is obtained.
  enum class SigmaPolicy { kEmpiricalNull, kIdentity };
  SigmaPolicy sigma_policy = SigmaPolicy::kEmpiricalNull;
  int n_null_snps = 500;        ///< extra null SNPs backing the empirical estimate
  std::uint64_t seed = 1;

  void validate() const;
  Eigen::VectorXd effective_beta_true() const;
};

/// Fixed-across-replicates design: true associations and allele frequencies.
struct DgpDesign {
  Eigen::MatrixXd gammas;  ///< p x K true SNP-exposure associations
  Eigen::VectorXd maf;     ///< p + n_null_snps allele frequencies
};

/// True association matrix with the three covariance blocks and exact block
/// sparsity.
Eigen::MatrixXd generate_true_gammas(const DgpConfig& cfg, std::uint64_t seed);

DgpDesign make_design(const DgpConfig& cfg);

/// Two-cohort simulation reduced to streaming per-SNP sufficient statistics;
/// the n x p genotype matrix is never materialized.
SummaryDataset simulate_summary_stats(const DgpConfig& cfg, const DgpDesign& design,
                                      std::uint64_t replicate_seed);

/// Variant with separate exposure-cohort and outcome-cohort seeds.
SummaryDataset simulate_summary_stats(const DgpConfig& cfg, const DgpDesign& design,
                                      std::uint64_t exposure_seed, std::uint64_t outcome_seed);

/// Fast summary-level generator (draws estimates directly around the truth);
/// used by property tests, not by acceptance runs.
SummaryDataset simulate_summary_stats_fast(const DgpConfig& cfg, const DgpDesign& design,
                                           std::uint64_t replicate_seed);

struct ReplicateMetrics {
  double mse = 0;
  double correct_sparsity = 0;
  double sensitivity = 0;
  double fpr = 0;
  std::vector<int> selection;  ///< 1 if selected else 0
};

/// Direction-aware selection metrics. Without an explicit mask an exposure is
/// selected when |beta_hat| > 0.001; a true positive additionally requires a
/// matching sign.
ReplicateMetrics compute_metrics(const Eigen::VectorXd& beta_hat,
                                 const Eigen::VectorXd& beta_true,
                                 const std::optional<std::vector<bool>>& mask = std::nullopt);

struct ExperimentRow {
  std::string estimator;
  double median_mse = 0;
  double correct_sparsity = 0;  ///< mean over replicates
  double sensitivity = 0;
  double fpr = 0;
  int n_ok = 0;
  int n_failed = 0;
};

struct ReplicateRecord {
  int replicate = 0;
  std::string estimator;
  bool ok = false;
  std::string error;
  Eigen::VectorXd beta_hat;
  ReplicateMetrics metrics;
};

struct ExperimentResult {
  std::vector<ExperimentRow> rows;
  std::vector<ReplicateRecord> records;
};

/// Monte Carlo driver. Estimator names: ivw, divw, dridge, dlasso, pacs,
/// pacs-<x> (e.g. pacs-0.8). IVW/dIVW/dRidge select by Bonferroni-corrected
/// Wald tests at 0.05/K; the penalized estimators by the 0.001 threshold.
ExperimentResult run_experiment(const DgpConfig& cfg, const std::vector<std::string>& estimators,
                                int replicates, std::uint64_t seed, int threads = 0);

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Integer comparison thresholds for Binomial(2, f) draws.
struct GenotypeThresholds {
  std::vector<std::uint64_t> t0, t1;
  explicit GenotypeThresholds(const Eigen::VectorXd& maf);
};

/// Genotype block generation (individuals `row0..row0+rows` of a cohort),
/// keyed per individual so values are independent of the block grid; shared
/// with tests that materialize small instances densely.
void fill_genotypes(RowMat& z, const GenotypeThresholds& thr, std::uint64_t seed, int cohort,
                    std::int64_t row0);
void fill_confounder_noise(Eigen::VectorXd& u, RowMat& e, double sigma_u, double sigma_e,
                           std::uint64_t seed, int cohort, std::int64_t row0);
void fill_outcome_noise(Eigen::VectorXd& big_e, double sigma_e, std::uint64_t seed,
                        std::int64_t row0);
}  // namespace detail

}  // namespace mvmr
