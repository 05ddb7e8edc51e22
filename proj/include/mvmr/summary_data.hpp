#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace mvmr {

/// Per-SNP harmonized association estimates: K exposures plus one outcome.
struct SnpAssociation {
  std::string snp_id;
  Eigen::VectorXd gamma_hat;    ///< SNP-exposure estimates, length K
  Eigen::VectorXd se_x;         ///< standard errors of gamma_hat, length K
  double gamma_outcome_hat = 0; ///< SNP-outcome estimate
  double se_y = 0;              ///< standard error of the outcome estimate
};

/// Shared correlation of SNP-exposure estimation errors across exposure GWASs.
struct SharedCorrelation {
  Eigen::MatrixXd sigma;

  static SharedCorrelation identity(int k);
  /// Throws ValidationError unless symmetric, unit-diagonal, positive definite.
  void validate() const;
};

struct SummaryDataset {
  std::vector<SnpAssociation> snps;
  SharedCorrelation correlation;
  std::vector<std::string> exposure_names;

  int n_snps() const { return static_cast<int>(snps.size()); }
  int n_exposures() const { return static_cast<int>(exposure_names.size()); }

  /// Full structural validation: finite values, positive SEs, p > K,
  /// unique SNP ids, coherent dimensions.
  void validate() const;
};

/// Design quantities consumed by every estimator.
/// The weight matrix W is diagonal and stored as its diagonal.
struct DesignQuantities {
  Eigen::MatrixXd pi_hat;                 ///< p x K, rows are gamma_hat
  Eigen::VectorXd gamma_vec;              ///< p, outcome estimates
  Eigen::VectorXd w;                      ///< p, entries se_y^-2
  Eigen::MatrixXd v;                      ///< K x K, sum_j Sigma_Xj * se_y_j^-2
  std::vector<Eigen::MatrixXd> sigma_xj;  ///< p covariance matrices, K x K

  int n_snps() const { return static_cast<int>(pi_hat.rows()); }
  int n_exposures() const { return static_cast<int>(pi_hat.cols()); }
};

struct LoadOptions {
  /// Optional per-exposure trait SDs; estimates and SEs are divided by them
  /// so effects are on the per-SD scale.
  std::vector<double> trait_sd;
  /// Set when sigma_path was omitted and the identity was substituted.
  bool used_identity_sigma = false;
};

/// Reads the tab-separated dataset and the K x K correlation CSV.
/// An empty sigma_path substitutes the identity (flagged in opts when given).
SummaryDataset load_dataset(const std::string& path, const std::string& sigma_path = "",
                            LoadOptions* opts = nullptr);

void write_dataset(const SummaryDataset& ds, const std::string& path);
void write_sigma(const SharedCorrelation& c, const std::string& path);

/// Reads a single-column CSV of length K (trait SD rescale vector).
std::vector<double> load_trait_sd(const std::string& path, int k);

DesignQuantities build_design(const SummaryDataset& ds);

/// Pearson correlation matrix of the columns of pi_hat across SNPs.
/// With use_zscores, columns are first divided elementwise by their SEs.
/// Zero-variance columns yield zero off-diagonals (and are reported via
/// degenerate_columns when provided).
Eigen::MatrixXd exposure_correlation(const SummaryDataset& ds, bool use_zscores = false,
                                     std::vector<int>* degenerate_columns = nullptr);

}  // namespace mvmr
