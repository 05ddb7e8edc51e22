#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "mvmr/matrix_core.hpp"
#include "mvmr/summary_data.hpp"

namespace mvmr {

enum class Method { IVW, DIVW, DRIDGE, DLASSO, PACS };

const char* method_name(Method m);

struct FitResult {
  Eigen::VectorXd beta;
  bool converged = true;
  int iterations = 0;
  double objective = 0.0;
  std::optional<Eigen::MatrixXd> variance;
  Method method = Method::IVW;
  std::optional<double> lambda;  ///< penalty level (ridge phi for DRIDGE)
  std::optional<double> tau;
};

/// Adaptive PACS penalty weights. Pairwise weights are stored as full K x K
/// matrices with the strict upper triangle populated.
struct PacsWeights {
  Eigen::VectorXd w;        ///< |beta_init_k|^-tau
  Eigen::MatrixXd w_minus;  ///< (1-r_km)^-tau |bk - bm|^-tau
  Eigen::MatrixXd w_plus;   ///< (1+r_km)^-tau |bk + bm|^-tau
  double tau = 1.0;
  std::optional<double> threshold;  ///< correlation threshold of the -x variant
};

/// Denominators in adaptive weights and LQA surrogates are floored at this
/// value to keep them finite.
inline constexpr double kDenominatorFloor = 1e-8;
/// Coordinates below this magnitude are snapped to exact zero after LQA.
inline constexpr double kHardZeroTol = 1e-4;
/// Pairs whose difference (or sum) is below this are fused after LQA.
inline constexpr double kFuseTol = 1e-4;
/// An exposure counts as selected when |beta_k| exceeds this.
inline constexpr double kSelectionThreshold = 1e-3;

/// Shared precomputation for the debiased estimators: the projected debiased
/// normal matrix and the linear term.
struct DebiasedNormal {
  Eigen::MatrixXd a;      ///< (pi' W pi - V)+
  Eigen::VectorXd b;      ///< pi' W gamma_vec
  bool was_projected = false;  ///< raw matrix was not PSD
  bool positive_definite = false;

  static DebiasedNormal from(const DesignQuantities& dq);
};

FitResult fit_ivw(const DesignQuantities& dq, bool with_variance = false);

FitResult fit_divw(const DesignQuantities& dq, bool with_variance = false);

/// Ridge-penalized projected debiased estimator, the PACS initial estimator.
/// Closed form ((pi'Wpi - V)+ + phi I)^-1 pi'W gamma.
FitResult fit_dridge(const DesignQuantities& dq, double phi, bool with_variance = false);
FitResult fit_dridge(const DebiasedNormal& dn, double phi);

PacsWeights pacs_weights(const Eigen::VectorXd& beta_init, const Eigen::MatrixXd& r_hat,
                         double tau, std::optional<double> threshold = std::nullopt);

struct LqaOptions {
  double tol = 1e-6;
  int max_iter = 500;
  /// Snap near-zeros and fuse near-ties after convergence (active when
  /// lambda > 0); makes exact zeros and exact within-group equalities
  /// representable.
  bool postprocess = true;
  /// Fuse to the precision-weighted (by the quadratic curvature diagonal)
  /// average instead of the plain average.
  bool precision_weighted_fusion = false;
  /// When set, the objective value is appended after every iterate.
  std::vector<double>* objective_trace = nullptr;
};

FitResult fit_pacs(const DesignQuantities& dq, const PacsWeights& weights, double lambda,
                   const Eigen::VectorXd& beta_init, double tol = 1e-6, int max_iter = 500);
FitResult fit_pacs(const DebiasedNormal& dn, const PacsWeights& weights, double lambda,
                   const Eigen::VectorXd& beta_init, const LqaOptions& opts = {});

FitResult fit_dlasso(const DesignQuantities& dq, const Eigen::VectorXd& weights, double lambda,
                     const Eigen::VectorXd& beta_init, double tol = 1e-6, int max_iter = 500);
FitResult fit_dlasso(const DebiasedNormal& dn, const Eigen::VectorXd& weights, double lambda,
                     const Eigen::VectorXd& beta_init, const LqaOptions& opts = {});

/// PACS loss at beta: 0.5 b'Ab - b'beta + lambda * penalty.
double pacs_objective(const DebiasedNormal& dn, const PacsWeights& weights, double lambda,
                      const Eigen::VectorXd& beta);

/// All pairwise differences (rows b_m - b_k for k < m) and sums, K(K-1)/2 x K.
Eigen::MatrixXd pair_difference_matrix(int k);
Eigen::MatrixXd pair_sum_matrix(int k);

/// Plug-in sandwich middle: sum_j (1 + b'V_j b) g_j g_j' / se_y^2 + V_j b b' V_j
/// with V_j = Sigma_Xj / se_y^2. The debiased M_j + V_j term collapses to the
/// observed g_j g_j' / se_y^2.
Eigen::MatrixXd plugin_variance_middle(const DesignQuantities& dq, const Eigen::VectorXd& beta);

std::vector<bool> selected_mask(const Eigen::VectorXd& beta);

}  // namespace mvmr
