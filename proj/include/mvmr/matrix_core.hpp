#pragma once

#include <Eigen/Dense>

#include "mvmr/summary_data.hpp"

namespace mvmr {

struct PsdProjection {
  Eigen::MatrixXd m;   ///< nearest PSD matrix in elementwise max norm
  bool converged = true;
  int iterations = 0;
  double distance = 0; ///< max-norm distance to the input
};

/// Nearest positive semi-definite matrix in the elementwise max norm,
/// computed by ADMM. An input that is already PSD is returned unchanged.
/// On non-convergence the best feasible iterate is returned with
/// converged=false.
PsdProjection nearest_psd_maxnorm(const Eigen::MatrixXd& m, double tol = 1e-7,
                                  int max_iter = 2000);

/// Eigenvalue diagnostics of the sample instrument strength matrix
/// pi_hat' W pi_hat - V.
struct InstrumentStrength {
  double mu_min = 0;   ///< smallest eigenvalue
  double mu_max = 0;   ///< largest eigenvalue
  double is_param = 0; ///< mu_min / sqrt(p); rule-of-thumb adequacy threshold is 7
  double r_n = 0;      ///< mu_min / sqrt(mu_min + p); NaN when mu_min <= 0
};

InstrumentStrength instrument_strength(const DesignQuantities& dq);

/// Projection of a symmetric matrix onto the PSD cone in Frobenius norm
/// (eigenvalue clamp). Used internally; exposed for tests.
Eigen::MatrixXd clamp_psd(const Eigen::MatrixXd& m);

/// Euclidean projection of v onto the l1 ball of radius b.
Eigen::VectorXd project_l1_ball(const Eigen::VectorXd& v, double b);

}  // namespace mvmr
