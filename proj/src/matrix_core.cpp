#include "mvmr/matrix_core.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mvmr/errors.hpp"

namespace mvmr {

Eigen::MatrixXd clamp_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd out = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose().eval());
}

Eigen::VectorXd project_l1_ball(const Eigen::VectorXd& v, double b) {
  if (b <= 0.0) return Eigen::VectorXd::Zero(v.size());
  if (v.cwiseAbs().sum() <= b) return v;
  // Duchi et al. sort-based simplex projection applied to |v|.
  Eigen::VectorXd u = v.cwiseAbs();
  std::vector<double> s(u.data(), u.data() + u.size());
  std::sort(s.begin(), s.end(), std::greater<double>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cum += s[i];
    const double t = (cum - b) / static_cast<double>(i + 1);
    if (i + 1 == s.size() || s[i + 1] <= t) {
      theta = t;
      break;
    }
  }
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double mag = std::max(std::abs(v(i)) - theta, 0.0);
    out(i) = v(i) < 0 ? -mag : mag;
  }
  return out;
}

PsdProjection nearest_psd_maxnorm(const Eigen::MatrixXd& m, double tol, int max_iter) {
  if (m.rows() != m.cols()) throw ValidationError("nearest_psd_maxnorm: matrix is not square");
  if (!m.allFinite()) throw ValidationError("nearest_psd_maxnorm: non-finite entries");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff()))
    throw ValidationError("nearest_psd_maxnorm: matrix is not symmetric");

  const auto k = m.rows();
  PsdProjection out;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() >= 0.0) {
    out.m = m;
    return out;
  }

  // ADMM on  min_{R psd}  ||R - M||_max  with splitting R - S = M.
  const double rho = 1.0;
  const double tol_abs = tol;
  const double tol_rel = 1e-6;

  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd r = clamp_psd(m);

  double best_dist = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd best = r;
  bool converged = false;
  int iter = 0;

  const double dim_scale = std::sqrt(static_cast<double>(k * k));

  for (iter = 1; iter <= max_iter; ++iter) {
    r = clamp_psd(m + s - u);

    const Eigen::MatrixXd s_prev = s;
    Eigen::MatrixXd t = r - m + u;
    t = 0.5 * (t + t.transpose().eval());
    const Eigen::Map<const Eigen::VectorXd> tv(t.data(), t.size());
    const Eigen::VectorXd proj = project_l1_ball(tv, 1.0 / rho);
    s = t - Eigen::Map<const Eigen::MatrixXd>(proj.data(), k, k);
    s = 0.5 * (s + s.transpose().eval());

    const Eigen::MatrixXd primal = r - s - m;
    u += primal;
    u = 0.5 * (u + u.transpose().eval());

    const double dist = (r - m).cwiseAbs().maxCoeff();
    if (dist < best_dist) {
      best_dist = dist;
      best = r;
    }

    const double pri_norm = primal.norm();
    const double dua_norm = rho * (s - s_prev).norm();
    const double pri_tol =
        dim_scale * tol_abs + tol_rel * std::max({r.norm(), s.norm(), m.norm()});
    const double dua_tol = dim_scale * tol_abs + tol_rel * rho * u.norm();
    if (pri_norm <= pri_tol && dua_norm <= dua_tol) {
      converged = true;
      break;
    }
  }

  out.m = converged ? r : best;
  out.converged = converged;
  out.iterations = std::min(iter, max_iter);
  out.distance = (out.m - m).cwiseAbs().maxCoeff();
  return out;
}

InstrumentStrength instrument_strength(const DesignQuantities& dq) {
  const double p = static_cast<double>(dq.n_snps());
  const Eigen::MatrixXd t =
      dq.pi_hat.transpose() * dq.w.asDiagonal() * dq.pi_hat - dq.v;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (t + t.transpose()),
                                                    Eigen::EigenvaluesOnly);
  InstrumentStrength st;
  st.mu_min = es.eigenvalues().minCoeff();
  st.mu_max = es.eigenvalues().maxCoeff();
  st.is_param = st.mu_min / std::sqrt(p);
  st.r_n = st.mu_min > 0 ? st.mu_min / std::sqrt(st.mu_min + p)
                         : std::numeric_limits<double>::quiet_NaN();
  return st;
}

}  // namespace mvmr
