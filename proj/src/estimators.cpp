#include "mvmr/estimators.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mvmr/errors.hpp"

namespace mvmr {

namespace {

double floored(double x) { return std::max(x, kDenominatorFloor); }

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                          const std::string& context) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError(context + ": factorization failed");
  Eigen::VectorXd x = ldlt.solve(b);
  if (!x.allFinite()) throw NumericalError(context + ": solve produced non-finite values");
  return x;
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::IVW: return "ivw";
    case Method::DIVW: return "divw";
    case Method::DRIDGE: return "dridge";
    case Method::DLASSO: return "dlasso";
    case Method::PACS: return "pacs";
  }
  return "?";
}

DebiasedNormal DebiasedNormal::from(const DesignQuantities& dq) {
  DebiasedNormal dn;
  Eigen::MatrixXd raw = dq.pi_hat.transpose() * dq.w.asDiagonal() * dq.pi_hat - dq.v;
  raw = 0.5 * (raw + raw.transpose().eval());
  const PsdProjection proj = nearest_psd_maxnorm(raw);
  dn.a = proj.m;
  dn.was_projected = proj.distance > 0.0;
  dn.b = dq.pi_hat.transpose() * (dq.w.asDiagonal() * dq.gamma_vec);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dn.a, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  dn.positive_definite = es.eigenvalues().minCoeff() > 1e-12 * scale;
  return dn;
}

Eigen::MatrixXd plugin_variance_middle(const DesignQuantities& dq, const Eigen::VectorXd& beta) {
  const int k = dq.n_exposures();
  Eigen::MatrixXd mid = Eigen::MatrixXd::Zero(k, k);
  for (int j = 0; j < dq.n_snps(); ++j) {
    const Eigen::MatrixXd vj = dq.sigma_xj[static_cast<std::size_t>(j)] * dq.w(j);
    const Eigen::VectorXd g = dq.pi_hat.row(j).transpose();
    const Eigen::VectorXd vjb = vj * beta;
    const double quad = 1.0 + beta.dot(vjb);
    mid.noalias() += quad * dq.w(j) * (g * g.transpose());
    mid.noalias() += vjb * vjb.transpose();
  }
  return 0.5 * (mid + mid.transpose().eval());
}

FitResult fit_ivw(const DesignQuantities& dq, bool with_variance) {
  Eigen::MatrixXd n = dq.pi_hat.transpose() * dq.w.asDiagonal() * dq.pi_hat;
  n = 0.5 * (n + n.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(n, Eigen::EigenvaluesOnly);
  const double smin = es.eigenvalues().minCoeff();
  const double smax = es.eigenvalues().maxCoeff();
  if (!(smin > 0.0) || smax / smin >= 1e12)
    throw NumericalError("singular normal matrix: smallest singular value " +
                         std::to_string(smin));
  const Eigen::VectorXd b = dq.pi_hat.transpose() * (dq.w.asDiagonal() * dq.gamma_vec);
  FitResult fr;
  fr.method = Method::IVW;
  fr.beta = solve_spd(n, b, "fit_ivw");
  fr.objective = 0.5 * fr.beta.dot(n * fr.beta) - b.dot(fr.beta);
  fr.iterations = 1;
  if (with_variance) {
    const Eigen::MatrixXd inv = n.inverse();
    fr.variance = 0.5 * (inv + inv.transpose().eval());
  }
  return fr;
}

namespace {

void check_identified(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() > 1e-12 * scale) return;
  std::ostringstream msg;
  msg << "unidentified directions:";
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    if (es.eigenvalues()(i) <= 1e-12 * scale) {
      msg << " [";
      for (Eigen::Index r = 0; r < es.eigenvectors().rows(); ++r) {
        if (r) msg << ",";
        msg << es.eigenvectors()(r, i);
      }
      msg << "] (eigenvalue " << es.eigenvalues()(i) << ")";
    }
  }
  throw NumericalError(msg.str());
}

Eigen::MatrixXd sandwich(const Eigen::MatrixXd& a, const Eigen::MatrixXd& mid) {
  const Eigen::MatrixXd ainv = a.inverse();
  Eigen::MatrixXd v = ainv * mid * ainv.transpose();
  return clamp_psd(0.5 * (v + v.transpose().eval()));
}

}  // namespace

FitResult fit_divw(const DesignQuantities& dq, bool with_variance) {
  const DebiasedNormal dn = DebiasedNormal::from(dq);
  check_identified(dn.a);
  FitResult fr;
  fr.method = Method::DIVW;
  fr.beta = solve_spd(dn.a, dn.b, "fit_divw");
  fr.objective = 0.5 * fr.beta.dot(dn.a * fr.beta) - dn.b.dot(fr.beta);
  fr.iterations = 1;
  if (with_variance) fr.variance = sandwich(dn.a, plugin_variance_middle(dq, fr.beta));
  return fr;
}

FitResult fit_dridge(const DebiasedNormal& dn, double phi) {
  if (phi < 0.0) throw ValidationError("fit_dridge: phi must be >= 0");
  const int k = static_cast<int>(dn.a.rows());
  const Eigen::MatrixXd m = dn.a + phi * Eigen::MatrixXd::Identity(k, k);
  FitResult fr;
  fr.method = Method::DRIDGE;
  fr.lambda = phi;
  fr.beta = solve_spd(m, dn.b, "fit_dridge");
  fr.objective = 0.5 * fr.beta.dot(dn.a * fr.beta) - dn.b.dot(fr.beta) +
                 0.5 * phi * fr.beta.squaredNorm();
  fr.iterations = 1;
  return fr;
}

FitResult fit_dridge(const DesignQuantities& dq, double phi, bool with_variance) {
  const DebiasedNormal dn = DebiasedNormal::from(dq);
  FitResult fr = fit_dridge(dn, phi);
  if (with_variance) {
    const int k = static_cast<int>(dn.a.rows());
    const Eigen::MatrixXd m = dn.a + phi * Eigen::MatrixXd::Identity(k, k);
    fr.variance = sandwich(m, plugin_variance_middle(dq, fr.beta));
  }
  return fr;
}

PacsWeights pacs_weights(const Eigen::VectorXd& beta_init, const Eigen::MatrixXd& r_hat,
                         double tau, std::optional<double> threshold) {
  if (!(tau > 0.0)) throw ValidationError("pacs_weights: tau must be > 0");
  const int k = static_cast<int>(beta_init.size());
  if (r_hat.rows() != k || r_hat.cols() != k)
    throw ValidationError("pacs_weights: r_hat dimension mismatch");
  PacsWeights pw;
  pw.tau = tau;
  pw.threshold = threshold;
  pw.w.resize(k);
  for (int i = 0; i < k; ++i) pw.w(i) = std::pow(floored(std::abs(beta_init(i))), -tau);
  pw.w_minus = Eigen::MatrixXd::Zero(k, k);
  pw.w_plus = Eigen::MatrixXd::Zero(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) {
      const double r = r_hat(a, b);
      double wm = std::pow(floored(1.0 - r), -tau) *
                  std::pow(floored(std::abs(beta_init(a) - beta_init(b))), -tau);
      double wp = std::pow(floored(1.0 + r), -tau) *
                  std::pow(floored(std::abs(beta_init(a) + beta_init(b))), -tau);
      if (threshold) {
        if (!(r > *threshold)) wm = 0.0;
        if (!(r < -*threshold)) wp = 0.0;
      }
      pw.w_minus(a, b) = wm;
      pw.w_plus(a, b) = wp;
    }
  }
  return pw;
}

Eigen::MatrixXd pair_difference_matrix(int k) {
  const int npairs = k * (k - 1) / 2;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(npairs, k);
  int row = 0;
  for (int a = 0; a < k; ++a)
    for (int b = a + 1; b < k; ++b, ++row) {
      d(row, a) = -1.0;
      d(row, b) = 1.0;
    }
  return d;
}

Eigen::MatrixXd pair_sum_matrix(int k) {
  const int npairs = k * (k - 1) / 2;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(npairs, k);
  int row = 0;
  for (int a = 0; a < k; ++a)
    for (int b = a + 1; b < k; ++b, ++row) {
      d(row, a) = 1.0;
      d(row, b) = 1.0;
    }
  return d;
}

double pacs_objective(const DebiasedNormal& dn, const PacsWeights& weights, double lambda,
                      const Eigen::VectorXd& beta) {
  double penalty = 0.0;
  const int k = static_cast<int>(beta.size());
  for (int i = 0; i < k; ++i) penalty += weights.w(i) * std::abs(beta(i));
  for (int a = 0; a < k; ++a)
    for (int b = a + 1; b < k; ++b) {
      penalty += weights.w_minus(a, b) * std::abs(beta(a) - beta(b));
      penalty += weights.w_plus(a, b) * std::abs(beta(a) + beta(b));
    }
  return 0.5 * beta.dot(dn.a * beta) - dn.b.dot(beta) + lambda * penalty;
}

namespace {

// Union-find with a sign parity relative to the root.
struct SignedForest {
  std::vector<int> parent;
  std::vector<int> sign;  // sign of node relative to its parent link, +-1

  explicit SignedForest(int n) : parent(static_cast<std::size_t>(n)), sign(static_cast<std::size_t>(n), 1) {
    std::iota(parent.begin(), parent.end(), 0);
  }

  std::pair<int, int> find(int x) {  // (root, sign of x relative to root)
    int s = 1;
    while (parent[static_cast<std::size_t>(x)] != x) {
      s *= sign[static_cast<std::size_t>(x)];
      x = parent[static_cast<std::size_t>(x)];
    }
    return {x, s};
  }

  // Relate a and b with relative sign rel (+1: equal, -1: opposite).
  // Returns false when the union contradicts an existing relation.
  bool unite(int a, int b, int rel) {
    auto [ra, sa] = find(a);
    auto [rb, sb] = find(b);
    if (ra == rb) return sa * sb == rel;
    parent[static_cast<std::size_t>(rb)] = ra;
    sign[static_cast<std::size_t>(rb)] = sa * rel * sb;
    return true;
  }
};

// Snap near-zero coordinates to exact zero and fuse near-equal (or
// near-opposite) pairs to a shared magnitude, so downstream grouping sees
// exact ties.
void postprocess_fits(Eigen::VectorXd& beta, const Eigen::MatrixXd& curvature,
                      bool precision_weighted) {
  const int k = static_cast<int>(beta.size());
  for (int i = 0; i < k; ++i)
    if (std::abs(beta(i)) < kHardZeroTol) beta(i) = 0.0;

  SignedForest forest(k);
  for (int a = 0; a < k; ++a) {
    if (beta(a) == 0.0) continue;
    for (int b = a + 1; b < k; ++b) {
      if (beta(b) == 0.0) continue;
      if (std::abs(beta(a) - beta(b)) < kFuseTol)
        forest.unite(a, b, 1);
      else if (std::abs(beta(a) + beta(b)) < kFuseTol)
        forest.unite(a, b, -1);
    }
  }

  std::vector<double> num(static_cast<std::size_t>(k), 0.0);
  std::vector<double> den(static_cast<std::size_t>(k), 0.0);
  std::vector<int> count(static_cast<std::size_t>(k), 0);
  for (int i = 0; i < k; ++i) {
    if (beta(i) == 0.0) continue;
    auto [root, s] = forest.find(i);
    const double wgt = precision_weighted ? std::max(curvature(i, i), kDenominatorFloor) : 1.0;
    num[static_cast<std::size_t>(root)] += wgt * s * beta(i);
    den[static_cast<std::size_t>(root)] += wgt;
    count[static_cast<std::size_t>(root)] += 1;
  }
  for (int i = 0; i < k; ++i) {
    if (beta(i) == 0.0) continue;
    auto [root, s] = forest.find(i);
    if (count[static_cast<std::size_t>(root)] < 2) continue;
    beta(i) = s * num[static_cast<std::size_t>(root)] / den[static_cast<std::size_t>(root)];
  }
}

struct LqaSpec {
  const Eigen::VectorXd* w_diag = nullptr;     // K
  const Eigen::MatrixXd* w_minus = nullptr;    // K x K upper
  const Eigen::MatrixXd* w_plus = nullptr;     // K x K upper
};

FitResult run_lqa(const DebiasedNormal& dn, const LqaSpec& spec, double lambda,
                  const Eigen::VectorXd& beta_init, const LqaOptions& opts,
                  const PacsWeights* full_weights) {
  if (lambda < 0.0) throw ValidationError("lambda must be >= 0");
  const int k = static_cast<int>(dn.a.rows());
  if (beta_init.size() != k) throw ValidationError("beta_init dimension mismatch");

  // PSD-only normal matrices get a tiny diagonal lift inside the solve;
  // convergence is then to a local minimizer.
  const double jitter =
      dn.positive_definite ? 0.0 : 1e-10 * std::max(dn.a.trace() / k, 1.0);
  Eigen::MatrixXd sys(k, k);

  auto objective = [&](const Eigen::VectorXd& beta) {
    double penalty = 0.0;
    if (spec.w_diag)
      for (int i = 0; i < k; ++i) penalty += (*spec.w_diag)(i) * std::abs(beta(i));
    if (spec.w_minus)
      for (int a = 0; a < k; ++a)
        for (int b = a + 1; b < k; ++b)
          penalty += (*spec.w_minus)(a, b) * std::abs(beta(a) - beta(b));
    if (spec.w_plus)
      for (int a = 0; a < k; ++a)
        for (int b = a + 1; b < k; ++b)
          penalty += (*spec.w_plus)(a, b) * std::abs(beta(a) + beta(b));
    return 0.5 * beta.dot(dn.a * beta) - dn.b.dot(beta) + lambda * penalty;
  };

  FitResult fr;
  fr.method = full_weights ? Method::PACS : Method::DLASSO;
  fr.lambda = lambda;
  Eigen::VectorXd beta = beta_init;
  if (opts.objective_trace) opts.objective_trace->push_back(objective(beta));

  bool converged = false;
  int iter = 0;
  for (iter = 1; iter <= opts.max_iter; ++iter) {
    sys = dn.a;
    if (jitter > 0.0) sys.diagonal().array() += jitter;
    if (lambda > 0.0) {
      if (spec.w_diag)
        for (int i = 0; i < k; ++i)
          sys(i, i) += lambda * (*spec.w_diag)(i) / floored(std::abs(beta(i)));
      if (spec.w_minus) {
        for (int a = 0; a < k; ++a)
          for (int b = a + 1; b < k; ++b) {
            const double wm = (*spec.w_minus)(a, b);
            if (wm == 0.0) continue;
            const double c = lambda * wm / floored(std::abs(beta(a) - beta(b)));
            sys(a, a) += c;
            sys(b, b) += c;
            sys(a, b) -= c;
            sys(b, a) -= c;
          }
      }
      if (spec.w_plus) {
        for (int a = 0; a < k; ++a)
          for (int b = a + 1; b < k; ++b) {
            const double wp = (*spec.w_plus)(a, b);
            if (wp == 0.0) continue;
            const double c = lambda * wp / floored(std::abs(beta(a) + beta(b)));
            sys(a, a) += c;
            sys(b, b) += c;
            sys(a, b) += c;
            sys(b, a) += c;
          }
      }
    }

    // The adaptive weights can reach 1e20+ scales through the denominator
    // floor; solve on the unit-scaled system and escalate the diagonal lift
    // if the factorization still objects.
    const double sys_scale = std::max(sys.cwiseAbs().maxCoeff(), 1.0);
    Eigen::VectorXd next;
    bool solved = false;
    for (int attempt = 0; attempt < 3 && !solved; ++attempt) {
      Eigen::MatrixXd scaled = sys / sys_scale;
      if (attempt > 0)
        scaled.diagonal().array() += std::pow(10.0, attempt - 13);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(scaled);
      if (ldlt.info() != Eigen::Success) continue;
      next = ldlt.solve(dn.b / sys_scale);
      solved = next.allFinite();
    }
    if (!solved)
      throw NumericalError("LQA solve failed at iteration " + std::to_string(iter));

    if (opts.objective_trace) opts.objective_trace->push_back(objective(next));
    const double delta = (next - beta).cwiseAbs().maxCoeff();
    beta = next;
    if (delta < opts.tol || lambda == 0.0) {
      converged = true;
      break;
    }
  }

  if (opts.postprocess && lambda > 0.0)
    postprocess_fits(beta, dn.a, opts.precision_weighted_fusion);

  fr.beta = beta;
  fr.converged = converged;
  fr.iterations = std::min(iter, opts.max_iter);
  fr.objective = objective(beta);
  return fr;
}

}  // namespace

FitResult fit_pacs(const DebiasedNormal& dn, const PacsWeights& weights, double lambda,
                   const Eigen::VectorXd& beta_init, const LqaOptions& opts) {
  LqaSpec spec;
  spec.w_diag = &weights.w;
  spec.w_minus = &weights.w_minus;
  spec.w_plus = &weights.w_plus;
  FitResult fr = run_lqa(dn, spec, lambda, beta_init, opts, &weights);
  fr.tau = weights.tau;
  return fr;
}

FitResult fit_pacs(const DesignQuantities& dq, const PacsWeights& weights, double lambda,
                   const Eigen::VectorXd& beta_init, double tol, int max_iter) {
  LqaOptions opts;
  opts.tol = tol;
  opts.max_iter = max_iter;
  return fit_pacs(DebiasedNormal::from(dq), weights, lambda, beta_init, opts);
}

FitResult fit_dlasso(const DebiasedNormal& dn, const Eigen::VectorXd& weights, double lambda,
                     const Eigen::VectorXd& beta_init, const LqaOptions& opts) {
  LqaSpec spec;
  spec.w_diag = &weights;
  return run_lqa(dn, spec, lambda, beta_init, opts, nullptr);
}

FitResult fit_dlasso(const DesignQuantities& dq, const Eigen::VectorXd& weights, double lambda,
                     const Eigen::VectorXd& beta_init, double tol, int max_iter) {
  LqaOptions opts;
  opts.tol = tol;
  opts.max_iter = max_iter;
  return fit_dlasso(DebiasedNormal::from(dq), weights, lambda, beta_init, opts);
}

std::vector<bool> selected_mask(const Eigen::VectorXd& beta) {
  std::vector<bool> out(static_cast<std::size_t>(beta.size()));
  for (Eigen::Index i = 0; i < beta.size(); ++i)
    out[static_cast<std::size_t>(i)] = std::abs(beta(i)) > kSelectionThreshold;
  return out;
}

}  // namespace mvmr
