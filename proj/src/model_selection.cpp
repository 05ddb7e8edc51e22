#include "mvmr/model_selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mvmr/errors.hpp"
#include "mvmr/rng.hpp"

namespace mvmr {

TuningGrid build_lambda_grid(const InstrumentStrength& strength, int p, int n_points) {
  if (n_points < 2) throw ValidationError("build_lambda_grid: need at least 2 points");
  TuningGrid grid;
  const double pd = static_cast<double>(p);
  grid.base_rate = strength.mu_min > pd
                       ? std::pow(strength.mu_min / std::sqrt(strength.mu_min + pd), 2.0 / 3.0)
                       : std::cbrt(pd / 2.0);
  grid.lambdas.reserve(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    const double u = -2.0 + 4.0 * static_cast<double>(i) / (n_points - 1);
    grid.lambdas.push_back(grid.base_rate * std::pow(10.0, u));
  }
  return grid;
}

double ridge_grid_anchor(const InstrumentStrength& strength, int p) {
  return std::pow(std::max(strength.mu_min, 0.0) + static_cast<double>(p), 2.0 / 5.0);
}

std::vector<double> ridge_grid(double anchor, int n_points) {
  if (n_points < 2) throw ValidationError("ridge_grid: need at least 2 points");
  std::vector<double> phis(static_cast<std::size_t>(n_points));
  const double lo = std::log10(anchor * 1e-4);
  const double hi = std::log10(anchor * 1e2);
  for (int i = 0; i < n_points; ++i)
    phis[static_cast<std::size_t>(i)] =
        std::pow(10.0, lo + (hi - lo) * static_cast<double>(i) / (n_points - 1));
  return phis;
}

std::vector<CvFoldData> make_cv_folds(const SummaryDataset& ds, const ThinningPlan& plan) {
  const ThinnedReplicates reps = thin_multi_fold(ds, plan);
  std::vector<CvFoldData> folds;
  folds.reserve(static_cast<std::size_t>(plan.n_folds()));
  for (int m = 0; m < plan.n_folds(); ++m) {
    CvFoldData fold;
    fold.training = training_complement(ds, reps, m);
    fold.train = DebiasedNormal::from(build_design(fold.training));
    fold.validation =
        DebiasedNormal::from(build_design(reps.folds[static_cast<std::size_t>(m)]));
    folds.push_back(std::move(fold));
  }
  return folds;
}

double validation_loss(const DebiasedNormal& validation, const Eigen::VectorXd& beta) {
  return 0.5 * beta.dot(validation.a * beta) - validation.b.dot(beta);
}

namespace {

double pooled_se(const std::vector<double>& losses, double mean) {
  const std::size_t n = losses.size();
  if (n < 2) return 0.0;
  double ss = 0.0;
  for (double l : losses) ss += (l - mean) * (l - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return sd / std::sqrt(static_cast<double>(n));
}

}  // namespace

CvResult cv_pacs(const SummaryDataset& ds, const TuningGrid& grid, const ThinningPlan& plan,
                 int repeats, const CvOptions& options) {
  if (grid.lambdas.empty() || grid.taus.empty())
    throw ValidationError("cv_pacs: empty tuning grid");
  if (repeats < 1) throw ValidationError("cv_pacs: repeats must be >= 1");
  plan.validate();

  const double phi = options.phi
                         ? *options.phi
                         : cv_ridge(ds, ThinningPlan{plan.epsilons,
                                                     rng::mix(plan.seed, 0x52494447ULL)});

  // Full-data quantities back the fixed-weights mode.
  Eigen::VectorXd beta_full;
  Eigen::MatrixXd r_full;
  if (!options.per_fold_weights) {
    const DebiasedNormal dn = DebiasedNormal::from(build_design(ds));
    beta_full = fit_dridge(dn, phi).beta;
    r_full = exposure_correlation(ds, options.correlation_from_zscores);
  }

  const std::size_t n_lambda = grid.lambdas.size();
  const std::size_t n_tau = grid.taus.size();
  const std::size_t n_cand = n_lambda * n_tau;
  std::vector<std::vector<double>> losses(n_cand);
  std::vector<int> failures(n_cand, 0);

  LqaOptions lqa;
  lqa.tol = options.lqa_tol;
  lqa.max_iter = options.lqa_max_iter;

  for (int rep = 0; rep < repeats; ++rep) {
    ThinningPlan rep_plan{plan.epsilons,
                          repeats == 1 ? plan.seed
                                       : rng::mix(plan.seed, static_cast<std::uint64_t>(rep))};
    const auto folds = make_cv_folds(ds, rep_plan);
    for (const auto& fold : folds) {
      const Eigen::VectorXd init =
          options.per_fold_weights ? fit_dridge(fold.train, phi).beta : beta_full;
      const Eigen::MatrixXd r_hat =
          options.per_fold_weights
              ? exposure_correlation(fold.training, options.correlation_from_zscores)
              : r_full;
      for (std::size_t ti = 0; ti < n_tau; ++ti) {
        const PacsWeights weights =
            pacs_weights(init, r_hat, grid.taus[ti], options.threshold);
        Eigen::VectorXd warm = init;  // warm start along the ascending lambda path
        for (std::size_t li = 0; li < n_lambda; ++li) {
          const std::size_t cand = ti * n_lambda + li;
          try {
            const FitResult fit = fit_pacs(fold.train, weights, grid.lambdas[li], warm, lqa);
            warm = fit.beta;
            losses[cand].push_back(validation_loss(fold.validation, fit.beta));
          } catch (const NumericalError&) {
            failures[cand] += 1;
          }
        }
      }
    }
  }

  CvResult out;
  out.rule = options.rule;
  out.phi = phi;
  out.candidates.reserve(n_cand);
  double min_loss = std::numeric_limits<double>::infinity();
  std::size_t min_idx = 0;
  bool any_ok = false;
  for (std::size_t ti = 0; ti < n_tau; ++ti) {
    for (std::size_t li = 0; li < n_lambda; ++li) {
      const std::size_t cand = ti * n_lambda + li;
      CvCandidate c;
      c.lambda = grid.lambdas[li];
      c.tau = grid.taus[ti];
      c.n_failures = failures[cand];
      if (losses[cand].empty()) {
        c.mean_loss = std::numeric_limits<double>::quiet_NaN();
        c.se_loss = std::numeric_limits<double>::quiet_NaN();
      } else {
        double sum = 0.0;
        for (double l : losses[cand]) sum += l;
        c.mean_loss = sum / static_cast<double>(losses[cand].size());
        c.se_loss = pooled_se(losses[cand], c.mean_loss);
        any_ok = true;
        if (c.mean_loss < min_loss) {
          min_loss = c.mean_loss;
          min_idx = out.candidates.size();
        }
      }
      out.candidates.push_back(c);
    }
  }
  if (!any_ok) {
    std::ostringstream msg;
    msg << "cv_pacs: every candidate failed;";
    for (const auto& c : out.candidates)
      msg << " (lambda=" << c.lambda << ", tau=" << c.tau << ": " << c.n_failures
          << " failures)";
    throw NumericalError(msg.str());
  }

  if (options.rule == SelectionRule::MIN) {
    out.lambda_star = out.candidates[min_idx].lambda;
    out.tau_star = out.candidates[min_idx].tau;
    return out;
  }

  // 1SE rule: among candidates within one SE of the minimum, the largest
  // lambda first, then the largest tau at that lambda.
  const double cutoff = min_loss + out.candidates[min_idx].se_loss;
  double best_lambda = -1.0, best_tau = -1.0;
  for (const auto& c : out.candidates) {
    if (std::isnan(c.mean_loss) || c.mean_loss > cutoff) continue;
    if (c.lambda > best_lambda || (c.lambda == best_lambda && c.tau > best_tau)) {
      best_lambda = c.lambda;
      best_tau = c.tau;
    }
  }
  out.lambda_star = best_lambda;
  out.tau_star = best_tau;
  return out;
}

double cv_ridge(const SummaryDataset& ds, const ThinningPlan& plan, int n_points) {
  if (n_points < 2) throw ValidationError("cv_ridge: need at least 2 points");
  plan.validate();
  const DesignQuantities dq = build_design(ds);
  const InstrumentStrength strength = instrument_strength(dq);
  const double anchor = ridge_grid_anchor(strength, dq.n_snps());

  const std::vector<double> phis = ridge_grid(anchor, n_points);

  const auto folds = make_cv_folds(ds, plan);

  double best_phi = phis.front();
  double best_loss = std::numeric_limits<double>::infinity();
  for (double phi : phis) {
    double total = 0.0;
    for (const auto& fold : folds) {
      const FitResult fit = fit_dridge(fold.train, phi);
      total += validation_loss(fold.validation, fit.beta);
    }
    if (total < best_loss) {
      best_loss = total;
      best_phi = phi;
    }
  }
  return best_phi;
}

}  // namespace mvmr
