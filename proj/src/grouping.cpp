#include "mvmr/grouping.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mvmr/errors.hpp"
#include "mvmr/parallel.hpp"
#include "mvmr/rng.hpp"
#include "mvmr/stats.hpp"
#include "mvmr/thinning.hpp"

namespace mvmr {

Eigen::VectorXd SignalGroupSet::group_effects() const {
  Eigen::VectorXd out(n_groups());
  for (int l = 0; l < n_groups(); ++l)
    out(l) = groups[static_cast<std::size_t>(l)].group_sign *
             groups[static_cast<std::size_t>(l)].magnitude;
  return out;
}

SignalGroupSet extract_signal_groups(const Eigen::VectorXd& beta, double precision) {
  const int k = static_cast<int>(beta.size());
  SignalGroupSet sgs;
  sgs.n_exposures = k;
  for (int i = 0; i < k; ++i) {
    const double mag = std::abs(beta(i));
    if (mag <= kSelectionThreshold) {
      sgs.nonmembers.push_back(i);
      continue;
    }
    bool placed = false;
    for (auto& g : sgs.groups) {
      if (std::abs(g.magnitude - mag) <= precision) {
        g.members.push_back(i);
        g.signs.push_back(beta(i) > 0 ? 1 : -1);
        placed = true;
        break;
      }
    }
    if (!placed) {
      SignalGroup g;
      g.members.push_back(i);
      g.signs.push_back(beta(i) > 0 ? 1 : -1);
      g.magnitude = mag;
      g.group_sign = beta(i) > 0 ? 1 : -1;
      sgs.groups.push_back(std::move(g));
    }
  }
  // Canonical order by smallest member index holds by construction (members
  // are visited in index order and groups created on first encounter).
  auto [c_g, g_mat] = build_group_matrices(sgs, k);
  sgs.c_g = std::move(c_g);
  sgs.g_mat = std::move(g_mat);
  return sgs;
}

SignalGroupSet extract_signal_groups(const FitResult& fit, double precision) {
  return extract_signal_groups(fit.beta, precision);
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_group_matrices(const SignalGroupSet& sgs,
                                                                 int n_exposures) {
  const int l_count = sgs.n_groups();
  Eigen::MatrixXd c_g = Eigen::MatrixXd::Zero(l_count, n_exposures);
  Eigen::MatrixXd g_mat = Eigen::MatrixXd::Zero(l_count, n_exposures);
  for (int l = 0; l < l_count; ++l) {
    const auto& g = sgs.groups[static_cast<std::size_t>(l)];
    if (g.members.empty()) throw ValidationError("signal group " + std::to_string(l) + " is empty");
    const double size = static_cast<double>(g.members.size());
    for (std::size_t i = 0; i < g.members.size(); ++i) {
      const int k = g.members[i];
      if (k < 0 || k >= n_exposures)
        throw ValidationError("group member index out of range");
      const double s = g.group_sign * g.signs[i];
      c_g(l, k) = s / size;
      g_mat(l, k) = s;
    }
  }
  return {c_g, g_mat};
}

std::string selection_pattern(const SignalGroupSet& sgs) {
  std::vector<int> label(static_cast<std::size_t>(sgs.n_exposures), 0);
  for (int l = 0; l < sgs.n_groups(); ++l)
    for (int k : sgs.groups[static_cast<std::size_t>(l)].members)
      label[static_cast<std::size_t>(k)] = l + 1;
  std::ostringstream out;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (i) out << '-';
    out << label[i];
  }
  return out.str();
}

GroupInference grouped_inference(const DesignQuantities& dq, const SignalGroupSet& sgs,
                                 double level) {
  if (sgs.n_groups() < 1) throw ValidationError("grouped_inference: no signal groups");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("grouped_inference: bad level");
  if (sgs.g_mat.cols() != dq.n_exposures())
    throw ValidationError("grouped_inference: group matrices do not match K");
  const Eigen::MatrixXd& g = sgs.g_mat;
  const int l_count = sgs.n_groups();

  const Eigen::MatrixXd pi_g = dq.pi_hat * g.transpose();  // p x L
  const Eigen::MatrixXd v_g = g * dq.v * g.transpose();
  Eigen::MatrixXd raw = pi_g.transpose() * dq.w.asDiagonal() * pi_g - v_g;
  raw = 0.5 * (raw + raw.transpose().eval());
  const Eigen::MatrixXd a_g = nearest_psd_maxnorm(raw).m;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a_g);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() <= 1e-12 * scale) {
    const double p_count = static_cast<double>(dq.n_snps());
    throw NumericalError(
        "grouped design is near-singular; grouped instrument strength mu_min=" +
        std::to_string(es.eigenvalues().minCoeff()) + ", mu_min/sqrt(p)=" +
        std::to_string(es.eigenvalues().minCoeff() / std::sqrt(p_count)));
  }

  const Eigen::VectorXd b_g = pi_g.transpose() * (dq.w.asDiagonal() * dq.gamma_vec);
  const Eigen::VectorXd beta_g = a_g.ldlt().solve(b_g);

  // Plug-in middle of the sandwich, with the grouped debiased quadratic term.
  Eigen::MatrixXd mid = Eigen::MatrixXd::Zero(l_count, l_count);
  for (int j = 0; j < dq.n_snps(); ++j) {
    const Eigen::MatrixXd vjg =
        g * dq.sigma_xj[static_cast<std::size_t>(j)] * g.transpose() * dq.w(j);
    const Eigen::VectorXd gj = pi_g.row(j).transpose();
    const Eigen::VectorXd vb = vjg * beta_g;
    const double quad = 1.0 + beta_g.dot(vb);
    mid.noalias() += quad * dq.w(j) * (gj * gj.transpose());
    mid.noalias() += vb * vb.transpose();
  }
  mid = 0.5 * (mid + mid.transpose().eval());

  const Eigen::MatrixXd ainv = a_g.inverse();
  Eigen::MatrixXd var = ainv * mid * ainv.transpose();
  var = clamp_psd(0.5 * (var + var.transpose().eval()));

  GroupInference gi;
  gi.level = level;
  gi.estimates = beta_g;
  gi.variance = var;
  gi.se = var.diagonal().cwiseMax(0.0).cwiseSqrt();
  const double z = stats::normal_quantile(0.5 + level / 2.0);
  gi.ci_low = beta_g - z * gi.se;
  gi.ci_high = beta_g + z * gi.se;
  gi.p_values.resize(l_count);
  for (int l = 0; l < l_count; ++l)
    gi.p_values(l) = gi.se(l) > 0 ? stats::two_sided_p(beta_g(l) / gi.se(l)) : 0.0;
  return gi;
}

GroupInference grouped_inference(const SummaryDataset& ds, const SignalGroupSet& sgs,
                                 double level) {
  return grouped_inference(build_design(ds), sgs, level);
}

PipelineResult post_selection_pipeline(const SummaryDataset& ds, const PipelineConfig& config,
                                       std::uint64_t seed) {
  PipelineResult out;

  const ThinnedReplicates halves = thin_two_fold(ds, seed);
  const SummaryDataset& d_select = halves.folds[0];
  const SummaryDataset& d_infer = halves.folds[1];

  const DesignQuantities dq_select = build_design(d_select);
  out.strength_select = instrument_strength(dq_select);
  out.strength_infer = instrument_strength(build_design(d_infer));

  TuningGrid grid = build_lambda_grid(out.strength_select, dq_select.n_snps(),
                                      config.grid_points);
  grid.taus = config.taus;

  const ThinningPlan cv_plan =
      ThinningPlan::even(config.cv_folds, rng::mix(seed, 0xC5ULL));
  CvOptions cv_opts;
  cv_opts.rule = config.rule;
  cv_opts.threshold = config.threshold;
  cv_opts.per_fold_weights = config.per_fold_weights;
  cv_opts.correlation_from_zscores = config.correlation_from_zscores;
  cv_opts.lqa_tol = config.lqa_tol;
  cv_opts.lqa_max_iter = config.lqa_max_iter;
  out.cv = cv_pacs(d_select, grid, cv_plan, config.cv_repeats, cv_opts);

  const DebiasedNormal dn_select = DebiasedNormal::from(dq_select);
  const FitResult init = fit_dridge(dn_select, out.cv.phi);
  const Eigen::MatrixXd r_hat =
      exposure_correlation(d_select, config.correlation_from_zscores);
  const PacsWeights weights =
      pacs_weights(init.beta, r_hat, out.cv.tau_star, config.threshold);
  LqaOptions lqa;
  lqa.tol = config.lqa_tol;
  lqa.max_iter = config.lqa_max_iter;
  out.selection_fit = fit_pacs(dn_select, weights, out.cv.lambda_star, init.beta, lqa);

  out.selection = extract_signal_groups(out.selection_fit, config.precision);

  if (out.selection.groups.empty()) {
    out.status = "empty selection; inference skipped";
    return out;
  }
  out.inference = grouped_inference(d_infer, out.selection, config.level);
  out.status = "ok";
  return out;
}

StabilitySummary stability_summary(const SummaryDataset& ds, const PipelineConfig& config,
                                   int repeats, std::uint64_t seed, int threads) {
  if (repeats < 2) throw ValidationError("stability_summary: repeats must be >= 2");
  const int k = ds.n_exposures();

  StabilitySummary out;
  out.runs.resize(static_cast<std::size_t>(repeats));
  std::vector<std::optional<PipelineResult>> results(static_cast<std::size_t>(repeats));

  parallel_for(
      static_cast<std::size_t>(repeats),
      [&](std::size_t i) {
        StabilityRun& run = out.runs[i];
        run.sub_seed = rng::mix(seed, static_cast<std::uint64_t>(i));
        run.group_of.assign(static_cast<std::size_t>(k), 0);
        run.exposure_estimate = Eigen::VectorXd::Zero(k);
        run.exposure_p = Eigen::VectorXd::Ones(k);
        try {
          PipelineResult pr = post_selection_pipeline(ds, config, run.sub_seed);
          run.pattern = selection_pattern(pr.selection);
          for (int l = 0; l < pr.selection.n_groups(); ++l) {
            const auto& grp = pr.selection.groups[static_cast<std::size_t>(l)];
            for (std::size_t mi = 0; mi < grp.members.size(); ++mi) {
              const int m = grp.members[mi];
              run.group_of[static_cast<std::size_t>(m)] = l + 1;
              if (pr.inference) {
                run.exposure_estimate(m) =
                    grp.signs[mi] * grp.group_sign * pr.inference->estimates(l);
                run.exposure_p(m) = pr.inference->p_values(l);
              }
            }
          }
          run.ok = true;
          run.status = pr.status;
          results[i] = std::move(pr);
        } catch (const std::exception& e) {
          run.ok = false;
          run.status = e.what();
          run.pattern = std::string();
        }
      },
      threads);

  out.coassignment = Eigen::MatrixXd::Zero(k, k);
  int n_ok = 0;
  std::map<std::string, int> pattern_counts;
  out.significant_runs_per_exposure.assign(static_cast<std::size_t>(k), 0);
  const double alpha = 1.0 - config.level;
  for (const auto& run : out.runs) {
    if (!run.ok) continue;
    ++n_ok;
    pattern_counts[run.pattern] += 1;
    for (int a = 0; a < k; ++a) {
      if (run.group_of[static_cast<std::size_t>(a)] == 0) continue;
      if (run.exposure_p(a) < alpha)
        out.significant_runs_per_exposure[static_cast<std::size_t>(a)] += 1;
      for (int b = 0; b < k; ++b) {
        if (run.group_of[static_cast<std::size_t>(b)] ==
            run.group_of[static_cast<std::size_t>(a)])
          out.coassignment(a, b) += 1.0;
      }
    }
  }
  if (n_ok > 0) out.coassignment /= static_cast<double>(n_ok);

  for (const auto& [pattern, count] : pattern_counts) {
    if (count > out.most_frequent_count) {
      out.most_frequent_count = count;
      out.most_frequent_pattern = pattern;
    }
  }

  // Strategy 1 aggregation over the most frequent grouping: per-group median
  // estimate and median SE across the matching runs.
  if (!out.most_frequent_pattern.empty()) {
    int n_groups = 0;
    for (std::size_t i = 0; i < out.runs.size(); ++i) {
      if (out.runs[i].ok && out.runs[i].pattern == out.most_frequent_pattern && results[i] &&
          results[i]->inference) {
        n_groups = results[i]->selection.n_groups();
        break;
      }
    }
    std::vector<std::vector<double>> est(static_cast<std::size_t>(n_groups));
    std::vector<std::vector<double>> ses(static_cast<std::size_t>(n_groups));
    for (std::size_t i = 0; i < out.runs.size(); ++i) {
      if (!out.runs[i].ok || out.runs[i].pattern != out.most_frequent_pattern || !results[i] ||
          !results[i]->inference)
        continue;
      for (int l = 0; l < n_groups; ++l) {
        est[static_cast<std::size_t>(l)].push_back(results[i]->inference->estimates(l));
        ses[static_cast<std::size_t>(l)].push_back(results[i]->inference->se(l));
      }
    }
    auto median = [](std::vector<double> v) {
      if (v.empty()) return 0.0;
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    for (int l = 0; l < n_groups; ++l) {
      out.median_estimates.push_back(median(est[static_cast<std::size_t>(l)]));
      out.median_ses.push_back(median(ses[static_cast<std::size_t>(l)]));
    }
  }
  return out;
}

}  // namespace mvmr
