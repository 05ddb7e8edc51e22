#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mvmr/errors.hpp"
#include "mvmr/estimators.hpp"
#include "mvmr/grouping.hpp"
#include "mvmr/matrix_core.hpp"
#include "mvmr/model_selection.hpp"
#include "mvmr/simulation.hpp"
#include "mvmr/summary_data.hpp"
#include "mvmr/thinning.hpp"

namespace py = pybind11;
using namespace mvmr;

namespace {

SummaryDataset dataset_from_arrays(const Eigen::MatrixXd& gamma_hat,
                                   const Eigen::MatrixXd& se_x,
                                   const Eigen::VectorXd& gamma_outcome,
                                   const Eigen::VectorXd& se_y, const Eigen::MatrixXd& sigma,
                                   std::vector<std::string> names,
                                   std::vector<std::string> snp_ids) {
  const int p = static_cast<int>(gamma_hat.rows());
  const int k = static_cast<int>(gamma_hat.cols());
  if (se_x.rows() != p || se_x.cols() != k || gamma_outcome.size() != p || se_y.size() != p)
    throw ValidationError("dataset arrays have inconsistent shapes");
  SummaryDataset ds;
  ds.correlation = sigma.size() == 0 ? SharedCorrelation::identity(k)
                                     : SharedCorrelation{sigma};
  if (names.empty())
    for (int i = 0; i < k; ++i) names.push_back("X" + std::to_string(i + 1));
  ds.exposure_names = std::move(names);
  for (int j = 0; j < p; ++j) {
    SnpAssociation a;
    a.snp_id = j < static_cast<int>(snp_ids.size()) ? snp_ids[static_cast<std::size_t>(j)]
                                                    : "snp" + std::to_string(j + 1);
    a.gamma_hat = gamma_hat.row(j).transpose();
    a.se_x = se_x.row(j).transpose();
    a.gamma_outcome_hat = gamma_outcome(j);
    a.se_y = se_y(j);
    ds.snps.push_back(std::move(a));
  }
  ds.validate();
  return ds;
}

Eigen::MatrixXd dataset_gamma_hat(const SummaryDataset& ds) {
  Eigen::MatrixXd out(ds.n_snps(), ds.n_exposures());
  for (int j = 0; j < ds.n_snps(); ++j) out.row(j) = ds.snps[j].gamma_hat.transpose();
  return out;
}

Eigen::MatrixXd dataset_se_x(const SummaryDataset& ds) {
  Eigen::MatrixXd out(ds.n_snps(), ds.n_exposures());
  for (int j = 0; j < ds.n_snps(); ++j) out.row(j) = ds.snps[j].se_x.transpose();
  return out;
}

Eigen::VectorXd dataset_gamma_outcome(const SummaryDataset& ds) {
  Eigen::VectorXd out(ds.n_snps());
  for (int j = 0; j < ds.n_snps(); ++j) out(j) = ds.snps[j].gamma_outcome_hat;
  return out;
}

Eigen::VectorXd dataset_se_y(const SummaryDataset& ds) {
  Eigen::VectorXd out(ds.n_snps());
  for (int j = 0; j < ds.n_snps(); ++j) out(j) = ds.snps[j].se_y;
  return out;
}

std::vector<std::string> dataset_snp_ids(const SummaryDataset& ds) {
  std::vector<std::string> out;
  out.reserve(ds.snps.size());
  for (const auto& s : ds.snps) out.push_back(s.snp_id);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Summary-data multivariable Mendelian randomization: debiased and "
            "pairwise clustering-and-shrinkage estimators, data thinning, "
            "post-selection inference, and the Monte Carlo harness.";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<SummaryDataset>(m, "SummaryDataset")
      .def(py::init(&dataset_from_arrays), py::arg("gamma_hat"), py::arg("se_x"),
           py::arg("gamma_outcome"), py::arg("se_y"),
           py::arg("sigma") = Eigen::MatrixXd(), py::arg("exposure_names") = std::vector<std::string>{},
           py::arg("snp_ids") = std::vector<std::string>{})
      .def_property_readonly("n_snps", &SummaryDataset::n_snps)
      .def_property_readonly("n_exposures", &SummaryDataset::n_exposures)
      .def_property_readonly("gamma_hat", &dataset_gamma_hat)
      .def_property_readonly("se_x", &dataset_se_x)
      .def_property_readonly("gamma_outcome", &dataset_gamma_outcome)
      .def_property_readonly("se_y", &dataset_se_y)
      .def_property_readonly("sigma",
                             [](const SummaryDataset& ds) { return ds.correlation.sigma; })
      .def_property_readonly("exposure_names",
                             [](const SummaryDataset& ds) { return ds.exposure_names; })
      .def_property_readonly("snp_ids", &dataset_snp_ids)
      .def("validate", &SummaryDataset::validate);

  m.def("load_dataset",
        [](const std::string& path, const std::string& sigma_path) {
          return load_dataset(path, sigma_path);
        },
        py::arg("path"), py::arg("sigma_path") = "");
  m.def("write_dataset", &write_dataset, py::arg("dataset"), py::arg("path"));
  m.def("exposure_correlation",
        [](const SummaryDataset& ds, bool use_zscores) {
          return exposure_correlation(ds, use_zscores);
        },
        py::arg("dataset"), py::arg("use_zscores") = false);

  py::class_<InstrumentStrength>(m, "InstrumentStrength")
      .def_readonly("mu_min", &InstrumentStrength::mu_min)
      .def_readonly("mu_max", &InstrumentStrength::mu_max)
      .def_readonly("is_param", &InstrumentStrength::is_param)
      .def_readonly("r_n", &InstrumentStrength::r_n)
      .def("__repr__", [](const InstrumentStrength& s) {
        return "InstrumentStrength(mu_min=" + std::to_string(s.mu_min) +
               ", is_param=" + std::to_string(s.is_param) + ")";
      });

  m.def("instrument_strength",
        [](const SummaryDataset& ds) { return instrument_strength(build_design(ds)); },
        py::arg("dataset"));

  py::class_<PsdProjection>(m, "PsdProjection")
      .def_readonly("m", &PsdProjection::m)
      .def_readonly("converged", &PsdProjection::converged)
      .def_readonly("iterations", &PsdProjection::iterations)
      .def_readonly("distance", &PsdProjection::distance);

  m.def("nearest_psd_maxnorm", &nearest_psd_maxnorm, py::arg("m"), py::arg("tol") = 1e-7,
        py::arg("max_iter") = 2000);

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("beta", &FitResult::beta)
      .def_readonly("converged", &FitResult::converged)
      .def_readonly("iterations", &FitResult::iterations)
      .def_readonly("objective", &FitResult::objective)
      .def_property_readonly("variance",
                             [](const FitResult& f) -> py::object {
                               if (!f.variance) return py::none();
                               return py::cast(*f.variance);
                             })
      .def_property_readonly("method",
                             [](const FitResult& f) { return std::string(method_name(f.method)); })
      .def_property_readonly("lambda_",
                             [](const FitResult& f) -> py::object {
                               if (!f.lambda) return py::none();
                               return py::float_(*f.lambda);
                             })
      .def_property_readonly("tau", [](const FitResult& f) -> py::object {
        if (!f.tau) return py::none();
        return py::float_(*f.tau);
      });

  m.def("fit_ivw",
        [](const SummaryDataset& ds, bool with_variance) {
          return fit_ivw(build_design(ds), with_variance);
        },
        py::arg("dataset"), py::arg("with_variance") = true);
  m.def("fit_divw",
        [](const SummaryDataset& ds, bool with_variance) {
          return fit_divw(build_design(ds), with_variance);
        },
        py::arg("dataset"), py::arg("with_variance") = true);
  m.def("fit_dridge",
        [](const SummaryDataset& ds, double phi, bool with_variance) {
          return fit_dridge(build_design(ds), phi, with_variance);
        },
        py::arg("dataset"), py::arg("phi"), py::arg("with_variance") = true);

  py::class_<PacsWeights>(m, "PacsWeights")
      .def_readonly("w", &PacsWeights::w)
      .def_readonly("w_minus", &PacsWeights::w_minus)
      .def_readonly("w_plus", &PacsWeights::w_plus)
      .def_readonly("tau", &PacsWeights::tau);

  m.def("pacs_weights",
        [](const Eigen::VectorXd& beta_init, const Eigen::MatrixXd& r_hat, double tau,
           py::object threshold) {
          std::optional<double> thr;
          if (!threshold.is_none()) thr = threshold.cast<double>();
          return pacs_weights(beta_init, r_hat, tau, thr);
        },
        py::arg("beta_init"), py::arg("r_hat"), py::arg("tau"),
        py::arg("threshold") = py::none());

  m.def("fit_pacs",
        [](const SummaryDataset& ds, const PacsWeights& w, double lambda,
           const Eigen::VectorXd& beta_init, double tol, int max_iter) {
          return fit_pacs(build_design(ds), w, lambda, beta_init, tol, max_iter);
        },
        py::arg("dataset"), py::arg("weights"), py::arg("lambda_"), py::arg("beta_init"),
        py::arg("tol") = 1e-6, py::arg("max_iter") = 500);
  m.def("fit_dlasso",
        [](const SummaryDataset& ds, const Eigen::VectorXd& w, double lambda,
           const Eigen::VectorXd& beta_init, double tol, int max_iter) {
          return fit_dlasso(build_design(ds), w, lambda, beta_init, tol, max_iter);
        },
        py::arg("dataset"), py::arg("weights"), py::arg("lambda_"), py::arg("beta_init"),
        py::arg("tol") = 1e-6, py::arg("max_iter") = 500);

  py::class_<ThinningPlan>(m, "ThinningPlan")
      .def(py::init([](std::vector<double> eps, std::uint64_t seed) {
             ThinningPlan plan{std::move(eps), seed};
             plan.validate();
             return plan;
           }),
           py::arg("epsilons"), py::arg("seed"))
      .def_static("even", &ThinningPlan::even, py::arg("folds"), py::arg("seed"))
      .def_readonly("epsilons", &ThinningPlan::epsilons)
      .def_readonly("seed", &ThinningPlan::seed);

  py::class_<ThinnedReplicates>(m, "ThinnedReplicates")
      .def_readonly("folds", &ThinnedReplicates::folds)
      .def_readonly("plan", &ThinnedReplicates::plan);

  m.def("thin_two_fold",
        [](const SummaryDataset& ds, std::uint64_t seed) { return thin_two_fold(ds, seed); },
        py::arg("dataset"), py::arg("seed"));
  m.def("thin_multi_fold",
        [](const SummaryDataset& ds, const ThinningPlan& plan) {
          return thin_multi_fold(ds, plan);
        },
        py::arg("dataset"), py::arg("plan"));
  m.def("training_complement", &training_complement, py::arg("dataset"), py::arg("replicates"),
        py::arg("fold"));

  py::class_<TuningGrid>(m, "TuningGrid")
      .def_readwrite("lambdas", &TuningGrid::lambdas)
      .def_readwrite("taus", &TuningGrid::taus)
      .def_readonly("base_rate", &TuningGrid::base_rate);

  m.def("build_lambda_grid",
        [](const SummaryDataset& ds, int n_points) {
          const auto dq = build_design(ds);
          return build_lambda_grid(instrument_strength(dq), dq.n_snps(), n_points);
        },
        py::arg("dataset"), py::arg("n_points") = 25);

  py::class_<CvCandidate>(m, "CvCandidate")
      .def_readonly("lambda_", &CvCandidate::lambda)
      .def_readonly("tau", &CvCandidate::tau)
      .def_readonly("mean_loss", &CvCandidate::mean_loss)
      .def_readonly("se_loss", &CvCandidate::se_loss)
      .def_readonly("n_failures", &CvCandidate::n_failures);

  py::class_<CvResult>(m, "CvResult")
      .def_readonly("candidates", &CvResult::candidates)
      .def_readonly("lambda_star", &CvResult::lambda_star)
      .def_readonly("tau_star", &CvResult::tau_star)
      .def_readonly("phi", &CvResult::phi);

  m.def("cv_pacs",
        [](const SummaryDataset& ds, const TuningGrid& grid, const ThinningPlan& plan,
           int repeats, const std::string& rule, py::object threshold, py::object phi) {
          CvOptions opts;
          opts.rule = rule == "min" ? SelectionRule::MIN : SelectionRule::ONE_SE;
          if (!threshold.is_none()) opts.threshold = threshold.cast<double>();
          if (!phi.is_none()) opts.phi = phi.cast<double>();
          return cv_pacs(ds, grid, plan, repeats, opts);
        },
        py::arg("dataset"), py::arg("grid"), py::arg("plan"), py::arg("repeats") = 1,
        py::arg("rule") = "1se", py::arg("threshold") = py::none(),
        py::arg("phi") = py::none());
  m.def("cv_ridge",
        [](const SummaryDataset& ds, const ThinningPlan& plan, int n_points) {
          return cv_ridge(ds, plan, n_points);
        },
        py::arg("dataset"), py::arg("plan"), py::arg("n_points") = 25);

  py::class_<SignalGroup>(m, "SignalGroup")
      .def_readonly("members", &SignalGroup::members)
      .def_readonly("signs", &SignalGroup::signs)
      .def_readonly("magnitude", &SignalGroup::magnitude)
      .def_readonly("group_sign", &SignalGroup::group_sign);

  py::class_<SignalGroupSet>(m, "SignalGroupSet")
      .def_readonly("groups", &SignalGroupSet::groups)
      .def_readonly("nonmembers", &SignalGroupSet::nonmembers)
      .def_readonly("c_g", &SignalGroupSet::c_g)
      .def_readonly("g_mat", &SignalGroupSet::g_mat)
      .def_property_readonly("pattern",
                             [](const SignalGroupSet& s) { return selection_pattern(s); });

  m.def("extract_signal_groups",
        [](const Eigen::VectorXd& beta, double precision) {
          return extract_signal_groups(beta, precision);
        },
        py::arg("beta"), py::arg("precision") = 1e-3);

  py::class_<GroupInference>(m, "GroupInference")
      .def_readonly("estimates", &GroupInference::estimates)
      .def_readonly("variance", &GroupInference::variance)
      .def_readonly("se", &GroupInference::se)
      .def_readonly("ci_low", &GroupInference::ci_low)
      .def_readonly("ci_high", &GroupInference::ci_high)
      .def_readonly("p_values", &GroupInference::p_values)
      .def_readonly("level", &GroupInference::level);

  m.def("grouped_inference",
        [](const SummaryDataset& ds, const SignalGroupSet& sgs, double level) {
          return grouped_inference(ds, sgs, level);
        },
        py::arg("dataset"), py::arg("groups"), py::arg("level") = 0.95);

  py::class_<PipelineConfig>(m, "PipelineConfig")
      .def(py::init<>())
      .def_readwrite("grid_points", &PipelineConfig::grid_points)
      .def_readwrite("taus", &PipelineConfig::taus)
      .def_readwrite("cv_repeats", &PipelineConfig::cv_repeats)
      .def_readwrite("precision", &PipelineConfig::precision)
      .def_readwrite("level", &PipelineConfig::level)
      .def_readwrite("threshold", &PipelineConfig::threshold)
      .def_readwrite("per_fold_weights", &PipelineConfig::per_fold_weights);

  py::class_<PipelineResult>(m, "PipelineResult")
      .def_readonly("selection", &PipelineResult::selection)
      .def_property_readonly("inference",
                             [](const PipelineResult& r) -> py::object {
                               if (!r.inference) return py::none();
                               return py::cast(*r.inference);
                             })
      .def_readonly("selection_fit", &PipelineResult::selection_fit)
      .def_readonly("cv", &PipelineResult::cv)
      .def_readonly("strength_select", &PipelineResult::strength_select)
      .def_readonly("strength_infer", &PipelineResult::strength_infer)
      .def_readonly("status", &PipelineResult::status);

  m.def("post_selection_pipeline",
        [](const SummaryDataset& ds, const PipelineConfig& config, std::uint64_t seed) {
          return post_selection_pipeline(ds, config, seed);
        },
        py::arg("dataset"), py::arg("config"), py::arg("seed"));

  py::class_<StabilityRun>(m, "StabilityRun")
      .def_readonly("sub_seed", &StabilityRun::sub_seed)
      .def_readonly("pattern", &StabilityRun::pattern)
      .def_readonly("group_of", &StabilityRun::group_of)
      .def_readonly("exposure_estimate", &StabilityRun::exposure_estimate)
      .def_readonly("exposure_p", &StabilityRun::exposure_p)
      .def_readonly("ok", &StabilityRun::ok)
      .def_readonly("status", &StabilityRun::status);

  py::class_<StabilitySummary>(m, "StabilitySummary")
      .def_readonly("coassignment", &StabilitySummary::coassignment)
      .def_readonly("runs", &StabilitySummary::runs)
      .def_readonly("most_frequent_pattern", &StabilitySummary::most_frequent_pattern)
      .def_readonly("most_frequent_count", &StabilitySummary::most_frequent_count)
      .def_readonly("median_estimates", &StabilitySummary::median_estimates)
      .def_readonly("median_ses", &StabilitySummary::median_ses);

  m.def("stability_summary",
        [](const SummaryDataset& ds, const PipelineConfig& config, int repeats,
           std::uint64_t seed, int threads) {
          return stability_summary(ds, config, repeats, seed, threads);
        },
        py::arg("dataset"), py::arg("config"), py::arg("repeats"), py::arg("seed"),
        py::arg("threads") = 0);

  py::class_<DgpConfig>(m, "DgpConfig")
      .def(py::init<>())
      .def_readwrite("n_exposures", &DgpConfig::n_exposures)
      .def_readwrite("n_snps", &DgpConfig::n_snps)
      .def_readwrite("n", &DgpConfig::n)
      .def_readwrite("beta_true", &DgpConfig::beta_true)
      .def_readwrite("gamma_var", &DgpConfig::gamma_var)
      .def_readwrite("sigma_u", &DgpConfig::sigma_u)
      .def_readwrite("sigma_e", &DgpConfig::sigma_e)
      .def_readwrite("n_null_snps", &DgpConfig::n_null_snps)
      .def_readwrite("seed", &DgpConfig::seed);

  py::class_<DgpDesign>(m, "DgpDesign")
      .def_readonly("gammas", &DgpDesign::gammas)
      .def_readonly("maf", &DgpDesign::maf);

  m.def("make_design", &make_design, py::arg("config"));
  m.def("simulate_summary_stats",
        [](const DgpConfig& cfg, const DgpDesign& design, std::uint64_t seed) {
          return simulate_summary_stats(cfg, design, seed);
        },
        py::arg("config"), py::arg("design"), py::arg("seed"));

  py::class_<ReplicateMetrics>(m, "ReplicateMetrics")
      .def_readonly("mse", &ReplicateMetrics::mse)
      .def_readonly("correct_sparsity", &ReplicateMetrics::correct_sparsity)
      .def_readonly("sensitivity", &ReplicateMetrics::sensitivity)
      .def_readonly("fpr", &ReplicateMetrics::fpr)
      .def_readonly("selection", &ReplicateMetrics::selection);

  m.def("compute_metrics",
        [](const Eigen::VectorXd& beta_hat, const Eigen::VectorXd& beta_true) {
          return compute_metrics(beta_hat, beta_true);
        },
        py::arg("beta_hat"), py::arg("beta_true"));

  py::class_<ExperimentRow>(m, "ExperimentRow")
      .def_readonly("estimator", &ExperimentRow::estimator)
      .def_readonly("median_mse", &ExperimentRow::median_mse)
      .def_readonly("correct_sparsity", &ExperimentRow::correct_sparsity)
      .def_readonly("sensitivity", &ExperimentRow::sensitivity)
      .def_readonly("fpr", &ExperimentRow::fpr)
      .def_readonly("n_ok", &ExperimentRow::n_ok)
      .def_readonly("n_failed", &ExperimentRow::n_failed);

  py::class_<ExperimentResult>(m, "ExperimentResult")
      .def_readonly("rows", &ExperimentResult::rows);

  m.def("run_experiment",
        [](const DgpConfig& cfg, const std::vector<std::string>& estimators, int replicates,
           std::uint64_t seed, int threads) {
          return run_experiment(cfg, estimators, replicates, seed, threads);
        },
        py::arg("config"), py::arg("estimators"), py::arg("replicates"), py::arg("seed"),
        py::arg("threads") = 0);

#ifdef MVMR_VERSION
  m.attr("__version__") = MVMR_VERSION;
#else
  m.attr("__version__") = "dev";
#endif
}
