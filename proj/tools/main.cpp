#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mvmr/errors.hpp"
#include "mvmr/estimators.hpp"
#include "mvmr/grouping.hpp"
#include "mvmr/matrix_core.hpp"
#include "mvmr/model_selection.hpp"
#include "mvmr/parallel.hpp"
#include "mvmr/rng.hpp"
#include "mvmr/simulation.hpp"
#include "mvmr/summary_data.hpp"
#include "mvmr/thinning.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

std::string fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mvmr::ValidationError("cannot open for checksum: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (got < static_cast<std::streamsize>(sizeof(buf))) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

// Write-to-temp-then-rename so partial output never lands at the final path.
void atomic_write(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw mvmr::ValidationError("cannot write: " + tmp);
    out << content;
  }
  fs::rename(tmp, target);
}

void atomic_write_json(const std::string& path, const json& j) {
  atomic_write(path, j.dump(2) + "\n");
}

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

json json_number(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

// Flat key-value config file; flags given on the command line win. A manifest
// file (with a "config" member) is accepted too, so a run can be replayed
// from its own manifest. The --config tokens are consumed here.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i),
                 args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw mvmr::ValidationError("cannot open config file: " + config_path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw mvmr::ValidationError(std::string("bad config file: ") + e.what());
  }
  if (j.contains("config")) j = j["config"];
  if (!j.is_object()) throw mvmr::ValidationError("config file must hold a flat JSON object");

  auto has_flag = [&](const std::string& key) {
    const std::string full = "--" + key;
    for (const auto& a : args)
      if (a == full || a.rfind(full + "=", 0) == 0) return true;
    return false;
  };

  std::vector<std::string> out = args;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (has_flag(it.key())) continue;
    std::string value;
    if (it.value().is_string()) value = it.value().get<std::string>();
    else if (it.value().is_boolean()) value = it.value().get<bool>() ? "true" : "false";
    else value = it.value().dump();
    if (value.empty()) continue;  // unset optional paths
    out.push_back("--" + it.key() + "=" + value);
  }
  return out;
}

struct CommonIo {
  std::string data_path;
  std::string sigma_path;
  std::string sd_path;
  std::string manifest_path;
};

void add_data_options(CLI::App* cmd, CommonIo& io) {
  cmd->add_option("--data", io.data_path, "summary dataset TSV")->required();
  cmd->add_option("--sigma", io.sigma_path, "K x K shared correlation CSV (identity if omitted)");
  cmd->add_option("--sd", io.sd_path, "single-column trait SD rescale CSV");
  cmd->add_option("--manifest", io.manifest_path, "manifest output path override");
}

mvmr::SummaryDataset load_from(const CommonIo& io) {
  mvmr::LoadOptions opts;
  if (!io.sd_path.empty()) {
    // Peek at the header to learn K before reading the SD vector.
    std::ifstream in(io.data_path);
    if (!in) throw mvmr::ValidationError("cannot open dataset file: " + io.data_path);
    std::string header;
    std::getline(in, header);
    const auto cols = std::count(header.begin(), header.end(), '\t') + 1;
    opts.trait_sd = mvmr::load_trait_sd(io.sd_path, static_cast<int>((cols - 3) / 2));
  }
  auto ds = mvmr::load_dataset(io.data_path, io.sigma_path, &opts);
  if (opts.used_identity_sigma)
    std::cerr << "warning: no --sigma given; assuming identity correlation (no sample overlap)\n";
  return ds;
}

void write_manifest(const std::string& path, const std::string& subcommand,
                    const json& config, const std::vector<std::string>& input_files) {
  json m;
  m["subcommand"] = subcommand;
  m["version"] = MVMR_VERSION;
  m["config"] = config;
  json inputs = json::object();
  for (const auto& f : input_files)
    if (!f.empty()) inputs[f] = fnv1a_file(f);
  m["inputs"] = inputs;
  atomic_write_json(path, m);
}

json selection_to_json(const mvmr::SignalGroupSet& sgs) {
  json out;
  out["pattern"] = mvmr::selection_pattern(sgs);
  json groups = json::array();
  for (int l = 0; l < sgs.n_groups(); ++l) {
    const auto& g = sgs.groups[static_cast<std::size_t>(l)];
    json jg;
    jg["members"] = g.members;
    jg["signs"] = g.signs;
    jg["magnitude"] = g.magnitude;
    jg["group_sign"] = g.group_sign;
    groups.push_back(jg);
  }
  out["groups"] = groups;
  out["nonmembers"] = sgs.nonmembers;
  return out;
}

json fit_to_json(const mvmr::FitResult& fit, const mvmr::SignalGroupSet& sgs) {
  json out;
  out["method"] = mvmr::method_name(fit.method);
  out["beta"] = vector_to_json(fit.beta);
  if (fit.variance) {
    json se = json::array();
    for (Eigen::Index i = 0; i < fit.beta.size(); ++i)
      se.push_back(std::sqrt(std::max((*fit.variance)(i, i), 0.0)));
    out["se"] = se;
  } else {
    out["se"] = nullptr;
  }
  out["lambda"] = fit.lambda ? json(*fit.lambda) : json(nullptr);
  out["tau"] = fit.tau ? json(*fit.tau) : json(nullptr);
  out["converged"] = fit.converged;
  out["iterations"] = fit.iterations;
  out["objective"] = fit.objective;
  json selected = json::array();
  for (bool s : mvmr::selected_mask(fit.beta)) selected.push_back(s);
  out["selected"] = selected;
  std::vector<int> labels(static_cast<std::size_t>(fit.beta.size()), 0);
  for (int l = 0; l < sgs.n_groups(); ++l)
    for (int m : sgs.groups[static_cast<std::size_t>(l)].members)
      labels[static_cast<std::size_t>(m)] = l + 1;
  out["group_labels"] = labels;
  out["groups"] = selection_to_json(sgs)["groups"];
  return out;
}

std::string inference_csv(const mvmr::SignalGroupSet& sgs, const mvmr::GroupInference& gi,
                          const std::vector<std::string>& names) {
  std::ostringstream out;
  out << "group,members,estimate,se,ci_low,ci_high,p_value\n";
  for (int l = 0; l < sgs.n_groups(); ++l) {
    const auto& g = sgs.groups[static_cast<std::size_t>(l)];
    out << (l + 1) << ",\"";
    for (std::size_t i = 0; i < g.members.size(); ++i) {
      if (i) out << ';';
      const int m = g.members[i];
      out << (g.signs[i] * g.group_sign < 0 ? "-" : "") << names[static_cast<std::size_t>(m)];
    }
    out << "\"," << fmt_num(gi.estimates(l)) << ',' << fmt_num(gi.se(l)) << ','
        << fmt_num(gi.ci_low(l)) << ',' << fmt_num(gi.ci_high(l)) << ','
        << fmt_num(gi.p_values(l)) << '\n';
  }
  return out.str();
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Summary-data multivariable Mendelian randomization with pairwise "
               "clustering-and-shrinkage estimation, data thinning and post-selection "
               "inference"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MVMR_VERSION);
  // --config is handled in a pre-pass; register it so parsing accepts it.
  // --config FILE is handled by a pre-pass (apply_config_file) and consumed
  // before parsing; registered per subcommand below purely for --help.

  // ---- fit ----
  auto* fit_cmd = app.add_subcommand("fit", "fit an estimator and write FitResult JSON");
  CommonIo fit_io;
  add_data_options(fit_cmd, fit_io);
  std::string fit_method = "pacs";
  fit_cmd->add_option("--method", fit_method, "ivw|divw|dridge|dlasso|pacs|pacs-x")
      ->required();
  double fit_lambda = -1, fit_tau = -1, fit_phi = -1, fit_threshold = 0.8;
  std::uint64_t fit_seed = 1;
  int fit_grid_points = 25, fit_repeats = 1;
  std::string fit_rule = "1se", fit_out = "fit.json";
  bool fit_zscore_corr = false;
  double fit_precision = 1e-3;
  fit_cmd->add_option("--lambda", fit_lambda, "penalty level (CV-selected if omitted)");
  fit_cmd->add_option("--tau", fit_tau, "adaptive weight exponent (CV-selected if omitted)");
  fit_cmd->add_option("--phi", fit_phi, "ridge level (CV-selected if omitted)");
  fit_cmd->add_option("--threshold", fit_threshold, "pacs-x correlation threshold");
  fit_cmd->add_option("--seed", fit_seed, "seed for CV thinning");
  fit_cmd->add_option("--grid-points", fit_grid_points, "lambda grid size");
  fit_cmd->add_option("--repeats", fit_repeats, "CV thinning repeats");
  fit_cmd->add_option("--rule", fit_rule, "1se|min");
  fit_cmd->add_option("--precision", fit_precision, "signal-group magnitude precision");
  fit_cmd->add_flag("--zscore-correlation", fit_zscore_corr,
                    "compute exposure correlations from z-scores");
  fit_cmd->add_option("--out", fit_out, "output JSON path");

  // ---- diagnose ----
  auto* diag_cmd = app.add_subcommand("diagnose", "print instrument strength diagnostics as JSON");
  CommonIo diag_io;
  add_data_options(diag_cmd, diag_io);
  std::string diag_out;
  diag_cmd->add_option("--out", diag_out, "also write the JSON to this path");

  // ---- thin ----
  auto* thin_cmd = app.add_subcommand("thin", "split a dataset into independent replicates");
  CommonIo thin_io;
  add_data_options(thin_cmd, thin_io);
  int thin_folds = 2;
  std::vector<double> thin_eps;
  std::uint64_t thin_seed = 1;
  std::string thin_prefix = "thin";
  thin_cmd->add_option("--folds", thin_folds, "number of folds M");
  thin_cmd->add_option("--eps", thin_eps, "fractions e1,...,eM (default 1/M each)")
      ->delimiter(',');
  thin_cmd->add_option("--seed", thin_seed, "RNG seed");
  thin_cmd->add_option("--out-prefix", thin_prefix, "output path prefix");

  // ---- cv ----
  auto* cv_cmd = app.add_subcommand("cv", "cross-validate (lambda, tau) by data thinning");
  CommonIo cv_io;
  add_data_options(cv_cmd, cv_io);
  int cv_grid_points = 25, cv_repeats = 1, cv_folds = 5;
  std::uint64_t cv_seed = 1;
  std::string cv_rule = "1se", cv_out = "cv.json", cv_table = "cv_losses.csv";
  double cv_threshold = -1;
  bool cv_zscore = false;
  cv_cmd->add_option("--grid-points", cv_grid_points, "lambda grid size");
  cv_cmd->add_option("--repeats", cv_repeats, "thinning repeats");
  cv_cmd->add_option("--folds", cv_folds, "thinning folds");
  cv_cmd->add_option("--seed", cv_seed, "RNG seed");
  cv_cmd->add_option("--rule", cv_rule, "1se|min");
  cv_cmd->add_option("--threshold", cv_threshold, "pacs-x correlation threshold (off if < 0)");
  cv_cmd->add_flag("--zscore-correlation", cv_zscore, "correlations from z-scores");
  cv_cmd->add_option("--out", cv_out, "CvResult JSON path");
  cv_cmd->add_option("--loss-table", cv_table, "per-candidate loss CSV path");

  // ---- select-infer ----
  auto* si_cmd = app.add_subcommand("select-infer",
                                 "thin, select signal-groups, infer on the held-out half");
  CommonIo si_io;
  add_data_options(si_cmd, si_io);
  std::uint64_t si_seed = 1;
  int si_grid_points = 25, si_repeats = 1;
  double si_level = 0.95, si_precision = 1e-3, si_threshold = -1;
  std::string si_rule = "1se", si_prefix = "select_infer";
  bool si_zscore = false;
  si_cmd->add_option("--seed", si_seed, "RNG seed");
  si_cmd->add_option("--grid-points", si_grid_points, "lambda grid size");
  si_cmd->add_option("--repeats", si_repeats, "CV thinning repeats");
  si_cmd->add_option("--level", si_level, "confidence level");
  si_cmd->add_option("--precision", si_precision, "group magnitude precision");
  si_cmd->add_option("--threshold", si_threshold, "pacs-x correlation threshold (off if < 0)");
  si_cmd->add_option("--rule", si_rule, "1se|min");
  si_cmd->add_flag("--zscore-correlation", si_zscore, "correlations from z-scores");
  si_cmd->add_option("--out-prefix", si_prefix, "output path prefix");

  // ---- stability ----
  auto* st_cmd = app.add_subcommand("stability", "repeat the pipeline and summarize groupings");
  CommonIo st_io;
  add_data_options(st_cmd, st_io);
  int st_repeats = 100, st_threads = 0, st_grid_points = 25;
  std::uint64_t st_seed = 1;
  double st_level = 0.95, st_precision = 1e-3, st_threshold = -1;
  std::string st_prefix = "stability";
  st_cmd->add_option("--repeats", st_repeats, "number of pipeline runs")->required();
  st_cmd->add_option("--threads", st_threads, "parallel pool size (0 = logical cores)");
  st_cmd->add_option("--seed", st_seed, "RNG seed");
  st_cmd->add_option("--grid-points", st_grid_points, "lambda grid size");
  st_cmd->add_option("--level", st_level, "confidence level");
  st_cmd->add_option("--precision", st_precision, "group magnitude precision");
  st_cmd->add_option("--threshold", st_threshold, "pacs-x correlation threshold (off if < 0)");
  st_cmd->add_option("--out-prefix", st_prefix, "output path prefix");

  // ---- simulate ----
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo experiment driver");
  std::int64_t sim_n = 100000;
  int sim_replicates = 10, sim_threads = 0, sim_snps = 500, sim_exposures = 10;
  std::uint64_t sim_seed = 1;
  std::vector<std::string> sim_estimators = {"ivw", "pacs"};
  std::string sim_prefix = "simulation", sim_policy = "empirical", sim_manifest;
  sim_cmd->add_option("--n", sim_n, "individual-level sample size per cohort");
  sim_cmd->add_option("--replicates", sim_replicates, "Monte Carlo replicates");
  sim_cmd->add_option("--estimators", sim_estimators,
                      "ivw|divw|dridge|dlasso|pacs|pacs-<x>")
      ->delimiter(',');
  sim_cmd->add_option("--seed", sim_seed, "RNG seed");
  sim_cmd->add_option("--threads", sim_threads, "parallel pool size (0 = logical cores)");
  sim_cmd->add_option("--snps", sim_snps, "number of SNPs");
  sim_cmd->add_option("--exposures", sim_exposures, "number of exposures");
  sim_cmd->add_option("--sigma-policy", sim_policy, "empirical|identity");
  sim_cmd->add_option("--out-prefix", sim_prefix, "output path prefix");
  sim_cmd->add_option("--manifest", sim_manifest, "manifest output path override");

  for (auto* sub : app.get_subcommands({})) {
    static std::string config_dummy;
    sub->add_option("--config", config_dummy,
                    "flat key-value JSON config or a manifest (flags override)");
  }

  std::vector<std::string> args(argv + 1, argv + argc);
  args = apply_config_file(args);
  std::vector<const char*> cargs;
  cargs.push_back(argv[0]);
  for (const auto& a : args) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitValidation;
  }

  auto parse_rule = [](const std::string& r) {
    if (r == "1se") return mvmr::SelectionRule::ONE_SE;
    if (r == "min") return mvmr::SelectionRule::MIN;
    throw mvmr::ValidationError("unknown rule: " + r + " (expected 1se or min)");
  };

  if (app.got_subcommand(fit_cmd)) {
    const auto ds = load_from(fit_io);
    const auto dq = mvmr::build_design(ds);
    mvmr::FitResult fit;
    const bool is_pacsx = fit_method == "pacs-x";
    std::optional<double> threshold;
    if (is_pacsx) threshold = fit_threshold;

    if (fit_method == "ivw") {
      fit = mvmr::fit_ivw(dq, true);
    } else if (fit_method == "divw") {
      fit = mvmr::fit_divw(dq, true);
    } else if (fit_method == "dridge") {
      const double phi = fit_phi >= 0 ? fit_phi
                                      : mvmr::cv_ridge(ds, mvmr::ThinningPlan::even(5, fit_seed));
      fit = mvmr::fit_dridge(dq, phi, true);
    } else if (fit_method == "dlasso" || fit_method == "pacs" || is_pacsx) {
      const mvmr::DebiasedNormal dn = mvmr::DebiasedNormal::from(dq);
      const mvmr::ThinningPlan ridge_plan =
          mvmr::ThinningPlan::even(5, mvmr::rng::mix(fit_seed, 0x52ULL));
      const double phi = fit_phi >= 0 ? fit_phi : mvmr::cv_ridge(ds, ridge_plan);
      double lambda = fit_lambda, tau = fit_tau;
      if (lambda < 0 || tau < 0) {
        mvmr::TuningGrid grid = mvmr::build_lambda_grid(mvmr::instrument_strength(dq),
                                                        dq.n_snps(), fit_grid_points);
        mvmr::CvOptions opts;
        opts.rule = parse_rule(fit_rule);
        opts.phi = phi;
        opts.threshold = fit_method == "dlasso" ? std::optional<double>(1.0) : threshold;
        opts.correlation_from_zscores = fit_zscore_corr;
        const auto cv = mvmr::cv_pacs(ds, grid, mvmr::ThinningPlan::even(5, fit_seed),
                                      fit_repeats, opts);
        if (lambda < 0) lambda = cv.lambda_star;
        if (tau < 0) tau = cv.tau_star;
      }
      const mvmr::FitResult init = mvmr::fit_dridge(dn, phi);
      const Eigen::MatrixXd r_hat = mvmr::exposure_correlation(ds, fit_zscore_corr);
      if (fit_method == "dlasso") {
        const auto w = mvmr::pacs_weights(init.beta, r_hat, tau, 1.0);
        fit = mvmr::fit_dlasso(dn, w.w, lambda, init.beta);
        fit.tau = tau;
      } else {
        const auto w = mvmr::pacs_weights(init.beta, r_hat, tau, threshold);
        fit = mvmr::fit_pacs(dn, w, lambda, init.beta);
      }
    } else {
      throw mvmr::ValidationError("unknown method: " + fit_method);
    }

    const auto sgs = mvmr::extract_signal_groups(fit, fit_precision);
    atomic_write_json(fit_out, fit_to_json(fit, sgs));
    json cfg{{"data", fit_io.data_path}, {"sigma", fit_io.sigma_path},
             {"sd", fit_io.sd_path},     {"method", fit_method},
             {"seed", fit_seed},         {"grid-points", fit_grid_points},
             {"repeats", fit_repeats},   {"rule", fit_rule},
             {"precision", fit_precision}, {"out", fit_out}};
    if (fit.lambda) cfg["lambda"] = *fit.lambda;
    if (fit.tau) cfg["tau"] = *fit.tau;
    if (is_pacsx) cfg["threshold"] = fit_threshold;
    write_manifest(fit_io.manifest_path.empty() ? fit_out + ".manifest.json"
                                                : fit_io.manifest_path,
                   "fit", cfg, {fit_io.data_path, fit_io.sigma_path, fit_io.sd_path});
    return kExitOk;
  }

  if (app.got_subcommand(diag_cmd)) {
    const auto ds = load_from(diag_io);
    const auto dq = mvmr::build_design(ds);
    const auto st = mvmr::instrument_strength(dq);
    json out{{"mu_min", st.mu_min},
             {"mu_max", st.mu_max},
             {"is_param", st.is_param},
             {"r_n", json_number(st.r_n)},
             {"n_snps", dq.n_snps()},
             {"n_exposures", dq.n_exposures()}};
    std::cout << out.dump(2) << "\n";
    if (!diag_out.empty()) {
      atomic_write_json(diag_out, out);
      json cfg{{"data", diag_io.data_path}, {"sigma", diag_io.sigma_path}, {"out", diag_out}};
      write_manifest(diag_io.manifest_path.empty() ? diag_out + ".manifest.json"
                                                   : diag_io.manifest_path,
                     "diagnose", cfg, {diag_io.data_path, diag_io.sigma_path});
    }
    return kExitOk;
  }

  if (app.got_subcommand(thin_cmd)) {
    const auto ds = load_from(thin_io);
    mvmr::ThinningPlan plan;
    plan.seed = thin_seed;
    if (thin_eps.empty()) {
      plan.epsilons = mvmr::ThinningPlan::even(thin_folds, thin_seed).epsilons;
    } else {
      if (thin_cmd->count("--folds") > 0 &&
          thin_folds != static_cast<int>(thin_eps.size()))
        throw mvmr::ValidationError("--folds disagrees with the number of --eps entries");
      plan.epsilons = thin_eps;
    }
    const auto reps = mvmr::thin_multi_fold(ds, plan);

    std::vector<std::string> fold_files;
    for (int m = 0; m < plan.n_folds(); ++m) {
      const std::string path = thin_prefix + "_fold" + std::to_string(m + 1) + ".tsv";
      mvmr::write_dataset(reps.folds[static_cast<std::size_t>(m)], path);
      fold_files.push_back(path);
    }
    json manifest;
    manifest["seed"] = plan.seed;
    manifest["eps"] = plan.epsilons;
    json checks = json::object();
    for (const auto& f : fold_files) checks[f] = fnv1a_file(f);
    manifest["checksums"] = checks;
    atomic_write_json(thin_prefix + "_manifest.json", manifest);
    json cfg{{"data", thin_io.data_path}, {"sigma", thin_io.sigma_path},
             {"folds", plan.n_folds()},   {"seed", thin_seed},
             {"out-prefix", thin_prefix}};
    write_manifest(thin_io.manifest_path.empty() ? thin_prefix + ".manifest.json"
                                                 : thin_io.manifest_path,
                   "thin", cfg, {thin_io.data_path, thin_io.sigma_path});
    return kExitOk;
  }

  if (app.got_subcommand(cv_cmd)) {
    const auto ds = load_from(cv_io);
    const auto dq = mvmr::build_design(ds);
    mvmr::TuningGrid grid =
        mvmr::build_lambda_grid(mvmr::instrument_strength(dq), dq.n_snps(), cv_grid_points);
    mvmr::CvOptions opts;
    opts.rule = parse_rule(cv_rule);
    if (cv_threshold >= 0) opts.threshold = cv_threshold;
    opts.correlation_from_zscores = cv_zscore;
    const auto result = mvmr::cv_pacs(ds, grid, mvmr::ThinningPlan::even(cv_folds, cv_seed),
                                      cv_repeats, opts);

    json out{{"lambda_star", result.lambda_star},
             {"tau_star", result.tau_star},
             {"rule", cv_rule},
             {"phi", result.phi},
             {"base_rate", grid.base_rate}};
    atomic_write_json(cv_out, out);

    std::ostringstream table;
    table << "lambda,tau,mean_loss,se_loss,n_failures\n";
    for (const auto& c : result.candidates)
      table << fmt_num(c.lambda) << ',' << fmt_num(c.tau) << ',' << fmt_num(c.mean_loss)
            << ',' << fmt_num(c.se_loss) << ',' << c.n_failures << '\n';
    atomic_write(cv_table, table.str());

    json cfg{{"data", cv_io.data_path},       {"sigma", cv_io.sigma_path},
             {"grid-points", cv_grid_points}, {"repeats", cv_repeats},
             {"folds", cv_folds},             {"seed", cv_seed},
             {"rule", cv_rule},               {"out", cv_out},
             {"loss-table", cv_table}};
    if (cv_threshold >= 0) cfg["threshold"] = cv_threshold;
    write_manifest(cv_io.manifest_path.empty() ? cv_out + ".manifest.json"
                                               : cv_io.manifest_path,
                   "cv", cfg, {cv_io.data_path, cv_io.sigma_path});
    return kExitOk;
  }

  if (app.got_subcommand(si_cmd)) {
    const auto ds = load_from(si_io);
    mvmr::PipelineConfig config;
    config.grid_points = si_grid_points;
    config.cv_repeats = si_repeats;
    config.level = si_level;
    config.precision = si_precision;
    config.rule = parse_rule(si_rule);
    config.correlation_from_zscores = si_zscore;
    if (si_threshold >= 0) config.threshold = si_threshold;
    const auto result = mvmr::post_selection_pipeline(ds, config, si_seed);

    json sel = selection_to_json(result.selection);
    sel["status"] = result.status;
    sel["lambda_star"] = result.cv.lambda_star;
    sel["tau_star"] = result.cv.tau_star;
    sel["phi"] = result.cv.phi;
    sel["beta_select"] = vector_to_json(result.selection_fit.beta);
    sel["diagnostics"] = {
        {"select", {{"mu_min", result.strength_select.mu_min},
                    {"mu_max", result.strength_select.mu_max},
                    {"is_param", result.strength_select.is_param},
                    {"r_n", json_number(result.strength_select.r_n)}}},
        {"infer", {{"mu_min", result.strength_infer.mu_min},
                   {"mu_max", result.strength_infer.mu_max},
                   {"is_param", result.strength_infer.is_param},
                   {"r_n", json_number(result.strength_infer.r_n)}}}};
    atomic_write_json(si_prefix + "_selection.json", sel);

    if (result.inference) {
      atomic_write(si_prefix + "_inference.csv",
                   inference_csv(result.selection, *result.inference, ds.exposure_names));
    }
    json cfg{{"data", si_io.data_path},      {"sigma", si_io.sigma_path},
             {"seed", si_seed},              {"grid-points", si_grid_points},
             {"repeats", si_repeats},        {"level", si_level},
             {"precision", si_precision},    {"rule", si_rule},
             {"out-prefix", si_prefix}};
    if (si_threshold >= 0) cfg["threshold"] = si_threshold;
    write_manifest(si_io.manifest_path.empty() ? si_prefix + ".manifest.json"
                                               : si_io.manifest_path,
                   "select-infer", cfg, {si_io.data_path, si_io.sigma_path});
    return kExitOk;
  }

  if (app.got_subcommand(st_cmd)) {
    const auto ds = load_from(st_io);
    mvmr::PipelineConfig config;
    config.grid_points = st_grid_points;
    config.level = st_level;
    config.precision = st_precision;
    if (st_threshold >= 0) config.threshold = st_threshold;
    const auto summary = mvmr::stability_summary(ds, config, st_repeats, st_seed, st_threads);

    std::ostringstream co;
    co << "exposure";
    for (const auto& n : ds.exposure_names) co << ',' << n;
    co << '\n';
    for (int a = 0; a < ds.n_exposures(); ++a) {
      co << ds.exposure_names[static_cast<std::size_t>(a)];
      for (int b = 0; b < ds.n_exposures(); ++b)
        co << ',' << fmt_num(summary.coassignment(a, b));
      co << '\n';
    }
    atomic_write(st_prefix + "_coassignment.csv", co.str());

    std::ostringstream runs;
    runs << "run,seed,ok,pattern";
    for (const auto& n : ds.exposure_names) runs << ",est_" << n << ",p_" << n;
    runs << '\n';
    for (std::size_t i = 0; i < summary.runs.size(); ++i) {
      const auto& r = summary.runs[i];
      runs << i << ',' << r.sub_seed << ',' << (r.ok ? 1 : 0) << ',' << r.pattern;
      for (int kk = 0; kk < ds.n_exposures(); ++kk)
        runs << ',' << fmt_num(r.exposure_estimate(kk)) << ',' << fmt_num(r.exposure_p(kk));
      runs << '\n';
    }
    atomic_write(st_prefix + "_runs.csv", runs.str());

    json out{{"most_frequent_pattern", summary.most_frequent_pattern},
             {"most_frequent_count", summary.most_frequent_count},
             {"median_estimates", summary.median_estimates},
             {"median_ses", summary.median_ses},
             {"significant_runs_per_exposure", summary.significant_runs_per_exposure}};
    atomic_write_json(st_prefix + "_summary.json", out);

    json cfg{{"data", st_io.data_path},   {"sigma", st_io.sigma_path},
             {"repeats", st_repeats},     {"seed", st_seed},
             {"level", st_level},         {"precision", st_precision},
             {"grid-points", st_grid_points}, {"out-prefix", st_prefix}};
    if (st_threshold >= 0) cfg["threshold"] = st_threshold;
    write_manifest(st_io.manifest_path.empty() ? st_prefix + ".manifest.json"
                                               : st_io.manifest_path,
                   "stability", cfg, {st_io.data_path, st_io.sigma_path});
    return kExitOk;
  }

  if (app.got_subcommand(sim_cmd)) {
    mvmr::DgpConfig cfg;
    cfg.n = sim_n;
    cfg.seed = sim_seed;
    cfg.n_snps = sim_snps;
    cfg.n_exposures = sim_exposures;
    if (sim_policy == "identity") cfg.sigma_policy = mvmr::DgpConfig::SigmaPolicy::kIdentity;
    else if (sim_policy != "empirical")
      throw mvmr::ValidationError("unknown sigma policy: " + sim_policy);

    const auto result =
        mvmr::run_experiment(cfg, sim_estimators, sim_replicates, sim_seed, sim_threads);

    std::ostringstream table;
    table << "estimator,median_mse,correct_sparsity,sensitivity,false_positive_rate,"
             "n_ok,n_failed\n";
    for (const auto& row : result.rows)
      table << row.estimator << ',' << fmt_num(row.median_mse) << ','
            << fmt_num(row.correct_sparsity) << ',' << fmt_num(row.sensitivity) << ','
            << fmt_num(row.fpr) << ',' << row.n_ok << ',' << row.n_failed << '\n';
    atomic_write(sim_prefix + "_metrics.csv", table.str());

    std::ostringstream jsonl;
    for (const auto& rec : result.records) {
      json line{{"replicate", rec.replicate}, {"estimator", rec.estimator}, {"ok", rec.ok}};
      if (rec.ok) {
        line["beta_hat"] = vector_to_json(rec.beta_hat);
        line["mse"] = rec.metrics.mse;
        line["correct_sparsity"] = rec.metrics.correct_sparsity;
        line["sensitivity"] = rec.metrics.sensitivity;
        line["fpr"] = rec.metrics.fpr;
        line["selection"] = rec.metrics.selection;
      } else {
        line["error"] = rec.error;
      }
      jsonl << line.dump() << '\n';
    }
    atomic_write(sim_prefix + "_replicates.jsonl", jsonl.str());

    json mcfg{{"n", sim_n},
              {"replicates", sim_replicates},
              {"estimators", sim_estimators},
              {"seed", sim_seed},
              {"snps", sim_snps},
              {"exposures", sim_exposures},
              {"sigma-policy", sim_policy},
              {"out-prefix", sim_prefix}};
    write_manifest(sim_manifest.empty() ? sim_prefix + ".manifest.json" : sim_manifest,
                   "simulate", mcfg, {});
    return kExitOk;
  }

  return kExitValidation;
}

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mvmr::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return kExitValidation;
  } catch (const mvmr::NumericalError& e) {
    std::cerr << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kExitNumerical;
  }
}
