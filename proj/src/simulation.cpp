#include "mvmr/simulation.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "mvmr/errors.hpp"
#include "mvmr/estimators.hpp"
#include "mvmr/grouping.hpp"
#include "mvmr/model_selection.hpp"
#include "mvmr/parallel.hpp"
#include "mvmr/rng.hpp"
#include "mvmr/stats.hpp"

namespace mvmr {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::int64_t kBlockRows = 4096;

// Stream lanes.
constexpr std::uint64_t kLaneGenotype = 0x5A;
constexpr std::uint64_t kLaneConfounder = 0xCE;
constexpr std::uint64_t kLaneOutcomeNoise = 0xEE;
constexpr std::uint64_t kLaneMaf = 0xAF;
constexpr std::uint64_t kLaneGamma = 0x6A;

Eigen::MatrixXd compound_symmetry(int k, double rho) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(k, k, rho);
  m.diagonal().setOnes();
  return m;
}

}  // namespace

void DgpConfig::validate() const {
  if (n_exposures < 2 || n_snps <= n_exposures)
    throw ValidationError("dgp: need n_snps > n_exposures >= 2");
  if (cluster1_size + cluster2_size != n_exposures)
    throw ValidationError("dgp: cluster sizes must sum to n_exposures");
  if (std::abs(frac_all + frac_first + frac_last - 1.0) > 1e-12)
    throw ValidationError("dgp: block fractions must sum to 1");
  if (!(gamma_var > 0.0)) throw ValidationError("dgp: gamma_var must be > 0");
  if (sigma_u < 0.0 || sigma_e < 0.0) throw ValidationError("dgp: negative noise SD");
  if (!(maf_min > 0.0 && maf_min < maf_max && maf_max <= 0.5))
    throw ValidationError("dgp: MAF range must satisfy 0 < min < max <= 0.5");
  if (n < 10) throw ValidationError("dgp: sample size too small");
  const Eigen::VectorXd beta = effective_beta_true();
  if (beta.size() != n_exposures)
    throw ValidationError("dgp: beta_true length must equal n_exposures");
}

Eigen::VectorXd DgpConfig::effective_beta_true() const {
  if (beta_true.size() > 0) return beta_true;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(n_exposures);
  if (n_exposures == 10) {
    beta << 1, 1, 1, 0, 0, 0, 0, 0, 0.5, 0;
  } else {
    for (int i = 0; i < std::min(3, n_exposures); ++i) beta(i) = 1.0;
  }
  return beta;
}

Eigen::MatrixXd generate_true_gammas(const DgpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int k = cfg.n_exposures;
  const int p = cfg.n_snps;
  const int c1 = cfg.cluster1_size;
  const int c2 = cfg.cluster2_size;
  const int t1 = c1 / 2;
  const int t2 = c1 - t1;

  Eigen::MatrixXd sigma_c1(c1, c1);
  sigma_c1.topLeftCorner(t1, t1) = compound_symmetry(t1, cfg.rho_tight);
  sigma_c1.bottomRightCorner(t2, t2) = compound_symmetry(t2, cfg.rho_mid);
  sigma_c1.topRightCorner(t1, t2).setConstant(cfg.rho_cross);
  sigma_c1.bottomLeftCorner(t2, t1).setConstant(cfg.rho_cross);

  const Eigen::MatrixXd sigma_c2 = compound_symmetry(c2, cfg.rho_cluster2);

  Eigen::MatrixXd sigma_all(k, k);
  sigma_all.topLeftCorner(c1, c1) = sigma_c1;
  sigma_all.bottomRightCorner(c2, c2) = sigma_c2;
  sigma_all.topRightCorner(c1, c2).setConstant(cfg.rho_between);
  sigma_all.bottomLeftCorner(c2, c1).setConstant(cfg.rho_between);

  const auto check_pd = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw NumericalError("dgp: block covariance is not positive definite");
  };
  check_pd(sigma_c1);
  check_pd(sigma_c2);
  check_pd(sigma_all);

  const double sd_gamma = std::sqrt(cfg.gamma_var);
  const Eigen::MatrixXd l_c1 = Eigen::LLT<Eigen::MatrixXd>(sigma_c1).matrixL();
  const Eigen::MatrixXd l_c2 = Eigen::LLT<Eigen::MatrixXd>(sigma_c2).matrixL();
  const Eigen::MatrixXd l_all = Eigen::LLT<Eigen::MatrixXd>(sigma_all).matrixL();

  const int p_all = static_cast<int>(std::llround(cfg.frac_all * p));
  const int p_first = static_cast<int>(std::llround(cfg.frac_first * p));

  Eigen::MatrixXd gammas = Eigen::MatrixXd::Zero(p, k);
  Eigen::VectorXd z(k);
  for (int j = 0; j < p; ++j) {
    rng::Stream stream(seed, kLaneGamma, static_cast<std::uint64_t>(j));
    if (j < p_all) {
      for (int i = 0; i < k; ++i) z(i) = stream.next_normal();
      gammas.row(j) = (sd_gamma * (l_all * z)).transpose();
    } else if (j < p_all + p_first) {
      for (int i = 0; i < c1; ++i) z(i) = stream.next_normal();
      gammas.row(j).head(c1) = (sd_gamma * (l_c1 * z.head(c1))).transpose();
    } else {
      for (int i = 0; i < c2; ++i) z(i) = stream.next_normal();
      gammas.row(j).tail(c2) = (sd_gamma * (l_c2 * z.head(c2))).transpose();
    }
  }
  return gammas;
}

DgpDesign make_design(const DgpConfig& cfg) {
  DgpDesign design;
  design.gammas = generate_true_gammas(cfg, cfg.seed);
  const int total =
      cfg.n_snps + (cfg.sigma_policy == DgpConfig::SigmaPolicy::kEmpiricalNull
                        ? cfg.n_null_snps
                        : 0);
  design.maf.resize(total);
  rng::Stream stream(cfg.seed, kLaneMaf);
  for (int j = 0; j < total; ++j) design.maf(j) = stream.uniform(cfg.maf_min, cfg.maf_max);
  return design;
}

namespace detail {

GenotypeThresholds::GenotypeThresholds(const Eigen::VectorXd& maf) {
  t0.resize(static_cast<std::size_t>(maf.size()));
  t1.resize(static_cast<std::size_t>(maf.size()));
  const double two64 = 18446744073709551616.0;
  for (Eigen::Index j = 0; j < maf.size(); ++j) {
    const double f = maf(j);
    const double q = 1.0 - f;
    t0[static_cast<std::size_t>(j)] = static_cast<std::uint64_t>(q * q * two64);
    t1[static_cast<std::size_t>(j)] =
        static_cast<std::uint64_t>((q * q + 2.0 * f * q) * two64);
  }
}

void fill_genotypes(RowMat& z, const GenotypeThresholds& thr, std::uint64_t seed, int cohort,
                    std::int64_t row0) {
  // Row-wise keyed streams keep the values independent of the block grid.
  const auto cols = static_cast<std::size_t>(z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    rng::Stream stream(seed, static_cast<std::uint64_t>(cohort), kLaneGenotype,
                       static_cast<std::uint64_t>(row0 + r));
    double* row = z.data() + static_cast<std::size_t>(r) * cols;
    for (std::size_t j = 0; j < cols; ++j)
      row[j] = static_cast<double>(stream.next_genotype_fast(thr.t0[j], thr.t1[j]));
  }
}

void fill_confounder_noise(Eigen::VectorXd& u, RowMat& e, double sigma_u, double sigma_e,
                           std::uint64_t seed, int cohort, std::int64_t row0) {
  for (Eigen::Index r = 0; r < u.size(); ++r) {
    rng::Stream stream(seed, static_cast<std::uint64_t>(cohort), kLaneConfounder,
                       static_cast<std::uint64_t>(row0 + r));
    u(r) = sigma_u * stream.next_normal();
    for (Eigen::Index kk = 0; kk < e.cols(); ++kk) e(r, kk) = sigma_e * stream.next_normal();
  }
}

void fill_outcome_noise(Eigen::VectorXd& big_e, double sigma_e, std::uint64_t seed,
                        std::int64_t row0) {
  for (Eigen::Index r = 0; r < big_e.size(); ++r) {
    rng::Stream stream(seed, 2, kLaneOutcomeNoise, static_cast<std::uint64_t>(row0 + r));
    big_e(r) = sigma_e * stream.next_normal();
  }
}

}  // namespace detail

namespace {

struct MarginalOls {
  double slope = 0;
  double se = 0;
};

// Slope and SE of the simple regression of (possibly rescaled) y on z from
// centered sufficient statistics.
MarginalOls marginal_ols(double szz, double szy, double syy_centered, double sd_y,
                         std::int64_t n) {
  MarginalOls out;
  const double slope = szy / szz / sd_y;
  const double tss = syy_centered / (sd_y * sd_y);
  const double rss = std::max(tss - slope * slope * szz, 0.0);
  out.slope = slope;
  out.se = std::sqrt(rss / static_cast<double>(n - 2) / szz);
  return out;
}

SummaryDataset simulate_impl(const DgpConfig& cfg, const DgpDesign& design,
                             std::uint64_t seed_x, std::uint64_t seed_y) {
  cfg.validate();
  const int p = cfg.n_snps;
  const int k = cfg.n_exposures;
  const std::int64_t n = cfg.n;
  const bool empirical =
      cfg.sigma_policy == DgpConfig::SigmaPolicy::kEmpiricalNull;
  const int total_snps = empirical ? p + cfg.n_null_snps : p;
  if (design.gammas.rows() != p || design.gammas.cols() != k ||
      design.maf.size() < total_snps)
    throw ValidationError("dgp: design does not match config");
  const Eigen::VectorXd beta = cfg.effective_beta_true();

  // Cohort 1: exposures. One streaming pass collecting per-SNP and per-trait
  // sufficient statistics, plus the SNP-by-trait cross-products.
  Eigen::VectorXd sz = Eigen::VectorXd::Zero(total_snps);
  Eigen::VectorXd szz = Eigen::VectorXd::Zero(total_snps);
  Eigen::MatrixXd zx = Eigen::MatrixXd::Zero(total_snps, k);
  Eigen::VectorXd sx = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd sxx = Eigen::VectorXd::Zero(k);

  const detail::GenotypeThresholds thresholds(design.maf.head(total_snps));

  detail::RowMat zblock;
  detail::RowMat xblock;
  detail::RowMat eblock;
  Eigen::VectorXd ublock;

  for (std::int64_t row0 = 0; row0 < n; row0 += kBlockRows) {
    const auto rows = static_cast<Eigen::Index>(std::min(kBlockRows, n - row0));
    zblock.resize(rows, total_snps);
    eblock.resize(rows, k);
    ublock.resize(rows);
    detail::fill_genotypes(zblock, thresholds, seed_x, 1, row0);
    detail::fill_confounder_noise(ublock, eblock, cfg.sigma_u, cfg.sigma_e, seed_x, 1, row0);
    xblock = eblock;
    xblock.colwise() += ublock;
    xblock.noalias() += zblock.leftCols(p) * design.gammas;

    sz += zblock.colwise().sum().transpose();
    szz += zblock.cwiseProduct(zblock).colwise().sum().transpose();
    zx.noalias() += zblock.transpose() * xblock;
    sx += xblock.colwise().sum().transpose();
    sxx += xblock.cwiseProduct(xblock).colwise().sum().transpose();
  }

  const double dn = static_cast<double>(n);
  Eigen::VectorXd sd_x(k);
  Eigen::VectorXd sxx_centered(k);
  for (int i = 0; i < k; ++i) {
    sxx_centered(i) = sxx(i) - sx(i) * sx(i) / dn;
    sd_x(i) = cfg.standardize ? std::sqrt(sxx_centered(i) / (dn - 1.0)) : 1.0;
  }

  SummaryDataset ds;
  ds.exposure_names.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) ds.exposure_names.push_back("RF" + std::to_string(i + 1));
  ds.snps.resize(static_cast<std::size_t>(p));

  Eigen::MatrixXd null_z(empirical ? cfg.n_null_snps : 0, k);
  for (int j = 0; j < total_snps; ++j) {
    const double szz_c = szz(j) - sz(j) * sz(j) / dn;
    if (!(szz_c > 0.0)) throw NumericalError("dgp: monomorphic SNP " + std::to_string(j + 1));
    Eigen::VectorXd gamma_hat(k), se_x(k);
    for (int i = 0; i < k; ++i) {
      const double szy = zx(j, i) - sz(j) * sx(i) / dn;
      const MarginalOls ols = marginal_ols(szz_c, szy, sxx_centered(i), sd_x(i), n);
      gamma_hat(i) = ols.slope;
      se_x(i) = ols.se;
    }
    if (j < p) {
      auto& snp = ds.snps[static_cast<std::size_t>(j)];
      snp.snp_id = "snp" + std::to_string(j + 1);
      snp.gamma_hat = gamma_hat;
      snp.se_x = se_x;
    } else {
      for (int i = 0; i < k; ++i)
        null_z(j - p, i) = se_x(i) > 0 ? gamma_hat(i) / se_x(i) : 0.0;
    }
  }

  if (empirical) {
    // Correlation of null-SNP z-scores estimates the shared estimation-error
    // correlation across exposure GWASs.
    Eigen::MatrixXd centered = null_z.rowwise() - null_z.colwise().mean();
    Eigen::VectorXd norms = centered.colwise().norm();
    for (int i = 0; i < k; ++i)
      if (norms(i) <= 0) norms(i) = 1.0;
    Eigen::MatrixXd sigma = centered.transpose() * centered;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) sigma(a, b) /= norms(a) * norms(b);
    sigma = 0.5 * (sigma + sigma.transpose().eval());
    sigma.diagonal().setOnes();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 1e-8) {
      sigma = 0.999 * sigma + 0.001 * Eigen::MatrixXd::Identity(k, k);
    }
    ds.correlation = SharedCorrelation{sigma};
  } else {
    ds.correlation = SharedCorrelation::identity(k);
  }

  // Cohort 2: outcome. Every statistic of Y = Xs' beta + U + E needed below
  // is bilinear in (Z, X, U, E), so one pass suffices: standardization
  // constants are applied to the accumulated cross-products afterwards.
  const detail::GenotypeThresholds thresholds2(design.maf.head(p));
  Eigen::VectorXd sz2 = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd szz2 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd zx2 = Eigen::MatrixXd::Zero(p, k);
  Eigen::VectorXd zu = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd zeps = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd sx2 = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd xx2 = Eigen::MatrixXd::Zero(k, k);
  Eigen::VectorXd xu = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd xeps = Eigen::VectorXd::Zero(k);
  double su = 0, seps = 0, uu = 0, epseps = 0, ueps = 0;

  Eigen::VectorXd noise;
  for (std::int64_t row0 = 0; row0 < n; row0 += kBlockRows) {
    const auto rows = static_cast<Eigen::Index>(std::min(kBlockRows, n - row0));
    zblock.resize(rows, p);
    eblock.resize(rows, k);
    ublock.resize(rows);
    noise.resize(rows);
    detail::fill_genotypes(zblock, thresholds2, seed_y, 2, row0);
    detail::fill_confounder_noise(ublock, eblock, cfg.sigma_u, cfg.sigma_e, seed_y, 2, row0);
    detail::fill_outcome_noise(noise, cfg.sigma_e, seed_y, row0);
    xblock = eblock;
    xblock.colwise() += ublock;
    xblock.noalias() += zblock * design.gammas;

    sz2 += zblock.colwise().sum().transpose();
    szz2 += zblock.cwiseProduct(zblock).colwise().sum().transpose();
    zx2.noalias() += zblock.transpose() * xblock;
    zu.noalias() += zblock.transpose() * ublock;
    zeps.noalias() += zblock.transpose() * noise;
    sx2 += xblock.colwise().sum().transpose();
    xx2.noalias() += xblock.transpose() * xblock;
    xu.noalias() += xblock.transpose() * ublock;
    xeps.noalias() += xblock.transpose() * noise;
    su += ublock.sum();
    seps += noise.sum();
    uu += ublock.squaredNorm();
    epseps += noise.squaredNorm();
    ueps += ublock.dot(noise);
  }

  Eigen::VectorXd mean_x2 = sx2 / dn;
  Eigen::VectorXd sd_x2(k);
  for (int i = 0; i < k; ++i) {
    const double c = xx2(i, i) - sx2(i) * sx2(i) / dn;
    sd_x2(i) = cfg.standardize ? std::sqrt(c / (dn - 1.0)) : 1.0;
  }
  if (!cfg.standardize) mean_x2.setZero();

  const Eigen::VectorXd beta_s = beta.cwiseQuotient(sd_x2);
  const double c0 = beta_s.dot(mean_x2);
  const double sy = beta_s.dot(sx2) - dn * c0 + su + seps;
  const double syy = beta_s.dot(xx2 * beta_s) + dn * c0 * c0 + uu + epseps +
                     2.0 * (beta_s.dot(xu) + beta_s.dot(xeps) + ueps) -
                     2.0 * c0 * (beta_s.dot(sx2) + su + seps);
  const Eigen::VectorXd szy = zx2 * beta_s - c0 * sz2 + zu + zeps;

  const double syy_centered = syy - sy * sy / dn;
  for (int j = 0; j < p; ++j) {
    const double szz_c = szz2(j) - sz2(j) * sz2(j) / dn;
    if (!(szz_c > 0.0)) throw NumericalError("dgp: monomorphic SNP " + std::to_string(j + 1));
    const double szy_c = szy(j) - sz2(j) * sy / dn;
    const MarginalOls ols = marginal_ols(szz_c, szy_c, syy_centered, 1.0, n);
    auto& snp = ds.snps[static_cast<std::size_t>(j)];
    snp.gamma_outcome_hat = ols.slope;
    snp.se_y = ols.se;
  }
  return ds;
}

}  // namespace

SummaryDataset simulate_summary_stats(const DgpConfig& cfg, const DgpDesign& design,
                                      std::uint64_t replicate_seed) {
  return simulate_impl(cfg, design, replicate_seed, rng::mix(replicate_seed, 0x0C0207ULL));
}

SummaryDataset simulate_summary_stats(const DgpConfig& cfg, const DgpDesign& design,
                                      std::uint64_t exposure_seed,
                                      std::uint64_t outcome_seed) {
  return simulate_impl(cfg, design, exposure_seed, outcome_seed);
}

SummaryDataset simulate_summary_stats_fast(const DgpConfig& cfg, const DgpDesign& design,
                                           std::uint64_t replicate_seed) {
  cfg.validate();
  const int p = cfg.n_snps;
  const int k = cfg.n_exposures;
  const double dn = static_cast<double>(cfg.n);
  const Eigen::VectorXd beta = cfg.effective_beta_true();

  // Population moments on the standardized scale.
  Eigen::VectorXd var_z(p);
  for (int j = 0; j < p; ++j) var_z(j) = 2.0 * design.maf(j) * (1.0 - design.maf(j));
  Eigen::MatrixXd gencov = Eigen::MatrixXd::Zero(k, k);
  for (int j = 0; j < p; ++j)
    gencov.noalias() +=
        var_z(j) * design.gammas.row(j).transpose() * design.gammas.row(j);
  Eigen::MatrixXd cov_x = gencov;
  cov_x.array() += cfg.sigma_u * cfg.sigma_u;
  cov_x.diagonal().array() += cfg.sigma_e * cfg.sigma_e;
  Eigen::VectorXd sd_x = cov_x.diagonal().cwiseSqrt();
  if (!cfg.standardize) sd_x.setOnes();

  Eigen::MatrixXd cov_xs = cov_x;
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) cov_xs(a, b) /= sd_x(a) * sd_x(b);

  // Shared estimation-error correlation = correlation of the exposures on
  // the standardized scale (the marginal regression residual correlation).
  Eigen::MatrixXd sigma = cov_xs;
  Eigen::VectorXd d = sigma.diagonal().cwiseSqrt();
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) sigma(a, b) /= d(a) * d(b);
  sigma.diagonal().setOnes();

  const Eigen::VectorXd cov_xu =
      Eigen::VectorXd::Constant(k, cfg.sigma_u * cfg.sigma_u).cwiseQuotient(sd_x);
  const double var_y = beta.dot(cov_xs * beta) + 2.0 * beta.dot(cov_xu) +
                       cfg.sigma_u * cfg.sigma_u + cfg.sigma_e * cfg.sigma_e;

  SummaryDataset ds;
  ds.correlation = SharedCorrelation{sigma};
  for (int i = 0; i < k; ++i) ds.exposure_names.push_back("RF" + std::to_string(i + 1));
  ds.snps.resize(static_cast<std::size_t>(p));
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();

  Eigen::VectorXd z(k);
  for (int j = 0; j < p; ++j) {
    auto& snp = ds.snps[static_cast<std::size_t>(j)];
    snp.snp_id = "snp" + std::to_string(j + 1);
    const Eigen::VectorXd gamma_std =
        design.gammas.row(j).transpose().cwiseQuotient(sd_x);
    snp.se_x = Eigen::VectorXd::Constant(k, 1.0 / std::sqrt(dn * var_z(j)));
    rng::Stream sx_stream(replicate_seed, 0xFA57, static_cast<std::uint64_t>(j), 1);
    for (int i = 0; i < k; ++i) z(i) = sx_stream.next_normal();
    snp.gamma_hat = gamma_std + snp.se_x.asDiagonal() * (chol * z);
    snp.se_y = std::sqrt(var_y / (dn * var_z(j)));
    rng::Stream sy_stream(replicate_seed, 0xFA57, static_cast<std::uint64_t>(j), 2);
    snp.gamma_outcome_hat = gamma_std.dot(beta) + snp.se_y * sy_stream.next_normal();
  }
  return ds;
}

ReplicateMetrics compute_metrics(const Eigen::VectorXd& beta_hat,
                                 const Eigen::VectorXd& beta_true,
                                 const std::optional<std::vector<bool>>& mask) {
  if (beta_hat.size() != beta_true.size())
    throw ValidationError("compute_metrics: length mismatch");
  const int k = static_cast<int>(beta_hat.size());
  if (mask && static_cast<int>(mask->size()) != k)
    throw ValidationError("compute_metrics: mask length mismatch");

  ReplicateMetrics m;
  m.selection.assign(static_cast<std::size_t>(k), 0);
  int tp = 0, tn = 0, fp = 0, n_true_nonzero = 0, n_true_zero = 0;
  for (int i = 0; i < k; ++i) {
    const bool truth_nonzero = beta_true(i) != 0.0;
    truth_nonzero ? ++n_true_nonzero : ++n_true_zero;
    const bool selected =
        mask ? (*mask)[static_cast<std::size_t>(i)]
             : std::abs(beta_hat(i)) > kSelectionThreshold;
    m.selection[static_cast<std::size_t>(i)] = selected ? 1 : 0;
    if (selected) {
      if (truth_nonzero) {
        const bool sign_ok = (beta_hat(i) > 0) == (beta_true(i) > 0);
        if (sign_ok) ++tp;
      } else {
        ++fp;
      }
    } else if (!truth_nonzero) {
      ++tn;
    }
    const double err = beta_hat(i) - beta_true(i);
    m.mse += err * err;
  }
  m.mse /= static_cast<double>(k);
  m.correct_sparsity = static_cast<double>(tp + tn) / static_cast<double>(k);
  m.sensitivity = n_true_nonzero > 0
                      ? static_cast<double>(tp) / static_cast<double>(n_true_nonzero)
                      : 1.0;
  m.fpr = n_true_zero > 0 ? static_cast<double>(fp) / static_cast<double>(n_true_zero) : 0.0;
  return m;
}

namespace {

std::vector<bool> bonferroni_mask(const FitResult& fit, int k) {
  std::vector<bool> mask(static_cast<std::size_t>(k), false);
  if (!fit.variance) return mask;
  const double alpha = 0.05 / static_cast<double>(k);
  for (int i = 0; i < k; ++i) {
    const double se = std::sqrt(std::max((*fit.variance)(i, i), 0.0));
    if (se > 0 && stats::two_sided_p(fit.beta(i) / se) < alpha)
      mask[static_cast<std::size_t>(i)] = true;
  }
  return mask;
}

struct EstimatorSpec {
  std::string name;
  enum class Kind { IVW, DIVW, DRIDGE, DLASSO, PACS } kind;
  std::optional<double> threshold;
};

EstimatorSpec parse_estimator(const std::string& name) {
  EstimatorSpec spec;
  spec.name = name;
  if (name == "ivw") {
    spec.kind = EstimatorSpec::Kind::IVW;
  } else if (name == "divw" || name == "srivw") {
    spec.kind = EstimatorSpec::Kind::DIVW;
  } else if (name == "dridge") {
    spec.kind = EstimatorSpec::Kind::DRIDGE;
  } else if (name == "dlasso") {
    spec.kind = EstimatorSpec::Kind::DLASSO;
  } else if (name == "pacs") {
    spec.kind = EstimatorSpec::Kind::PACS;
  } else if (name.rfind("pacs-", 0) == 0) {
    spec.kind = EstimatorSpec::Kind::PACS;
    const std::string arg = name.substr(5);
    if (arg == "x") {
      spec.threshold = 0.8;
    } else {
      try {
        spec.threshold = std::stod(arg);
      } catch (const std::exception&) {
        throw ValidationError("unknown estimator: " + name);
      }
    }
  } else {
    throw ValidationError("unknown estimator: " + name);
  }
  return spec;
}

}  // namespace

ExperimentResult run_experiment(const DgpConfig& cfg, const std::vector<std::string>& estimators,
                                int replicates, std::uint64_t seed, int threads) {
  cfg.validate();
  if (replicates < 1) throw ValidationError("run_experiment: replicates must be >= 1");
  std::vector<EstimatorSpec> specs;
  specs.reserve(estimators.size());
  for (const auto& e : estimators) specs.push_back(parse_estimator(e));

  const DgpDesign design = make_design(cfg);
  const Eigen::VectorXd beta_true = cfg.effective_beta_true();
  const int k = cfg.n_exposures;

  ExperimentResult result;
  result.records.resize(static_cast<std::size_t>(replicates) * specs.size());

  parallel_for(
      static_cast<std::size_t>(replicates),
      [&](std::size_t rep) {
        const std::uint64_t rep_seed = rng::mix(seed, static_cast<std::uint64_t>(rep));
        SummaryDataset ds;
        std::string data_error;
        try {
          ds = simulate_summary_stats(cfg, design, rep_seed);
        } catch (const std::exception& e) {
          data_error = e.what();
        }

        std::optional<double> phi_cache;
        for (std::size_t si = 0; si < specs.size(); ++si) {
          ReplicateRecord& rec = result.records[rep * specs.size() + si];
          rec.replicate = static_cast<int>(rep);
          rec.estimator = specs[si].name;
          if (!data_error.empty()) {
            rec.ok = false;
            rec.error = "data generation failed: " + data_error;
            continue;
          }
          try {
            const DesignQuantities dq = build_design(ds);
            FitResult fit;
            std::optional<std::vector<bool>> mask;
            switch (specs[si].kind) {
              case EstimatorSpec::Kind::IVW:
                fit = fit_ivw(dq, true);
                mask = bonferroni_mask(fit, k);
                break;
              case EstimatorSpec::Kind::DIVW:
                fit = fit_divw(dq, true);
                mask = bonferroni_mask(fit, k);
                break;
              case EstimatorSpec::Kind::DRIDGE: {
                const ThinningPlan plan = ThinningPlan::even(5, rng::mix(rep_seed, 0xD1ULL));
                const double phi = cv_ridge(ds, plan);
                fit = fit_dridge(dq, phi, true);
                mask = bonferroni_mask(fit, k);
                break;
              }
              case EstimatorSpec::Kind::DLASSO:
              case EstimatorSpec::Kind::PACS: {
                const bool is_dlasso = specs[si].kind == EstimatorSpec::Kind::DLASSO;
                const ThinningPlan ridge_plan =
                    ThinningPlan::even(5, rng::mix(rep_seed, 0xD1ULL));
                if (!phi_cache) phi_cache = cv_ridge(ds, ridge_plan);
                const InstrumentStrength strength = instrument_strength(dq);
                TuningGrid grid = build_lambda_grid(strength, dq.n_snps());
                CvOptions opts;
                opts.phi = phi_cache;
                // Threshold 1 zeroes every pairwise weight: the dLASSO path.
                opts.threshold = is_dlasso ? std::optional<double>(1.0)
                                           : specs[si].threshold;
                const ThinningPlan cv_plan =
                    ThinningPlan::even(5, rng::mix(rep_seed, 0xCF + si));
                const CvResult cv = cv_pacs(ds, grid, cv_plan, 1, opts);
                const DebiasedNormal dnorm = DebiasedNormal::from(dq);
                const FitResult init = fit_dridge(dnorm, *phi_cache);
                if (is_dlasso) {
                  const PacsWeights w = pacs_weights(init.beta, exposure_correlation(ds),
                                                     cv.tau_star, 1.0);
                  fit = fit_dlasso(dnorm, w.w, cv.lambda_star, init.beta);
                } else {
                  const PacsWeights w = pacs_weights(init.beta, exposure_correlation(ds),
                                                     cv.tau_star, specs[si].threshold);
                  fit = fit_pacs(dnorm, w, cv.lambda_star, init.beta);
                }
                break;
              }
            }
            rec.ok = true;
            rec.beta_hat = fit.beta;
            rec.metrics = compute_metrics(fit.beta, beta_true, mask);
          } catch (const std::exception& e) {
            rec.ok = false;
            rec.error = e.what();
          }
        }
      },
      threads);

  for (std::size_t si = 0; si < specs.size(); ++si) {
    ExperimentRow row;
    row.estimator = specs[si].name;
    std::vector<double> mses;
    double cs = 0, sens = 0, fpr = 0;
    for (int rep = 0; rep < replicates; ++rep) {
      const ReplicateRecord& rec =
          result.records[static_cast<std::size_t>(rep) * specs.size() + si];
      if (!rec.ok) {
        ++row.n_failed;
        continue;
      }
      ++row.n_ok;
      mses.push_back(rec.metrics.mse);
      cs += rec.metrics.correct_sparsity;
      sens += rec.metrics.sensitivity;
      fpr += rec.metrics.fpr;
    }
    if (row.n_ok > 0) {
      std::sort(mses.begin(), mses.end());
      const std::size_t nn = mses.size();
      row.median_mse = nn % 2 == 1 ? mses[nn / 2] : 0.5 * (mses[nn / 2 - 1] + mses[nn / 2]);
      row.correct_sparsity = cs / row.n_ok;
      row.sensitivity = sens / row.n_ok;
      row.fpr = fpr / row.n_ok;
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace mvmr
