#include "mvmr/summary_data.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "mvmr/errors.hpp"

namespace mvmr {

namespace {

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(field);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

double parse_number(const std::string& s, int row, const std::string& col) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("malformed value '" + s + "' at row " + std::to_string(row) +
                          ", column " + col);
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

SharedCorrelation SharedCorrelation::identity(int k) {
  return SharedCorrelation{Eigen::MatrixXd::Identity(k, k)};
}

void SharedCorrelation::validate() const {
  const auto k = sigma.rows();
  if (sigma.cols() != k) throw ValidationError("correlation matrix is not square");
  if (!sigma.allFinite()) throw ValidationError("correlation matrix has non-finite entries");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw ValidationError("correlation matrix is not symmetric");
  for (Eigen::Index i = 0; i < k; ++i) {
    if (std::abs(sigma(i, i) - 1.0) > 1e-10)
      throw ValidationError("correlation matrix diagonal entry " + std::to_string(i + 1) +
                            " is not 1");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw ValidationError("correlation matrix is not positive definite (min eigenvalue " +
                          std::to_string(es.eigenvalues().minCoeff()) + ")");
}

void SummaryDataset::validate() const {
  const int k = n_exposures();
  const int p = n_snps();
  if (k < 1) throw ValidationError("dataset has no exposures");
  if (p <= k)
    throw ValidationError("need more SNPs than exposures: p=" + std::to_string(p) +
                          ", K=" + std::to_string(k));
  if (correlation.sigma.rows() != k)
    throw ValidationError("correlation matrix is " + std::to_string(correlation.sigma.rows()) +
                          "x" + std::to_string(correlation.sigma.cols()) + " but K=" +
                          std::to_string(k));
  correlation.validate();
  std::set<std::string> seen;
  for (int j = 0; j < p; ++j) {
    const auto& s = snps[static_cast<std::size_t>(j)];
    const int row = j + 1;
    if (s.gamma_hat.size() != k || s.se_x.size() != k)
      throw ValidationError("dimension mismatch at row " + std::to_string(row));
    if (!s.gamma_hat.allFinite() || !std::isfinite(s.gamma_outcome_hat))
      throw ValidationError("non-finite estimate at row " + std::to_string(row));
    if (!s.se_x.allFinite() || !(s.se_x.minCoeff() > 0.0) || !std::isfinite(s.se_y) ||
        !(s.se_y > 0.0))
      throw ValidationError("non-positive SE at row " + std::to_string(row));
    if (!seen.insert(s.snp_id).second)
      throw ValidationError("duplicate snp_id '" + s.snp_id + "' at row " + std::to_string(row));
  }
}

SummaryDataset load_dataset(const std::string& path, const std::string& sigma_path,
                            LoadOptions* opts) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty dataset file: " + path);
  auto header = split(trim(line), '\t');
  if (header.size() < 5 || trim(header[0]) != "snp")
    throw ValidationError("bad header: expected 'snp beta_<name> se_<name> ... beta_outcome se_outcome'");
  const std::size_t ncol = header.size();
  if ((ncol - 3) % 2 != 0)
    throw ValidationError("bad header: odd number of beta/se columns");
  const int k = static_cast<int>((ncol - 3) / 2);

  std::vector<std::string> names;
  for (int i = 0; i < k; ++i) {
    const std::string bcol = trim(header[1 + 2 * static_cast<std::size_t>(i)]);
    const std::string scol = trim(header[2 + 2 * static_cast<std::size_t>(i)]);
    if (bcol.rfind("beta_", 0) != 0 || scol.rfind("se_", 0) != 0)
      throw ValidationError("bad header: column pair " + bcol + "/" + scol);
    const std::string name = bcol.substr(5);
    if (scol.substr(3) != name)
      throw ValidationError("bad header: mismatched pair " + bcol + "/" + scol);
    names.push_back(name);
  }
  if (trim(header[ncol - 2]) != "beta_outcome" || trim(header[ncol - 1]) != "se_outcome")
    throw ValidationError("bad header: last two columns must be beta_outcome/se_outcome");

  SummaryDataset ds;
  ds.exposure_names = names;

  int row = 0;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    ++row;
    auto fields = split(t, '\t');
    if (fields.size() != ncol)
      throw ValidationError("row " + std::to_string(row) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(ncol));
    SnpAssociation s;
    s.snp_id = trim(fields[0]);
    if (s.snp_id.empty()) throw ValidationError("empty snp id at row " + std::to_string(row));
    s.gamma_hat.resize(k);
    s.se_x.resize(k);
    for (int i = 0; i < k; ++i) {
      s.gamma_hat(i) = parse_number(trim(fields[1 + 2 * static_cast<std::size_t>(i)]), row,
                                    "beta_" + names[static_cast<std::size_t>(i)]);
      s.se_x(i) = parse_number(trim(fields[2 + 2 * static_cast<std::size_t>(i)]), row,
                               "se_" + names[static_cast<std::size_t>(i)]);
    }
    s.gamma_outcome_hat = parse_number(trim(fields[ncol - 2]), row, "beta_outcome");
    s.se_y = parse_number(trim(fields[ncol - 1]), row, "se_outcome");
    ds.snps.push_back(std::move(s));
  }

  if (sigma_path.empty()) {
    ds.correlation = SharedCorrelation::identity(k);
    if (opts) opts->used_identity_sigma = true;
  } else {
    std::ifstream sin(sigma_path);
    if (!sin) throw ValidationError("cannot open correlation file: " + sigma_path);
    Eigen::MatrixXd sigma(k, k);
    for (int i = 0; i < k; ++i) {
      std::string sl;
      if (!std::getline(sin, sl))
        throw ValidationError("correlation file has fewer than K=" + std::to_string(k) + " rows");
      auto fields = split(trim(sl), ',');
      if (static_cast<int>(fields.size()) != k)
        throw ValidationError("correlation row " + std::to_string(i + 1) + " has " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(k));
      for (int c = 0; c < k; ++c)
        sigma(i, c) = parse_number(trim(fields[static_cast<std::size_t>(c)]), i + 1,
                                   "sigma[" + std::to_string(c + 1) + "]");
    }
    ds.correlation = SharedCorrelation{sigma};
  }

  if (opts && !opts->trait_sd.empty()) {
    if (static_cast<int>(opts->trait_sd.size()) != k)
      throw ValidationError("trait SD vector has length " + std::to_string(opts->trait_sd.size()) +
                            ", expected K=" + std::to_string(k));
    for (int i = 0; i < k; ++i) {
      const double sd = opts->trait_sd[static_cast<std::size_t>(i)];
      if (!(sd > 0.0) || !std::isfinite(sd))
        throw ValidationError("non-positive trait SD for exposure " + std::to_string(i + 1));
      for (auto& s : ds.snps) {
        s.gamma_hat(i) /= sd;
        s.se_x(i) /= sd;
      }
    }
  }

  ds.validate();
  return ds;
}

std::vector<double> load_trait_sd(const std::string& path, int k) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open trait SD file: " + path);
  std::vector<double> out;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty()) continue;
    ++row;
    out.push_back(parse_number(t, row, "trait_sd"));
  }
  if (static_cast<int>(out.size()) != k)
    throw ValidationError("trait SD file has " + std::to_string(out.size()) +
                          " entries, expected K=" + std::to_string(k));
  return out;
}

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace

void write_dataset(const SummaryDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write dataset file: " + path);
  out << "snp";
  for (const auto& n : ds.exposure_names) out << "\tbeta_" << n << "\tse_" << n;
  out << "\tbeta_outcome\tse_outcome\n";
  for (const auto& s : ds.snps) {
    out << s.snp_id;
    for (int i = 0; i < ds.n_exposures(); ++i)
      out << '\t' << fmt(s.gamma_hat(i)) << '\t' << fmt(s.se_x(i));
    out << '\t' << fmt(s.gamma_outcome_hat) << '\t' << fmt(s.se_y) << '\n';
  }
}

void write_sigma(const SharedCorrelation& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write correlation file: " + path);
  for (Eigen::Index i = 0; i < c.sigma.rows(); ++i) {
    for (Eigen::Index j = 0; j < c.sigma.cols(); ++j) {
      if (j) out << ',';
      out << fmt(c.sigma(i, j));
    }
    out << '\n';
  }
}

DesignQuantities build_design(const SummaryDataset& ds) {
  const int p = ds.n_snps();
  const int k = ds.n_exposures();
  DesignQuantities dq;
  dq.pi_hat.resize(p, k);
  dq.gamma_vec.resize(p);
  dq.w.resize(p);
  dq.v = Eigen::MatrixXd::Zero(k, k);
  dq.sigma_xj.reserve(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) {
    const auto& s = ds.snps[static_cast<std::size_t>(j)];
    dq.pi_hat.row(j) = s.gamma_hat.transpose();
    dq.gamma_vec(j) = s.gamma_outcome_hat;
    dq.w(j) = 1.0 / (s.se_y * s.se_y);
    Eigen::MatrixXd sx = s.se_x.asDiagonal() * ds.correlation.sigma * s.se_x.asDiagonal();
    dq.v.noalias() += sx * dq.w(j);
    dq.sigma_xj.push_back(std::move(sx));
  }
  dq.v = 0.5 * (dq.v + dq.v.transpose().eval());
  return dq;
}

Eigen::MatrixXd exposure_correlation(const SummaryDataset& ds, bool use_zscores,
                                     std::vector<int>* degenerate_columns) {
  const int p = ds.n_snps();
  const int k = ds.n_exposures();
  if (p < 3) throw ValidationError("exposure correlation requires at least 3 SNPs");
  Eigen::MatrixXd cols(p, k);
  for (int j = 0; j < p; ++j) {
    const auto& s = ds.snps[static_cast<std::size_t>(j)];
    for (int i = 0; i < k; ++i)
      cols(j, i) = use_zscores ? s.gamma_hat(i) / s.se_x(i) : s.gamma_hat(i);
  }
  const Eigen::RowVectorXd mean = cols.colwise().mean();
  cols.rowwise() -= mean;
  Eigen::VectorXd norm(k);
  std::vector<bool> degenerate(static_cast<std::size_t>(k), false);
  for (int i = 0; i < k; ++i) {
    norm(i) = cols.col(i).norm();
    if (norm(i) <= 0.0) {
      degenerate[static_cast<std::size_t>(i)] = true;
      norm(i) = 1.0;
      if (degenerate_columns) degenerate_columns->push_back(i);
    }
  }
  Eigen::MatrixXd r = (cols.transpose() * cols).eval();
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) r(a, b) /= norm(a) * norm(b);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      if (a == b) {
        r(a, b) = 1.0;
      } else if (degenerate[static_cast<std::size_t>(a)] ||
                 degenerate[static_cast<std::size_t>(b)]) {
        r(a, b) = 0.0;
      } else {
        r(a, b) = std::clamp(r(a, b), -1.0, 1.0);
      }
    }
  }
  return 0.5 * (r + r.transpose().eval());
}

}  // namespace mvmr
