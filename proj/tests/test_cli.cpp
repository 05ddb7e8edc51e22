#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const std::string kBin = MVMR_CLI_BIN;
const std::string kData = std::string(MVMR_DATA_DIR) + "/toy.tsv";
const std::string kSigma = std::string(MVMR_DATA_DIR) + "/toy_sigma.csv";

struct RunResult {
  int exit_code;
  std::string out;
};

RunResult run(const std::string& args, const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / "mvmr_cli_test";
  fs::create_directories(dir);
  const std::string out_file = (dir / (tag + ".out")).string();
  const std::string cmd = kBin + " " + args + " >" + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WEXITSTATUS(status), ss.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tmp(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mvmr_cli_test";
  fs::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("unknown flags and missing files map to exit code 2") {
  CHECK(run("fit --method pacs --bogus-flag 1", "unknown").exit_code == 2);
  CHECK(run("fit --method pacs --data /nonexistent.tsv --out " + tmp("x.json"), "missing")
            .exit_code == 2);
  CHECK(run("frobnicate", "nosub").exit_code == 2);
}

TEST_CASE("numerical failure maps to exit code 3") {
  // two exactly collinear exposures make the IVW normal matrix singular
  const std::string path = tmp("collinear.tsv");
  {
    std::ofstream out(path);
    out << "snp\tbeta_a\tse_a\tbeta_b\tse_b\tbeta_outcome\tse_outcome\n";
    for (int j = 0; j < 6; ++j) {
      const double g = 0.1 * (j + 1);
      out << "rs" << j << '\t' << g << "\t0.01\t" << g << "\t0.01\t0.05\t0.02\n";
    }
  }
  const auto r = run("fit --method ivw --data " + path + " --out " + tmp("col.json"), "col");
  CHECK(r.exit_code == 3);
  CHECK(r.out.find("singular") != std::string::npos);
}

TEST_CASE("diagnose prints instrument strength JSON to stdout") {
  const auto r = run("diagnose --data " + kData + " --sigma " + kSigma, "diag");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("\"mu_min\"") != std::string::npos);
  CHECK(r.out.find("\"is_param\"") != std::string::npos);
}

TEST_CASE("fit pacs on the toy dataset writes a FitResult with group labels") {
  const std::string out = tmp("fit_pacs.json");
  const auto r = run("fit --method pacs --data " + kData + " --sigma " + kSigma +
                         " --seed 3 --grid-points 8 --out " + out,
                     "fitp");
  REQUIRE(r.exit_code == 0);
  const std::string json = slurp(out);
  CHECK(json.find("\"method\": \"pacs\"") != std::string::npos);
  CHECK(json.find("\"beta\"") != std::string::npos);
  CHECK(json.find("\"group_labels\"") != std::string::npos);
  CHECK(json.find("\"selected\"") != std::string::npos);
  CHECK(json.find("\"lambda\"") != std::string::npos);
  CHECK(fs::exists(out + ".manifest.json"));
}

TEST_CASE("thin writes fold files that sum back to the original") {
  const std::string prefix = tmp("thin");
  const auto r = run("thin --data " + kData + " --sigma " + kSigma +
                         " --folds 3 --seed 5 --out-prefix " + prefix,
                     "thin");
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(prefix + "_fold1.tsv"));
  CHECK(fs::exists(prefix + "_fold2.tsv"));
  CHECK(fs::exists(prefix + "_fold3.tsv"));
  const std::string manifest = slurp(prefix + "_manifest.json");
  CHECK(manifest.find("\"eps\"") != std::string::npos);
  CHECK(manifest.find("\"checksums\"") != std::string::npos);
}

TEST_CASE("cv emits the result JSON and a loss table") {
  const std::string out = tmp("cv.json");
  const std::string table = tmp("cv_losses.csv");
  const auto r = run("cv --data " + kData + " --sigma " + kSigma +
                         " --grid-points 5 --seed 9 --out " + out + " --loss-table " + table,
                     "cv");
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(out).find("\"lambda_star\"") != std::string::npos);
  const std::string csv = slurp(table);
  CHECK(csv.rfind("lambda,tau,mean_loss,se_loss,n_failures", 0) == 0);
  // 5 lambdas x 4 default taus + header
  int lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == 21);
}

TEST_CASE("select-infer replays byte-identically from the same seed") {
  const std::string p1 = tmp("si_a");
  const std::string p2 = tmp("si_b");
  const std::string common = " --data " + kData + " --sigma " + kSigma +
                             " --seed 7 --grid-points 6 ";
  REQUIRE(run("select-infer" + common + "--out-prefix " + p1, "si1").exit_code == 0);
  REQUIRE(run("select-infer" + common + "--out-prefix " + p2, "si2").exit_code == 0);
  CHECK(slurp(p1 + "_selection.json") == slurp(p2 + "_selection.json"));
  if (fs::exists(p1 + "_inference.csv"))
    CHECK(slurp(p1 + "_inference.csv") == slurp(p2 + "_inference.csv"));
}

TEST_CASE("simulate writes the metrics CSV and replicate JSONL deterministically") {
  const std::string p1 = tmp("sim_a");
  const std::string p2 = tmp("sim_b");
  const std::string common =
      " --n 3000 --snps 60 --replicates 2 --estimators ivw --seed 11 --out-prefix ";
  REQUIRE(run("simulate" + common + p1, "sim1").exit_code == 0);
  REQUIRE(run("simulate" + common + p2, "sim2").exit_code == 0);
  const std::string csv = slurp(p1 + "_metrics.csv");
  CHECK(csv.rfind("estimator,median_mse,correct_sparsity,sensitivity,false_positive_rate",
                  0) == 0);
  CHECK(csv == slurp(p2 + "_metrics.csv"));
  CHECK(slurp(p1 + "_replicates.jsonl") == slurp(p2 + "_replicates.jsonl"));
  CHECK(fs::exists(p1 + ".manifest.json"));
}

TEST_CASE("a run replays from its own manifest") {
  const std::string out1 = tmp("mfit1.json");
  const std::string out2 = tmp("mfit2.json");
  REQUIRE(run("fit --method ivw --data " + kData + " --sigma " + kSigma + " --out " + out1,
              "mf1")
              .exit_code == 0);
  // Replay with the manifest as config; only the output path is overridden.
  REQUIRE(run("fit --config " + out1 + ".manifest.json --out " + out2, "mf2")
              .exit_code == 0);
  CHECK(slurp(out1) == slurp(out2));
}

TEST_CASE("config file values are overridden by explicit flags") {
  const std::string cfg_path = tmp("cfg.json");
  {
    std::ofstream out(cfg_path);
    out << "{\"data\": \"" << kData << "\", \"sigma\": \"" << kSigma
        << "\", \"method\": \"ivw\"}\n";
  }
  const std::string outjson = tmp("cfg_fit.json");
  const auto r =
      run("fit --config " + cfg_path + " --method dridge --phi 0.5 --out " + outjson, "cfgfit");
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(outjson).find("\"method\": \"dridge\"") != std::string::npos);
}
