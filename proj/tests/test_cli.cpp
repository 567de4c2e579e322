#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "amp_evolve/io.hpp"

namespace fs = std::filesystem;
using amp_evolve::read_file;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("amp_evolve_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args, const std::string& stdout_path = "/dev/null") {
  const std::string cmd = std::string(AMP_EVOLVE_CLI_PATH) + " " + args + " >" + stdout_path + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto p = dir / "config.json";
  amp_evolve::write_file_atomic(p, text);
  return p;
}

std::string config(std::string_view name) { return std::string(AMP_EVOLVE_CONFIG_DIR) + "/" + std::string(name); }

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(read_file(dir / "manifest.json")); }

const char* kSmallRun = R"({
  "N": 400, "rho": 0.5, "T": 5, "replications": 2, "seed": 4,
  "output": {"retain": [0, 4]}
})";

}  // namespace

TEST_CASE("run-amp writes trajectories, SE and manifest", "[cli]") {
  const auto dir = scratch("run_amp");
  const auto cfg = write_config(dir, kSmallRun);
  REQUIRE(run_cli("run-amp --config " + cfg.string() + " --out " + (dir / "a").string()) == 0);
  const auto m = manifest(dir / "a");
  CHECK(m["mode"] == "run-amp");
  CHECK(m["exit_code"] == 0);
  CHECK(m["n"] == 200);
  CHECK(m["seeds"] == nlohmann::json::array({4, 5}));
  CHECK(m["config_hash"].get<std::string>().size() == 16);
  for (const auto& f : m["artifacts"]) CHECK(fs::exists(dir / "a" / f.get<std::string>()));
  const std::string traj = read_file(dir / "a" / "trajectory_0.csv");
  CHECK(traj.rfind(std::string(amp_evolve::kCsvSchemaLine) + "\nt,qq,bb,hh,mm,lambda,xi\n", 0) == 0);
  CHECK(read_file(dir / "a" / "se.csv").find("t,sigma_sq,tau_sq\n") != std::string::npos);
}

TEST_CASE("run-amp is deterministic across runs and job counts", "[cli]") {
  const auto dir = scratch("determinism");
  const auto cfg = write_config(dir, kSmallRun);
  REQUIRE(run_cli("run-amp --config " + cfg.string() + " --out " + (dir / "a").string()) == 0);
  REQUIRE(run_cli("run-amp --config " + cfg.string() + " --out " + (dir / "b").string() + " --jobs 2") == 0);
  for (const char* f : {"trajectory_0.csv", "trajectory_1.csv", "se.csv", "report.json"}) {
    CHECK(read_file(dir / "a" / f) == read_file(dir / "b" / f));
  }
  CHECK(manifest(dir / "a")["config_hash"] == manifest(dir / "b")["config_hash"]);

  REQUIRE(run_cli("run-amp --config " + cfg.string() + " --out " + (dir / "c").string() + " --seed 5") == 0);
  CHECK(manifest(dir / "c")["config_hash"] != manifest(dir / "a")["config_hash"]);
  CHECK(read_file(dir / "c" / "trajectory_0.csv") == read_file(dir / "a" / "trajectory_1.csv"));
}

TEST_CASE("se-predict reproduces the linear chain", "[cli]") {
  const auto dir = scratch("se_predict");
  REQUIRE(run_cli("se-predict --config " + config("se_linear_chain.json") + " --out " + dir.string()) == 0);
  const std::string csv = read_file(dir / "se.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  int rows = 0;
  while (std::getline(in, line)) {
    int t = 0;
    double s = 0, tau = 0;
    REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf", &t, &s, &tau) == 3);
    CHECK_THAT(s, Catch::Matchers::WithinRel(1.3 * std::pow(0.72, t), 1e-12));
    CHECK_THAT(tau, Catch::Matchers::WithinRel(1.3 * std::pow(0.72, t), 1e-12));
    ++rows;
  }
  CHECK(rows == 13);
}

TEST_CASE("verify-propositions passes on a small instance", "[cli]") {
  const auto dir = scratch("propositions");
  const auto cfg = write_config(dir, R"({"N": 600, "rho": 0.5, "T": 2, "replications": 2, "seed": 3})");
  CHECK(run_cli("verify-propositions --config " + cfg.string() + " --out " + dir.string()) == 0);
  const auto report = nlohmann::json::parse(read_file(dir / "report.json"));
  CHECK(report["pass"] == true);
  CHECK(report["checks"].size() > 0);
}

TEST_CASE("verify-theorem1 writes a report with an exit code in {0, 1}", "[cli]") {
  const auto dir = scratch("theorem1");
  const auto cfg = write_config(dir, R"({"N": 400, "rho": 0.5, "T": 3, "replications": 2, "seed": 2})");
  const int code = run_cli("verify-theorem1 --config " + cfg.string() + " --out " + dir.string());
  CHECK((code == 0 || code == 1));
  const auto report = nlohmann::json::parse(read_file(dir / "report.json"));
  CHECK(report["pass"] == (code == 0));
  CHECK(manifest(dir)["exit_code"] == code);
}

TEST_CASE("universality-sweep writes one table per ensemble plus pairwise differences", "[cli]") {
  const auto dir = scratch("sweep");
  const auto cfg = write_config(dir, R"({
    "sweep": [{"dists": [{"type": "gaussian"}]}, {"dists": [{"type": "rademacher"}]},
              {"rule": "checkerboard", "dists": [{"type": "rademacher"}, {"type": "uniform_sym", "halfwidth": 1.7320508075688772}]}],
    "N": 400, "rho": 0.5, "T": 3, "replications": 2, "seed": 2})");
  const int code = run_cli("universality-sweep --config " + cfg.string() + " --out " + dir.string());
  CHECK((code == 0 || code == 1));
  CHECK(fs::exists(dir / "se_deviation_0_homogeneous.csv"));
  CHECK(fs::exists(dir / "se_deviation_1_homogeneous.csv"));
  CHECK(fs::exists(dir / "se_deviation_2_checkerboard.csv"));
  CHECK(fs::exists(dir / "pairwise_mse_difference.csv"));
}

TEST_CASE("validate-ensemble separates valid from invalid ensembles", "[cli]") {
  const auto dir = scratch("validate");
  CHECK(run_cli("validate-ensemble --config " + config("cs_benchmark.json") + " --out " + (dir / "ok").string()) == 0);
  CHECK(run_cli("validate-ensemble --config " + config("invalid_ensemble.json") + " --out " + (dir / "bad").string()) == 3);
  const std::string report = read_file(dir / "bad" / "report.json");
  CHECK(report.find("gaussian(mean=0, var=0.90000000000000002)") != std::string::npos);
}

TEST_CASE("usage, semantic and numerical failures map to exit codes", "[cli]") {
  const auto dir = scratch("errors");
  const auto good = write_config(dir, kSmallRun);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("fly --config " + good.string()) == 2);
  CHECK(run_cli("run-amp") == 2);
  CHECK(run_cli("run-amp --config " + good.string() + " --jobs 0") == 2);
  CHECK(run_cli("run-amp --config " + (dir / "missing.json").string()) == 2);

  const auto syntax = dir / "syntax.json";
  amp_evolve::write_file_atomic(syntax, "{\"N\": 10,,}");
  CHECK(run_cli("run-amp --config " + syntax.string()) == 2);

  const auto semantic = dir / "semantic.json";
  amp_evolve::write_file_atomic(semantic, R"({"ensemble": {"dists": [{"type": "gaussian", "variance": 0.9}]}})");
  CHECK(run_cli("run-amp --config " + semantic.string()) == 3);

  const auto blowup = dir / "blowup.json";
  amp_evolve::write_file_atomic(blowup, R"({"N": 100, "T": 20,
    "algorithm": {"kind": "general", "f": {"name": "linear", "a": 100000}, "g": {"name": "identity"}, "q0": "iid"}})");
  CHECK(run_cli("run-amp --config " + blowup.string() + " --out " + (dir / "blowup").string()) == 4);
  const auto m = manifest(dir / "blowup");
  CHECK(m["exit_code"] == 4);
  CHECK(m.contains("failed_iteration"));
}

TEST_CASE("emit-canonical prints a config that re-parses to itself", "[cli]") {
  const auto dir = scratch("canonical");
  REQUIRE(run_cli("run-amp --config " + config("cs_benchmark.json") + " --emit-canonical", (dir / "c1.json").string()) == 0);
  const std::string once = read_file(dir / "c1.json");
  REQUIRE_FALSE(once.empty());
  REQUIRE(run_cli("run-amp --config " + (dir / "c1.json").string() + " --emit-canonical", (dir / "c2.json").string()) == 0);
  CHECK(read_file(dir / "c2.json") == once);
}
