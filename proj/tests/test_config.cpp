#include <catch2/catch.hpp>

#include <string>

#include "amp_evolve/config.hpp"
#include "amp_evolve/io.hpp"

using namespace amp_evolve;

namespace {

int exit_code_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.exit_code();
  }
  return kExitOk;
}

std::string message_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("minimal config takes defaults", "[config]") {
  const auto c = parse_config(R"({"mode": "run-amp"})");
  CHECK(c.mode == Mode::RunAmp);
  CHECK(c.N == 1000);
  CHECK(c.rho == 0.5);
  CHECK(c.n() == 500);
  CHECK(c.T == 10);
  CHECK(c.replications == 1);
  CHECK(c.algorithm.kind == "cs");
  CHECK(c.algorithm.kappa == 1.1402);
  CHECK(c.tolerances.se_deviation == 0.10);
  CHECK(c.tolerances.spread == 0.05);
  CHECK(c.quadrature_order == kDefaultQuadratureOrder);
  CHECK(std::holds_alternative<dist::BernoulliGaussian>(c.signal));
}

TEST_CASE("rho * N rounds to the nearest integer", "[config]") {
  const auto c = parse_config(R"({"N": 1001, "rho": 0.5})");
  CHECK((c.n() == 500 || c.n() == 501));
  CHECK(exit_code_of(R"({"N": 3, "rho": 0.1})") == kExitSemantic);
}

TEST_CASE("semantic errors exit with 3 and name the offender", "[config]") {
  const std::string bad = R"({"ensemble": {"rule": "homogeneous", "dists": [{"type": "gaussian", "variance": 0.9}]}})";
  CHECK(exit_code_of(bad) == kExitSemantic);
  CHECK(message_of(bad).find("ensemble") != std::string::npos);
  CHECK(message_of(bad).find("variance") != std::string::npos);

  const std::string swept = R"({"sweep": [{"dists": [{"type": "rademacher"}]}, {"dists": [{"type": "uniform_sym", "halfwidth": 1}]}]})";
  CHECK(exit_code_of(swept) == kExitSemantic);
  CHECK(message_of(swept).find("sweep[1]") != std::string::npos);

  CHECK(exit_code_of(R"({"rho": 1.5})") == kExitSemantic);
  CHECK(exit_code_of(R"({"T": 0})") == kExitSemantic);
  CHECK(exit_code_of(R"({"signal": {"type": "bernoulli_gaussian", "eps": 1.5, "var": 1}})") == kExitSemantic);
  CHECK(exit_code_of(R"({"algorithm": {"kind": "cs", "thresholds": "explicit", "theta": [1, 2]}, "T": 5})") == kExitSemantic);
  CHECK(exit_code_of(R"({"T": 3, "output": {"retain": [3]}})") == kExitSemantic);
  CHECK(exit_code_of(R"({"algorithm": {"kind": "general", "f": {"name": "nope"}}})") == kExitSemantic);
}

TEST_CASE("structural errors exit with 2", "[config]") {
  try {
    parse_config_text("{\n  \"N\": 100,\n  \"rho\": ,\n}");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.exit_code() == kExitUsage);
    CHECK(e.line() == 3);
    CHECK(e.column() >= 9);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK(exit_code_of(R"({"Nn": 100})") == kExitUsage);
  CHECK(message_of(R"({"Nn": 100})").find("Nn") != std::string::npos);
  CHECK(exit_code_of(R"({"algorithm": {"kappa": 1, "bogus": 2}})") == kExitUsage);
  CHECK(exit_code_of(R"({"mode": "fly"})") == kExitUsage);
  CHECK(exit_code_of(R"({"N": "many"})") == kExitUsage);
  CHECK(exit_code_of(R"({"ensemble": {"rule": "diagonal"}})") == kExitUsage);
  CHECK(exit_code_of(R"({"signal": {"type": "cauchy"}})") == kExitUsage);
}

TEST_CASE("canonical form round-trips", "[config]") {
  const auto c = parse_config(R"({
    "mode": "verify-propositions",
    "ensemble": {"rule": "checkerboard", "dists": [{"type": "rademacher"}, {"type": "uniform_sym", "halfwidth": 1.7320508075688772}]},
    "signal": {"type": "finite_discrete", "atoms": [-1, 0, 1], "probs": [0.25, 0.5, 0.25]},
    "N": 500, "rho": 0.3, "T": 4, "seed": 99,
    "algorithm": {"kind": "general", "f": {"name": "soft_threshold", "schedule": {"kind": "geometric", "value": 1, "ratio": 0.9}}, "g": {"name": "linear", "a": 0.5}, "q0": "iid"},
    "output": {"retain": [0, 2]}
  })");
  const std::string once = emit_canonical(c);
  const auto c2 = parse_config(once);
  CHECK(emit_canonical(c2) == once);
  CHECK(config_hash(c2) == config_hash(c));
  CHECK(c2.algorithm.g.a == 0.5);
  CHECK(c2.retain == std::vector<int>{0, 2});

  // Infinite theta_init survives the round trip.
  const auto inf = parse_config(emit_canonical(parse_config("{}")));
  CHECK(std::isinf(inf.algorithm.theta_init));
}

TEST_CASE("hash tracks semantic fields only", "[config]") {
  const auto base = parse_config("{}");
  auto moved = base;
  moved.output_dir = "elsewhere";
  moved.retain = {1};
  CHECK(config_hash(moved) == config_hash(base));
  auto other = base;
  other.seed = base.seed + 1;
  CHECK(config_hash(other) != config_hash(base));
  other = base;
  other.rho = 0.25;
  CHECK(config_hash(other) != config_hash(base));
  other = base;
  other.algorithm.kappa = 1.2;
  CHECK(config_hash(other) != config_hash(base));
  other = base;
  other.tolerances.ks = 0.05;
  CHECK(config_hash(other) != config_hash(base));
}

TEST_CASE("CSV output carries the schema line", "[config][io]") {
  CsvTable t({"a", "b"});
  t.add_row({"1", format_double(0.1)});
  const std::string s = t.str();
  CHECK(s.rfind(std::string(kCsvSchemaLine) + "\n", 0) == 0);
  CHECK(s.find("a,b\n1,0.10000000000000001\n") != std::string::npos);
  CHECK_THROWS_AS(t.add_row({"1"}), Error);
  CHECK(std::stod(format_double(0.1)) == 0.1);
}
