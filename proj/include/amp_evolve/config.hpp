#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "amp_evolve/denoisers.hpp"
#include "amp_evolve/distributions.hpp"
#include "amp_evolve/ensembles.hpp"
#include "amp_evolve/error.hpp"
#include "amp_evolve/quadrature.hpp"

namespace amp_evolve {

enum class Mode { RunAmp, SePredict, VerifyTheorem1, VerifyPropositions, UniversalitySweep, ValidateEnsemble };

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerificationFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitSemantic = 3;
inline constexpr int kExitNumerical = 4;

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::RunAmp: return "run-amp";
    case Mode::SePredict: return "se-predict";
    case Mode::VerifyTheorem1: return "verify-theorem1";
    case Mode::VerifyPropositions: return "verify-propositions";
    case Mode::UniversalitySweep: return "universality-sweep";
    case Mode::ValidateEnsemble: return "validate-ensemble";
  }
  return "?";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  for (Mode m : {Mode::RunAmp, Mode::SePredict, Mode::VerifyTheorem1, Mode::VerifyPropositions,
                 Mode::UniversalitySweep, Mode::ValidateEnsemble}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

/// Carries the process exit code: 2 for syntax/structure, 3 for semantics.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int exit_code, const std::string& what, int line = 0, int column = 0)
      : std::runtime_error(what), exit_code_(exit_code), line_(line), column_(column) {}
  int exit_code() const noexcept { return exit_code_; }
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int exit_code_;
  int line_;
  int column_;
};

struct ScheduleConfig {
  std::string kind = "fixed";  // fixed | explicit | geometric
  double value = 1.0;          // fixed value or geometric start
  double ratio = 1.0;
  std::vector<double> values;

  bool operator==(const ScheduleConfig&) const = default;

  Schedule build() const {
    if (kind == "explicit") return Schedule::explicit_values(values);
    if (kind == "geometric") return Schedule::geometric(value, ratio);
    return Schedule::fixed(value);
  }
};

struct DenoiserConfig {
  std::string name = "identity";
  double a = 1.0;
  double eps = 1.0;
  double var = 1.0;
  ScheduleConfig schedule;
  double theta_init = std::numeric_limits<double>::infinity();

  bool operator==(const DenoiserConfig&) const = default;

  static DenoiserConfig named(std::string n) {
    DenoiserConfig d;
    d.name = std::move(n);
    return d;
  }

  Denoiser build() const {
    BuiltinParams p;
    p.a = a;
    p.eps = eps;
    p.var = var;
    p.schedule = schedule.build();
    p.theta_init = theta_init;
    return builtin(name, p);
  }
};

struct EnsembleConfig {
  std::string rule = "homogeneous";  // homogeneous | checkerboard | row_periodic | position_hash
  std::vector<ScalarDistribution> dists{dist::Gaussian{}};
  std::uint64_t hash_seed = 0;
  double alpha = 2.0;

  bool operator==(const EnsembleConfig&) const = default;

  EnsembleSpec build() const {
    EnsembleSpec s;
    s.alpha = alpha;
    if (rule == "checkerboard") {
      require(dists.size() == 2, ErrorKind::InvalidSpec, "checkerboard needs exactly two distributions");
      s.rule = rule::Checkerboard{dists[0], dists[1]};
    } else if (rule == "row_periodic") {
      s.rule = rule::RowPeriodic{dists};
    } else if (rule == "position_hash") {
      s.rule = rule::PositionHash{dists, hash_seed};
    } else {
      require(dists.size() == 1, ErrorKind::InvalidSpec, "homogeneous needs exactly one distribution");
      s.rule = rule::Homogeneous{dists[0]};
    }
    return s;
  }
};

/// kind = "cs": soft-thresholding compressed sensing with theta_t = kappa tau_t
/// from SE ("se_coupled") or an explicit list. kind = "general": f, g builtins.
struct AlgorithmConfig {
  std::string kind = "cs";
  double kappa = 1.1402;
  std::string thresholds = "se_coupled";
  std::vector<double> theta;
  double theta_init = std::numeric_limits<double>::infinity();
  DenoiserConfig f = DenoiserConfig::named("constant_signal");
  DenoiserConfig g = DenoiserConfig::named("residual");
  std::string q0 = "f0";  // f0: q^0 = f_0(0, x0); iid: q^0 drawn from q0_dist
  ScalarDistribution q0_dist = dist::Gaussian{};

  bool operator==(const AlgorithmConfig&) const = default;
};

struct Tolerances {
  double inner_C = 8.0;
  double se_deviation = 0.10;
  double spread = 0.05;
  double observable_z = 3.0;
  double ks = 0.04;
  double pass_rate = 0.95;       // deterministic-identity checks
  double stat_pass_rate = 0.9;   // sampling-based checks (KS, observables)

  bool operator==(const Tolerances&) const = default;
};

struct ExperimentConfig {
  Mode mode = Mode::RunAmp;
  EnsembleConfig ensemble;
  std::vector<EnsembleConfig> sweep;  // universality-sweep ensembles
  ScalarDistribution signal = dist::BernoulliGaussian{0.1, 1.0};
  ScalarDistribution noise = dist::Gaussian{0.0, 1e-4};
  std::size_t N = 1000;
  double rho = 0.5;
  int T = 10;
  int replications = 1;
  std::uint64_t seed = 1;
  AlgorithmConfig algorithm;
  Tolerances tolerances;
  int quadrature_order = kDefaultQuadratureOrder;
  std::size_t mc_budget = kDefaultMcBudget;
  std::vector<int> retain;
  std::string output_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;

  std::size_t n() const { return static_cast<std::size_t>(std::llround(rho * static_cast<double>(N))); }
};

// ---------------------------------------------------------------- JSON

namespace detail {

inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

// Strict object reader: every key must be consumed or declared.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) structural("expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      structural("key '" + key + "' has the wrong type");
    }
  }

  // null means +infinity.
  void get_extended(const std::string& key, double& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto& v = j_.at(key);
    if (v.is_null()) {
      out = std::numeric_limits<double>::infinity();
    } else if (v.is_number()) {
      out = v.get<double>();
    } else {
      structural("key '" + key + "' must be a number or null");
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) structural("unknown key '" + k + "'");
    }
  }

  [[noreturn]] void structural(const std::string& msg) const { throw ConfigError(kExitUsage, path_ + ": " + msg); }
  const std::string& path() const { return path_; }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline ScalarDistribution read_distribution(const nlohmann::json& j, const std::string& path) {
  Reader r(j, path);
  std::string type;
  r.get("type", type);
  ScalarDistribution out;
  if (type == "gaussian") {
    dist::Gaussian d;
    r.get("mean", d.mean);
    r.get("variance", d.variance);
    out = d;
  } else if (type == "rademacher") {
    out = dist::Rademacher{};
  } else if (type == "uniform_sym") {
    dist::UniformSym d;
    r.get("halfwidth", d.halfwidth);
    out = d;
  } else if (type == "laplace_sym") {
    dist::LaplaceSym d;
    r.get("scale", d.scale);
    out = d;
  } else if (type == "bernoulli_gaussian") {
    dist::BernoulliGaussian d;
    r.get("eps", d.eps);
    r.get("var", d.var);
    out = d;
  } else if (type == "point_mass") {
    dist::PointMass d;
    r.get("value", d.value);
    out = d;
  } else if (type == "finite_discrete") {
    dist::FiniteDiscrete d;
    r.get("atoms", d.atoms);
    r.get("probs", d.probs);
    out = d;
  } else {
    r.structural("unknown distribution type '" + type + "'");
  }
  r.finish();
  return out;
}

inline nlohmann::json write_distribution(const ScalarDistribution& d) {
  using nlohmann::json;
  return std::visit(Overloaded{
                        [](const dist::Gaussian& g) { return json{{"type", "gaussian"}, {"mean", g.mean}, {"variance", g.variance}}; },
                        [](const dist::Rademacher&) { return json{{"type", "rademacher"}}; },
                        [](const dist::UniformSym& u) { return json{{"type", "uniform_sym"}, {"halfwidth", u.halfwidth}}; },
                        [](const dist::LaplaceSym& l) { return json{{"type", "laplace_sym"}, {"scale", l.scale}}; },
                        [](const dist::BernoulliGaussian& b) {
                          return json{{"type", "bernoulli_gaussian"}, {"eps", b.eps}, {"var", b.var}};
                        },
                        [](const dist::PointMass& p) { return json{{"type", "point_mass"}, {"value", p.value}}; },
                        [](const dist::FiniteDiscrete& f) {
                          return json{{"type", "finite_discrete"}, {"atoms", f.atoms}, {"probs", f.probs}};
                        },
                    },
                    d);
}

inline ScheduleConfig read_schedule(const nlohmann::json& j, const std::string& path) {
  ScheduleConfig s;
  if (j.is_number()) {
    s.value = j.get<double>();
    return s;
  }
  if (j.is_array()) {
    s.kind = "explicit";
    try {
      s.values = j.get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(kExitUsage, path + ": schedule list must hold numbers");
    }
    return s;
  }
  Reader r(j, path);
  r.get("kind", s.kind);
  r.get("value", s.value);
  r.get("ratio", s.ratio);
  r.get("values", s.values);
  r.finish();
  if (s.kind != "fixed" && s.kind != "explicit" && s.kind != "geometric") r.structural("unknown schedule kind '" + s.kind + "'");
  return s;
}

inline nlohmann::json write_schedule(const ScheduleConfig& s) {
  return {{"kind", s.kind}, {"value", s.value}, {"ratio", s.ratio}, {"values", s.values}};
}

inline DenoiserConfig read_denoiser(const nlohmann::json& j, const std::string& path) {
  DenoiserConfig d;
  if (j.is_string()) {
    d.name = j.get<std::string>();
    return d;
  }
  Reader r(j, path);
  r.get("name", d.name);
  r.get("a", d.a);
  r.get("eps", d.eps);
  r.get("var", d.var);
  if (r.has("schedule")) d.schedule = read_schedule(r.raw("schedule"), path + ".schedule");
  r.get_extended("theta_init", d.theta_init);
  r.finish();
  return d;
}

inline nlohmann::json write_denoiser(const DenoiserConfig& d) {
  return {{"name", d.name}, {"a", d.a}, {"eps", d.eps}, {"var", d.var}, {"schedule", write_schedule(d.schedule)},
          {"theta_init", number_or_null(d.theta_init)}};
}

inline EnsembleConfig read_ensemble(const nlohmann::json& j, const std::string& path) {
  EnsembleConfig e;
  Reader r(j, path);
  r.get("rule", e.rule);
  if (r.has("dists")) {
    const auto& arr = r.raw("dists");
    if (!arr.is_array()) r.structural("'dists' must be a list");
    e.dists.clear();
    for (std::size_t k = 0; k < arr.size(); ++k) e.dists.push_back(read_distribution(arr[k], path + ".dists[" + std::to_string(k) + "]"));
  }
  r.get("hash_seed", e.hash_seed);
  r.get("alpha", e.alpha);
  r.finish();
  if (e.rule != "homogeneous" && e.rule != "checkerboard" && e.rule != "row_periodic" && e.rule != "position_hash") {
    r.structural("unknown rule '" + e.rule + "'");
  }
  return e;
}

inline nlohmann::json write_ensemble(const EnsembleConfig& e) {
  nlohmann::json d = nlohmann::json::array();
  for (const auto& x : e.dists) d.push_back(write_distribution(x));
  return {{"rule", e.rule}, {"dists", d}, {"hash_seed", e.hash_seed}, {"alpha", e.alpha}};
}

inline std::pair<int, int> line_column(std::string_view text, std::size_t byte) {
  int line = 1;
  int col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

/// Structural parse; throws ConfigError (exit 2) on syntax errors or unknown keys.
inline ExperimentConfig parse_config_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end(), nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t byte = e.byte > 0 ? e.byte - 1 : 0;
    const auto [line, col] = detail::line_column(text, byte);
    throw ConfigError(kExitUsage, "config syntax error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + e.what(),
                      line, col);
  }
  using detail::Reader;
  ExperimentConfig c;
  Reader r(j, "config");
  if (r.has("mode")) {
    std::string m;
    r.get("mode", m);
    const auto mode = parse_mode(m);
    if (!mode) r.structural("unknown mode '" + m + "'");
    c.mode = *mode;
  }
  if (r.has("ensemble")) c.ensemble = detail::read_ensemble(r.raw("ensemble"), "config.ensemble");
  if (r.has("sweep")) {
    const auto& arr = r.raw("sweep");
    if (!arr.is_array()) r.structural("'sweep' must be a list of ensembles");
    for (std::size_t k = 0; k < arr.size(); ++k) c.sweep.push_back(detail::read_ensemble(arr[k], "config.sweep[" + std::to_string(k) + "]"));
  }
  if (r.has("signal")) c.signal = detail::read_distribution(r.raw("signal"), "config.signal");
  if (r.has("noise")) c.noise = detail::read_distribution(r.raw("noise"), "config.noise");
  r.get("N", c.N);
  r.get("rho", c.rho);
  r.get("T", c.T);
  r.get("replications", c.replications);
  r.get("seed", c.seed);
  if (r.has("algorithm")) {
    Reader a(r.raw("algorithm"), "config.algorithm");
    auto& al = c.algorithm;
    a.get("kind", al.kind);
    a.get("kappa", al.kappa);
    a.get("thresholds", al.thresholds);
    a.get("theta", al.theta);
    a.get_extended("theta_init", al.theta_init);
    if (a.has("f")) al.f = detail::read_denoiser(a.raw("f"), "config.algorithm.f");
    if (a.has("g")) al.g = detail::read_denoiser(a.raw("g"), "config.algorithm.g");
    a.get("q0", al.q0);
    if (a.has("q0_dist")) al.q0_dist = detail::read_distribution(a.raw("q0_dist"), "config.algorithm.q0_dist");
    a.finish();
    if (al.kind != "cs" && al.kind != "general") a.structural("unknown algorithm kind '" + al.kind + "'");
    if (al.thresholds != "se_coupled" && al.thresholds != "explicit") a.structural("thresholds must be se_coupled or explicit");
    if (al.q0 != "f0" && al.q0 != "iid") a.structural("q0 must be f0 or iid");
  }
  if (r.has("tolerances")) {
    Reader t(r.raw("tolerances"), "config.tolerances");
    auto& tol = c.tolerances;
    t.get("inner_C", tol.inner_C);
    t.get("se_deviation", tol.se_deviation);
    t.get("spread", tol.spread);
    t.get("observable_z", tol.observable_z);
    t.get("ks", tol.ks);
    t.get("pass_rate", tol.pass_rate);
    t.get("stat_pass_rate", tol.stat_pass_rate);
    t.finish();
  }
  if (r.has("quadrature")) {
    Reader q(r.raw("quadrature"), "config.quadrature");
    q.get("order", c.quadrature_order);
    q.get("mc_budget", c.mc_budget);
    q.finish();
  }
  if (r.has("output")) {
    Reader o(r.raw("output"), "config.output");
    o.get("dir", c.output_dir);
    o.get("retain", c.retain);
    o.finish();
  }
  r.finish();
  return c;
}

/// Semantic checks; throws ConfigError (exit 3).
inline void validate_config(const ExperimentConfig& c) {
  auto semantic = [](const std::string& msg) { throw ConfigError(kExitSemantic, msg); };
  if (!(c.rho > 0.0 && c.rho <= 1.0)) semantic("rho must lie in (0, 1]");
  if (c.N < 2) semantic("N must be >= 2");
  if (c.n() < 1) semantic("rho * N rounds to n = 0");
  if (c.T < 1) semantic("T must be >= 1");
  if (c.replications < 1) semantic("replications must be >= 1");
  if (c.quadrature_order < 2 || c.quadrature_order > 256) semantic("quadrature.order must lie in [2, 256]");
  if (c.mc_budget < 1) semantic("quadrature.mc_budget must be >= 1");
  std::vector<std::pair<std::string, const EnsembleConfig*>> ens{{"ensemble", &c.ensemble}};
  for (std::size_t k = 0; k < c.sweep.size(); ++k) ens.emplace_back("sweep[" + std::to_string(k) + "]", &c.sweep[k]);
  for (const auto& [label, e] : ens) {
    try {
      const auto report = validate(e->build());
      if (!report.pass()) semantic(label + " invalid: " + report.summary());
    } catch (const Error& err) {
      semantic(label + " invalid: " + err.what());
    }
  }
  for (const auto& [label, d] : {std::pair{"signal", &c.signal}, std::pair{"noise", &c.noise}}) {
    try {
      validate_distribution(*d);
    } catch (const Error& err) {
      semantic(std::string(label) + " invalid: " + err.what());
    }
  }
  const auto& al = c.algorithm;
  if (al.kind == "cs") {
    if (!(al.kappa > 0.0)) semantic("algorithm.kappa must be > 0");
    if (al.thresholds == "explicit" && al.theta.size() < static_cast<std::size_t>(c.T)) {
      semantic("algorithm.theta must list at least T thresholds");
    }
  } else {
    try {
      al.f.build();
      al.g.build();
    } catch (const Error& err) {
      semantic(std::string("algorithm denoiser invalid: ") + err.what());
    }
  }
  for (int t : c.retain) {
    if (t < 0 || t >= c.T) semantic("output.retain entries must lie in [0, T)");
  }
}

inline ExperimentConfig parse_config(std::string_view text) {
  auto c = parse_config_text(text);
  validate_config(c);
  return c;
}

/// Canonical form: every field explicit, keys sorted.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json sweep = json::array();
  for (const auto& e : c.sweep) sweep.push_back(detail::write_ensemble(e));
  const auto& al = c.algorithm;
  const auto& t = c.tolerances;
  return json{
      {"mode", to_string(c.mode)},
      {"ensemble", detail::write_ensemble(c.ensemble)},
      {"sweep", sweep},
      {"signal", detail::write_distribution(c.signal)},
      {"noise", detail::write_distribution(c.noise)},
      {"N", c.N},
      {"rho", c.rho},
      {"T", c.T},
      {"replications", c.replications},
      {"seed", c.seed},
      {"algorithm",
       {{"kind", al.kind},
        {"kappa", al.kappa},
        {"thresholds", al.thresholds},
        {"theta", al.theta},
        {"theta_init", detail::number_or_null(al.theta_init)},
        {"f", detail::write_denoiser(al.f)},
        {"g", detail::write_denoiser(al.g)},
        {"q0", al.q0},
        {"q0_dist", detail::write_distribution(al.q0_dist)}}},
      {"tolerances",
       {{"inner_C", t.inner_C},
        {"se_deviation", t.se_deviation},
        {"spread", t.spread},
        {"observable_z", t.observable_z},
        {"ks", t.ks},
        {"pass_rate", t.pass_rate},
        {"stat_pass_rate", t.stat_pass_rate}}},
      {"quadrature", {{"order", c.quadrature_order}, {"mc_budget", c.mc_budget}}},
      {"output", {{"dir", c.output_dir}, {"retain", c.retain}}},
  };
}

inline std::string emit_canonical(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

/// FNV-1a 64 of the canonical form without the output block.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("output");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace amp_evolve
