#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "amp_evolve/amp.hpp"
#include "amp_evolve/config.hpp"
#include "amp_evolve/io.hpp"
#include "amp_evolve/state_evolution.hpp"
#include "amp_evolve/verification.hpp"

namespace amp_evolve {

inline constexpr const char* kVersion = "0.1.0";

/// Results land in index order regardless of which worker produced them.
/// The lowest-index exception is rethrown after all workers finish.
template <class F>
auto parallel_map(std::size_t count, int jobs, F&& fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<std::optional<R>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
  if (k <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<R> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// The four ensembles used when a sweep lists none.
inline std::vector<EnsembleConfig> default_sweep() {
  const ScalarDistribution unif = dist::UniformSym{std::sqrt(3.0)};
  const ScalarDistribution lap = dist::LaplaceSym{1.0 / std::sqrt(2.0)};
  return {
      {"homogeneous", {dist::Gaussian{}}, 0, 2.0},
      {"homogeneous", {dist::Rademacher{}}, 0, 2.0},
      {"checkerboard", {dist::Rademacher{}, unif}, 0, 2.0},
      {"position_hash", {dist::Gaussian{}, dist::Rademacher{}, unif, lap}, 7, 2.0},
  };
}

/// SE prediction and the denoisers shared by every replication of a config.
struct PreparedRun {
  SeParams params;
  SeTrajectory se;
  Denoiser f;
  Denoiser g;
  double rho = 1.0;
  std::size_t n = 0;
  std::size_t N = 0;
  int T = 0;
};

inline PreparedRun prepare(const ExperimentConfig& c) {
  PreparedRun p;
  p.n = c.n();
  p.N = c.N;
  p.rho = static_cast<double>(p.n) / static_cast<double>(p.N);
  p.T = c.T;
  SeParams base;
  base.rho = p.rho;
  base.x0_law = c.signal;
  base.w_law = c.noise;
  base.rule = gauss_hermite(c.quadrature_order);
  base.mc_budget = c.mc_budget;
  const auto& al = c.algorithm;

  auto f0_sigma0 = [&](const Denoiser& f) {
    ExpectationOptions o;
    o.rule = &base.rule;
    o.mc_budget = base.mc_budget;
    o.mc_seed = base.mc_seed;
    const double m2 = expect_gauss_aux(
        [&](double, double x) {
          const double v = f.eval(0, 0.0, x);
          return v * v;
        },
        0.0, c.signal, o);
    return m2 / p.rho;
  };

  if (al.kind == "cs") {
    if (al.thresholds == "se_coupled") {
      base.f = denoisers::cs_soft_threshold_f(Schedule::fixed(1.0), al.theta_init);
      base.g = denoisers::residual();
      base.sigma0_sq = f0_sigma0(base.f);
      auto coupled = se_coupled_cs(base, al.kappa, c.T, al.theta_init);
      p.params = std::move(coupled.params);
      p.se = std::move(coupled.se);
    } else {
      base.f = denoisers::cs_soft_threshold_f(Schedule::explicit_values(al.theta), al.theta_init);
      base.g = denoisers::residual();
      base.sigma0_sq = f0_sigma0(base.f);
      p.params = base;
      p.se = se_run(p.params, c.T);
    }
  } else {
    base.f = al.f.build();
    base.g = al.g.build();
    base.sigma0_sq = al.q0 == "iid" ? raw_moment(al.q0_dist, 2) / p.rho : f0_sigma0(base.f);
    p.params = base;
    p.se = se_run(p.params, c.T);
  }
  p.f = p.params.f;
  p.g = p.params.g;
  return p;
}

struct Replication {
  AmpProblem problem;
  AmpTrajectory traj;
};

/// Signal, noise and matrix all derive from `seed`; different ensembles
/// under the same seed share x0, w and the per-entry uniforms.
inline Replication run_replication(const ExperimentConfig& c, const PreparedRun& p, const EnsembleSpec& ens,
                                   std::uint64_t seed, const RunOptions& opts = {}) {
  Sample x0 = sample(c.signal, p.N, seed, streams::kSignal);
  Sample w = sample(c.noise, p.n, seed, streams::kNoise);
  AmpProblem problem(generate(ens, p.n, p.N, seed), std::move(x0), std::move(w));
  Sample q0 = c.algorithm.kind == "general" && c.algorithm.q0 == "iid"
                  ? sample(c.algorithm.q0_dist, p.N, seed, streams::kInitial)
                  : eval_vec(p.f, 0, Sample(p.N, 0.0), problem.x0);
  AmpTrajectory traj = run(problem, q0, p.f, p.g, p.T, opts);
  return {std::move(problem), std::move(traj)};
}

/// |<q^t,q^t>/rho - sigma_t^2| / max(sigma_t^2, floor) for t = 0..T-1.
inline std::vector<double> se_relative_deviation(const AmpTrajectory& traj, const SeTrajectory& se, double floor = 1e-6) {
  std::vector<double> out;
  for (const auto& s : traj.summaries) {
    const double pred = se.sigma_sq.at(static_cast<std::size_t>(s.t));
    out.push_back(std::abs(s.qq / traj.rho - pred) / std::max(pred, floor));
  }
  return out;
}

inline double median(std::vector<double> v) {
  require(!v.empty(), ErrorKind::InvalidInput, "median of empty list");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Seeds for pilot calibration runs, disjoint from the replication seeds.
inline std::uint64_t pilot_seed(std::uint64_t base, std::size_t k) { return splitmix64(base ^ 0x9170C0DEull) + k; }

/// Standard error of the single-time empirical average of `proto` at each
/// t = 0..T-1, estimated as its spread over `pilots` runs on the i.i.d.
/// Gaussian ensemble. proto.times is ignored.
inline std::vector<double> pilot_observable_se(const ExperimentConfig& c, const PreparedRun& p, const Observable& proto,
                                               std::size_t pilots, int jobs = 1) {
  require(pilots >= 2, ErrorKind::InvalidInput, "pilot_observable_se: need at least two pilot runs");
  EnsembleSpec gauss;
  gauss.rule = rule::Homogeneous{dist::Gaussian{}};
  RunOptions opts;
  opts.retain_all = true;
  const auto values = parallel_map(pilots, jobs, [&](std::size_t k) {
    const auto rep = run_replication(c, p, gauss, pilot_seed(c.seed, k), opts);
    std::vector<double> v;
    Observable o = proto;
    for (int t = 0; t < p.T; ++t) {
      o.times = {t};
      v.push_back(empirical_observable(rep.problem, rep.traj, o));
    }
    return v;
  });
  std::vector<double> se;
  for (int t = 0; t < p.T; ++t) {
    Sample col;
    for (const auto& v : values) col.push_back(v[static_cast<std::size_t>(t)]);
    se.push_back(std::sqrt(emp_variance(col) * static_cast<double>(pilots) / static_cast<double>(pilots - 1)));
  }
  return se;
}

struct RunContext {
  std::filesystem::path out_dir = "out";
  int jobs = 1;
};

struct ModeResult {
  int exit_code = kExitOk;
  VerificationReport report;
  nlohmann::json details = nlohmann::json::object();
  std::vector<std::pair<std::string, std::string>> artifacts;  // file name, contents
};

inline std::vector<std::uint64_t> replication_seeds(const ExperimentConfig& c) {
  std::vector<std::uint64_t> s;
  for (int r = 0; r < c.replications; ++r) s.push_back(c.seed + static_cast<std::uint64_t>(r));
  return s;
}

namespace modes {

inline ModeResult se_predict(const ExperimentConfig& c, const RunContext&) {
  ModeResult r;
  const auto p = prepare(c);
  r.artifacts.emplace_back("se.csv", se_csv(p.se));
  return r;
}

inline ModeResult run_amp(const ExperimentConfig& c, const RunContext& ctx) {
  ModeResult r;
  const auto p = prepare(c);
  const auto ens = c.ensemble.build();
  const auto seeds = replication_seeds(c);
  RunOptions opts;
  opts.retain = c.retain;
  const auto trajs = parallel_map(seeds.size(), ctx.jobs, [&](std::size_t i) {
    return run_replication(c, p, ens, seeds[i], opts).traj;
  });
  r.artifacts.emplace_back("se.csv", se_csv(p.se));
  nlohmann::json devs = nlohmann::json::array();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    r.artifacts.emplace_back("trajectory_" + std::to_string(i) + ".csv", trajectory_csv(trajs[i]));
    const auto d = se_relative_deviation(trajs[i], p.se);
    devs.push_back({{"seed", seeds[i]}, {"max_relative_deviation", *std::max_element(d.begin(), d.end())}});
  }
  r.details["se_deviation"] = devs;
  return r;
}

inline ModeResult verify_theorem1(const ExperimentConfig& c, const RunContext& ctx) {
  ModeResult r;
  const auto p = prepare(c);
  const auto ens = c.ensemble.build();
  const auto seeds = replication_seeds(c);
  const auto& tol = c.tolerances;
  RunOptions opts;
  opts.retain_all = true;
  Observable b2;
  b2.phi = [](std::span<const double> u, double) { return u[0] * u[0]; };
  b2.bound = {1.0, 1.0, 1.0};
  const auto pilot_se = pilot_observable_se(c, p, b2, std::max<std::size_t>(seeds.size(), 10), ctx.jobs);
  struct Outcome {
    double deviation;
    VerificationReport identities;
    std::vector<VerificationReport> observables;
    VerificationReport gaussianity;
    std::string trajectory;
  };
  const auto outcomes = parallel_map(seeds.size(), ctx.jobs, [&](std::size_t i) {
    const auto rep = run_replication(c, p, ens, seeds[i], opts);
    Outcome o;
    const auto d = se_relative_deviation(rep.traj, p.se);
    o.deviation = *std::max_element(d.begin(), d.end());
    o.identities = check_inner_identities(rep.traj, rep.traj.rho, tol.inner_C);
    for (int t = 0; t < p.T; ++t) {
      Observable obs = b2;
      obs.name = "b_squared[" + std::to_string(t) + "]";
      obs.times = {t};
      ObservableOptions oo;
      oo.z = tol.observable_z;
      oo.pilot_se = pilot_se[static_cast<std::size_t>(t)];
      o.observables.push_back(check_observable(rep.problem, rep.traj, p.params, p.se, obs, oo));
    }
    GaussianityOptions go;
    go.ks_threshold = tol.ks;
    o.gaussianity = gaussianity_report(rep.traj.at(0).h_next, p.se.tau_sq[0], go);
    o.trajectory = trajectory_csv(rep.traj);
    return o;
  });

  std::vector<double> devs;
  std::size_t id_pass = 0;
  std::size_t id_total = 0;
  std::size_t obs_pass = 0;
  std::size_t obs_total = 0;
  std::size_t ks_pass = 0;
  nlohmann::json per_seed = nlohmann::json::array();
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    devs.push_back(o.deviation);
    id_total += o.identities.checks.size();
    id_pass += o.identities.checks.size() - o.identities.failures();
    for (const auto& ob : o.observables) {
      ++obs_total;
      obs_pass += ob.pass() ? 1 : 0;
    }
    const bool ks_ok = o.gaussianity.get("ks").pass;
    ks_pass += ks_ok ? 1 : 0;
    nlohmann::json obs = nlohmann::json::array();
    for (const auto& ob : o.observables) obs.push_back(to_json(ob));
    per_seed.push_back({{"seed", seeds[i]},
                        {"se_max_relative_deviation", o.deviation},
                        {"inner_identities", to_json(o.identities)},
                        {"observables", obs},
                        {"h1_gaussianity", to_json(o.gaussianity)}});
    r.artifacts.emplace_back("trajectory_" + std::to_string(i) + ".csv", o.trajectory);
  }
  r.artifacts.emplace_back("se.csv", se_csv(p.se));
  auto& dev = r.report.add_upper("se_deviation_median", median(devs), tol.se_deviation);
  dev.n = p.n;
  dev.N = p.N;
  dev.reps = seeds.size();
  dev.seed = c.seed;
  auto& ids = r.report.add_lower("inner_identity_pass_rate", static_cast<double>(id_pass) / static_cast<double>(id_total), tol.pass_rate);
  ids.reps = seeds.size();
  auto& obs = r.report.add_lower("observable_b_squared_pass_rate", static_cast<double>(obs_pass) / static_cast<double>(obs_total),
                                 tol.stat_pass_rate);
  obs.reps = seeds.size();
  auto& ks = r.report.add_lower("h1_ks_pass_rate", static_cast<double>(ks_pass) / static_cast<double>(seeds.size()),
                                tol.stat_pass_rate);
  ks.reps = seeds.size();
  r.details["replications"] = per_seed;
  return r;
}

inline ModeResult universality_sweep(const ExperimentConfig& c, const RunContext& ctx) {
  ModeResult r;
  const auto p = prepare(c);
  const auto sweep = c.sweep.empty() ? default_sweep() : c.sweep;
  const auto seeds = replication_seeds(c);
  const std::size_t E = sweep.size();
  const auto T = static_cast<std::size_t>(p.T);
  // qq[seed][ensemble][t] = <q^t, q^t> / rho
  const auto qq = parallel_map(seeds.size(), ctx.jobs, [&](std::size_t i) {
    std::vector<std::vector<double>> out;
    for (const auto& e : sweep) {
      const auto rep = run_replication(c, p, e.build(), seeds[i]);
      std::vector<double> v;
      for (const auto& s : rep.traj.summaries) v.push_back(s.qq / rep.traj.rho);
      out.push_back(std::move(v));
    }
    return out;
  });

  auto rel = [&](double v, std::size_t t) { return std::abs(v - p.se.sigma_sq[t]) / std::max(p.se.sigma_sq[t], 1e-6); };
  for (std::size_t e = 0; e < E; ++e) {
    CsvTable table({"t", "sigma_sq", "median_empirical", "median_relative_deviation", "max_relative_deviation"});
    std::vector<double> max_dev(seeds.size(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> emp;
      std::vector<double> dev;
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        emp.push_back(qq[i][e][t]);
        dev.push_back(rel(qq[i][e][t], t));
        max_dev[i] = std::max(max_dev[i], dev.back());
      }
      table.add_row({std::to_string(t), format_double(p.se.sigma_sq[t]), format_double(median(emp)), format_double(median(dev)),
                     format_double(*std::max_element(dev.begin(), dev.end()))});
    }
    r.artifacts.emplace_back("se_deviation_" + std::to_string(e) + "_" + sweep[e].rule + ".csv", table.str());
    auto& chk = r.report.add_upper("se_deviation_median[" + std::to_string(e) + "]", median(max_dev), c.tolerances.se_deviation);
    chk.n = p.n;
    chk.N = p.N;
    chk.reps = seeds.size();
    chk.seed = c.seed;
  }
  CsvTable pairs({"t", "ensemble_a", "ensemble_b", "median_abs_difference", "normalized"});
  for (std::size_t t = 0; t < T; ++t) {
    const double scale = std::max(p.se.sigma_sq[t], 1e-3);
    for (std::size_t a = 0; a < E; ++a) {
      for (std::size_t b = a + 1; b < E; ++b) {
        std::vector<double> d;
        for (std::size_t i = 0; i < seeds.size(); ++i) d.push_back(std::abs(qq[i][a][t] - qq[i][b][t]));
        const double m = median(d);
        pairs.add_row({std::to_string(t), std::to_string(a), std::to_string(b), format_double(m), format_double(m / scale)});
      }
    }
    std::vector<double> spread;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const auto [lo, hi] = std::minmax_element(qq[i].begin(), qq[i].end(),
                                                [t](const auto& x, const auto& y) { return x[t] < y[t]; });
      spread.push_back((*hi)[t] - (*lo)[t]);
    }
    auto& chk = r.report.add_upper("spread[" + std::to_string(t) + "]", median(spread), c.tolerances.spread * scale);
    chk.n = p.n;
    chk.N = p.N;
    chk.reps = seeds.size();
  }
  r.artifacts.emplace_back("pairwise_mse_difference.csv", pairs.str());
  r.artifacts.emplace_back("se.csv", se_csv(p.se));
  return r;
}

inline ModeResult verify_propositions(const ExperimentConfig& c, const RunContext&) {
  ModeResult r;
  const auto ens = c.ensemble.build();
  const std::size_t n = c.n();
  const std::size_t N = c.N;

  r.report.merge(projection_decay(1.0, 3, {100, 400, 1600}, 200, c.seed), "projection_decay/");
  const auto dists = referenced_distributions(ens.rule);
  for (std::size_t k = 0; k < dists.size(); ++k) {
    r.report.merge(moment_decay_check(dists[k], ens.alpha, {10, 100, 1000}), "moment_decay[" + std::to_string(k) + "]/");
  }
  r.report.merge(stein_identity_check([](double z) { return std::tanh(z); },
                                      [](double z) {
                                        const double th = std::tanh(z);
                                        return 1.0 - th * th;
                                      },
                                      0.3, 1'000'000, c.seed),
                 "stein/");

  // Diffuse unit vectors for the bilinear form; thresholds follow the replication count.
  RngStream rs(c.seed, streams::kVerification);
  auto unit = [&rs](std::size_t len) {
    Sample v(len);
    double s = 0.0;
    for (double& x : v) {
      x = rs.normal();
      s += x * x;
    }
    for (double& x : v) x /= std::sqrt(s);
    return v;
  };
  const std::size_t reps = 500;
  BilinearOptions bo;
  bo.ks_threshold = 1.95 / std::sqrt(static_cast<double>(reps));
  bo.var_lo = 1.0 - 4.0 * std::sqrt(2.0 / reps);
  bo.var_hi = 1.0 + 4.0 * std::sqrt(2.0 / reps);
  r.report.merge(bilinear_gaussianity(ens, unit(N), unit(n), reps, c.seed, bo), "bilinear/");

  Sample v = sample(dist::Gaussian{}, N, c.seed, streams::kVerification);
  r.report.merge(lindeberg_empirical(ens, v, n, 1, c.seed), "lindeberg/");

  // Conditioning on a short recorded run.
  ExperimentConfig shortc = c;
  shortc.T = std::min(c.T, 3);
  const auto p = prepare(shortc);
  RunOptions opts;
  opts.retain_all = true;
  const auto rep = run_replication(shortc, p, ens, c.seed, opts);
  const auto cons = constraints_from_trajectory(rep.traj, shortc.T);
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Matrix Ac = conditional_resample(cons, ens, replication_seed(c.seed, 1000 + k));
    const auto [rq, rm] = constraint_residuals(Ac, cons);
    worst = std::max({worst, rq, rm});
  }
  auto& cr = r.report.add_upper("conditional_resample/max_residual", worst, 1e-8);
  cr.n = n;
  cr.N = N;
  cr.reps = 5;
  cr.seed = c.seed;
  r.report.merge(perp_moment_check(rep.traj, ens.alpha), "perp_moment/");
  return r;
}

inline ModeResult validate_ensemble(const ExperimentConfig& c, const RunContext&) {
  ModeResult r;
  std::vector<EnsembleConfig> all{c.ensemble};
  all.insert(all.end(), c.sweep.begin(), c.sweep.end());
  for (std::size_t e = 0; e < all.size(); ++e) {
    const auto rep = validate(all[e].build());
    const std::string prefix = e == 0 ? "ensemble/" : "sweep[" + std::to_string(e - 1) + "]/";
    r.report.add_lower(prefix + "alpha", all[e].alpha, std::nextafter(1.0, 2.0)).pass = rep.alpha_ok;
    for (const auto& chk : rep.checks) {
      auto& rec = r.report.add_upper(prefix + chk.label + " " + chk.description, std::abs(chk.variance - 1.0), 1e-9);
      rec.pass = chk.pass;
      r.report.diagnostics[prefix + chk.label + "/mean"] = chk.mean;
      r.report.diagnostics[prefix + chk.label + "/variance"] = chk.variance;
      r.report.diagnostics[prefix + chk.label + "/moment"] = chk.moment;
    }
  }
  if (!r.report.pass()) r.exit_code = kExitSemantic;
  return r;
}

}  // namespace modes

/// Dispatches on mode and writes artifacts, report.json and manifest.json
/// atomically under ctx.out_dir. Returns the process exit code.
inline int run_experiment(const ExperimentConfig& c, const RunContext& ctx) {
  const auto start = std::chrono::steady_clock::now();
  ModeResult result;
  std::optional<int> failed_iteration;
  std::string failure;
  try {
    switch (c.mode) {
      case Mode::RunAmp: result = modes::run_amp(c, ctx); break;
      case Mode::SePredict: result = modes::se_predict(c, ctx); break;
      case Mode::VerifyTheorem1: result = modes::verify_theorem1(c, ctx); break;
      case Mode::VerifyPropositions: result = modes::verify_propositions(c, ctx); break;
      case Mode::UniversalitySweep: result = modes::universality_sweep(c, ctx); break;
      case Mode::ValidateEnsemble: result = modes::validate_ensemble(c, ctx); break;
    }
    if (result.exit_code == kExitOk && !result.report.pass()) result.exit_code = kExitVerificationFailed;
  } catch (const NumericalFailure& e) {
    result = ModeResult{};
    result.exit_code = kExitNumerical;
    failure = e.what();
    if (e.iteration() >= 0) failed_iteration = e.iteration();
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::vector<std::string> files;
  for (const auto& [name, body] : result.artifacts) {
    write_file_atomic(ctx.out_dir / name, body);
    files.push_back(name);
  }
  nlohmann::json report = to_json(result.report);
  report["mode"] = to_string(c.mode);
  report["details"] = result.details;
  if (result.exit_code == kExitNumerical) {
    report["numerical_failure"] = failure;
    report["failed_iteration"] = failed_iteration ? nlohmann::json(*failed_iteration) : nlohmann::json(nullptr);
  }
  write_file_atomic(ctx.out_dir / "report.json", report.dump(2) + "\n");
  files.push_back("report.json");

  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(c)));
  nlohmann::json manifest = {
      {"tool", "amp-evolve"},
      {"version", kVersion},
      {"mode", to_string(c.mode)},
      {"config_hash", hash},
      {"seeds", replication_seeds(c)},
      {"N", c.N},
      {"n", c.n()},
      {"rho_requested", c.rho},
      {"rho_effective", static_cast<double>(c.n()) / static_cast<double>(c.N)},
      {"jobs", ctx.jobs},
      {"wall_time_s", wall},
      {"exit_code", result.exit_code},
      {"artifacts", files},
      {"config", to_json(c)},
  };
  if (failed_iteration) manifest["failed_iteration"] = *failed_iteration;
  write_file_atomic(ctx.out_dir / "manifest.json", manifest.dump(2) + "\n");
  return result.exit_code;
}

}  // namespace amp_evolve
