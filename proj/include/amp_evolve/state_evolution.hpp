#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "amp_evolve/denoisers.hpp"
#include "amp_evolve/distributions.hpp"
#include "amp_evolve/error.hpp"
#include "amp_evolve/quadrature.hpp"

namespace amp_evolve {

struct SeParams {
  double rho = 1.0;
  ScalarDistribution x0_law = dist::Gaussian{};
  ScalarDistribution w_law = dist::PointMass{0.0};
  Denoiser f;
  Denoiser g;
  double sigma0_sq = 0.0;
  QuadratureRule rule = default_rule();
  std::size_t mc_budget = kDefaultMcBudget;
  std::uint64_t mc_seed = 0x5EEDull;

  void validate() const {
    require(rho > 0.0 && rho <= 1.0, ErrorKind::InvalidInput, "SeParams: rho must lie in (0, 1]");
    require(std::isfinite(sigma0_sq) && sigma0_sq >= 0.0, ErrorKind::InvalidInput, "SeParams: sigma0^2 must be finite and >= 0");
    require(static_cast<bool>(f.eval) && static_cast<bool>(g.eval), ErrorKind::InvalidInput, "SeParams: f and g must be set");
  }
};

/// sigma_t^2 and tau_t^2 for t = 0..T.
struct SeTrajectory {
  std::vector<double> sigma_sq;
  std::vector<double> tau_sq;

  int horizon() const noexcept { return static_cast<int>(sigma_sq.size()) - 1; }
};

struct SeStepResult {
  double sigma_sq = 0.0;
  double tau_sq = 0.0;
};

namespace detail {

inline ExpectationOptions expectation_options(const SeParams& p, const Denoiser& d, int t) {
  ExpectationOptions o;
  o.rule = &p.rule;
  o.mc_budget = p.mc_budget;
  o.mc_seed = p.mc_seed;
  if (d.kinks) {
    o.kinks = [&d, t](double aux, std::vector<double>& out) { d.kinks(t, aux, out); };
  }
  return o;
}

inline double checked(double v, const char* what, int t) {
  if (!std::isfinite(v) || v < 0.0) {
    fail(ErrorKind::NumericalFailure, std::string(what) + " non-finite or negative at t = " + std::to_string(t));
  }
  return v;
}

}  // namespace detail

/// tau_t^2 = E[g_t^2(sigma_t Z, W)].
inline double se_tau_sq(const SeParams& p, int t, double sigma_sq) {
  const auto opts = detail::expectation_options(p, p.g, t);
  const double v = expect_gauss_aux(
      [&](double u, double w) {
        const double y = p.g.eval(t, u, w);
        return y * y;
      },
      std::sqrt(sigma_sq), p.w_law, opts);
  return detail::checked(v, "tau^2", t);
}

/// sigma_t^2 = E[f_t^2(tau_{t-1} Z, X0)] / rho, t >= 1.
inline double se_sigma_sq(const SeParams& p, int t, double tau_prev_sq) {
  const auto opts = detail::expectation_options(p, p.f, t);
  const double v = expect_gauss_aux(
      [&](double h, double x) {
        const double y = p.f.eval(t, h, x);
        return y * y;
      },
      std::sqrt(tau_prev_sq), p.x0_law, opts);
  return detail::checked(v / p.rho, "sigma^2", t);
}

/// For t = 0, `input` is sigma_0^2; for t >= 1 it is tau_{t-1}^2.
inline SeStepResult se_step(const SeParams& p, int t, double input) {
  p.validate();
  require(input >= 0.0 && std::isfinite(input), ErrorKind::InvalidInput, "se_step: input must be finite and >= 0");
  SeStepResult r;
  r.sigma_sq = t == 0 ? input : se_sigma_sq(p, t, input);
  r.tau_sq = se_tau_sq(p, t, r.sigma_sq);
  return r;
}

inline SeTrajectory se_run(const SeParams& p, int T) {
  require(T >= 0, ErrorKind::InvalidInput, "se_run: T must be >= 0");
  SeTrajectory out;
  auto r = se_step(p, 0, p.sigma0_sq);
  out.sigma_sq.push_back(r.sigma_sq);
  out.tau_sq.push_back(r.tau_sq);
  for (int t = 1; t <= T; ++t) {
    r = se_step(p, t, r.tau_sq);
    out.sigma_sq.push_back(r.sigma_sq);
    out.tau_sq.push_back(r.tau_sq);
  }
  return out;
}

struct FixedPointResult {
  double sigma_sq = 0.0;
  double tau_sq = 0.0;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
};

/// Iterates the recursion with time-homogeneous f, g (evaluated at t = 1).
/// `iterations` counts updates until consecutive iterates agree within tol.
inline FixedPointResult se_fixed_point(const SeParams& p, double tol, int max_iter) {
  require(tol > 0.0, ErrorKind::InvalidInput, "se_fixed_point: tol must be > 0");
  FixedPointResult out;
  auto prev = se_step(p, 0, p.sigma0_sq);
  constexpr double kBlowUp = 1e100;
  bool growing = false;
  for (int k = 1; k <= max_iter; ++k) {
    SeStepResult cur;
    try {
      cur = se_step(p, 1, prev.tau_sq);
    } catch (const Error&) {
      out.diverged = true;
      out.iterations = k;
      return out;
    }
    const double delta = std::abs(cur.sigma_sq - prev.sigma_sq) + std::abs(cur.tau_sq - prev.tau_sq);
    out.sigma_sq = cur.sigma_sq;
    out.tau_sq = cur.tau_sq;
    if (!(cur.tau_sq < kBlowUp) || !(cur.sigma_sq < kBlowUp)) {
      out.diverged = true;
      out.iterations = k;
      return out;
    }
    if (delta < tol) {
      out.converged = true;
      out.iterations = k - 1;
      return out;
    }
    growing = cur.tau_sq > prev.tau_sq;
    prev = cur;
  }
  out.iterations = max_iter;
  out.diverged = growing;
  return out;
}

/// E[phi(sigma_t Z, W)].
inline double predict_observable_b(const SeParams& p, const SeTrajectory& se, int t, const Integrand& phi,
                                   const KinkLocator& kinks = nullptr) {
  require(t >= 0 && t <= se.horizon(), ErrorKind::InvalidInput, "predict_observable_b: t beyond SE horizon");
  ExpectationOptions o;
  o.rule = &p.rule;
  o.mc_budget = p.mc_budget;
  o.mc_seed = p.mc_seed;
  o.kinks = kinks;
  return expect_gauss_aux(phi, std::sqrt(se.sigma_sq[static_cast<std::size_t>(t)]), p.w_law, o);
}

/// E[phi(tau_t Z, X0)], the law of (h^{t+1}, x0).
inline double predict_observable_h(const SeParams& p, const SeTrajectory& se, int t, const Integrand& phi,
                                   const KinkLocator& kinks = nullptr) {
  require(t >= 0 && t <= se.horizon(), ErrorKind::InvalidInput, "predict_observable_h: t beyond SE horizon");
  ExpectationOptions o;
  o.rule = &p.rule;
  o.mc_budget = p.mc_budget;
  o.mc_seed = p.mc_seed;
  o.kinks = kinks;
  return expect_gauss_aux(phi, std::sqrt(se.tau_sq[static_cast<std::size_t>(t)]), p.x0_law, o);
}

/// SE for the compressed-sensing adapter with thresholds theta_t = kappa tau_t,
/// built forward in time (f_t only needs theta_{t-1}).
struct CoupledCsSe {
  SeTrajectory se;
  Schedule theta = Schedule::fixed(1.0);  // theta_0 .. theta_T
  SeParams params;                        // f carries the full schedule
};

inline constexpr double kDefaultThresholdKappa = 1.1402;

inline CoupledCsSe se_coupled_cs(SeParams base, double kappa, int T,
                                 double theta_init = std::numeric_limits<double>::infinity()) {
  require(kappa > 0.0, ErrorKind::InvalidInput, "se_coupled_cs: kappa must be > 0");
  require(T >= 0, ErrorKind::InvalidInput, "se_coupled_cs: T must be >= 0");
  base.g = denoisers::residual();
  base.f = denoisers::cs_soft_threshold_f(Schedule::fixed(1.0), theta_init);
  CoupledCsSe out;
  auto r = se_step(base, 0, base.sigma0_sq);
  out.se.sigma_sq.push_back(r.sigma_sq);
  out.se.tau_sq.push_back(r.tau_sq);
  std::vector<double> theta{kappa * std::sqrt(r.tau_sq)};
  for (int t = 1; t <= T; ++t) {
    base.f = denoisers::cs_soft_threshold_f(Schedule::explicit_values(theta), theta_init);
    r = se_step(base, t, r.tau_sq);
    out.se.sigma_sq.push_back(r.sigma_sq);
    out.se.tau_sq.push_back(r.tau_sq);
    theta.push_back(kappa * std::sqrt(r.tau_sq));
  }
  out.theta = Schedule::explicit_values(theta);
  base.f = denoisers::cs_soft_threshold_f(out.theta, theta_init);
  out.params = std::move(base);
  return out;
}

}  // namespace amp_evolve
