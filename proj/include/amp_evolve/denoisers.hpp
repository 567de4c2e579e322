#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "amp_evolve/distributions.hpp"
#include "amp_evolve/empirical_stats.hpp"
#include "amp_evolve/error.hpp"
#include "amp_evolve/rng.hpp"

namespace amp_evolve {

/// Growth certificate |f(u, s)| <= c1 exp(c2 (|u|^lambda + |s|^lambda)).
struct ControlledBound {
  double c1 = 1.0;
  double c2 = 1.0;
  double lambda = 1.0;

  void validate() const {
    require(c1 > 0.0 && c2 > 0.0 && std::isfinite(c1) && std::isfinite(c2), ErrorKind::InvalidInput,
            "ControlledBound: c1, c2 must be positive");
    require(lambda >= 1.0 && lambda < 2.0, ErrorKind::InvalidInput, "ControlledBound: lambda must lie in [1, 2)");
  }

  /// log of the envelope at (u, s).
  double log_envelope(double u, double s) const {
    return std::log(c1) + c2 * (std::pow(std::abs(u), lambda) + std::pow(std::abs(s), lambda));
  }
};

/// Per-iteration parameter sequence (thresholds, variances).
class Schedule {
 public:
  enum class Kind { Fixed, Explicit, Geometric };

  static Schedule fixed(double value) { return Schedule(Kind::Fixed, {value}, value, 1.0); }
  static Schedule explicit_values(std::vector<double> values) {
    require(!values.empty(), ErrorKind::InvalidInput, "Schedule: explicit schedule must be nonempty");
    return Schedule(Kind::Explicit, std::move(values), 0.0, 1.0);
  }
  static Schedule geometric(double start, double ratio) { return Schedule(Kind::Geometric, {}, start, ratio); }

  double at(int t) const {
    require(t >= 0, ErrorKind::InvalidInput, "Schedule: negative iteration index");
    switch (kind_) {
      case Kind::Fixed: return start_;
      case Kind::Geometric: return start_ * std::pow(ratio_, t);
      case Kind::Explicit:
        if (static_cast<std::size_t>(t) >= values_.size()) {
          fail(ErrorKind::InvalidInput, "Schedule: index " + std::to_string(t) + " beyond explicit schedule of length " +
                                            std::to_string(values_.size()));
        }
        return values_[static_cast<std::size_t>(t)];
    }
    return start_;
  }

  Kind kind() const noexcept { return kind_; }
  const std::vector<double>& values() const noexcept { return values_; }
  double start() const noexcept { return start_; }
  double ratio() const noexcept { return ratio_; }

  /// Number of defined entries; unbounded schedules report max().
  std::size_t length() const noexcept {
    return kind_ == Kind::Explicit ? values_.size() : std::numeric_limits<std::size_t>::max();
  }

 private:
  Schedule(Kind kind, std::vector<double> values, double start, double ratio)
      : kind_(kind), values_(std::move(values)), start_(start), ratio_(ratio) {}

  Kind kind_;
  std::vector<double> values_;
  double start_;
  double ratio_;
};

/// Time-indexed entrywise function f_t(u, s) with its first-argument derivative.
struct Denoiser {
  using Fn = std::function<double(int t, double u, double s)>;
  using KinkFn = std::function<void(int t, double s, std::vector<double>& kinks)>;

  std::string name;
  Fn eval;
  Fn deriv;
  ControlledBound bound;
  // First-argument locations where deriv is only an a.e. derivative.
  KinkFn kinks;
  std::string kink_description = "none";

  std::vector<double> kinks_at(int t, double s) const {
    std::vector<double> out;
    if (kinks) kinks(t, s, out);
    return out;
  }
};

namespace detail {

inline void check_lengths(SampleView u, SampleView s, const char* who) {
  if (u.size() != s.size()) {
    fail(ErrorKind::InvalidInput,
         std::string(who) + ": length mismatch " + std::to_string(u.size()) + " vs " + std::to_string(s.size()));
  }
}

template <class F>
Sample apply_entrywise(F&& fn, SampleView u, SampleView s, const char* who) {
  check_lengths(u, s, who);
  Sample out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    out[i] = fn(u[i], s[i]);
    if (!std::isfinite(out[i])) {
      fail(ErrorKind::NumericalFailure, std::string(who) + ": non-finite output at index " + std::to_string(i));
    }
  }
  return out;
}

}  // namespace detail

inline Sample eval_vec(const Denoiser& d, int t, SampleView u, SampleView s) {
  return detail::apply_entrywise([&](double a, double b) { return d.eval(t, a, b); }, u, s, "eval_vec");
}

inline Sample deriv_vec(const Denoiser& d, int t, SampleView u, SampleView s) {
  return detail::apply_entrywise([&](double a, double b) { return d.deriv(t, a, b); }, u, s, "deriv_vec");
}

/// sign(x) max(|x| - theta, 0); theta = +inf gives 0.
inline double soft_threshold_value(double x, double theta) {
  if (x > theta) return x - theta;
  if (x < -theta) return x + theta;
  return 0.0;
}

/// a.e. derivative; 0 at the kinks |x| = theta.
inline double soft_threshold_slope(double x, double theta) { return std::abs(x) > theta ? 1.0 : 0.0; }

namespace denoisers {

inline Denoiser identity() {
  return {"identity", [](int, double u, double) { return u; }, [](int, double, double) { return 1.0; },
          ControlledBound{1.0, 1.0, 1.0}, nullptr, "none"};
}

/// g(b, w) = b - w.
inline Denoiser residual() {
  return {"residual", [](int, double u, double s) { return u - s; }, [](int, double, double) { return 1.0; },
          ControlledBound{1.0, 1.0, 1.0}, nullptr, "none"};
}

/// g(b, w) = b + w.
inline Denoiser add() {
  return {"add", [](int, double u, double s) { return u + s; }, [](int, double, double) { return 1.0; },
          ControlledBound{1.0, 1.0, 1.0}, nullptr, "none"};
}

inline Denoiser linear(double a) {
  return {"linear", [a](int, double u, double) { return a * u; }, [a](int, double, double) { return a; },
          ControlledBound{std::max(std::abs(a), 1.0), 1.0, 1.0}, nullptr, "none"};
}

/// f(h, x0) = x0.
inline Denoiser constant_signal() {
  return {"constant_signal", [](int, double, double s) { return s; }, [](int, double, double) { return 0.0; },
          ControlledBound{1.0, 1.0, 1.0}, nullptr, "none"};
}

/// eta_{theta_t}(u); the side argument is ignored.
inline Denoiser soft_threshold(Schedule theta) {
  Denoiser d;
  d.name = "soft_threshold";
  d.eval = [theta](int t, double u, double) { return soft_threshold_value(u, theta.at(t)); };
  d.deriv = [theta](int t, double u, double) { return soft_threshold_slope(u, theta.at(t)); };
  d.bound = ControlledBound{1.0, 1.0, 1.0};
  d.kinks = [theta](int t, double, std::vector<double>& k) {
    const double th = theta.at(t);
    if (std::isfinite(th)) {
      k.push_back(-th);
      k.push_back(th);
    }
  };
  d.kink_description = "|u| = theta_t";
  return d;
}

/// E[X | X + tau_t Z = u] for X ~ eps N(0, var) + (1 - eps) delta_0.
inline Denoiser bg_posterior_mean(double eps, double var, Schedule tau_sq) {
  require(eps > 0.0 && eps <= 1.0 && var > 0.0, ErrorKind::InvalidInput, "bg_posterior_mean: need eps in (0,1], var > 0");
  // Returns (pi, gain, curvature) where pi is the posterior probability of the
  // Gaussian component and gain = var / (var + tau^2).
  auto parts = [eps, var, tau_sq](int t, double u) {
    const double tau2 = tau_sq.at(t);
    require(tau2 > 0.0, ErrorKind::InvalidInput, "bg_posterior_mean: tau^2 must be > 0");
    const double curvature = 1.0 / tau2 - 1.0 / (var + tau2);
    double pi = 1.0;
    if (eps < 1.0) {
      const double logit = std::log(eps / (1.0 - eps)) + 0.5 * std::log(tau2 / (var + tau2)) + 0.5 * u * u * curvature;
      pi = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit)) : std::exp(logit) / (1.0 + std::exp(logit));
    }
    return std::array<double, 3>{pi, var / (var + tau2), curvature};
  };
  Denoiser d;
  d.name = "bg_posterior_mean";
  d.eval = [parts](int t, double u, double) {
    const auto p = parts(t, u);
    return p[0] * p[1] * u;
  };
  d.deriv = [parts, eps](int t, double u, double) {
    const auto p = parts(t, u);
    const double dpi = eps < 1.0 ? p[0] * (1.0 - p[0]) * u * p[2] : 0.0;
    return p[1] * (p[0] + u * dpi);
  };
  d.bound = ControlledBound{1.0, 1.0, 1.0};
  // Smooth, but the posterior weight switches over a width ~ tau^2 / u around
  // |u| = u*, where it equals 1/2; quadrature splits there.
  if (eps < 1.0) {
    d.kinks = [eps, var, tau_sq](int t, double, std::vector<double>& k) {
      const double tau2 = tau_sq.at(t);
      const double curvature = 1.0 / tau2 - 1.0 / (var + tau2);
      const double u2 = 2.0 * (-std::log(eps / (1.0 - eps)) - 0.5 * std::log(tau2 / (var + tau2))) / curvature;
      if (u2 > 0.0) {
        k.push_back(-std::sqrt(u2));
        k.push_back(std::sqrt(u2));
      }
    };
    d.kink_description = "none (quadrature splits at posterior weight 1/2)";
  } else {
    d.kinks = nullptr;
    d.kink_description = "none";
  }
  return d;
}

/// f_t(h, x0) = eta_{theta_{t-1}}(x0 - h) - x0 for t >= 1, and
/// eta_{theta_init}(x0 - h) - x0 at t = 0 (theta_init = inf gives -x0).
inline Denoiser cs_soft_threshold_f(Schedule theta, double theta_init = std::numeric_limits<double>::infinity()) {
  auto threshold = [theta, theta_init](int t) { return t == 0 ? theta_init : theta.at(t - 1); };
  Denoiser d;
  d.name = "cs_soft_threshold_f";
  d.eval = [threshold](int t, double h, double x0) { return soft_threshold_value(x0 - h, threshold(t)) - x0; };
  d.deriv = [threshold](int t, double h, double x0) { return -soft_threshold_slope(x0 - h, threshold(t)); };
  // |eta(x0 - h) - x0| <= |h| + 2 |x0|
  d.bound = ControlledBound{2.0, 1.0, 1.0};
  d.kinks = [threshold](int t, double x0, std::vector<double>& k) {
    const double th = threshold(t);
    if (std::isfinite(th)) {
      k.push_back(x0 - th);
      k.push_back(x0 + th);
    }
  };
  d.kink_description = "|x0 - h| = theta_{t-1}";
  return d;
}

}  // namespace denoisers

/// Optional parameters consumed by `builtin`.
struct BuiltinParams {
  double a = 1.0;
  double eps = 1.0;
  double var = 1.0;
  Schedule schedule = Schedule::fixed(1.0);
  double theta_init = std::numeric_limits<double>::infinity();
};

inline Denoiser builtin(std::string_view name, const BuiltinParams& p = {}) {
  if (name == "identity") return denoisers::identity();
  if (name == "residual") return denoisers::residual();
  if (name == "add") return denoisers::add();
  if (name == "linear") return denoisers::linear(p.a);
  if (name == "constant_signal") return denoisers::constant_signal();
  if (name == "soft_threshold") return denoisers::soft_threshold(p.schedule);
  if (name == "bg_posterior_mean") return denoisers::bg_posterior_mean(p.eps, p.var, p.schedule);
  if (name == "cs_soft_threshold_f") return denoisers::cs_soft_threshold_f(p.schedule, p.theta_init);
  fail(ErrorKind::Unsupported, "unknown denoiser '" + std::string(name) + "'");
}

/// c * d, with derivative and certificate scaled accordingly.
inline Denoiser scaled(const Denoiser& d, double c) {
  Denoiser out = d;
  out.name = d.name + "*" + std::to_string(c);
  out.eval = [f = d.eval, c](int t, double u, double s) { return c * f(t, u, s); };
  out.deriv = [f = d.deriv, c](int t, double u, double s) { return c * f(t, u, s); };
  out.bound.c1 = d.bound.c1 * std::max(std::abs(c), 1.0);
  return out;
}

struct BoundCheckReport {
  bool pass = true;
  double worst_margin = std::numeric_limits<double>::infinity();  // log-envelope minus log|f|
  double worst_u = 0.0;
  double worst_s = 0.0;
  std::size_t trials = 0;
};

/// Samples (u, s) pairs and tests |f_t(u, s)| against the declared envelope.
inline BoundCheckReport check_controlled_bound(const Denoiser& d, const ScalarDistribution& u_law,
                                               const ScalarDistribution& s_law, std::size_t trials, std::uint64_t seed,
                                               int t = 0) {
  require(trials >= 1, ErrorKind::InvalidInput, "check_controlled_bound: trials must be >= 1");
  d.bound.validate();
  const Sample us = sample(u_law, trials, seed, streams::kVerification);
  const Sample ss = sample(s_law, trials, seed ^ 0xC0FFEEull, streams::kVerification);
  BoundCheckReport rep;
  rep.trials = trials;
  for (std::size_t k = 0; k < trials; ++k) {
    const double value = std::abs(d.eval(t, us[k], ss[k]));
    const double margin = value == 0.0 ? std::numeric_limits<double>::infinity()
                                       : d.bound.log_envelope(us[k], ss[k]) - std::log(value);
    const bool ok = std::isfinite(value) && margin >= 0.0;
    if (!ok) rep.pass = false;
    if (!std::isfinite(value) || margin < rep.worst_margin) {
      rep.worst_margin = std::isfinite(value) ? margin : -std::numeric_limits<double>::infinity();
      rep.worst_u = us[k];
      rep.worst_s = ss[k];
    }
  }
  return rep;
}

}  // namespace amp_evolve
