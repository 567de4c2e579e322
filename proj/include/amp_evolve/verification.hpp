#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "amp_evolve/amp.hpp"
#include "amp_evolve/denoisers.hpp"
#include "amp_evolve/distributions.hpp"
#include "amp_evolve/empirical_stats.hpp"
#include "amp_evolve/ensembles.hpp"
#include "amp_evolve/error.hpp"
#include "amp_evolve/quadrature.hpp"
#include "amp_evolve/rng.hpp"
#include "amp_evolve/state_evolution.hpp"

namespace amp_evolve {

struct CheckRecord {
  std::string name;
  double statistic = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::size_t n = 0;
  std::size_t N = 0;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
};

struct VerificationReport {
  std::vector<CheckRecord> checks;
  std::map<std::string, double> diagnostics;

  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckRecord& c) { return c.pass; });
  }
  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](const CheckRecord& c) { return !c.pass; }));
  }
  const CheckRecord& get(const std::string& name) const {
    for (const auto& c : checks) {
      if (c.name == name) return c;
    }
    fail(ErrorKind::InvalidInput, "report has no check named " + name);
  }
  // statistic <= threshold
  CheckRecord& add_upper(std::string name, double statistic, double threshold) {
    checks.push_back({std::move(name), statistic, threshold, std::isfinite(statistic) && statistic <= threshold});
    return checks.back();
  }
  // statistic >= threshold
  CheckRecord& add_lower(std::string name, double statistic, double threshold) {
    checks.push_back({std::move(name), statistic, threshold, std::isfinite(statistic) && statistic >= threshold});
    return checks.back();
  }
  void merge(const VerificationReport& other, const std::string& prefix = "") {
    for (auto c : other.checks) {
      c.name = prefix + c.name;
      checks.push_back(std::move(c));
    }
    for (const auto& [k, v] : other.diagnostics) diagnostics[prefix + k] = v;
  }
};

namespace detail {

inline Eigen::MatrixXd columns(const std::vector<Sample>& basis, std::size_t len) {
  Eigen::MatrixXd B(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(basis.size()));
  for (std::size_t k = 0; k < basis.size(); ++k) {
    require(basis[k].size() == len, ErrorKind::InvalidInput, "basis vector length mismatch");
    B.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(basis[k].data(), static_cast<Eigen::Index>(len));
  }
  return B;
}

// Condition number of B^T B from the singular values of B.
inline double gram_condition(const Eigen::MatrixXd& B) {
  if (B.cols() == 0) return 1.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(B);
  const auto& s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return (smax / smin) * (smax / smin);
}

inline Sample to_sample(const Eigen::VectorXd& v) { return Sample(v.data(), v.data() + v.size()); }

}  // namespace detail

/// Least-squares split v = parallel + perp against span(basis).
struct ProjectionDecomposition {
  std::vector<double> coefficients;
  Sample parallel;
  Sample perp;
  double gram_condition = 1.0;
  double perp_second_moment = 0.0;  // <perp, perp>
  bool rank_deficient = false;
};

inline constexpr double kMaxGramCondition = 1e10;

struct DecomposeOptions {
  double max_condition = kMaxGramCondition;
  bool strict = false;  // throw RankDeficient instead of falling back to the pseudo-inverse
};

inline ProjectionDecomposition decompose(SampleView v, const std::vector<Sample>& basis, const DecomposeOptions& opts = {}) {
  require(!v.empty(), ErrorKind::InvalidInput, "decompose: empty vector");
  ProjectionDecomposition out;
  if (basis.empty()) {
    out.parallel.assign(v.size(), 0.0);
    out.perp.assign(v.begin(), v.end());
    out.perp_second_moment = inner(out.perp, out.perp);
    return out;
  }
  const Eigen::MatrixXd B = detail::columns(basis, v.size());
  const Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
  out.gram_condition = detail::gram_condition(B);
  out.rank_deficient = !(out.gram_condition <= opts.max_condition);
  if (out.rank_deficient && opts.strict) {
    fail(ErrorKind::RankDeficient, "decompose: basis Gram condition " + std::to_string(out.gram_condition));
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(B);
  if (out.rank_deficient) cod.setThreshold(std::sqrt(1.0 / opts.max_condition));
  Eigen::VectorXd c = cod.solve(x);
  Eigen::VectorXd r = x - B * c;
  // One step of iterative refinement tightens orthogonality.
  const Eigen::VectorXd dc = cod.solve(r);
  c += dc;
  r = x - B * c;
  out.coefficients.assign(c.data(), c.data() + c.size());
  out.parallel = detail::to_sample(x - r);
  out.perp = detail::to_sample(r);
  out.perp_second_moment = inner(out.perp, out.perp);
  return out;
}

/// |<b^{t1},b^{t2}> - <q^{t1},q^{t2}>/rho| and |<h^{t1+1},h^{t2+1}> - <m^{t1},m^{t2}>|
/// against C / sqrt(n) for every pair t1 <= t2.
inline VerificationReport check_inner_identities(const AmpTrajectory& traj, double rho, double C = 8.0) {
  const auto T = traj.q_gram.rows();
  require(T > 0 && traj.b_gram.rows() == T && traj.h_gram.rows() == T && traj.m_gram.rows() == T,
          ErrorKind::InvalidInput, "check_inner_identities: trajectory has no Gram tables");
  require(rho > 0.0 && traj.n > 0, ErrorKind::InvalidInput, "check_inner_identities: rho and n must be positive");
  const double thr = C / std::sqrt(static_cast<double>(traj.n));
  VerificationReport rep;
  for (Eigen::Index i = 0; i < T; ++i) {
    for (Eigen::Index j = i; j < T; ++j) {
      const std::string tag = "(" + std::to_string(i) + "," + std::to_string(j) + ")";
      auto& b = rep.add_upper("b" + tag, std::abs(traj.b_gram(i, j) - traj.q_gram(i, j) / rho), thr);
      b.n = traj.n;
      b.N = traj.N;
      auto& h = rep.add_upper("h" + tag, std::abs(traj.h_gram(i, j) - traj.m_gram(i, j)), thr);
      h.n = traj.n;
      h.N = traj.N;
    }
  }
  return rep;
}

enum class ObservableSide { B, H };

/// phi(u_{t in times}, s) with s = w_i (b-side) or x0_i (h-side). On the
/// h-side, time t refers to h^{t+1}.
struct Observable {
  std::string name = "phi";
  ObservableSide side = ObservableSide::B;
  std::vector<int> times;
  std::function<double(std::span<const double> u, double s)> phi;
  ControlledBound bound;
  KinkLocator kinks;  // single-time quadrature only
};

struct ObservableOptions {
  double z = 3.0;           // threshold in standard errors
  double pilot_se = 0.0;    // when > 0, replaces the predicted sampling SE
  std::size_t mc_samples = 200'000;
  std::uint64_t mc_seed = 0x0B5Eull;
};

namespace detail {

inline double log_envelope(const ControlledBound& b, std::span<const double> u, double s) {
  double acc = std::pow(std::abs(s), b.lambda);
  for (double x : u) acc += std::pow(std::abs(x), b.lambda);
  return std::log(b.c1) + b.c2 * acc;
}

}  // namespace detail

/// (1/len) sum_i phi(u_i, s_i) over the retained iterates; checks the
/// controlled bound at every point.
inline double empirical_observable(const AmpProblem& problem, const AmpTrajectory& traj, const Observable& obs) {
  require(static_cast<bool>(obs.phi), ErrorKind::InvalidInput, "observable: phi not set");
  require(!obs.times.empty(), ErrorKind::InvalidInput, "observable: no times requested");
  obs.bound.validate();
  const bool bside = obs.side == ObservableSide::B;
  const SampleView side = bside ? SampleView(problem.w) : SampleView(problem.x0);
  const std::size_t len = side.size();
  const std::size_t k = obs.times.size();
  for (int t : obs.times) {
    require(traj.has_vectors(t), ErrorKind::InvalidInput, "observable: iteration " + std::to_string(t) + " not retained");
  }

  std::vector<double> u(k);
  CompensatedSum acc;
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t a = 0; a < k; ++a) {
      const auto& it = traj.at(obs.times[a]);
      u[a] = bside ? it.b[i] : it.h_next[i];
    }
    const double v = obs.phi(u, side[i]);
    if (!std::isfinite(v) || std::log(std::abs(v)) > detail::log_envelope(obs.bound, u, side[i]) + 1e-12) {
      fail(ErrorKind::BoundViolation, "observable " + obs.name + " exceeds its controlled bound at index " + std::to_string(i));
    }
    acc.add(v);
  }
  return acc.value() / static_cast<double>(len);
}

/// Compares (1/len) sum_i phi(u_i, s_i) with its Gaussian-limit prediction.
/// Single time: quadrature on the SE variance. Several times: Monte Carlo
/// with covariance <q^{t1},q^{t2}>/rho (b-side) or <m^{t1},m^{t2}> (h-side)
/// taken from the run's Gram tables.
inline VerificationReport check_observable(const AmpProblem& problem, const AmpTrajectory& traj, const SeParams& params,
                                           const SeTrajectory& se, const Observable& obs,
                                           const ObservableOptions& opts = {}) {
  const double empirical = empirical_observable(problem, traj, obs);
  const bool bside = obs.side == ObservableSide::B;
  const std::size_t len = bside ? problem.n() : problem.N();
  const std::size_t k = obs.times.size();

  double predicted = 0.0;
  double predicted_var = 0.0;
  double mc_se = 0.0;
  const ScalarDistribution& aux = bside ? params.w_law : params.x0_law;
  if (k == 1) {
    const int t = obs.times[0];
    auto phi1 = [&](double x, double s) {
      const double arr[1] = {x};
      return obs.phi(arr, s);
    };
    auto phi2 = [&](double x, double s) {
      const double v = phi1(x, s);
      return v * v;
    };
    if (bside) {
      predicted = predict_observable_b(params, se, t, phi1, obs.kinks);
      predicted_var = predict_observable_b(params, se, t, phi2, obs.kinks) - predicted * predicted;
    } else {
      predicted = predict_observable_h(params, se, t, phi1, obs.kinks);
      predicted_var = predict_observable_h(params, se, t, phi2, obs.kinks) - predicted * predicted;
    }
  } else {
    Eigen::MatrixXd cov(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        const auto ta = obs.times[a];
        const auto tb = obs.times[b];
        cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            bside ? traj.q_gram(ta, tb) / traj.rho : traj.m_gram(ta, tb);
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::MatrixXd root =
        eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    RngStream rs(opts.mc_seed, streams::kVerification);
    CompensatedSum s1;
    CompensatedSum s2;
    Eigen::VectorXd z(static_cast<Eigen::Index>(k));
    for (std::size_t r = 0; r < opts.mc_samples; ++r) {
      for (auto& zi : z) zi = rs.normal();
      const Eigen::VectorXd g = root * z;
      const double s = draw(aux, rs.uniform(), rs.uniform());
      const double v = obs.phi(std::span<const double>(g.data(), k), s);
      s1.add(v);
      s2.add(v * v);
    }
    const double m = static_cast<double>(opts.mc_samples);
    predicted = s1.value() / m;
    predicted_var = std::max(0.0, s2.value() / m - predicted * predicted);
    mc_se = std::sqrt(predicted_var / m);
  }

  const double sampling_se = opts.pilot_se > 0.0 ? opts.pilot_se : std::sqrt(std::max(predicted_var, 0.0) / static_cast<double>(len));
  const double se_total = std::hypot(sampling_se, mc_se);
  VerificationReport rep;
  auto& c = rep.add_upper(obs.name, std::abs(empirical - predicted), opts.z * se_total);
  c.n = problem.n();
  c.N = problem.N();
  c.reps = k == 1 ? 0 : opts.mc_samples;
  c.seed = opts.mc_seed;
  rep.diagnostics["empirical"] = empirical;
  rep.diagnostics["predicted"] = predicted;
  rep.diagnostics["standard_error"] = se_total;
  // Multi-time predictions use the empirical Gram as the joint covariance, not
  // independent components; the flag keeps that visible in reports.
  if (k > 1) rep.diagnostics["covariance_from_empirical_gram"] = 1.0;
  return rep;
}

struct GaussianityOptions {
  double ks_threshold = 0.0;  // 0 selects 1.95 / sqrt(len)
  double z_max = 4.0;
};

/// KS distance of v / sqrt(predicted_var) to N(0,1), plus skewness and excess
/// kurtosis z-scores.
inline VerificationReport gaussianity_report(SampleView v, double predicted_var, const GaussianityOptions& opts = {}) {
  detail::check_sample(v, "gaussianity_report");
  const double len = static_cast<double>(v.size());
  const double ks_thr = opts.ks_threshold > 0.0 ? opts.ks_threshold : 1.95 / std::sqrt(len);
  VerificationReport rep;
  const bool all_zero = std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
  if (predicted_var <= 0.0) {
    require(all_zero, ErrorKind::InvalidInput, "gaussianity_report: predicted_var must be > 0 unless v is zero");
    rep.add_upper("ks", 0.0, ks_thr).n = v.size();
    rep.add_upper("skewness_z", 0.0, opts.z_max).n = v.size();
    rep.add_upper("kurtosis_z", 0.0, opts.z_max).n = v.size();
    return rep;
  }
  const double scale = 1.0 / std::sqrt(predicted_var);
  Sample z(v.size());
  std::transform(v.begin(), v.end(), z.begin(), [scale](double x) { return x * scale; });
  rep.add_upper("ks", ks_distance(z, standard_normal_cdf), ks_thr).n = v.size();

  const double m = emp_mean(z);
  const double var = emp_variance(z);
  double skew = 0.0;
  double kurt = 0.0;
  if (var > 0.0) {
    CompensatedSum s3;
    CompensatedSum s4;
    for (double x : z) {
      const double d = x - m;
      s3.add(d * d * d);
      s4.add(d * d * d * d);
    }
    skew = s3.value() / len / std::pow(var, 1.5);
    kurt = s4.value() / len / (var * var) - 3.0;
  } else {
    kurt = -3.0;
  }
  rep.add_upper("skewness_z", std::abs(skew) / std::sqrt(6.0 / len), opts.z_max).n = v.size();
  rep.add_upper("kurtosis_z", std::abs(kurt) / std::sqrt(24.0 / len), opts.z_max).n = v.size();
  rep.diagnostics["mean"] = m;
  rep.diagnostics["variance"] = var;
  rep.diagnostics["skewness"] = skew;
  rep.diagnostics["excess_kurtosis"] = kurt;
  return rep;
}

/// Per-replication matrix seed.
inline std::uint64_t replication_seed(std::uint64_t base, std::uint64_t rep) {
  return splitmix64(base ^ splitmix64(rep + 0x51ED2700ull));
}

/// Pools (A v)_i over `reps` fresh n x N matrices and tests the pooled law
/// against N(0, <v^2>/rho).
inline VerificationReport lindeberg_empirical(const EnsembleSpec& spec, SampleView v, std::size_t n, std::size_t reps,
                                              std::uint64_t seed, const GaussianityOptions& opts = {}) {
  require_valid(spec);
  detail::check_sample(v, "lindeberg_empirical");
  require(n >= 1 && n <= v.size() && reps >= 1, ErrorKind::InvalidInput, "lindeberg_empirical: need 1 <= n <= N, reps >= 1");
  const std::size_t N = v.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  Sample pooled;
  pooled.reserve(n * reps);
  for (std::size_t r = 0; r < reps; ++r) {
    const EntrySampler sampler(spec, replication_seed(seed, r));
    for (std::size_t i = 0; i < n; ++i) {
      CompensatedSum acc;
      for (std::size_t j = 0; j < N; ++j) {
        if (v[j] != 0.0) acc.add(sampler.standardized(i, j) * v[j]);
      }
      pooled.push_back(scale * acc.value());
    }
  }
  const double rho = static_cast<double>(n) / static_cast<double>(N);
  auto rep = gaussianity_report(pooled, emp_second_moment(v) / rho, opts);
  for (auto& c : rep.checks) {
    c.n = n;
    c.N = N;
    c.reps = reps;
    c.seed = seed;
  }
  // Lindeberg-type moment of the rescaled vector; grows with N for a spike.
  Sample scaled(v.begin(), v.end());
  for (double& x : scaled) x *= std::sqrt(static_cast<double>(N));
  rep.diagnostics["power_mean_ratio"] = power_mean(scaled, 2.0 + 2.0 * spec.alpha) / static_cast<double>(N);
  return rep;
}

struct BilinearOptions {
  double var_lo = 0.9;
  double var_hi = 1.1;
  double ks_threshold = 0.04;
  double mean_z = 4.0;
};

/// s_k = sqrt(n) v^T A_k u over fresh matrices A_k; tests mean 0, variance 1, KS.
inline VerificationReport bilinear_gaussianity(const EnsembleSpec& spec, SampleView u, SampleView v, std::size_t reps,
                                               std::uint64_t seed, const BilinearOptions& opts = {}) {
  require_valid(spec);
  require(!u.empty() && !v.empty() && reps >= 2, ErrorKind::InvalidInput, "bilinear_gaussianity: empty input or reps < 2");
  auto norm = [](SampleView x) {
    CompensatedSum s;
    for (double e : x) s.add(e * e);
    return std::sqrt(s.value());
  };
  require(std::abs(norm(u) - 1.0) <= 1e-9 && std::abs(norm(v) - 1.0) <= 1e-9, ErrorKind::InvalidInput,
          "bilinear_gaussianity: u and v must have unit norm");
  std::vector<std::size_t> rows;
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0) rows.push_back(i);
  }
  for (std::size_t j = 0; j < u.size(); ++j) {
    if (u[j] != 0.0) cols.push_back(j);
  }
  Sample s(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    const EntrySampler sampler(spec, replication_seed(seed, r));
    CompensatedSum acc;
    for (std::size_t i : rows) {
      double row = 0.0;
      for (std::size_t j : cols) row += sampler.standardized(i, j) * u[j];
      acc.add(v[i] * row);
    }
    s[r] = acc.value();
  }
  const double m = emp_mean(s);
  const double var = emp_variance(s);
  const double len = static_cast<double>(reps);
  VerificationReport rep;
  rep.add_upper("mean_z", std::abs(m) / std::sqrt(std::max(var, 1e-300) / len), opts.mean_z);
  auto& vc = rep.add_upper("variance", var, opts.var_hi);
  vc.pass = vc.pass && var >= opts.var_lo;
  rep.add_upper("ks", ks_distance(s, standard_normal_cdf), opts.ks_threshold);
  for (auto& c : rep.checks) {
    c.n = v.size();
    c.N = u.size();
    c.reps = reps;
    c.seed = seed;
  }
  rep.diagnostics["mean"] = m;
  rep.diagnostics["variance"] = var;
  return rep;
}

namespace detail {

// Orthonormal n x t basis from the QR factor of a Gaussian matrix.
inline Eigen::MatrixXd random_orthonormal(std::size_t n, std::size_t t, RngStream& rs) {
  Eigen::MatrixXd G(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t));
  for (Eigen::Index j = 0; j < G.cols(); ++j) {
    for (Eigen::Index i = 0; i < G.rows(); ++i) G(i, j) = rs.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  return qr.householderQ() * Eigen::MatrixXd::Identity(G.rows(), G.cols());
}

}  // namespace detail

/// Mean of ||P_M a||^2 / n for a with i.i.d. N(0, sigma_a^2) entries and a
/// random orthonormal t-frame M; expected sigma_a^2 t / n.
inline VerificationReport projection_decay(double sigma_a, std::size_t t, const std::vector<std::size_t>& n_grid,
                                           std::size_t reps, std::uint64_t seed) {
  require(sigma_a >= 0.0 && reps >= 1 && !n_grid.empty(), ErrorKind::InvalidInput, "projection_decay: bad arguments");
  require(t < *std::min_element(n_grid.begin(), n_grid.end()), ErrorKind::InvalidInput,
          "projection_decay: basis dimension must be below every n");
  VerificationReport rep;
  double prev = std::numeric_limits<double>::infinity();
  bool decreasing = true;
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    const std::size_t n = n_grid[gi];
    RngStream rs(replication_seed(seed, gi), streams::kVerification);
    CompensatedSum acc;
    for (std::size_t r = 0; r < reps; ++r) {
      Eigen::VectorXd a(static_cast<Eigen::Index>(n));
      for (auto& x : a) x = sigma_a * rs.normal();
      if (t == 0) continue;
      const Eigen::MatrixXd M = detail::random_orthonormal(n, t, rs);
      acc.add((M.transpose() * a).squaredNorm() / static_cast<double>(n));
    }
    const double mean_proj = acc.value() / static_cast<double>(reps);
    const double expected = sigma_a * sigma_a * static_cast<double>(t) / static_cast<double>(n);
    const std::string tag = "n=" + std::to_string(n);
    double ratio = 1.0;
    if (expected > 0.0) ratio = mean_proj / expected;
    else if (mean_proj != 0.0) ratio = std::numeric_limits<double>::infinity();
    auto& c = rep.add_upper("ratio_" + tag, std::max(ratio, 1.0 / ratio), 2.0);
    c.n = n;
    c.reps = reps;
    c.seed = seed;
    rep.diagnostics["mean_" + tag] = mean_proj;
    if (t > 0 && !(mean_proj < prev)) decreasing = false;
    prev = mean_proj;
  }
  auto& d = rep.add_upper("decreasing", decreasing ? 0.0 : 1.0, 0.0);
  d.reps = reps;
  d.seed = seed;
  return rep;
}

/// Linear constraints on a matrix: A Q = Y, A^T M = X.
struct ConditioningConstraints {
  Eigen::MatrixXd M;  // n x t
  Eigen::MatrixXd X;  // N x t
  Eigen::MatrixXd Q;  // N x t'
  Eigen::MatrixXd Y;  // n x t'
};

/// Constraints of the first `t` iterations: Y = [b^s + lambda_s m^{s-1}],
/// Q = [q^s], X = [h^{s+1} + xi_s q^s], M = [m^s].
inline ConditioningConstraints constraints_from_trajectory(const AmpTrajectory& traj, int t) {
  require(t >= 1 && t <= traj.iterations(), ErrorKind::InvalidInput, "constraints_from_trajectory: t out of range");
  const auto n = static_cast<Eigen::Index>(traj.n);
  const auto N = static_cast<Eigen::Index>(traj.N);
  ConditioningConstraints c;
  c.M.resize(n, t);
  c.Y.resize(n, t);
  c.X.resize(N, t);
  c.Q.resize(N, t);
  for (int s = 0; s < t; ++s) {
    const auto& it = traj.at(s);
    const double lambda = traj.summaries[static_cast<std::size_t>(s)].lambda;
    const double xi = traj.summaries[static_cast<std::size_t>(s)].xi;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double prev = s > 0 ? traj.at(s - 1).m[static_cast<std::size_t>(i)] : 0.0;
      c.M(i, s) = it.m[static_cast<std::size_t>(i)];
      c.Y(i, s) = it.b[static_cast<std::size_t>(i)] + lambda * prev;
    }
    for (Eigen::Index j = 0; j < N; ++j) {
      c.Q(j, s) = it.q[static_cast<std::size_t>(j)];
      c.X(j, s) = it.h_next[static_cast<std::size_t>(j)] + xi * it.q[static_cast<std::size_t>(j)];
    }
  }
  return c;
}

namespace detail {

struct ThinQr {
  Eigen::MatrixXd U;  // orthonormal columns
  Eigen::MatrixXd R;  // upper triangular, original column order
};

inline ThinQr thin_qr(const Eigen::MatrixXd& A, const char* which) {
  ThinQr out;
  if (A.cols() == 0) return out;
  const double cond = gram_condition(A);
  if (!(cond <= kMaxGramCondition)) {
    fail(ErrorKind::RankDeficient, std::string("conditional_resample: ") + which + "*" + which + " condition " + std::to_string(cond));
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  out.U = qr.householderQ() * Eigen::MatrixXd::Identity(A.rows(), A.cols());
  out.R = qr.matrixQR().topRows(A.cols()).triangularView<Eigen::Upper>();
  return out;
}

}  // namespace detail

/// Relative Frobenius residuals ||A Q - Y|| / ||Y|| and ||A^T M - X|| / ||X||.
inline std::pair<double, double> constraint_residuals(const Matrix& A, const ConditioningConstraints& c) {
  const Eigen::MatrixXd& a = A.data();
  auto rel = [](const Eigen::MatrixXd& diff, const Eigen::MatrixXd& ref) {
    const double r = ref.norm();
    return r > 0.0 ? diff.norm() / r : diff.norm();
  };
  const double rq = c.Q.cols() ? rel(a * c.Q - c.Y, c.Y) : 0.0;
  const double rm = c.M.cols() ? rel(a.transpose() * c.M - c.X, c.X) : 0.0;
  return {rq, rm};
}

/// Fresh draw from the conditional law of A given A Q = Y and A^T M = X:
/// P_M^perp A~ P_Q^perp + B.
inline Matrix conditional_resample(const ConditioningConstraints& c, const EnsembleSpec& spec, std::uint64_t seed) {
  const bool hasM = c.M.cols() > 0;
  const bool hasQ = c.Q.cols() > 0;
  const Eigen::Index n = hasM ? c.M.rows() : c.Y.rows();
  const Eigen::Index N = hasQ ? c.Q.rows() : c.X.rows();
  require(n >= 1 && N >= 1, ErrorKind::InvalidInput, "conditional_resample: cannot infer dimensions");
  require(c.M.cols() == c.X.cols() && c.Q.cols() == c.Y.cols(), ErrorKind::InvalidInput,
          "conditional_resample: M/X or Q/Y column counts differ");
  require((!hasM || (c.M.rows() == n && c.X.rows() == N)) && (!hasQ || (c.Q.rows() == N && c.Y.rows() == n)),
          ErrorKind::InvalidInput, "conditional_resample: constraint shapes disagree");
  if (hasM && hasQ) {
    const Eigen::MatrixXd lhs = c.X.transpose() * c.Q;
    const Eigen::MatrixXd rhs = c.M.transpose() * c.Y;
    const double scale = std::max({lhs.norm(), rhs.norm(), 1e-300});
    if ((lhs - rhs).norm() > 1e-8 * scale) {
      fail(ErrorKind::InconsistentConstraints,
           "conditional_resample: X*Q != M*Y (relative gap " + std::to_string((lhs - rhs).norm() / scale) + ")");
    }
  }
  const auto qq = detail::thin_qr(c.Q, "Q");
  const auto mm = detail::thin_qr(c.M, "M");

  Eigen::MatrixXd A = generate(spec, static_cast<std::size_t>(n), static_cast<std::size_t>(N), seed).data();
  if (hasQ) {
    // A P_Q^perp + Y R_Q^{-1} U_Q^T
    const Eigen::MatrixXd AU = A * qq.U;
    A -= AU * qq.U.transpose();
    const Eigen::MatrixXd YRinv =
        qq.R.transpose().triangularView<Eigen::Lower>().solve(c.Y.transpose()).transpose();
    if (!hasM) {
      A += YRinv * qq.U.transpose();
      return Matrix(Matrix::Storage(A));
    }
    // P_M^perp (A P_Q^perp) + B, B = Y R_Q^{-1} U_Q^T + U_M R_M^{-T} X^T P_Q^perp
    A -= mm.U * (mm.U.transpose() * A);
    Eigen::MatrixXd XtP = c.X.transpose();
    XtP -= (XtP * qq.U) * qq.U.transpose();
    const Eigen::MatrixXd RmT = mm.R.transpose().triangularView<Eigen::Lower>().solve(XtP);
    A += YRinv * qq.U.transpose() + mm.U * RmT;
    return Matrix(Matrix::Storage(A));
  }
  if (hasM) {
    A -= mm.U * (mm.U.transpose() * A);
    A += mm.U * mm.R.transpose().triangularView<Eigen::Lower>().solve(c.X.transpose());
  }
  return Matrix(Matrix::Storage(A));
}

/// n^2 E|X|^{2+2 alpha} n^{-(1+alpha)} along n_grid; passes iff strictly decreasing.
inline VerificationReport moment_decay_check(const ScalarDistribution& d, double alpha, const std::vector<std::size_t>& n_grid) {
  require(alpha > 1.0, ErrorKind::InvalidInput, "moment_decay_check: alpha must be > 1");
  require(n_grid.size() >= 2, ErrorKind::InvalidInput, "moment_decay_check: need at least two grid points");
  const double order = 2.0 + 2.0 * alpha;
  const double rounded = std::round(order);
  const bool even = rounded == order && static_cast<long>(rounded) % 2 == 0;
  const double moment = even && rounded <= kMaxClosedFormMoment ? raw_moment(d, static_cast<int>(rounded)) : abs_moment(d, order);
  require(std::isfinite(moment), ErrorKind::Unsupported, "moment_decay_check: moment of order " + std::to_string(order) + " unavailable");
  VerificationReport rep;
  bool decreasing = true;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t n : n_grid) {
    const double nn = static_cast<double>(n);
    const double value = nn * nn * moment * std::pow(nn, -(1.0 + alpha));
    rep.diagnostics["n=" + std::to_string(n)] = value;
    if (!(value < prev)) decreasing = false;
    prev = value;
  }
  rep.add_upper("strictly_decreasing", decreasing ? 0.0 : 1.0, 0.0);
  rep.diagnostics["moment"] = moment;
  return rep;
}

/// Gaussian integration by parts: E[Z1 phi(Z2)] = cov E[phi'(Z2)] for unit-variance
/// jointly Gaussian (Z1, Z2). Paired differences, 5 standard errors.
inline VerificationReport stein_identity_check(const std::function<double(double)>& phi,
                                               const std::function<double(double)>& dphi, double cov,
                                               std::size_t trials, std::uint64_t seed) {
  require(trials >= 10'000, ErrorKind::InvalidInput, "stein_identity_check: trials must be >= 1e4");
  require(std::abs(cov) <= 1.0, ErrorKind::InvalidInput, "stein_identity_check: |cov| must be <= 1");
  RngStream rs(seed, streams::kVerification);
  const double c = std::sqrt(1.0 - cov * cov);
  CompensatedSum s1;
  CompensatedSum s2;
  for (std::size_t k = 0; k < trials; ++k) {
    const double z2 = rs.normal();
    const double z1 = cov * z2 + c * rs.normal();
    const double d = z1 * phi(z2) - cov * dphi(z2);
    s1.add(d);
    s2.add(d * d);
  }
  const double m = s1.value() / static_cast<double>(trials);
  const double var = std::max(0.0, s2.value() / static_cast<double>(trials) - m * m);
  const double se = std::sqrt(var / static_cast<double>(trials));
  VerificationReport rep;
  auto& r = rep.add_upper("stein", std::abs(m), std::max(5.0 * se, 1e-12));
  r.reps = trials;
  r.seed = seed;
  rep.diagnostics["mean_difference"] = m;
  rep.diagnostics["standard_error"] = se;
  return rep;
}

/// power_mean of q^t_perp, m^t_perp (against earlier iterates) versus the full vectors.
inline VerificationReport perp_moment_check(const AmpTrajectory& traj, double alpha) {
  require(alpha > 1.0, ErrorKind::InvalidInput, "perp_moment_check: alpha must be > 1");
  const int T = traj.iterations();
  for (int t = 0; t < T; ++t) {
    require(traj.has_vectors(t), ErrorKind::InvalidInput, "perp_moment_check: iteration " + std::to_string(t) + " not retained");
  }
  const double p = 2.0 + 2.0 * alpha;
  VerificationReport rep;
  std::vector<Sample> qs;
  std::vector<Sample> ms;
  for (int t = 0; t < T; ++t) {
    const auto& it = traj.at(t);
    for (auto [label, vec, basis] : {std::tuple{"q", &it.q, &qs}, std::tuple{"m", &it.m, &ms}}) {
      const auto dec = decompose(*vec, *basis);
      const double perp = power_mean(dec.perp, p);
      const double full = power_mean(*vec, p);
      auto& c = rep.add_upper(std::string(label) + "_perp[" + std::to_string(t) + "]", perp, full + 1e-9);
      c.n = traj.n;
      c.N = traj.N;
      basis->push_back(*vec);
    }
  }
  return rep;
}

}  // namespace amp_evolve
