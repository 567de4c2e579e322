#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "amp_evolve/denoisers.hpp"
#include "amp_evolve/empirical_stats.hpp"
#include "amp_evolve/ensembles.hpp"
#include "amp_evolve/error.hpp"

namespace amp_evolve {

/// y = A x0 + w; the recursion consumes x0 and w directly.
struct AmpProblem {
  Matrix A;
  Sample x0;
  Sample w;

  AmpProblem(Matrix a, Sample signal, Sample noise) : A(std::move(a)), x0(std::move(signal)), w(std::move(noise)) {
    require(x0.size() == A.cols(), ErrorKind::InvalidInput, "AmpProblem: x0 length must equal N");
    require(w.size() == A.rows(), ErrorKind::InvalidInput, "AmpProblem: w length must equal n");
    require(A.rows() <= A.cols(), ErrorKind::InvalidInput, "AmpProblem: rho = n/N must lie in (0, 1]");
  }

  std::size_t n() const noexcept { return A.rows(); }
  std::size_t N() const noexcept { return A.cols(); }
  double rho() const noexcept { return A.aspect_ratio(); }
};

/// Iterates of the general recursion. Before step t: h = h^t, m_prev = m^{t-1};
/// for t = 0, q holds the initial condition q^0.
struct AmpState {
  int t = 0;
  Sample h;
  Sample q;
  Sample b;
  Sample m;
  Sample m_prev;
  double lambda = 0.0;
  double xi = 0.0;
  double sigma0_sq_empirical = 0.0;
};

struct StepOptions {
  bool onsager = true;  // false zeroes lambda_t and xi_t
  double divergence_limit = 1e12;
};

inline AmpState init(const AmpProblem& problem, SampleView q0) {
  if (q0.size() != problem.N()) {
    fail(ErrorKind::InvalidInput, "init: q0 length " + std::to_string(q0.size()) + " != N " + std::to_string(problem.N()));
  }
  for (double v : q0) require(std::isfinite(v), ErrorKind::InvalidInput, "init: q0 has a non-finite entry");
  AmpState s;
  s.t = 0;
  s.h.assign(problem.N(), 0.0);
  s.q.assign(q0.begin(), q0.end());
  s.m_prev.assign(problem.n(), 0.0);
  s.sigma0_sq_empirical = inner(q0, q0) / problem.rho();
  return s;
}

/// (1/rho) <f'_t(h, x0)>.
inline double onsager_lambda(const Denoiser& f, int t, SampleView h, SampleView x0, double rho) {
  const Sample d = deriv_vec(f, t, h, x0);
  return emp_mean(d) / rho;
}

/// <g'_t(b, w)>.
inline double onsager_xi(const Denoiser& g, int t, SampleView b, SampleView w) {
  const Sample d = deriv_vec(g, t, b, w);
  return emp_mean(d);
}

namespace detail {

inline void check_iterate(SampleView v, double limit, const char* name, int t) {
  for (double x : v) {
    if (!std::isfinite(x) || std::abs(x) > limit) {
      throw NumericalFailure(std::string("AMP diverged: ") + name + " at iteration " + std::to_string(t), t);
    }
  }
}

}  // namespace detail

/// One pass of the recursion:
///   q^t = f_t(h^t, x0)        (q^0 given)
///   b^t = A q^t - lambda_t m^{t-1}
///   m^t = g_t(b^t, w)
///   h^{t+1} = A^T m^t - xi_t q^t
inline AmpState step(const AmpState& state, const AmpProblem& problem, const Denoiser& f, const Denoiser& g,
                     const StepOptions& opts = {}) {
  const int t = state.t;
  try {
    AmpState next;
    next.t = t + 1;
    next.sigma0_sq_empirical = state.sigma0_sq_empirical;
    next.q = t == 0 ? state.q : eval_vec(f, t, state.h, problem.x0);
    detail::check_iterate(next.q, opts.divergence_limit, "q", t);
    // m^{-1} = 0 makes lambda_0 irrelevant; it is fixed to 0.
    next.lambda = (t == 0 || !opts.onsager) ? 0.0 : onsager_lambda(f, t, state.h, problem.x0, problem.rho());
    next.b = matvec(problem.A, next.q);
    if (next.lambda != 0.0) {
      for (std::size_t i = 0; i < next.b.size(); ++i) next.b[i] -= next.lambda * state.m_prev[i];
    }
    detail::check_iterate(next.b, opts.divergence_limit, "b", t);
    next.xi = opts.onsager ? onsager_xi(g, t, next.b, problem.w) : 0.0;
    next.m = eval_vec(g, t, next.b, problem.w);
    detail::check_iterate(next.m, opts.divergence_limit, "m", t);
    next.h = matvec_t(problem.A, next.m);
    if (next.xi != 0.0) {
      for (std::size_t j = 0; j < next.h.size(); ++j) next.h[j] -= next.xi * next.q[j];
    }
    detail::check_iterate(next.h, opts.divergence_limit, "h", t);
    next.m_prev = next.m;
    return next;
  } catch (const NumericalFailure& e) {
    if (e.iteration() >= 0) throw;
    throw NumericalFailure(std::string(e.what()) + " (iteration " + std::to_string(t) + ")", t);
  }
}

struct IterationSummary {
  int t = 0;
  double qq = 0.0;  // <q^t, q^t>
  double bb = 0.0;  // <b^t, b^t>
  double hh = 0.0;  // <h^{t+1}, h^{t+1}>
  double mm = 0.0;  // <m^t, m^t>
  double lambda = 0.0;
  double xi = 0.0;
};

struct IterateVectors {
  Sample q;       // q^t
  Sample b;       // b^t
  Sample m;       // m^t
  Sample h_next;  // h^{t+1}
};

struct RunOptions {
  bool retain_all = false;
  std::vector<int> retain;  // iterations whose vectors are kept when !retain_all
  StepOptions step;
};

/// Per-iteration summaries, cross-time Gram tables, optional full vectors.
struct AmpTrajectory {
  double rho = 1.0;
  std::size_t n = 0;
  std::size_t N = 0;
  double sigma0_sq_empirical = 0.0;
  std::vector<IterationSummary> summaries;
  Eigen::MatrixXd q_gram;  // <q^{t1}, q^{t2}>
  Eigen::MatrixXd b_gram;  // <b^{t1}, b^{t2}>
  Eigen::MatrixXd m_gram;  // <m^{t1}, m^{t2}>
  Eigen::MatrixXd h_gram;  // <h^{t1+1}, h^{t2+1}>
  std::vector<std::optional<IterateVectors>> vectors;

  int iterations() const noexcept { return static_cast<int>(summaries.size()); }
  bool has_vectors(int t) const {
    return t >= 0 && static_cast<std::size_t>(t) < vectors.size() && vectors[static_cast<std::size_t>(t)].has_value();
  }
  const IterateVectors& at(int t) const {
    if (!has_vectors(t)) fail(ErrorKind::InvalidInput, "trajectory: vectors for iteration " + std::to_string(t) + " not retained");
    return *vectors[static_cast<std::size_t>(t)];
  }
};

/// T steps of the recursion from q^0.
inline AmpTrajectory run(const AmpProblem& problem, SampleView q0, const Denoiser& f, const Denoiser& g, int T,
                         const RunOptions& opts = {}) {
  require(T >= 1, ErrorKind::InvalidInput, "run: T must be >= 1");
  AmpTrajectory traj;
  traj.rho = problem.rho();
  traj.n = problem.n();
  traj.N = problem.N();
  AmpState state = init(problem, q0);
  traj.sigma0_sq_empirical = state.sigma0_sq_empirical;

  std::vector<IterateVectors> all;
  all.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    state = step(state, problem, f, g, opts.step);
    IterationSummary s;
    s.t = t;
    s.qq = inner(state.q, state.q);
    s.bb = inner(state.b, state.b);
    s.mm = inner(state.m, state.m);
    s.hh = inner(state.h, state.h);
    s.lambda = state.lambda;
    s.xi = state.xi;
    traj.summaries.push_back(s);
    all.push_back({state.q, state.b, state.m, state.h});
  }

  auto gram = [&](auto member) {
    Eigen::MatrixXd G(T, T);
    for (int i = 0; i < T; ++i) {
      for (int j = 0; j <= i; ++j) {
        const double v = inner(all[i].*member, all[j].*member);
        G(i, j) = v;
        G(j, i) = v;
      }
    }
    return G;
  };
  traj.q_gram = gram(&IterateVectors::q);
  traj.b_gram = gram(&IterateVectors::b);
  traj.m_gram = gram(&IterateVectors::m);
  traj.h_gram = gram(&IterateVectors::h_next);

  traj.vectors.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const bool keep = opts.retain_all || std::find(opts.retain.begin(), opts.retain.end(), t) != opts.retain.end();
    if (keep) traj.vectors[static_cast<std::size_t>(t)] = std::move(all[static_cast<std::size_t>(t)]);
  }
  return traj;
}

/// Compressed-sensing instantiation: x_hat^t = q^t + x0, MSE^t = <q^t, q^t>.
struct CsAdapter {
  Denoiser f;
  Denoiser g;
  std::function<Sample(SampleView x0)> q0_rule;
};

inline CsAdapter cs_adapter(Schedule theta, double theta_init = std::numeric_limits<double>::infinity()) {
  CsAdapter out;
  out.f = denoisers::cs_soft_threshold_f(theta, theta_init);
  out.g = denoisers::residual();
  out.q0_rule = [f = out.f](SampleView x0) {
    const Sample zeros(x0.size(), 0.0);
    return eval_vec(f, 0, zeros, x0);
  };
  return out;
}

}  // namespace amp_evolve
