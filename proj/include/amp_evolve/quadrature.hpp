#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "amp_evolve/distributions.hpp"
#include "amp_evolve/empirical_stats.hpp"
#include "amp_evolve/error.hpp"
#include "amp_evolve/rng.hpp"

namespace amp_evolve {

/// Nodes and weights with sum_i w_i f(x_i) = E[f(Z)], Z ~ N(0,1).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  int order = 0;

  template <class F>
  double apply(F&& f) const {
    CompensatedSum acc;
    for (std::size_t i = 0; i < nodes.size(); ++i) acc.add(weights[i] * f(nodes[i]));
    return acc.value();
  }
};

inline constexpr int kDefaultQuadratureOrder = 64;
inline constexpr std::size_t kDefaultMcBudget = 1'000'000;

/// Gauss-Hermite rule for the standard normal weight, 2 <= K <= 256.
///
/// Golub-Welsch on the Jacobi matrix of the orthonormal (probabilists')
/// Hermite polynomials gives starting nodes; two Newton steps on the
/// three-term recurrence polish them and the weights come from the
/// Christoffel function 1 / sum_k p_k(x)^2, which stays accurate for the
/// tiny weights at the edges.
inline QuadratureRule gauss_hermite(int K) {
  if (K < 2 || K > 256) fail(ErrorKind::Unsupported, "gauss_hermite: order " + std::to_string(K) + " outside [2, 256]");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(K, K);
  for (int k = 1; k < K; ++k) {
    jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
    jacobi(k - 1, k) = jacobi(k, k - 1);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi, Eigen::EigenvaluesOnly);
  QuadratureRule rule;
  rule.order = K;
  rule.nodes.assign(solver.eigenvalues().data(), solver.eigenvalues().data() + K);

  // Returns (p_K(x), p_K'(x), sum_{k<K} p_k(x)^2) for orthonormal p_k.
  auto evaluate = [K](double x) {
    double p_prev = 0.0;
    double p = 1.0;
    double d_prev = 0.0;
    double d = 0.0;
    double christoffel = 0.0;
    for (int k = 0; k < K; ++k) {
      christoffel += p * p;
      const double a = std::sqrt(static_cast<double>(k + 1));
      const double b = std::sqrt(static_cast<double>(k));
      const double p_next = (x * p - b * p_prev) / a;
      const double d_next = (p + x * d - b * d_prev) / a;
      p_prev = p;
      p = p_next;
      d_prev = d;
      d = d_next;
    }
    return std::array<double, 3>{p, d, christoffel};
  };

  rule.weights.resize(K);
  for (int i = 0; i < K; ++i) {
    double x = rule.nodes[i];
    for (int it = 0; it < 2; ++it) {
      const auto v = evaluate(x);
      if (v[1] != 0.0) x -= v[0] / v[1];
    }
    rule.nodes[i] = x;
    rule.weights[i] = 1.0 / evaluate(x)[2];
  }
  // Symmetrize: the exact rule is symmetric about 0.
  for (int i = 0; i < K / 2; ++i) {
    const int j = K - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.weights[i] = w;
    rule.weights[j] = w;
  }
  if (K % 2 == 1) rule.nodes[K / 2] = 0.0;
  const double total = std::accumulate(rule.weights.begin(), rule.weights.end(), 0.0);
  for (double& w : rule.weights) w /= total;
  return rule;
}

inline const QuadratureRule& default_rule() {
  static const QuadratureRule rule = gauss_hermite(kDefaultQuadratureOrder);
  return rule;
}

/// Gauss-Legendre nodes/weights on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int K) {
  std::vector<double> x(K), w(K);
  for (int i = 0; i < K; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (K + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = z;
      for (int k = 2; k <= K; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = K * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

/// Two-argument integrand f(u, x) and the first-argument kink locator.
using Integrand = std::function<double(double, double)>;
using KinkLocator = std::function<void(double aux, std::vector<double>& kinks)>;

struct ExpectationOptions {
  const QuadratureRule* rule = nullptr;
  std::size_t mc_budget = kDefaultMcBudget;
  std::uint64_t mc_seed = 0x5EEDull;
  // When set, E_Z[f(sigma Z, x)] is integrated piecewise between kinks with
  // composite Gauss-Legendre instead of the Gauss-Hermite rule.
  KinkLocator kinks;
};

namespace detail {

struct PiecewiseGrid {
  static constexpr double kHalfRange = 14.0;
  static constexpr double kPanelWidth = 0.5;
  static constexpr int kPanelOrder = 20;

  static const std::pair<std::vector<double>, std::vector<double>>& legendre() {
    static const auto gl = gauss_legendre(kPanelOrder);
    return gl;
  }
};

// E[g(Z)] over [-L, L] split at the given breakpoints (in z units).
template <class G>
double piecewise_normal_expect(G&& g, std::vector<double> breaks) {
  const double L = PiecewiseGrid::kHalfRange;
  breaks.erase(std::remove_if(breaks.begin(), breaks.end(),
                              [L](double b) { return !(b > -L && b < L); }),
               breaks.end());
  breaks.push_back(-L);
  breaks.push_back(L);
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  const auto& [gx, gw] = PiecewiseGrid::legendre();
  CompensatedSum acc;
  for (std::size_t s = 0; s + 1 < breaks.size(); ++s) {
    const double a = breaks[s];
    const double b = breaks[s + 1];
    const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / PiecewiseGrid::kPanelWidth)));
    const double h = (b - a) / panels;
    for (int p = 0; p < panels; ++p) {
      const double lo = a + p * h;
      const double mid = lo + 0.5 * h;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double z = mid + 0.5 * h * gx[i];
        acc.add(0.5 * h * gw[i] * standard_normal_pdf(z) * g(z));
      }
    }
  }
  return acc.value();
}

// E[g(Z)] for a smooth g that may vary sharply on small scales: adaptive
// Gauss-Kronrod on fixed unit-half panels of [-L, L].
template <class G>
double adaptive_normal_expect(G&& g) {
  using boost::math::quadrature::gauss_kronrod;
  const double L = PiecewiseGrid::kHalfRange;
  const int panels = static_cast<int>(2.0 * L / PiecewiseGrid::kPanelWidth);
  CompensatedSum acc;
  for (int p = 0; p < panels; ++p) {
    const double lo = -L + p * PiecewiseGrid::kPanelWidth;
    const double hi = lo + PiecewiseGrid::kPanelWidth;
    acc.add(gauss_kronrod<double, 15>::integrate([&](double z) { return standard_normal_pdf(z) * g(z); }, lo, hi, 15,
                                                 1e-12));
  }
  return acc.value();
}

inline double inner_gauss(const Integrand& f, double sigma, double x, const QuadratureRule& rule,
                          const KinkLocator& kinks, std::vector<double>& scratch) {
  if (sigma == 0.0) return f(0.0, x);
  if (!kinks) return rule.apply([&](double z) { return f(sigma * z, x); });
  scratch.clear();
  kinks(x, scratch);
  for (double& k : scratch) k /= sigma;
  return piecewise_normal_expect([&](double z) { return f(sigma * z, x); }, scratch);
}

}  // namespace detail

/// E[f(sigma Z, X)] with Z ~ N(0,1) independent of X ~ aux.
///
/// Discrete aux laws (and the atom of a Bernoulli-Gaussian) are summed
/// exactly; Gaussian parts use a second Gauss-Hermite pass (adaptive
/// Gauss-Kronrod when kinks are declared, since the inner expectation then
/// changes on the scale of sigma); uniform and Laplace aux fall back to
/// seeded Monte Carlo of size mc_budget.
inline double expect_gauss_aux(const Integrand& f, double sigma, const ScalarDistribution& aux,
                               const ExpectationOptions& opts = {}) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) fail(ErrorKind::InvalidInput, "expect_gauss_aux: sigma must be >= 0");
  validate_distribution(aux);
  const QuadratureRule& rule = opts.rule ? *opts.rule : default_rule();
  std::vector<double> scratch;
  auto inner = [&](double x) { return detail::inner_gauss(f, sigma, x, rule, opts.kinks, scratch); };

  const double value = std::visit(
      Overloaded{
          [&](const dist::PointMass& p) { return inner(p.value); },
          [&](const dist::Rademacher&) { return 0.5 * inner(-1.0) + 0.5 * inner(1.0); },
          [&](const dist::FiniteDiscrete& fd) {
            CompensatedSum acc;
            for (std::size_t i = 0; i < fd.atoms.size(); ++i) {
              if (fd.probs[i] > 0.0) acc.add(fd.probs[i] * inner(fd.atoms[i]));
            }
            return acc.value();
          },
          [&](const dist::Gaussian& g) {
            if (g.variance == 0.0) return inner(g.mean);
            const double s = std::sqrt(g.variance);
            if (opts.kinks) return detail::adaptive_normal_expect([&](double z) { return inner(g.mean + s * z); });
            return rule.apply([&](double z) { return inner(g.mean + s * z); });
          },
          [&](const dist::BernoulliGaussian& bg) {
            const double atom = bg.eps < 1.0 ? (1.0 - bg.eps) * inner(0.0) : 0.0;
            if (bg.var == 0.0) return atom + bg.eps * inner(0.0);
            const double s = std::sqrt(bg.var);
            if (opts.kinks) return atom + bg.eps * detail::adaptive_normal_expect([&](double z) { return inner(s * z); });
            return atom + bg.eps * rule.apply([&](double z) { return inner(s * z); });
          },
          [&](const auto& continuous) {
            if (opts.mc_budget == 0) fail(ErrorKind::InvalidInput, "expect_gauss_aux: mc_budget must be >= 1");
            const ScalarDistribution d = continuous;
            const CounterRng rng(opts.mc_seed, streams::kMonteCarlo);
            CompensatedSum acc;
            for (std::size_t k = 0; k < opts.mc_budget; ++k) {
              const auto u = rng.uniforms(k, 0);
              const double x = draw(d, u[0], u[1]);
              acc.add(inner(x));
            }
            return acc.value() / static_cast<double>(opts.mc_budget);
          },
      },
      aux);
  if (!std::isfinite(value)) fail(ErrorKind::NumericalFailure, "expect_gauss_aux: non-finite expectation");
  return value;
}

}  // namespace amp_evolve
