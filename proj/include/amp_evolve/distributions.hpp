#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/hypergeometric_1F1.hpp>

#include "amp_evolve/empirical_stats.hpp"
#include "amp_evolve/error.hpp"
#include "amp_evolve/rng.hpp"

namespace amp_evolve {

namespace dist {

struct Gaussian {
  double mean = 0.0;
  double variance = 1.0;

  bool operator==(const Gaussian&) const = default;
};

struct Rademacher {
  bool operator==(const Rademacher&) const = default;
};

/// Uniform on [-halfwidth, halfwidth].
struct UniformSym {
  double halfwidth = 1.0;

  bool operator==(const UniformSym&) const = default;
};

/// Laplace(0, scale); variance 2 scale^2.
struct LaplaceSym {
  double scale = 1.0;

  bool operator==(const LaplaceSym&) const = default;
};

/// eps * N(0, var) + (1 - eps) * delta_0.
struct BernoulliGaussian {
  double eps = 1.0;
  double var = 1.0;

  bool operator==(const BernoulliGaussian&) const = default;
};

struct PointMass {
  double value = 0.0;

  bool operator==(const PointMass&) const = default;
};

struct FiniteDiscrete {
  std::vector<double> atoms;
  std::vector<double> probs;

  bool operator==(const FiniteDiscrete&) const = default;
};

}  // namespace dist

using ScalarDistribution = std::variant<dist::Gaussian, dist::Rademacher, dist::UniformSym, dist::LaplaceSym,
                                        dist::BernoulliGaussian, dist::PointMass, dist::FiniteDiscrete>;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

inline constexpr int kMaxClosedFormMoment = 8;

namespace detail {

// E[Z^k] for Z ~ N(0,1): (k-1)!! for even k, 0 for odd.
inline double gaussian_central_moment(int k) {
  if (k % 2 == 1) return 0.0;
  double m = 1.0;
  for (int j = k - 1; j > 1; j -= 2) m *= j;
  return m;
}

// E|Z|^p for Z ~ N(0,1), real p >= 0.
inline double gaussian_abs_moment(double p) {
  return std::pow(2.0, p / 2.0) * boost::math::tgamma((p + 1.0) / 2.0) / std::sqrt(M_PI);
}

}  // namespace detail

/// Checks structural invariants (positive scales, probabilities summing to one).
inline void validate_distribution(const ScalarDistribution& d) {
  std::visit(Overloaded{
                 [](const dist::Gaussian& g) {
                   require(std::isfinite(g.mean) && std::isfinite(g.variance) && g.variance >= 0.0,
                           ErrorKind::InvalidInput, "gaussian: variance must be finite and >= 0");
                 },
                 [](const dist::Rademacher&) {},
                 [](const dist::UniformSym& u) {
                   require(std::isfinite(u.halfwidth) && u.halfwidth > 0.0, ErrorKind::InvalidInput,
                           "uniform_sym: halfwidth must be > 0");
                 },
                 [](const dist::LaplaceSym& l) {
                   require(std::isfinite(l.scale) && l.scale > 0.0, ErrorKind::InvalidInput,
                           "laplace_sym: scale must be > 0");
                 },
                 [](const dist::BernoulliGaussian& bg) {
                   require(bg.eps > 0.0 && bg.eps <= 1.0, ErrorKind::InvalidInput,
                           "bernoulli_gaussian: eps must lie in (0, 1]");
                   require(std::isfinite(bg.var) && bg.var >= 0.0, ErrorKind::InvalidInput,
                           "bernoulli_gaussian: var must be >= 0");
                 },
                 [](const dist::PointMass& p) {
                   require(std::isfinite(p.value), ErrorKind::InvalidInput, "point_mass: value must be finite");
                 },
                 [](const dist::FiniteDiscrete& f) {
                   require(!f.atoms.empty() && f.atoms.size() == f.probs.size(), ErrorKind::InvalidInput,
                           "finite_discrete: atoms and probs must be nonempty and of equal length");
                   CompensatedSum total;
                   for (std::size_t i = 0; i < f.probs.size(); ++i) {
                     require(f.probs[i] >= 0.0 && std::isfinite(f.atoms[i]), ErrorKind::InvalidInput,
                             "finite_discrete: probabilities must be >= 0 and atoms finite");
                     total.add(f.probs[i]);
                   }
                   require(std::abs(total.value() - 1.0) <= 1e-12, ErrorKind::InvalidInput,
                           "finite_discrete: probabilities must sum to 1");
                 },
             },
             d);
}

/// E[X^k] in closed form, 0 <= k <= 8.
inline double raw_moment(const ScalarDistribution& d, int k) {
  if (k < 0 || k > kMaxClosedFormMoment) {
    fail(ErrorKind::Unsupported, "raw_moment: order " + std::to_string(k) + " outside [0, 8]");
  }
  if (k == 0) return 1.0;
  const bool even = k % 2 == 0;
  return std::visit(
      Overloaded{
          [k](const dist::Gaussian& g) {
            // m_j = mean m_{j-1} + (j-1) var m_{j-2}
            double m_prev = 1.0;
            double m = g.mean;
            for (int j = 2; j <= k; ++j) {
              const double next = g.mean * m + (j - 1) * g.variance * m_prev;
              m_prev = m;
              m = next;
            }
            return m;
          },
          [even](const dist::Rademacher&) { return even ? 1.0 : 0.0; },
          [k, even](const dist::UniformSym& u) { return even ? std::pow(u.halfwidth, k) / (k + 1) : 0.0; },
          [k, even](const dist::LaplaceSym& l) {
            return even ? std::pow(l.scale, k) * boost::math::factorial<double>(static_cast<unsigned>(k)) : 0.0;
          },
          [k](const dist::BernoulliGaussian& bg) {
            return bg.eps * std::pow(bg.var, k / 2.0) * detail::gaussian_central_moment(k);
          },
          [k](const dist::PointMass& p) { return std::pow(p.value, k); },
          [k](const dist::FiniteDiscrete& f) {
            CompensatedSum s;
            for (std::size_t i = 0; i < f.atoms.size(); ++i) s.add(f.probs[i] * std::pow(f.atoms[i], k));
            return s.value();
          },
      },
      d);
}

/// E|X|^p in closed form for real p >= 0.
inline double abs_moment(const ScalarDistribution& d, double p) {
  if (!(p >= 0.0) || !std::isfinite(p)) fail(ErrorKind::Unsupported, "abs_moment: order must be finite and >= 0");
  return std::visit(
      Overloaded{
          [p](const dist::Gaussian& g) {
            if (g.variance == 0.0) return std::pow(std::abs(g.mean), p);
            const double s = std::sqrt(g.variance);
            // E|N(mu, s^2)|^p = s^p 2^{p/2} Gamma((p+1)/2)/sqrt(pi) 1F1(-p/2; 1/2; -mu^2/(2 s^2))
            const double hyp =
                g.mean == 0.0 ? 1.0
                              : boost::math::hypergeometric_1F1(-p / 2.0, 0.5, -g.mean * g.mean / (2.0 * g.variance));
            return std::pow(s, p) * detail::gaussian_abs_moment(p) * hyp;
          },
          [](const dist::Rademacher&) { return 1.0; },
          [p](const dist::UniformSym& u) { return std::pow(u.halfwidth, p) / (p + 1.0); },
          [p](const dist::LaplaceSym& l) { return std::pow(l.scale, p) * boost::math::tgamma(p + 1.0); },
          [p](const dist::BernoulliGaussian& bg) {
            return bg.eps * std::pow(bg.var, p / 2.0) * detail::gaussian_abs_moment(p);
          },
          [p](const dist::PointMass& pm) { return std::pow(std::abs(pm.value), p); },
          [p](const dist::FiniteDiscrete& f) {
            CompensatedSum s;
            for (std::size_t i = 0; i < f.atoms.size(); ++i) s.add(f.probs[i] * std::pow(std::abs(f.atoms[i]), p));
            return s.value();
          },
      },
      d);
}

inline double mean(const ScalarDistribution& d) { return raw_moment(d, 1); }

inline double variance(const ScalarDistribution& d) {
  const double m = raw_moment(d, 1);
  return std::max(0.0, raw_moment(d, 2) - m * m);
}

/// Affine map of `d` to mean 0, variance 1.
inline ScalarDistribution standardize(const ScalarDistribution& d) {
  validate_distribution(d);
  const double mu = mean(d);
  const double var = variance(d);
  if (!(var > 0.0)) fail(ErrorKind::DegenerateDistribution, "standardize: zero variance");
  const double sd = std::sqrt(var);
  return std::visit(
      Overloaded{
          [](const dist::Gaussian&) -> ScalarDistribution { return dist::Gaussian{0.0, 1.0}; },
          [](const dist::Rademacher&) -> ScalarDistribution { return dist::Rademacher{}; },
          [](const dist::UniformSym&) -> ScalarDistribution { return dist::UniformSym{std::sqrt(3.0)}; },
          [](const dist::LaplaceSym&) -> ScalarDistribution { return dist::LaplaceSym{1.0 / std::sqrt(2.0)}; },
          [](const dist::BernoulliGaussian& bg) -> ScalarDistribution {
            return dist::BernoulliGaussian{bg.eps, 1.0 / bg.eps};
          },
          [](const dist::PointMass&) -> ScalarDistribution {
            fail(ErrorKind::DegenerateDistribution, "standardize: point mass");
          },
          [mu, sd](const dist::FiniteDiscrete& f) -> ScalarDistribution {
            dist::FiniteDiscrete out = f;
            for (double& a : out.atoms) a = (a - mu) / sd;
            return out;
          },
      },
      d);
}

/// True for laws whose expectation can be summed exactly over finitely many atoms.
inline bool is_discrete(const ScalarDistribution& d) {
  return std::holds_alternative<dist::Rademacher>(d) || std::holds_alternative<dist::PointMass>(d) ||
         std::holds_alternative<dist::FiniteDiscrete>(d);
}

/// Inverse-CDF transform of two uniforms. The first uniform drives the
/// continuous part so that laws sharing a counter are comonotone.
inline double draw(const ScalarDistribution& d, double u1, double u2) {
  return std::visit(Overloaded{
                        [u1](const dist::Gaussian& g) { return g.mean + std::sqrt(g.variance) * normal_quantile(u1); },
                        [u1](const dist::Rademacher&) { return u1 < 0.5 ? -1.0 : 1.0; },
                        [u1](const dist::UniformSym& u) { return u.halfwidth * (2.0 * u1 - 1.0); },
                        [u1](const dist::LaplaceSym& l) {
                          return u1 < 0.5 ? l.scale * std::log(2.0 * u1) : -l.scale * std::log(2.0 * (1.0 - u1));
                        },
                        [u1, u2](const dist::BernoulliGaussian& bg) {
                          return u2 < bg.eps ? std::sqrt(bg.var) * normal_quantile(u1) : 0.0;
                        },
                        [](const dist::PointMass& p) { return p.value; },
                        [u1](const dist::FiniteDiscrete& f) {
                          double acc = 0.0;
                          for (std::size_t i = 0; i + 1 < f.atoms.size(); ++i) {
                            acc += f.probs[i];
                            if (u1 < acc) return f.atoms[i];
                          }
                          return f.atoms.back();
                        },
                    },
                    d);
}

/// `count` i.i.d. draws; entry k depends only on (seed, stream, k).
inline Sample sample(const ScalarDistribution& d, std::size_t count, std::uint64_t seed,
                     std::uint64_t stream = streams::kSample) {
  if (count == 0) fail(ErrorKind::InvalidInput, "sample: count must be >= 1");
  validate_distribution(d);
  const CounterRng rng(seed, stream);
  Sample out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto u = rng.uniforms(k, 0);
    out[k] = draw(d, u[0], u[1]);
  }
  return out;
}

/// Largest |x| in the support, or +inf for unbounded laws.
inline double support_bound(const ScalarDistribution& d) {
  return std::visit(Overloaded{
                        [](const dist::Gaussian& g) {
                          return g.variance == 0.0 ? std::abs(g.mean) : std::numeric_limits<double>::infinity();
                        },
                        [](const dist::Rademacher&) { return 1.0; },
                        [](const dist::UniformSym& u) { return u.halfwidth; },
                        [](const dist::LaplaceSym&) { return std::numeric_limits<double>::infinity(); },
                        [](const dist::BernoulliGaussian& bg) {
                          return bg.var == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
                        },
                        [](const dist::PointMass& p) { return std::abs(p.value); },
                        [](const dist::FiniteDiscrete& f) {
                          double m = 0.0;
                          for (double a : f.atoms) m = std::max(m, std::abs(a));
                          return m;
                        },
                    },
                    d);
}

inline std::string describe(const ScalarDistribution& d) {
  std::ostringstream os;
  os.precision(17);
  std::visit(Overloaded{
                 [&](const dist::Gaussian& g) { os << "gaussian(mean=" << g.mean << ", var=" << g.variance << ")"; },
                 [&](const dist::Rademacher&) { os << "rademacher"; },
                 [&](const dist::UniformSym& u) { os << "uniform_sym(halfwidth=" << u.halfwidth << ")"; },
                 [&](const dist::LaplaceSym& l) { os << "laplace_sym(scale=" << l.scale << ")"; },
                 [&](const dist::BernoulliGaussian& bg) {
                   os << "bernoulli_gaussian(eps=" << bg.eps << ", var=" << bg.var << ")";
                 },
                 [&](const dist::PointMass& p) { os << "point_mass(" << p.value << ")"; },
                 [&](const dist::FiniteDiscrete& f) { os << "finite_discrete(" << f.atoms.size() << " atoms)"; },
             },
             d);
  return os.str();
}

}  // namespace amp_evolve
