#include <catch2/catch.hpp>

#include <cmath>
#include <random>

#include "amp_evolve/denoisers.hpp"
#include "amp_evolve/quadrature.hpp"

using namespace amp_evolve;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("gauss_hermite examples", "[quadrature]") {
  CHECK_THAT(gauss_hermite(2).apply([](double z) { return z * z; }), WithinAbs(1.0, 1e-14));
  for (int K : {2, 3, 7, 64, 256}) CHECK_THAT(gauss_hermite(K).apply([](double) { return 1.0; }), WithinAbs(1.0, 1e-14));
  CHECK_THROWS_AS(gauss_hermite(1), Error);
  CHECK_THROWS_AS(gauss_hermite(257), Error);
}

TEST_CASE("gauss_hermite K=64 integrates |z| to within 1e-3", "[quadrature][oracle]") {
  CHECK_THAT(gauss_hermite(64).apply([](double z) { return std::abs(z); }), WithinAbs(2.0 / std::sqrt(2.0 * M_PI), 1e-3));
}

TEST_CASE("gauss_hermite matches an independent Golub-Welsch rule on |z|", "[quadrature][oracle]") {
  // Frozen from numpy.polynomial.hermite_e.hermegauss, normalized weights.
  CHECK_THAT(gauss_hermite(16).apply([](double z) { return std::abs(z); }), WithinAbs(0.8188662427901143, 1e-12));
  CHECK_THAT(gauss_hermite(64).apply([](double z) { return std::abs(z); }), WithinAbs(0.8030406364226272, 1e-12));
  CHECK_THAT(gauss_hermite(65).apply([](double z) { return std::abs(z); }), WithinAbs(0.7877895536913913, 1e-12));
  CHECK_THAT(gauss_hermite(128).apply([](double z) { return std::abs(z); }), WithinAbs(0.8004552706799855, 1e-12));
}

TEST_CASE("gauss_hermite integrates polynomials of degree 2K-1 exactly", "[quadrature][property]") {
  for (int K : {2, 3, 5, 8, 16, 32, 64}) {
    const auto rule = gauss_hermite(K);
    CHECK(rule.nodes.size() == static_cast<std::size_t>(K));
    for (double w : rule.weights) CHECK(w > 0.0);
    for (int d = 0; d <= std::min(2 * K - 1, 40); ++d) {
      INFO("K = " << K << ", degree " << d);
      const double got = rule.apply([d](double z) { return std::pow(z, d); });
      double exact = 0.0;
      if (d % 2 == 0) {
        exact = 1.0;
        for (int j = d - 1; j > 1; j -= 2) exact *= j;
      }
      const double scale = abs_moment(dist::Gaussian{}, d);
      CHECK_THAT(got, WithinAbs(exact, 1e-10 * std::max(1.0, scale)));
    }
  }
}

TEST_CASE("expect_gauss_aux examples", "[quadrature]") {
  auto z2 = [](double z, double) { return z * z; };
  for (const ScalarDistribution& aux : {ScalarDistribution{dist::Rademacher{}}, ScalarDistribution{dist::Gaussian{1, 2}},
                                        ScalarDistribution{dist::BernoulliGaussian{0.1, 1}}, ScalarDistribution{dist::UniformSym{1}}}) {
    CHECK_THAT(expect_gauss_aux(z2, 2.0, aux), WithinRel(4.0, 1e-12));
  }
  CHECK_THAT(expect_gauss_aux([](double, double x) { return x * x; }, 1.0, dist::Rademacher{}), WithinAbs(1.0, 1e-14));
  CHECK_THAT(expect_gauss_aux([](double z, double) { return z; }, 0.0, dist::PointMass{0}), WithinAbs(0.0, 0.0));
  CHECK_THROWS_AS(expect_gauss_aux([](double z, double) { return 1.0 / (z - z); }, 1.0, dist::PointMass{0}), Error);
}

TEST_CASE("expect_gauss_aux is exact for polynomials with summable aux", "[quadrature][property]") {
  const dist::FiniteDiscrete aux{{-2.0, 0.5, 3.0}, {0.2, 0.5, 0.3}};
  const double sigma = 1.7;
  // E[(sZ)^4 x^2 + 3 (sZ) x + (sZ)^2 x^3 + x]
  auto f = [](double u, double x) { return u * u * u * u * x * x + 3 * u * x + u * u * x * x * x + x; };
  const double s2 = sigma * sigma;
  const dist::FiniteDiscrete& a = aux;
  double m1 = 0, m2 = 0, m3 = 0;
  for (std::size_t i = 0; i < a.atoms.size(); ++i) {
    m1 += a.probs[i] * a.atoms[i];
    m2 += a.probs[i] * a.atoms[i] * a.atoms[i];
    m3 += a.probs[i] * std::pow(a.atoms[i], 3);
  }
  const double exact = 3 * s2 * s2 * m2 + s2 * m3 + m1;
  for (int K : {3, 8, 64}) {
    const auto rule = gauss_hermite(K);
    ExpectationOptions o;
    o.rule = &rule;
    CHECK_THAT(expect_gauss_aux(f, sigma, aux, o), WithinAbs(exact, 1e-10 * std::abs(exact)));
  }
  ExpectationOptions o;
  CHECK_THAT(expect_gauss_aux(f, sigma, dist::Gaussian{0.3, 0.5}, o),
             WithinRel(3 * s2 * s2 * (0.5 + 0.09) + s2 * (0.027 + 3 * 0.3 * 0.5) + 0.3, 1e-10));
}

TEST_CASE("soft-threshold expectation matches a brute-force Monte Carlo oracle", "[quadrature][oracle]") {
  const double theta = 1.0;
  auto f = [theta](double u, double x) {
    const double v = soft_threshold_value(x + u, theta);
    return v * v;
  };
  ExpectationOptions o;
  o.kinks = [theta](double x, std::vector<double>& k) {
    k.push_back(-theta - x);
    k.push_back(theta - x);
  };
  const double quad = expect_gauss_aux(f, 1.0, dist::BernoulliGaussian{0.1, 1.0}, o);

  std::mt19937_64 gen(20260101);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution active(0.1);
  const std::size_t n = 10000000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double x = active(gen) ? nd(gen) : 0.0;
    const double v = f(nd(gen), x);
    s += v;
    s2 += v * v;
  }
  const double mc = s / n;
  const double se = std::sqrt((s2 / n - mc * mc) / n);
  INFO("quadrature " << quad << " monte carlo " << mc << " se " << se);
  CHECK(std::abs(quad - mc) <= 3.0 * se);
}

TEST_CASE("continuous aux falls back to seeded Monte Carlo", "[quadrature]") {
  ExpectationOptions o;
  o.mc_budget = 200000;
  auto f = [](double u, double x) { return u * u + x * x * x * x; };
  const double a = expect_gauss_aux(f, 1.0, dist::UniformSym{1.0}, o);
  CHECK(a == expect_gauss_aux(f, 1.0, dist::UniformSym{1.0}, o));
  const double sd4 = std::sqrt(1.0 / 9.0 - 1.0 / 25.0);
  CHECK(std::abs(a - 1.2) <= 5.0 * sd4 / std::sqrt(200000.0));
  o.mc_budget = 0;
  CHECK_THROWS_AS(expect_gauss_aux(f, 1.0, dist::LaplaceSym{1.0}, o), Error);
}
