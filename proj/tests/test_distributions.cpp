#include <catch2/catch.hpp>

#include <cmath>
#include <vector>

#include "amp_evolve/distributions.hpp"

using namespace amp_evolve;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<ScalarDistribution> all_variants() {
  return {dist::Gaussian{0.5, 2.0},
          dist::Rademacher{},
          dist::UniformSym{2.0},
          dist::LaplaceSym{1.0},
          dist::BernoulliGaussian{0.1, 1.0},
          dist::PointMass{-1.5},
          dist::FiniteDiscrete{{-1.0, 0.0, 2.0}, {0.25, 0.5, 0.25}}};
}

}  // namespace

TEST_CASE("raw_moment examples", "[distributions]") {
  CHECK(raw_moment(dist::Rademacher{}, 4) == 1.0);
  CHECK(raw_moment(dist::Gaussian{0, 1}, 4) == 3.0);
  CHECK_THAT(raw_moment(dist::UniformSym{std::sqrt(3.0)}, 4), WithinRel(9.0 / 5.0, 1e-14));
  CHECK(raw_moment(dist::Gaussian{0, 1}, 6) == 15.0);
  CHECK(raw_moment(dist::Gaussian{0, 1}, 8) == 105.0);
  CHECK_THAT(raw_moment(dist::Gaussian{1, 2}, 3), WithinRel(1.0 + 3.0 * 2.0, 1e-14));
  CHECK_THAT(raw_moment(dist::LaplaceSym{1.0 / std::sqrt(2.0)}, 2), WithinRel(1.0, 1e-14));
  CHECK_THAT(raw_moment(dist::BernoulliGaussian{0.1, 1.0}, 4), WithinRel(0.3, 1e-14));
  CHECK(raw_moment(dist::PointMass{2.0}, 0) == 1.0);
  CHECK_THROWS_AS(raw_moment(dist::Gaussian{}, 9), Error);
  CHECK_THROWS_AS(raw_moment(dist::Gaussian{}, -1), Error);
}

TEST_CASE("abs_moment agrees with even raw moments and closed forms", "[distributions]") {
  for (const auto& d : all_variants()) {
    for (int k : {2, 4, 6, 8}) CHECK_THAT(abs_moment(d, k), WithinRel(raw_moment(d, k), 1e-10));
  }
  const double a = std::sqrt(3.0);
  CHECK_THAT(abs_moment(dist::UniformSym{a}, 5), WithinRel(std::pow(a, 5) / 6.0, 1e-14));
  CHECK_THAT(abs_moment(dist::Gaussian{}, 1), WithinRel(std::sqrt(2.0 / M_PI), 1e-14));
}

TEST_CASE("sample examples", "[distributions]") {
  CHECK(sample(dist::PointMass{2.5}, 3, 9) == Sample{2.5, 2.5, 2.5});
  for (const auto& d : all_variants()) CHECK(sample(d, 1000, 77) == sample(d, 1000, 77));
  CHECK(sample(dist::Gaussian{}, 100, 1) != sample(dist::Gaussian{}, 100, 2));
  CHECK_THROWS_AS(sample(dist::Gaussian{}, 0, 1), Error);

  const Sample r = sample(dist::Rademacher{}, 100000, 3);
  CHECK(std::abs(emp_mean(r)) <= 0.02);
  CHECK(std::abs(emp_second_moment(r) - 1.0) <= 0.02);
}

TEST_CASE("sample moments match raw moments within five standard errors", "[distributions][property]") {
  const std::size_t n = 1000000;
  for (const auto& d : all_variants()) {
    INFO(describe(d));
    const Sample x = sample(d, n, 2026);
    for (int k = 1; k <= 4; ++k) {
      INFO("k = " << k);
      Sample pk(n);
      for (std::size_t i = 0; i < n; ++i) pk[i] = std::pow(x[i], k);
      const double mk = raw_moment(d, k);
      const double se = std::sqrt(std::max(0.0, raw_moment(d, 2 * k) - mk * mk) / n);
      if (se == 0.0) {
        CHECK_THAT(emp_mean(pk), WithinAbs(mk, 1e-12 * std::max(1.0, std::abs(mk))));
      } else {
        CHECK(std::abs(emp_mean(pk) - mk) <= 5.0 * se);
      }
    }
  }
}

TEST_CASE("standardize examples", "[distributions]") {
  CHECK(std::get<dist::Gaussian>(standardize(dist::Gaussian{3, 4})) == dist::Gaussian{0, 1});
  CHECK(std::holds_alternative<dist::Rademacher>(standardize(dist::Rademacher{})));
  CHECK_THAT(std::get<dist::UniformSym>(standardize(dist::UniformSym{2})).halfwidth, WithinRel(std::sqrt(3.0), 1e-15));
  CHECK_THAT(std::get<dist::LaplaceSym>(standardize(dist::LaplaceSym{3})).scale, WithinRel(1 / std::sqrt(2.0), 1e-15));
  auto expect_degenerate = [](const ScalarDistribution& d) {
    try {
      standardize(d);
      FAIL("expected DegenerateDistribution");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DegenerateDistribution);
    }
  };
  expect_degenerate(dist::PointMass{1.0});
  expect_degenerate(dist::Gaussian{1.0, 0.0});
  expect_degenerate(dist::FiniteDiscrete{{2.0}, {1.0}});
}

TEST_CASE("standardize yields mean 0, variance 1 and is idempotent", "[distributions][property]") {
  for (const auto& d : all_variants()) {
    if (std::holds_alternative<dist::PointMass>(d)) continue;
    INFO(describe(d));
    const auto s = standardize(d);
    CHECK_THAT(mean(s), WithinAbs(0.0, 1e-12));
    CHECK_THAT(variance(s), WithinAbs(1.0, 1e-12));
    const auto ss = standardize(s);
    for (int k = 1; k <= 4; ++k) CHECK_THAT(raw_moment(ss, k), WithinAbs(raw_moment(s, k), 1e-12));
  }
}

TEST_CASE("finite discrete validation", "[distributions]") {
  CHECK_THROWS_AS(validate_distribution(dist::FiniteDiscrete{{0, 1}, {0.5, 0.6}}), Error);
  CHECK_THROWS_AS(validate_distribution(dist::FiniteDiscrete{{0, 1}, {1.5, -0.5}}), Error);
  CHECK_THROWS_AS(validate_distribution(dist::FiniteDiscrete{{0, 1}, {1.0}}), Error);
  CHECK_NOTHROW(validate_distribution(dist::FiniteDiscrete{{0, 1, 2}, {0.2, 0.3, 0.5}}));
  CHECK_THROWS_AS(validate_distribution(dist::BernoulliGaussian{0.0, 1.0}), Error);
  CHECK_THROWS_AS(validate_distribution(dist::UniformSym{-1.0}), Error);
}
