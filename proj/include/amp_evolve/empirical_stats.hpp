#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "amp_evolve/error.hpp"

namespace amp_evolve {

using Sample = std::vector<double>;
using SampleView = std::span<const double>;

// Neumaier-compensated accumulator. Keeps O(1) error growth for the
// near-cancelling sums the verification harness compares.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }

  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

namespace detail {

inline void check_sample(SampleView v, const char* who) {
  if (v.empty()) fail(ErrorKind::InvalidInput, std::string(who) + ": empty sample");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      fail(ErrorKind::InvalidInput,
           std::string(who) + ": non-finite entry at index " + std::to_string(i));
    }
  }
}

template <class F>
double compensated_mean(SampleView v, F&& term) {
  CompensatedSum acc;
  for (double x : v) acc.add(term(x));
  return acc.value() / static_cast<double>(v.size());
}

}  // namespace detail

/// Empirical mean (1/n) sum v_i.
inline double emp_mean(SampleView v) {
  detail::check_sample(v, "emp_mean");
  return detail::compensated_mean(v, [](double x) { return x; });
}

/// Empirical second moment (1/n) sum v_i^2.
inline double emp_second_moment(SampleView v) {
  detail::check_sample(v, "emp_second_moment");
  return detail::compensated_mean(v, [](double x) { return x * x; });
}

/// Empirical (biased) variance (1/n) sum (v_i - mean)^2, computed in two passes.
inline double emp_variance(SampleView v) {
  detail::check_sample(v, "emp_variance");
  const double mu = detail::compensated_mean(v, [](double x) { return x; });
  CompensatedSum dev;
  CompensatedSum sq;
  for (double x : v) {
    dev.add(x - mu);
    sq.add((x - mu) * (x - mu));
  }
  const double n = static_cast<double>(v.size());
  // Second-order correction for the rounding in mu.
  const double corr = dev.value();
  return std::max(0.0, (sq.value() - corr * corr / n) / n);
}

/// Normalized inner product (1/n) sum u_i v_i.
inline double inner(SampleView u, SampleView v) {
  if (u.size() != v.size()) {
    fail(ErrorKind::InvalidInput, "inner: length mismatch " + std::to_string(u.size()) +
                                      " vs " + std::to_string(v.size()));
  }
  detail::check_sample(u, "inner");
  detail::check_sample(v, "inner");
  CompensatedSum acc;
  for (std::size_t i = 0; i < u.size(); ++i) acc.add(u[i] * v[i]);
  return acc.value() / static_cast<double>(u.size());
}

/// (1/n) sum |v_i|^p for p >= 1.
inline double power_mean(SampleView v, double p) {
  if (!(p >= 1.0)) fail(ErrorKind::InvalidInput, "power_mean: order must be >= 1");
  detail::check_sample(v, "power_mean");
  if (p == 2.0) return detail::compensated_mean(v, [](double x) { return x * x; });
  return detail::compensated_mean(v, [p](double x) { return std::pow(std::abs(x), p); });
}

/// Kolmogorov-Smirnov distance between the empirical law of `samples` and `cdf`.
inline double ks_distance(SampleView samples, const std::function<double(double)>& cdf) {
  detail::check_sample(samples, "ks_distance");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double worst = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double c = cdf(sorted[i]);
    if (!(c >= 0.0 && c <= 1.0)) fail(ErrorKind::InvalidInput, "ks_distance: cdf outside [0,1]");
    if (c < prev) fail(ErrorKind::InvalidInput, "ks_distance: cdf is not monotone");
    prev = c;
    const double hi = static_cast<double>(i + 1) / n;
    const double lo = static_cast<double>(i) / n;
    worst = std::max({worst, std::abs(hi - c), std::abs(lo - c)});
  }
  return worst;
}

inline double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double standard_normal_pdf(double x) {
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

}  // namespace amp_evolve
