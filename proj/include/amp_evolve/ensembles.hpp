#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "amp_evolve/distributions.hpp"
#include "amp_evolve/empirical_stats.hpp"
#include "amp_evolve/error.hpp"
#include "amp_evolve/rng.hpp"

namespace amp_evolve {

namespace rule {

struct Homogeneous {
  ScalarDistribution dist;
};

/// dist_even where (i + j) is even, dist_odd otherwise.
struct Checkerboard {
  ScalarDistribution dist_even;
  ScalarDistribution dist_odd;
};

/// dists[i mod k] on row i.
struct RowPeriodic {
  std::vector<ScalarDistribution> dists;
};

/// dists[hash(hash_seed, i, j) mod k]. The hash fixes which law sits at each
/// position; it is independent of the seed used to draw entry values.
struct PositionHash {
  std::vector<ScalarDistribution> dists;
  std::uint64_t hash_seed = 0;
};

}  // namespace rule

using EntryRule = std::variant<rule::Homogeneous, rule::Checkerboard, rule::RowPeriodic, rule::PositionHash>;

struct EnsembleSpec {
  EntryRule rule;
  double alpha = 2.0;
};

inline std::vector<ScalarDistribution> referenced_distributions(const EntryRule& r) {
  return std::visit(Overloaded{
                        [](const rule::Homogeneous& h) { return std::vector<ScalarDistribution>{h.dist}; },
                        [](const rule::Checkerboard& c) {
                          return std::vector<ScalarDistribution>{c.dist_even, c.dist_odd};
                        },
                        [](const rule::RowPeriodic& rp) { return rp.dists; },
                        [](const rule::PositionHash& ph) { return ph.dists; },
                    },
                    r);
}

inline std::string rule_name(const EntryRule& r) {
  return std::visit(Overloaded{
                        [](const rule::Homogeneous&) { return std::string("homogeneous"); },
                        [](const rule::Checkerboard&) { return std::string("checkerboard"); },
                        [](const rule::RowPeriodic&) { return std::string("row_periodic"); },
                        [](const rule::PositionHash&) { return std::string("position_hash"); },
                    },
                    r);
}

struct DistributionCheck {
  std::string label;
  std::string description;
  double mean = 0.0;
  double variance = 0.0;
  double moment_order = 0.0;
  double moment = 0.0;  // E|X|^{2 + 2 alpha}
  bool pass = false;
  std::string reason;
};

struct ValidationReport {
  bool alpha_ok = false;
  std::vector<DistributionCheck> checks;

  bool pass() const {
    if (!alpha_ok || checks.empty()) return false;
    for (const auto& c : checks) {
      if (!c.pass) return false;
    }
    return true;
  }

  std::string summary() const {
    std::string out;
    if (!alpha_ok) out += "alpha must be > 1; ";
    for (const auto& c : checks) {
      if (!c.pass) out += c.label + " " + c.description + ": " + c.reason + "; ";
    }
    return out.empty() ? "ok" : out;
  }
};

/// Checks every referenced law is standardized with a finite (2 + 2 alpha)-th moment.
inline ValidationReport validate(const EnsembleSpec& spec) {
  ValidationReport report;
  report.alpha_ok = std::isfinite(spec.alpha) && spec.alpha > 1.0;
  const auto dists = referenced_distributions(spec.rule);
  const double order = 2.0 + 2.0 * spec.alpha;
  for (std::size_t k = 0; k < dists.size(); ++k) {
    DistributionCheck c;
    c.label = "dist[" + std::to_string(k) + "]";
    c.description = describe(dists[k]);
    c.moment_order = order;
    try {
      validate_distribution(dists[k]);
      c.mean = mean(dists[k]);
      c.variance = variance(dists[k]);
      c.moment = std::isfinite(order) ? abs_moment(dists[k], order) : 0.0;
      if (std::abs(c.mean) > 1e-9) {
        c.reason = "nonzero mean " + std::to_string(c.mean);
      } else if (std::abs(c.variance - 1.0) > 1e-9) {
        c.reason = "variance " + std::to_string(c.variance) + " != 1";
      } else if (!std::isfinite(c.moment)) {
        c.reason = "infinite moment of order " + std::to_string(order);
      } else {
        c.pass = true;
      }
    } catch (const Error& e) {
      c.reason = e.what();
    }
    report.checks.push_back(std::move(c));
  }
  if (dists.empty()) {
    DistributionCheck c;
    c.label = "rule";
    c.description = rule_name(spec.rule);
    c.reason = "no distributions referenced";
    report.checks.push_back(std::move(c));
  }
  return report;
}

/// Dense n x N measurement matrix, row-major.
class Matrix {
 public:
  using Storage = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Matrix() = default;
  explicit Matrix(Storage data) : data_(std::move(data)) {
    require(data_.rows() >= 1 && data_.cols() >= 1, ErrorKind::InvalidInput, "Matrix: dimensions must be >= 1");
    require(data_.allFinite(), ErrorKind::InvalidInput, "Matrix: non-finite entry");
  }

  std::size_t rows() const noexcept { return static_cast<std::size_t>(data_.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(data_.cols()); }
  double aspect_ratio() const noexcept { return static_cast<double>(rows()) / static_cast<double>(cols()); }
  double operator()(std::size_t i, std::size_t j) const { return data_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); }
  const Storage& data() const noexcept { return data_; }

 private:
  Storage data_;
};

/// Position-indexed view of an EntryRule: which law sits at (i, j).
class EntrySampler {
 public:
  EntrySampler(const EnsembleSpec& spec, std::uint64_t seed) : rule_(spec.rule), rng_(seed, streams::kMatrix) {
    dists_ = referenced_distributions(rule_);
    if (const auto* ph = std::get_if<rule::PositionHash>(&rule_)) hash_key_ = splitmix64(ph->hash_seed ^ 0xA5A5A5A5ull);
  }

  std::size_t law_index(std::size_t i, std::size_t j) const {
    switch (rule_.index()) {
      case 0: return 0;
      case 1: return (i + j) % 2;
      case 2: return i % dists_.size();
      default: {
        const std::uint64_t h = splitmix64(hash_key_ ^ splitmix64(static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull + j));
        return static_cast<std::size_t>(h % dists_.size());
      }
    }
  }

  /// Standardized entry mu_ij (before the 1/sqrt(n) scale).
  double standardized(std::size_t i, std::size_t j) const {
    const auto u = rng_.uniforms(i, j);
    return draw(dists_[law_index(i, j)], u[0], u[1]);
  }

  const ScalarDistribution& law(std::size_t i, std::size_t j) const { return dists_[law_index(i, j)]; }

 private:
  EntryRule rule_;
  std::vector<ScalarDistribution> dists_;
  CounterRng rng_;
  std::uint64_t hash_key_ = 0;
};

inline void require_valid(const EnsembleSpec& spec) {
  const auto report = validate(spec);
  if (!report.pass()) fail(ErrorKind::InvalidSpec, "ensemble: " + report.summary());
}

/// A_ij = mu_ij(seed, i, j) / sqrt(n). Entry (i, j) depends only on (spec, seed, i, j).
inline Matrix generate(const EnsembleSpec& spec, std::size_t n, std::size_t N, std::uint64_t seed) {
  require_valid(spec);
  require(n >= 1 && N >= 1, ErrorKind::InvalidInput, "generate: dimensions must be >= 1");
  const EntrySampler sampler(spec, seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  Matrix::Storage data(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(N));
  for (std::size_t i = 0; i < n; ++i) {
    double* row = data.row(static_cast<Eigen::Index>(i)).data();
    for (std::size_t j = 0; j < N; ++j) row[j] = scale * sampler.standardized(i, j);
  }
  return Matrix(std::move(data));
}

namespace detail {
inline Eigen::Map<const Eigen::VectorXd> as_eigen(SampleView v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}
}  // namespace detail

/// A v, v of length N.
inline Sample matvec(const Matrix& A, SampleView v) {
  if (v.size() != A.cols()) {
    fail(ErrorKind::InvalidInput, "matvec: vector length " + std::to_string(v.size()) + " != cols " + std::to_string(A.cols()));
  }
  Sample out(A.rows());
  Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())).noalias() =
      A.data() * detail::as_eigen(v);
  return out;
}

/// A^T v, v of length n.
inline Sample matvec_t(const Matrix& A, SampleView v) {
  if (v.size() != A.rows()) {
    fail(ErrorKind::InvalidInput, "matvec_t: vector length " + std::to_string(v.size()) + " != rows " + std::to_string(A.rows()));
  }
  Sample out(A.cols());
  Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size())).noalias() =
      A.data().transpose() * detail::as_eigen(v);
  return out;
}

/// Little-endian dump: u64 rows, u64 cols, then rows*cols f64 in row-major order.
inline void write_matrix_binary(const Matrix& A, const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "binary dump assumes a little-endian host");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::InvalidInput, "cannot open " + path);
  const std::uint64_t dims[2] = {A.rows(), A.cols()};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(A.data().data()),
            static_cast<std::streamsize>(A.rows() * A.cols() * sizeof(double)));
  require(static_cast<bool>(out), ErrorKind::InvalidInput, "write failed for " + path);
}

inline Matrix read_matrix_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::InvalidInput, "cannot open " + path);
  std::uint64_t dims[2] = {0, 0};
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  require(static_cast<bool>(in) && dims[0] >= 1 && dims[1] >= 1 && dims[0] * dims[1] < (1ull << 34),
          ErrorKind::InvalidInput, "bad matrix header in " + path);
  Matrix::Storage data(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(dims[0] * dims[1] * sizeof(double)));
  require(static_cast<bool>(in), ErrorKind::InvalidInput, "truncated matrix body in " + path);
  return Matrix(std::move(data));
}

}  // namespace amp_evolve
