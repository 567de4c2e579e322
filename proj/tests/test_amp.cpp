#include <catch2/catch.hpp>

#include <cmath>

#include "amp_evolve/amp.hpp"

using namespace amp_evolve;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix::Storage s(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) s(i, j++) = v;
    ++i;
  }
  return Matrix(s);
}

AmpProblem gaussian_problem(std::size_t n, std::size_t N, std::uint64_t seed,
                            ScalarDistribution signal = dist::BernoulliGaussian{0.1, 1.0},
                            ScalarDistribution noise = dist::Gaussian{0, 1e-4}) {
  return AmpProblem(generate({rule::Homogeneous{dist::Gaussian{}}, 2.0}, n, N, seed), sample(signal, N, seed, streams::kSignal),
                    sample(noise, n, seed, streams::kNoise));
}

}  // namespace

TEST_CASE("init examples", "[amp]") {
  const AmpProblem p = gaussian_problem(50, 100, 1);
  Sample neg(p.x0);
  for (double& v : neg) v = -v;
  const AmpState s = init(p, neg);
  CHECK(s.t == 0);
  CHECK(s.h == Sample(100, 0.0));
  CHECK(s.m_prev == Sample(50, 0.0));
  CHECK_THAT(s.sigma0_sq_empirical, WithinRel(inner(p.x0, p.x0) / 0.5, 1e-15));
  CHECK(init(p, Sample(100, 0.0)).sigma0_sq_empirical == 0.0);
  CHECK_THROWS_AS(init(p, Sample(99, 0.0)), Error);

  const std::size_t N = 10000;
  const AmpProblem big(generate({rule::Homogeneous{dist::Rademacher{}}, 2.0}, N / 2, N, 3), Sample(N, 0.0), Sample(N / 2, 0.0));
  const Sample q0 = sample(dist::Gaussian{}, N, 4, streams::kInitial);
  CHECK_THAT(init(big, q0).sigma0_sq_empirical, WithinRel(1.0 / 0.5, 0.05));
}

TEST_CASE("onsager_lambda examples", "[amp]") {
  const Sample h = sample(dist::Gaussian{}, 200, 1);
  const Sample x0 = sample(dist::BernoulliGaussian{0.2, 1.0}, 200, 2);
  CHECK_THAT(onsager_lambda(denoisers::linear(1.5), 3, h, x0, 0.25), WithinRel(6.0, 1e-15));
  CHECK(onsager_lambda(denoisers::constant_signal(), 3, h, x0, 0.25) == 0.0);

  const Denoiser f = denoisers::cs_soft_threshold_f(Schedule::fixed(0.7));
  const double rho = 0.4;
  double support = 0;
  for (std::size_t i = 0; i < h.size(); ++i) support += std::abs(x0[i] - h[i]) > 0.7;
  const double lambda = onsager_lambda(f, 1, h, x0, rho);
  CHECK_THAT(lambda, WithinRel(-(support / 200.0) / rho, 1e-14));

  // Separable map: the trace of its Jacobian is the mean slope along the all-ones direction.
  const double delta = 1e-7;
  Sample hp(h), hm(h);
  for (std::size_t i = 0; i < h.size(); ++i) {
    hp[i] += delta;
    hm[i] -= delta;
  }
  const Sample fp = eval_vec(f, 1, hp, x0), fm = eval_vec(f, 1, hm, x0);
  double trace = 0;
  for (std::size_t i = 0; i < h.size(); ++i) trace += (fp[i] - fm[i]) / (2 * delta);
  CHECK_THAT(lambda, WithinAbs(trace / 200.0 / rho, 1e-6));
}

TEST_CASE("onsager_xi examples", "[amp]") {
  const Sample b = sample(dist::Gaussian{0, 2}, 300, 5);
  const Sample w = sample(dist::Gaussian{0, 0.1}, 300, 6);
  CHECK(onsager_xi(denoisers::residual(), 0, b, w) == 1.0);
  CHECK(onsager_xi(denoisers::linear(-0.3), 0, b, w) == -0.3);

  const Denoiser smooth{"tanh_plus_side", [](int, double u, double s) { return std::tanh(u) + s; },
                        [](int, double u, double) { return 1.0 / (std::cosh(u) * std::cosh(u)); },
                        ControlledBound{2, 1, 1}, nullptr, "none"};
  const double delta = 1e-6;
  double fd = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    fd += (smooth.eval(0, b[i] + delta, w[i]) - smooth.eval(0, b[i] - delta, w[i])) / (2 * delta);
  }
  CHECK_THAT(onsager_xi(smooth, 0, b, w), WithinAbs(fd / b.size(), 1e-5));
}

TEST_CASE("zero initial condition propagates", "[amp]") {
  const AmpProblem p = gaussian_problem(40, 80, 2);
  const AmpState s = step(init(p, Sample(80, 0.0)), p, denoisers::constant_signal(), denoisers::residual());
  CHECK(s.b == Sample(40, 0.0));
  Sample m0(40);
  for (std::size_t i = 0; i < 40; ++i) m0[i] = -p.w[i];
  CHECK(s.m == m0);
  const Sample h1 = matvec_t(p.A, m0);
  for (std::size_t j = 0; j < 80; ++j) CHECK_THAT(s.h[j], WithinAbs(h1[j], 1e-15));
}

TEST_CASE("two by two instance computed by hand", "[amp][oracle]") {
  // A = [[2, 1], [0, 3]], x0 = (1, 2), w = (0.5, -1), q0 = x0.
  const AmpProblem p(from_rows({{2, 1}, {0, 3}}), Sample{1, 2}, Sample{0.5, -1});
  const Denoiser f = denoisers::constant_signal(), g = denoisers::residual();
  const AmpState s0 = init(p, p.x0);
  const AmpState s1 = step(s0, p, f, g);
  // b0 = A x0 = (4, 6); m0 = b0 - w = (3.5, 7); xi0 = 1; h1 = A^T m0 - x0 = (7, 24.5) - (1, 2)
  CHECK(s1.b == Sample{4, 6});
  CHECK(s1.m == Sample{3.5, 7});
  CHECK(s1.xi == 1.0);
  CHECK(s1.h == Sample{6, 22.5});
  // q1 = x0; lambda1 = (1/rho) <0> = 0, so b1 = A x0 again and h2 = h1.
  const AmpState s2 = step(s1, p, f, g);
  CHECK(s2.q == Sample{1, 2});
  CHECK(s2.lambda == 0.0);
  CHECK(s2.b == Sample{4, 6});
  CHECK(s2.h == Sample{6, 22.5});

  // With f = linear(0.5): lambda1 = 0.5 / rho = 0.5, q1 = 0.5 h1 = (3, 11.25),
  // b1 = A q1 - 0.5 m0 = (17.25, 33.75) - (1.75, 3.5) = (15.5, 30.25).
  const AmpState l2 = step(s1, p, denoisers::linear(0.5), g);
  CHECK(l2.q == Sample{3, 11.25});
  CHECK(l2.lambda == 0.5);
  CHECK(l2.b == Sample{15.5, 30.25});
  CHECK(l2.m == Sample{15, 31.25});
  // h2 = A^T m1 - q1 = (30, 108.75) - (3, 11.25)
  CHECK(l2.h == Sample{27, 97.5});
}

TEST_CASE("compressed-sensing residual identity against reference algebra", "[amp][oracle]") {
  const std::size_t n = 10, N = 20;
  const AmpProblem p = gaussian_problem(n, N, 17, dist::BernoulliGaussian{0.3, 1.0}, dist::Gaussian{0, 0.01});
  const auto ad = cs_adapter(Schedule::explicit_values({0.9, 0.7, 0.5, 0.4, 0.3}));
  const Sample q0 = ad.q0_rule(p.x0);
  for (std::size_t j = 0; j < N; ++j) CHECK(q0[j] == -p.x0[j]);
  const auto traj = run(p, q0, ad.f, ad.g, 5, RunOptions{true, {}, {}});

  // Independent dense recursion in Eigen with explicit Onsager terms.
  const Eigen::MatrixXd A = p.A.data();
  const Eigen::Map<const Eigen::VectorXd> x0(p.x0.data(), N), w(p.w.data(), n);
  const Eigen::VectorXd y = A * x0 + w;
  const double rho = static_cast<double>(n) / N;
  const double thr[] = {0.9, 0.7, 0.5, 0.4, 0.3};
  Eigen::VectorXd h = Eigen::VectorXd::Zero(N), m_prev = Eigen::VectorXd::Zero(n), q = -x0;
  for (int t = 0; t < 5; ++t) {
    double lambda = 0.0;
    if (t > 0) {
      double support = 0;
      for (std::size_t j = 0; j < N; ++j) {
        const double r = x0(j) - h(j);
        q(j) = soft_threshold_value(r, thr[t - 1]) - x0(j);
        support += std::abs(r) > thr[t - 1];
      }
      lambda = -support / N / rho;
    }
    const Eigen::VectorXd b = A * q - lambda * m_prev;
    const Eigen::VectorXd m = b - w;
    const Eigen::VectorXd x_hat = q + x0;
    const Eigen::VectorXd lhs = y - A * x_hat;
    const Eigen::VectorXd rhs = -(b - w) - lambda * m_prev;
    CHECK((lhs - rhs).norm() <= 1e-12 * (1 + y.norm()));

    const auto& it = traj.at(t);
    CHECK_THAT(traj.summaries[t].lambda, WithinAbs(lambda, 1e-15));
    for (std::size_t i = 0; i < n; ++i) CHECK_THAT(it.b[i], WithinAbs(b(i), 1e-12));
    for (std::size_t j = 0; j < N; ++j) CHECK_THAT(it.q[j], WithinAbs(q(j), 1e-12));
    h = A.transpose() * m - 1.0 * q;
    m_prev = m;
    for (std::size_t j = 0; j < N; ++j) CHECK_THAT(it.h_next[j], WithinAbs(h(j), 1e-12));
  }
}

TEST_CASE("run: single step, constant signal, determinism", "[amp]") {
  const AmpProblem p = gaussian_problem(100, 200, 4);
  const auto ad = cs_adapter(Schedule::fixed(0.2));
  const Sample q0 = ad.q0_rule(p.x0);
  const auto one = run(p, q0, ad.f, ad.g, 1);
  const AmpState s = step(init(p, q0), p, ad.f, ad.g);
  REQUIRE(one.iterations() == 1);
  CHECK(one.summaries[0].qq == inner(s.q, s.q));
  CHECK(one.summaries[0].bb == inner(s.b, s.b));
  CHECK(one.summaries[0].mm == inner(s.m, s.m));
  CHECK(one.summaries[0].hh == inner(s.h, s.h));
  CHECK(one.summaries[0].xi == s.xi);
  CHECK_THROWS_AS(run(p, q0, ad.f, ad.g, 0), Error);

  const auto cs = run(p, p.x0, denoisers::constant_signal(), denoisers::residual(), 6);
  for (const auto& r : cs.summaries) CHECK(r.qq == cs.summaries[0].qq);

  const auto a = run(p, q0, ad.f, ad.g, 8);
  const auto b = run(p, q0, ad.f, ad.g, 8);
  for (int t = 0; t < 8; ++t) {
    CHECK(a.summaries[t].qq == b.summaries[t].qq);
    CHECK(a.summaries[t].hh == b.summaries[t].hh);
    CHECK(a.summaries[t].lambda == b.summaries[t].lambda);
  }
  CHECK(a.q_gram == b.q_gram);
  CHECK(a.h_gram == b.h_gram);
}

TEST_CASE("gram tables are consistent, symmetric and PSD", "[amp][property]") {
  const AmpProblem p = gaussian_problem(150, 300, 9);
  const auto ad = cs_adapter(Schedule::geometric(1.0, 0.8));
  RunOptions opts;
  opts.retain = {0, 2, 5};
  const auto traj = run(p, ad.q0_rule(p.x0), ad.f, ad.g, 6, opts);
  CHECK(traj.has_vectors(0));
  CHECK_FALSE(traj.has_vectors(1));
  CHECK_THROWS_AS(traj.at(1), Error);
  for (int t : {0, 2, 5}) {
    const auto& v = traj.at(t);
    CHECK_THAT(traj.summaries[t].qq, WithinRel(inner(v.q, v.q), 1e-12));
    CHECK_THAT(traj.q_gram(t, t), WithinRel(inner(v.q, v.q), 1e-12));
    CHECK_THAT(traj.q_gram(0, t), WithinRel(inner(traj.at(0).q, v.q), 1e-12));
    CHECK_THAT(traj.h_gram(t, t), WithinRel(inner(v.h_next, v.h_next), 1e-12));
  }
  for (const Eigen::MatrixXd* G : {&traj.q_gram, &traj.b_gram, &traj.m_gram, &traj.h_gram}) {
    CHECK(((*G) - G->transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*G);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8 * std::max(1.0, G->norm()));
  }
}

TEST_CASE("zero problem gives the zero trajectory", "[amp]") {
  const AmpProblem p(generate({rule::Homogeneous{dist::Gaussian{}}, 2.0}, 30, 60, 1), Sample(60, 0.0), Sample(30, 0.0));
  const auto ad = cs_adapter(Schedule::fixed(0.5));
  const auto traj = run(p, ad.q0_rule(p.x0), ad.f, ad.g, 5, RunOptions{true, {}, {}});
  for (const auto& s : traj.summaries) {
    CHECK(s.qq == 0.0);
    CHECK(s.bb == 0.0);
    CHECK(s.hh == 0.0);
    CHECK(s.mm == 0.0);
  }
  CHECK(traj.q_gram.isZero(0.0));
}

TEST_CASE("divergence raises NumericalFailure with the iteration", "[amp]") {
  const AmpProblem p = gaussian_problem(50, 100, 6);
  try {
    run(p, p.x0, denoisers::linear(1e5), denoisers::identity(), 20);
    FAIL("expected divergence");
  } catch (const NumericalFailure& e) {
    CHECK(e.iteration() >= 1);
    CHECK(e.kind() == ErrorKind::NumericalFailure);
  }
}

TEST_CASE("disabling the Onsager terms zeroes lambda and xi", "[amp]") {
  const AmpProblem p = gaussian_problem(50, 100, 6);
  const auto ad = cs_adapter(Schedule::fixed(0.3));
  RunOptions opts;
  opts.step.onsager = false;
  const auto traj = run(p, ad.q0_rule(p.x0), ad.f, ad.g, 4, opts);
  for (const auto& s : traj.summaries) {
    CHECK(s.lambda == 0.0);
    CHECK(s.xi == 0.0);
  }
}
