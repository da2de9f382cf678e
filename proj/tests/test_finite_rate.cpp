#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>

#include "sbm/ensemble.hpp"
#include "sbm/finite_rate.hpp"
#include "sbm/kernels.hpp"
#include "sbm/stats.hpp"

using namespace sbm;

namespace {

// E[u_t(x) v_t(y)] solves m' = (Delta_x + Delta_y)/2 m + rho gamma 1{x=y} m
// on the periodic window; returns sum_{x,y} phi(x) psi(y) m_t(x,y).
double mixed_moment_oracle(const LatticeField& u0, const LatticeField& v0, double rho, double gamma, double t,
                           const TestFunction& phi, const TestFunction& psi) {
  const KernelGrid& g = u0.grid();
  const int m = g.size();
  const int n = m * m;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  auto id = [m](int x, int y) { return x * m + y; };
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) {
      const int s = id(x, y);
      A(s, s) -= 2.0;
      A(s, id(g.fold(x - 1), y)) += 0.5;
      A(s, id(g.fold(x + 1), y)) += 0.5;
      A(s, id(x, g.fold(y - 1))) += 0.5;
      A(s, id(x, g.fold(y + 1))) += 0.5;
      if (x == y) A(s, s) += rho * gamma;
    }
  Eigen::VectorXd m0(n);
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) m0(id(x, y)) = u0[static_cast<std::size_t>(x)] * v0[static_cast<std::size_t>(y)];
  Eigen::VectorXd mt = (t * A).exp() * m0;
  double s = 0.0;
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) s += phi(g.site(x)) * psi(g.site(y)) * mt(id(x, y));
  return s;
}

}  // namespace

TEST(Noise, ExtremeCorrelations) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    auto [a, b] = correlated_noise_pair(rng, 1.0);
    EXPECT_EQ(a, b);
    auto [c, d] = correlated_noise_pair(rng, -1.0);
    EXPECT_EQ(c, -d);
  }
}

TEST(Noise, EmpiricalCorrelation) {
  Rng rng(2);
  const int N = 1000000;
  double sxy = 0, sxx = 0, syy = 0, sx = 0, sy = 0;
  for (int i = 0; i < N; ++i) {
    auto [a, b] = correlated_noise_pair(rng, -0.5);
    sx += a;
    sy += b;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  const double cov = sxy / N - (sx / N) * (sy / N);
  const double corr = cov / std::sqrt((sxx / N - sx * sx / N / N) * (syy / N - sy * sy / N / N));
  EXPECT_NEAR(corr, -0.5, 0.003);
}

TEST(FiniteRate, ZeroGammaIsHeatFlow) {
  KernelGrid g(20);
  PopulationState s(LatticeField::unit_mass(g, 0), LatticeField::unit_mass(g, 3), -0.5);
  Rng rng(3);
  auto traj = simulate_finite_rate(s, {0.0, 1e-3, false}, {1.0}, rng);
  const auto ref_u = apply_semigroup(s.u, 1.0);
  const auto ref_v = apply_semigroup(s.v, 1.0);
  const auto& out = traj.snapshots.back();
  EXPECT_DOUBLE_EQ(out.time, 1.0);
  for (std::size_t i = 0; i < ref_u.size(); ++i) {
    EXPECT_NEAR(out.u[i], ref_u[i], 5e-3);
    EXPECT_NEAR(out.v[i], ref_v[i], 5e-3);
  }
  EXPECT_EQ(traj.ledger.total(), 0.0);
}

TEST(FiniteRate, EmptyTypeStaysEmpty) {
  KernelGrid g(10);
  PopulationState s(LatticeField(g), LatticeField::unit_mass(g, 0, 2.0), -0.3);
  Rng rng(4);
  auto traj = simulate_finite_rate(s, {5.0, 1e-3, false}, {0.5}, rng);
  const auto& out = traj.snapshots.back();
  EXPECT_EQ(out.u.max(), 0.0);
  const auto ref = apply_semigroup(s.v, 0.5);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.v[i], ref[i], 5e-3);
}

TEST(FiniteRate, NonnegativityOnRandomStarts) {
  Rng gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    KernelGrid g(6, 1.0, trial % 2 ? Boundary::periodic : Boundary::reflecting);
    LatticeField u(g), v(g);
    for (std::size_t i = 0; i < u.size(); ++i) {
      u[i] = gen.uniform() < 0.3 ? 0.0 : 3.0 * gen.uniform();
      v[i] = gen.uniform() < 0.3 ? 0.0 : 3.0 * gen.uniform();
    }
    const double rho = 2.0 * gen.uniform() - 1.0;
    const double gamma = 0.1 + 20.0 * gen.uniform();
    PopulationState s(u, v, rho);
    auto traj = simulate_finite_rate(s, {gamma, 1e-3, true}, {0.1, 0.2, 0.4}, gen);
    for (const auto& snap : traj.snapshots) {
      EXPECT_GE(snap.u.min(), 0.0);
      EXPECT_GE(snap.v.min(), 0.0);
    }
    for (const auto& e : traj.ledger.primary) EXPECT_GE(e.value, 0.0);
  }
}

TEST(FiniteRate, SameSeedBitIdentical) {
  KernelGrid g(8);
  PopulationState s(LatticeField(g, 1.0), LatticeField(g, 1.0), -0.5);
  Rng a(42), b(42);
  auto ta = simulate_finite_rate(s, {2.0, 1e-3, false}, {0.2, 0.5}, a);
  auto tb = simulate_finite_rate(s, {2.0, 1e-3, false}, {0.2, 0.5}, b);
  ASSERT_EQ(ta.snapshots.size(), tb.snapshots.size());
  for (std::size_t i = 0; i < ta.snapshots.size(); ++i) {
    EXPECT_EQ(ta.snapshots[i].u, tb.snapshots[i].u);
    EXPECT_EQ(ta.snapshots[i].v, tb.snapshots[i].v);
  }
  EXPECT_EQ(ta.ledger.total(), tb.ledger.total());
}

TEST(FiniteRate, StabilityGuard) {
  KernelGrid g(4);
  PopulationState s(LatticeField(g, 10.0), LatticeField(g, 10.0), -0.5);
  Rng rng(6);
  try {
    simulate_finite_rate(s, {10.0, 0.05, false}, {1.0}, rng);
    FAIL() << "expected a stability error";
  } catch (const StabilityError& e) {
    EXPECT_EQ(e.time(), 0.0);
    EXPECT_NE(std::string(e.what()).find("t=0"), std::string::npos);
  }
  EXPECT_NO_THROW(simulate_finite_rate(s, {10.0, 0.05, true}, {0.2}, rng));
  EXPECT_THROW(simulate_finite_rate(s, {0.0, 1.5, false}, {3.0}, rng), StabilityError);
}

TEST(FiniteRate, FarApartNoCollisions) {
  KernelGrid g(40, 1.0, Boundary::reflecting);
  PopulationState s(LatticeField::unit_mass(g, -20), LatticeField::unit_mass(g, 20), -0.5);
  for (auto scheme : {NoiseScheme::euler, NoiseScheme::local_walk}) {
    Rng rng(7);
    auto traj = simulate_finite_rate(s, {1.0, 1e-3, false, scheme}, {1.0}, rng);
    EXPECT_LT(traj.ledger.total(), 1e-3);
  }
}

TEST(FiniteRate, MassMartingaleAndGreenIdentity) {
  KernelGrid g(10);
  LatticeField u0(g), v0(g, 1.0);
  for (int k = -10; k <= 10; ++k) u0.at(k) = 1.0 + 0.5 * std::cos(k);
  PopulationState s(u0, v0, -0.5);
  const double T = 1.0;
  const auto phi = TestFunction::gaussian(0.0, 2.0);
  LatticeField phif(g);
  for (int k = -10; k <= 10; ++k) phif.at(k) = phi(k);
  const double green_ref = u0.pair(apply_semigroup(phif, T));
  struct Out {
    double mass, paired;
  };
  auto res = run_replicas(10000, 99, 1, 1, [&](std::size_t, Rng& rng) {
    auto traj = simulate_finite_rate(s, {1.0, 0.01, false}, {T}, rng);
    const auto& snap = traj.snapshots.back();
    return Out{snap.u.total(), snap.u.pair(phif)};
  });
  RunningStats mass, paired;
  for (auto& r : res) {
    mass.add(r.mass);
    paired.add(r.paired);
  }
  EXPECT_LE(std::abs(z_score(mass.mean(), u0.total(), mass.std_error())), 3.0);
  EXPECT_LE(std::abs(z_score(paired.mean(), green_ref, paired.std_error())), 3.0);
}

TEST(FiniteRate, MixedMomentMatchesExactOracle) {
  KernelGrid g(4);
  LatticeField u0(g), v0(g);
  for (int k = -4; k <= 4; ++k) {
    u0.at(k) = k < 0 ? 1.0 : 0.3;
    v0.at(k) = k > 0 ? 1.0 : 0.3;
  }
  const double rho = -0.5, t = 0.5;
  const auto phi = TestFunction::gaussian(-1.0, 2.0);
  const auto psi = TestFunction::gaussian(1.0, 2.0);
  struct Case {
    double gamma, dt;
    NoiseScheme scheme;
  };
  for (auto c : {Case{1.0, 2e-3, NoiseScheme::euler}, Case{5.0, 1e-2, NoiseScheme::local_walk},
                 Case{50.0, 1e-2, NoiseScheme::local_walk}}) {
    const double gamma = c.gamma;
    const double ref = mixed_moment_oracle(u0, v0, rho, gamma, t, phi, psi);
    PopulationState s(u0, v0, rho);
    auto res = run_replicas(10000, 17, static_cast<std::uint64_t>(gamma), 1, [&](std::size_t, Rng& rng) {
      auto traj = simulate_finite_rate(s, {gamma, c.dt, true, c.scheme}, {t}, rng);
      const auto& snap = traj.snapshots.back();
      return snap.u.pair(phi) * snap.v.pair(psi);
    });
    const auto st = summarize(res);
    EXPECT_LE(std::abs(z_score(st.mean(), ref, st.std_error())), 3.0) << "gamma=" << gamma;
  }
}

TEST(FiniteRate, MixedMomentOracleDecreasesTowardKilledLimit) {
  KernelGrid g(4);
  auto u0 = LatticeField::unit_mass(g, 0);
  const auto phi = TestFunction::constant(1.0);
  double prev = mixed_moment_oracle(u0, u0, -0.5, 0.0, 1.0, phi, phi);
  const double limit = mixed_moment_oracle(u0, u0, -0.5, 1e5, 1.0, phi, phi);
  for (double gamma : {1.0, 10.0, 100.0, 1000.0}) {
    const double m = mixed_moment_oracle(u0, u0, -0.5, gamma, 1.0, phi, phi);
    EXPECT_LT(m, prev);
    EXPECT_GT(m, limit);
    prev = m;
  }
}
