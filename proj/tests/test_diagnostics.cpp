#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <complex>

#include "sbm/diagnostics.hpp"

using namespace sbm;

namespace {

LatticeField random_field(const KernelGrid& g, Rng& rng, double scale = 1.0) {
  LatticeField f(g);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform() < 0.3 ? 0.0 : scale * rng.uniform();
  return f;
}

LatticeField heaviside(const KernelGrid& g, bool left) {
  LatticeField f(g);
  for (int k = -g.radius; k <= g.radius; ++k) f.at(k) = (k < 0) == left ? 1.0 : 0.0;
  return f;
}

// Finite-rate second moment: m_uu' = L m_uu + gamma 1{x=y} m_uv,
// m_uv' = L m_uv + rho gamma 1{x=y} m_uv, with L = (Delta_x + Delta_y)/2.
double second_moment_oracle(const LatticeField& u0, const LatticeField& v0, double rho, double gamma, double t,
                            const LatticeField& w) {
  const KernelGrid& g = u0.grid();
  const int m = g.size(), n = m * m;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  auto id = [m](int x, int y) { return x * m + y; };
  for (int blk = 0; blk < 2; ++blk)
    for (int x = 0; x < m; ++x)
      for (int y = 0; y < m; ++y) {
        const int s = blk * n + id(x, y);
        A(s, s) -= 2.0;
        A(s, blk * n + id(g.fold(x - 1), y)) += 0.5;
        A(s, blk * n + id(g.fold(x + 1), y)) += 0.5;
        A(s, blk * n + id(x, g.fold(y - 1))) += 0.5;
        A(s, blk * n + id(x, g.fold(y + 1))) += 0.5;
        if (x == y) {
          if (blk == 0) A(s, n + id(x, y)) += gamma;
          else A(s, s) += rho * gamma;
        }
      }
  Eigen::VectorXd m0(2 * n);
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) {
      m0(id(x, y)) = u0[std::size_t(x)] * u0[std::size_t(y)];
      m0(n + id(x, y)) = u0[std::size_t(x)] * v0[std::size_t(y)];
    }
  const Eigen::VectorXd mt = (t * A).exp() * m0;
  double s = 0.0;
  for (int x = 0; x < m; ++x)
    for (int y = 0; y < m; ++y) s += w[std::size_t(x)] * w[std::size_t(y)] * mt(id(x, y));
  return s;
}

}  // namespace

TEST(Duality, ZeroMeasuresGiveOne) {
  KernelGrid g(6);
  Rng rng(1);
  const auto phi = random_field(g, rng), psi = random_field(g, rng);
  EXPECT_EQ(duality_value(LatticeField(g), LatticeField(g), phi, psi, -0.3), std::complex<double>(1.0, 0.0));
}

TEST(Duality, UncorrelatedBracket) {
  KernelGrid g(6);
  Rng rng(2);
  const auto mu = random_field(g, rng), nu = random_field(g, rng), phi = random_field(g, rng),
             psi = random_field(g, rng);
  double plus = 0.0, minus = 0.0;
  for (std::size_t k = 0; k < mu.size(); ++k) {
    plus += (mu[k] + nu[k]) * (phi[k] + psi[k]);
    minus += (mu[k] - nu[k]) * (phi[k] - psi[k]);
  }
  const auto b = duality_bracket(mu, nu, phi, psi, 0.0);
  EXPECT_NEAR(b.real(), -plus, 1e-12);
  EXPECT_NEAR(b.imag(), minus, 1e-12);
}

TEST(Duality, EqualArgumentsGiveRealBracket) {
  KernelGrid g(6);
  Rng rng(3);
  const auto mu = random_field(g, rng), phi = random_field(g, rng);
  const double rho = -0.4;
  const auto b = duality_bracket(mu, mu, phi, phi, rho);
  EXPECT_EQ(b.imag(), 0.0);
  EXPECT_NEAR(b.real(), -4.0 * std::sqrt(1.0 - rho) * mu.pair(phi), 1e-12);
}

TEST(Duality, ModulusAtMostOneAndSwapInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    KernelGrid g(1 + int(rng.uniform() * 8));
    const auto mu = random_field(g, rng, 3.0), nu = random_field(g, rng, 3.0), phi = random_field(g, rng),
               psi = random_field(g, rng);
    const double rho = -0.99 + 1.98 * rng.uniform();
    const auto f = duality_value(mu, nu, phi, psi, rho);
    EXPECT_LE(std::abs(f), 1.0 + 1e-15);
    EXPECT_LE(duality_bracket(mu, nu, phi, psi, rho).real(), 0.0);
    const auto swapped = duality_value(nu, mu, psi, phi, rho);
    EXPECT_NEAR(std::abs(f - swapped), 0.0, 1e-14);
  }
}

TEST(Duality, BracketLinearInEachMeasure) {
  Rng rng(5);
  KernelGrid g(5);
  const auto mu = random_field(g, rng), nu = random_field(g, rng), phi = random_field(g, rng),
             psi = random_field(g, rng), dmu = random_field(g, rng);
  LatticeField sum(g);
  for (std::size_t k = 0; k < sum.size(); ++k) sum[k] = mu[k] + 0.25 * dmu[k];
  const auto lhs = duality_bracket(sum, nu, phi, psi, -0.6) - duality_bracket(mu, nu, phi, psi, -0.6);
  const auto rhs = 0.25 * duality_bracket(dmu, LatticeField(g), phi, psi, -0.6);
  EXPECT_NEAR(std::abs(lhs - rhs), 0.0, 1e-14);
}

TEST(Duality, RejectsRhoOutsideOpenInterval) {
  KernelGrid g(2);
  EXPECT_THROW(duality_value(LatticeField(g), LatticeField(g), LatticeField(g), LatticeField(g), -1.0),
               std::invalid_argument);
}

TEST(SelfDuality, TimeZeroIsExact) {
  KernelGrid g(8, 1.0, Boundary::reflecting);
  Rng rng(6);
  SelfDualitySetup c{PopulationState(random_field(g, rng), random_field(g, rng), -0.5), random_field(g, rng, 0.3),
                     random_field(g, rng, 0.3)};
  c.t = 0.0;
  c.replicas = 5;
  const auto r = self_duality_test(c);
  EXPECT_EQ(r.lhs, r.rhs);
  EXPECT_EQ(r.z_re, 0.0);
  EXPECT_EQ(r.z_im, 0.0);
}

TEST(SelfDuality, AsymmetricStartAgrees) {
  KernelGrid g(12, 1.0, Boundary::reflecting);
  SelfDualitySetup c{PopulationState(LatticeField::unit_mass(g, -1, 0.6), LatticeField::unit_mass(g, 1, 0.9), -0.5),
                     LatticeField::unit_mass(g, 0, 0.5), LatticeField::unit_mass(g, 2, 0.4)};
  c.replicas = 4000;
  c.trotter.delta = 0.05;
  const auto r = self_duality_test(c);
  EXPECT_LE(std::abs(r.z_re), 3.0);
  EXPECT_LE(std::abs(r.z_im), 3.0);
}

TEST(Martingale, ResidualCentredAndControlDrifts) {
  KernelGrid g(20, 1.0, Boundary::reflecting);
  MartingaleSetup c{PopulationState(heaviside(g, true), heaviside(g, false), -0.5),
                    detail::sample_on(g, TestFunction::gaussian(-1.0, 2.0, 0.5)),
                    detail::sample_on(g, TestFunction::gaussian(1.0, 2.0, 0.5))};
  c.times = {0.0, 0.25, 0.5, 1.0};
  c.replicas = 2000;
  const auto rows = martingale_residual(c);
  EXPECT_EQ(rows[0].mean, std::complex<double>(0.0, 0.0));
  for (const auto& r : rows) {
    EXPECT_LE(std::abs(r.z_re), 3.0) << r.t;
    EXPECT_LE(std::abs(r.z_im), 3.0) << r.t;
  }
  c.drop_collision_term = true;
  const auto bad = martingale_residual(c);
  for (std::size_t i = 2; i < bad.size(); ++i) EXPECT_GT(std::abs(bad[i].z_im), std::abs(bad[i - 1].z_im));
  EXPECT_GT(std::abs(bad.back().z_im), 3.0);
}

TEST(Martingale, NeedsExitTimes) {
  KernelGrid g(4);
  MartingaleSetup c{PopulationState(LatticeField(g, 1.0), LatticeField(g, 1.0), -0.5), LatticeField(g, 0.1),
                    LatticeField(g, 0.1)};
  c.trotter.exit.method = ExitMethod::conformal;
  EXPECT_THROW(martingale_residual(c), std::invalid_argument);
}

TEST(Support, ExtendedRealConventions) {
  KernelGrid g(10);
  const auto z = support_stats(LatticeField(g));
  EXPECT_TRUE(z.empty());
  EXPECT_EQ(z.L, std::numeric_limits<double>::infinity());
  EXPECT_EQ(z.R, -std::numeric_limits<double>::infinity());
  EXPECT_EQ(support_stats(heaviside(g, true)).R, -1.0);
  EXPECT_EQ(support_stats(heaviside(g, false)).L, 0.0);
  const auto a = support_stats(LatticeField::unit_mass(g, 3));
  EXPECT_EQ(a.L, 3.0);
  EXPECT_EQ(a.R, 3.0);
  LatticeField tiny(g, 1e-13);
  EXPECT_TRUE(support_stats(tiny).empty());
  EXPECT_FALSE(support_stats(tiny, 0.0).empty());
}

TEST(Interface, OrderingImprovesAsStepShrinks) {
  KernelGrid g(30, 1.0, Boundary::reflecting);
  InterfaceSetup c{PopulationState(heaviside(g, true), heaviside(g, false), -0.5)};
  c.times = {0.0, 1.0};
  c.replicas = 2000;
  double prev = 1.0;
  for (double d : {0.1, 0.05, 0.025}) {
    c.trotter.delta = d;
    const auto rep = interface_report(c);
    EXPECT_EQ(rep.rows[0].ordered_fraction, 1.0);
    EXPECT_EQ(rep.rows[0].single_point_fraction, 1.0);
    const double violation = 1.0 - rep.rows[1].ordered_fraction;
    EXPECT_LT(violation, prev) << d;
    prev = violation;
    EXPECT_LT(rep.rows[1].zero_site_fraction, 0.01);
    EXPECT_EQ(rep.positions[1].size(), c.replicas);
  }
  EXPECT_LT(prev, 0.05);
}

TEST(Interface, RejectsUnorderedStart) {
  KernelGrid g(5);
  InterfaceSetup c{PopulationState(heaviside(g, false), heaviside(g, true), -0.5)};
  EXPECT_THROW(interface_report(c), std::invalid_argument);
}

TEST(CriticalCurve, KnownValues) {
  EXPECT_NEAR(critical_curve(-1.0 / std::sqrt(2.0)), 4.0, 1e-12);
  EXPECT_NEAR(critical_curve(-0.5), 3.0, 1e-12);
  EXPECT_NEAR(critical_curve(-1e-9), 2.0, 1e-8);
  EXPECT_GT(critical_curve(-1e-9), 2.0);
  for (double rho : {-0.9, -0.6, -0.3, -0.05}) EXPECT_NEAR(rho + std::cos(std::numbers::pi / critical_curve(rho)), 0.0, 1e-12);
  EXPECT_THROW(critical_curve(0.2), std::invalid_argument);
}

TEST(MomentProbe, SecondMomentMatchesFiniteRateOracle) {
  KernelGrid g(2);
  MomentProbeSetup c;
  c.rho = -0.5;
  c.p = 2.0;
  c.gammas = {5.0};
  c.u0 = LatticeField(g, 1.0);
  c.v0 = LatticeField(g, 1.0);
  c.t = 0.5;
  c.replicas = 10000;
  const auto r = moment_boundedness_probe(c);
  LatticeField w(g);
  for (int k = -2; k <= 2; ++k) w.at(k) = std::exp(-c.lambda * std::abs(k));
  const double ref = second_moment_oracle(c.u0, c.v0, c.rho, 5.0, c.t, w);
  EXPECT_LE(std::abs(z_score(r.rows[0].moment, ref, r.rows[0].std_error)), 3.0) << r.rows[0].moment << " vs " << ref;
}

TEST(MomentProbe, TrendFlags) {
  KernelGrid g(3);
  MomentProbeSetup c;
  c.rho = -0.1;
  c.p = 8.0;
  c.u0 = LatticeField(g, 1.0);
  c.v0 = LatticeField(g, 1.0);
  c.replicas = 1000;
  const auto r = moment_boundedness_probe(c);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_NEAR(r.p_star, std::numbers::pi / std::acos(0.1), 1e-12);
  EXPECT_THROW(
      [] {
        MomentProbeSetup bad;
        bad.p = 1.5;
        moment_boundedness_probe(bad);
      }(),
      std::invalid_argument);
}

TEST(Collision, FarApartIsNearZero) {
  KernelGrid g(40, 1.0, Boundary::reflecting);
  CollisionCheckSetup c{PopulationState(LatticeField::unit_mass(g, -15), LatticeField::unit_mass(g, 15), -0.5)};
  c.t = 0.5;
  c.replicas = 200;
  const auto r = collision_firstmoment_check(c);
  EXPECT_LT(r.first_moment.reference, 1e-3);
  EXPECT_LT(r.first_moment.estimate, 1e-3);
}

TEST(Collision, IdentitiesWithFiniteVarianceTail) {
  // rho = -0.8 puts the exit tail exponent above 4, so squared jumps have
  // finite variance and the z gate is meaningful.
  KernelGrid g(30, 1.0, Boundary::reflecting);
  const auto d0 = LatticeField::unit_mass(g, 0);
  CollisionCheckSetup c{PopulationState(d0, d0, -0.8)};
  c.trotter.delta = 0.02;
  const auto r = collision_firstmoment_check(c);
  EXPECT_TRUE(r.first_moment.pass) << r.first_moment.z;
  EXPECT_TRUE(r.covariation.pass) << r.covariation.z;
  MomentCheckSetup m{PopulationState(d0, d0, -0.8)};
  m.trotter.delta = 0.02;
  for (const auto& row : infinite_rate_moment_check(m)) EXPECT_TRUE(row.pass) << row.id << " z=" << row.z;
}

TEST(Semicontinuity, CoarseGrainedExtremesOnCorpus) {
  const std::vector<std::pair<InitialMeasureSpec, InitialMeasureSpec>> corpus{
      {InitialMeasureSpec::heaviside_left(), InitialMeasureSpec::heaviside_right()},
      {InitialMeasureSpec::point(-0.3), InitialMeasureSpec::point(0.7)},
      {InitialMeasureSpec::density(TestFunction::indicator(-2.0, -0.45)),
       InitialMeasureSpec::density(TestFunction::indicator(0.2, 1.3))},
      {InitialMeasureSpec::sum({InitialMeasureSpec::point(-1.05), InitialMeasureSpec::point(-0.5, 2.0)}),
       InitialMeasureSpec::heaviside_right()},
  };
  for (const auto& [mu, nu] : corpus)
    for (const auto& row : semicontinuity_proxy(mu, nu, {1, 2, 4, 8, 16, 32}, 4.0))
      EXPECT_TRUE(row.ok) << mu.describe() << " n=" << row.n << " R=" << row.R_mu << " L=" << row.L_nu;
}
