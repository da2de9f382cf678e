#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <map>
#include <random>

#include "sbm/kernels.hpp"

using namespace sbm;

namespace {

// Row 0 of exp(t * Delta/2) for the generator truncated to -K..K.
Eigen::VectorXd expm_row(double t, int K) {
  const int m = 2 * K + 1;
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    Q(i, i) = -1.0;
    if (i > 0) Q(i, i - 1) = 0.5;
    if (i + 1 < m) Q(i, i + 1) = 0.5;
  }
  Eigen::MatrixXd E = (t * Q).exp();
  return E.row(K).transpose();
}

std::vector<double> random_field(std::mt19937_64& gen, int m) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> f(static_cast<std::size_t>(m));
  for (auto& x : f) x = U(gen) < 0.3 ? 0.0 : U(gen) * 5.0;
  return f;
}

}  // namespace

TEST(Laplacian, IndicatorOfOrigin) {
  KernelGrid g(5);
  auto f = LatticeField::unit_mass(g, 0);
  auto d = discrete_laplacian(f);
  EXPECT_EQ(d.at(0), -2.0);
  EXPECT_EQ(d.at(1), 1.0);
  EXPECT_EQ(d.at(-1), 1.0);
  for (int k = 2; k <= 5; ++k) {
    EXPECT_EQ(d.at(k), 0.0);
    EXPECT_EQ(d.at(-k), 0.0);
  }
}

TEST(Laplacian, ConstantAndLinear) {
  for (auto b : {Boundary::periodic, Boundary::reflecting}) {
    KernelGrid g(6, 1.0, b);
    LatticeField c(g, 3.5);
    const auto d = discrete_laplacian(c);
    for (double x : d.values()) EXPECT_EQ(x, 0.0);
  }
  KernelGrid g(6);
  LatticeField lin(g);
  for (int k = -6; k <= 6; ++k) lin.at(k) = k;
  auto d = discrete_laplacian(lin);
  for (int k = -5; k <= 5; ++k) EXPECT_EQ(d.at(k), 0.0);
  EXPECT_NE(d.at(6), 0.0);
}

TEST(HeatKernel, TimeZeroIsDelta) {
  EXPECT_EQ(discrete_heat_kernel(0.0, 0), 1.0);
  EXPECT_EQ(discrete_heat_kernel(0.0, 3), 0.0);
  EXPECT_THROW(discrete_heat_kernel(-1.0, 0), std::invalid_argument);
}

TEST(HeatKernel, MatchesMatrixExponential) {
  for (double t : {0.1, 1.0, 10.0}) {
    const auto row = heat_kernel_row(t, 20);
    const auto ref = expm_row(t, 40);
    for (int k = -20; k <= 20; ++k)
      EXPECT_NEAR(row[static_cast<std::size_t>(std::abs(k))], ref(40 + k), 1e-8) << "t=" << t << " k=" << k;
  }
  EXPECT_NEAR(discrete_heat_kernel(1.0, 0), 0.4657596075936404, 1e-12);
}

TEST(HeatKernel, RowsSumToOne) {
  for (double t : {0.1, 1.0, 10.0, 1e3, 1e6}) {
    const auto half = truncated_kernel(t);
    double s = half[0];
    for (std::size_t d = 1; d < half.size(); ++d) s += 2.0 * half[d];
    EXPECT_NEAR(s, 1.0, 1e-10) << "t=" << t;
    for (double p : half) {
      EXPECT_GE(p, 0.0);
      EXPECT_TRUE(std::isfinite(p));
    }
  }
}

TEST(HeatKernel, ContinuousDensity) {
  EXPECT_NEAR(continuous_heat_kernel(1.0, 0.0), 0.3989422804014327, 1e-15);
  EXPECT_THROW(continuous_heat_kernel(0.0, 0.0), std::invalid_argument);
  for (double t : {0.5, 1.0, 3.0}) {
    const double L = 10.0 * std::sqrt(t);
    const int N = 4000;
    const double h = 2 * L / N;
    double s = 0.0;
    for (int i = 0; i <= N; ++i) s += (i == 0 || i == N ? 0.5 : 1.0) * continuous_heat_kernel(t, -L + i * h);
    EXPECT_NEAR(s * h, 1.0, 1e-8);
  }
}

TEST(HeatKernel, ContinuousSemigroupProperty) {
  const double s = 0.4, t = 0.9;
  const double h = 0.01;
  for (double x : {-1.0, 0.0, 0.7, 2.5}) {
    double acc = 0.0;
    for (int i = -1500; i <= 1500; ++i) {
      const double y = i * h;
      acc += continuous_heat_kernel(s, y) * continuous_heat_kernel(t, x - y);
    }
    EXPECT_NEAR(acc * h, continuous_heat_kernel(s + t, x), 1e-8);
  }
}

TEST(Semigroup, IdentityAtZeroAndMassConservation) {
  KernelGrid g(30);
  auto f = LatticeField::unit_mass(g, 0);
  EXPECT_EQ(apply_semigroup(f, 0.0), f);
  for (double t : {0.5, 5.0, 500.0}) {
    auto out = apply_semigroup(f, t);
    EXPECT_NEAR(out.total(), 1.0, 1e-10);
    EXPECT_GE(out.min(), 0.0);
  }
  KernelGrid r(30, 1.0, Boundary::reflecting);
  auto fr = LatticeField::unit_mass(r, 28);
  EXPECT_NEAR(apply_semigroup(fr, 40.0).total(), 1.0, 1e-10);
}

TEST(Semigroup, FftAndDirectAgree) {
  std::mt19937_64 gen(7);
  for (auto b : {Boundary::periodic, Boundary::reflecting}) {
    for (int K : {20, 300}) {
      KernelGrid g(K, 1.0, b);
      LatticeField f(g, random_field(gen, g.size()));
      for (double t : {0.3, 4.0, 2000.0}) {
        auto a = apply_semigroup(f, t, ConvolutionPath::direct);
        auto c = apply_semigroup(f, t, ConvolutionPath::fft);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], c[i], 1e-10);
      }
    }
  }
}

TEST(Semigroup, SemigroupPropertyOnWindow) {
  std::mt19937_64 gen(11);
  KernelGrid g(25, 1.0, Boundary::reflecting);
  LatticeField f(g, random_field(gen, g.size()));
  auto a = apply_semigroup(apply_semigroup(f, 0.7), 1.6);
  auto b = apply_semigroup(f, 2.3);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
}

TEST(Semigroup, MatchesLaplacianGenerator) {
  KernelGrid g(15);
  LatticeField f(g);
  for (int k = -15; k <= 15; ++k) f.at(k) = std::exp(-0.1 * k * k);
  const double h = 1e-5;
  auto s = apply_semigroup(f, h);
  auto lap = discrete_laplacian(f);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR((s[i] - f[i]) / h, 0.5 * lap[i], 1e-4);
}

TEST(KilledKernel, StructuralProperties) {
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<int> site(-6, 6);
  for (auto space : {Space::discrete, Space::continuous}) {
    for (int trial = 0; trial < 400; ++trial) {
      KilledKernelQuery q{1.0 + 0.01 * trial, double(site(gen)), double(site(gen)), double(site(gen)),
                          double(site(gen)), space};
      const double k = killed_kernel(q);
      const double un = product_kernel(q);
      EXPECT_GE(k, 0.0);
      EXPECT_LE(k, un);
      if (q.x == q.y || q.a == q.b) {
        EXPECT_EQ(k, 0.0);
      }
      if ((q.x < q.y) != (q.a < q.b)) {
        EXPECT_EQ(k, 0.0);
      }
      KilledKernelQuery sw{q.t, q.a, q.b, q.x, q.y, space};
      EXPECT_NEAR(k, killed_kernel(sw), 1e-12);
    }
  }
}

TEST(PairKilled, UnkilledFactorizes) {
  KernelGrid g(30);
  LatticeField mu(g), nu(g);
  mu.at(-3) = 1.0;
  mu.at(2) = 0.5;
  nu.at(4) = 2.0;
  const auto phi = TestFunction::gaussian(0.0, 3.0);
  const auto psi = TestFunction::exp_weight(0.3, 1.0);
  const double t = 2.0;
  const auto r = pair_killed(phi, psi, mu, nu, t, false);
  const auto sphi = [&](const LatticeField& m, const TestFunction& f) {
    double s = 0.0;
    for (int k = -30; k <= 30; ++k) s += m.at(k) * semigroup_at(t, k, [&](int j) { return f(j); });
    return s;
  };
  EXPECT_NEAR(r.value, sphi(mu, phi) * sphi(nu, psi), 1e-8);
}

TEST(PairKilled, MatchesBruteForceDoubleSum) {
  KernelGrid g(12);
  LatticeField mu(g), nu(g);
  mu.at(-2) = 1.0;
  mu.at(1) = 0.7;
  nu.at(0) = 1.5;
  nu.at(3) = 0.4;
  const auto phi = TestFunction::gaussian(-1.0, 2.0);
  const auto psi = TestFunction::gaussian(1.0, 2.5);
  const double t = 1.5;
  double brute = 0.0;
  for (int x = -12; x <= 12; ++x)
    for (int y = -12; y <= 12; ++y) {
      if (mu.at(x) == 0.0 || nu.at(y) == 0.0) continue;
      for (int a = -40; a <= 40; ++a)
        for (int b = -40; b <= 40; ++b)
          brute += mu.at(x) * nu.at(y) * phi(a) * psi(b) * killed_kernel({t, double(x), double(y), double(a), double(b)});
    }
  EXPECT_NEAR(pair_killed(phi, psi, mu, nu, t, true).value, brute, 1e-10);
}

TEST(PairKilled, FarApartNearlyUnkilled) {
  KernelGrid g(30);
  auto mu = LatticeField::unit_mass(g, -20);
  auto nu = LatticeField::unit_mass(g, 20);
  const auto one = TestFunction::constant(1.0);
  const double k = pair_killed(one, one, mu, nu, 0.5, true).value;
  const double u = pair_killed(one, one, mu, nu, 0.5, false).value;
  EXPECT_NEAR(k / u, 1.0, 1e-3);
}

TEST(PairKilled, SameSiteStrictlySmaller) {
  KernelGrid g(20);
  auto mu = LatticeField::unit_mass(g, 0);
  const auto phi = TestFunction::gaussian(0.0, 4.0);
  const double k = pair_killed(phi, phi, mu, mu, 1.0, true).value;
  const double u = pair_killed(phi, phi, mu, mu, 1.0, false).value;
  EXPECT_LT(k, u);
  EXPECT_GT(u - k, 1e-3);
}

TEST(PairKilled, ContinuumMatchesClosedForm) {
  // Point masses at x < y, phi = psi = 1: killed mass = P(no meeting) = erf((y-x)/(2 sqrt t)).
  GridMeasure mu{100, 0.05, std::vector<double>(201, 0.0)};
  GridMeasure nu = mu;
  mu.mass[100 - 10] = 1.0;  // x = -0.5
  nu.mass[100 + 10] = 1.0;  // y = 0.5
  const auto one = TestFunction::constant(1.0);
  const double t = 0.8;
  const auto r = pair_killed_continuous(one, one, mu, nu, t, true);
  EXPECT_NEAR(r.value, std::erf(1.0 / (2.0 * std::sqrt(t))), 2e-3);
}

TEST(LocalClt, GapDecreases) {
  for (double t : {0.5, 1.0, 2.0}) {
    const double g4 = local_clt_gap(4, t), g16 = local_clt_gap(16, t), g64 = local_clt_gap(64, t);
    EXPECT_GT(g4, g16);
    EXPECT_GT(g16, g64);
    EXPECT_TRUE(std::isfinite(g4));
  }
  EXPECT_LT(local_clt_gap(64, 1.0), 1e-3);
}

TEST(UniformBound, Properties) {
  const auto flat = uniform_bound_probe(0.0, 1.0, 4);
  EXPECT_NEAR(flat.c_est, 1.0, 1e-10);
  EXPECT_NEAR(flat.C_est, 1.0, 1e-10);
  for (int n : {2, 4, 8, 16}) {
    const auto b = uniform_bound_probe(1.0, 1.0, n);
    EXPECT_GT(b.c_est, 0.0);
    EXPECT_TRUE(std::isfinite(b.C_est));
    EXPECT_LE(b.C_est, uniform_bound_probe(1.0, 2.0, n).C_est + 1e-12);
  }
}

TEST(KilledKernel, MatchesKillOnMeetingSimulation) {
  const int x = 0, y = 2, paths = 100000;
  const double t = 1.0;
  Rng rng(11);
  std::map<std::pair<int, int>, int> hits;
  int alive = 0;
  for (int i = 0; i < paths; ++i) {
    if (auto end = killed_pair_walk(t, x, y, rng)) {
      ++hits[*end];
      ++alive;
    }
  }
  auto check = [&](double count, double ref) {
    const double p = count / paths;
    const double se = std::sqrt(std::max(ref * (1.0 - ref), 1e-12) / paths);
    EXPECT_LE(std::abs(p - ref), 3.0 * se) << p << " vs " << ref;
  };
  double survival = 0.0;
  for (int a = -15; a <= 15; ++a)
    for (int b = a + 1; b <= 17; ++b) survival += killed_kernel({t, double(x), double(y), double(a), double(b)});
  check(alive, survival);
  for (auto [a, b] : std::vector<std::pair<int, int>>{{0, 2}, {-1, 2}, {0, 3}, {1, 2}, {-1, 1}, {0, 1}})
    check(hits[{a, b}], killed_kernel({t, double(x), double(y), double(a), double(b)}));
  EXPECT_EQ(killed_pair_walk(t, 3, 3, rng), std::nullopt);
}
