#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbm/diagnostics.hpp"
#include "sbm/rescaling.hpp"
#include "sbm/report.hpp"

namespace sbm {

struct SuiteOptions {
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct CriterionReport {
  int number = 0;
  std::string title;
  std::vector<CheckResult> rows;
  bool pass = false;
  double seconds = 0.0;
};

namespace suite_detail {

inline CheckResult row_le(std::string id, double value, double bound) { return gate_row(std::move(id), value, bound, value <= bound); }

/// exp(t Q) e_0 for the generator Q = Delta/2 truncated to -K..K (killed
/// outside), by uniformization: e^{-t} sum_j t^j/j! P^j e_0 with P = Q + I.
inline std::vector<double> truncated_generator_row(double t, int K) {
  const std::size_t m = static_cast<std::size_t>(2 * K + 1);
  std::vector<double> term(m, 0.0), next(m), sum(m, 0.0);
  term[static_cast<std::size_t>(K)] = 1.0;
  sum = term;
  for (int j = 1; j < 10000; ++j) {
    double norm = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double l = i > 0 ? term[i - 1] : 0.0, r = i + 1 < m ? term[i + 1] : 0.0;
      next[i] = 0.5 * (l + r) * t / j;
      norm += next[i];
    }
    term.swap(next);
    for (std::size_t i = 0; i < m; ++i) sum[i] += term[i];
    if (j > t && norm < 1e-40) break;
  }
  for (auto& x : sum) x *= std::exp(-t);
  return sum;
}

template <class F>
CriterionReport timed(int number, std::string title, F&& body) {
  CriterionReport r;
  r.number = number;
  r.title = std::move(title);
  const auto t0 = std::chrono::steady_clock::now();
  r.rows = body();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.pass = std::all_of(r.rows.begin(), r.rows.end(), [](const auto& x) { return x.pass; });
  return r;
}

inline LatticeField heaviside(const KernelGrid& g, bool left) {
  LatticeField f(g);
  for (int k = -g.radius; k <= g.radius; ++k) f.at(k) = (k < 0) == left ? 1.0 : 0.0;
  return f;
}

struct SeparationWatch {
  double worst = 0.0;
  long long steps = 0;
  void on_snapshot(const PopulationState&) {}
  void on_jump(const JumpEvent&) {}
  void on_step(const PopulationState& s) {
    ++steps;
    for (std::size_t i = 0; i < s.u.size(); ++i) worst = std::max(worst, s.u[i] * s.v[i]);
  }
};

}  // namespace suite_detail

// Each criterion pins its own configuration and tolerances.

inline CriterionReport criterion_kernel_oracle(const SuiteOptions&) {
  return suite_detail::timed(1, "discrete heat kernel vs truncated-generator exponential", [] {
    std::vector<CheckResult> rows;
    for (double t : {0.1, 1.0, 10.0}) {
      const int K = 80;
      const auto ref = suite_detail::truncated_generator_row(t, K);
      double worst = 0.0;
      for (int k = -20; k <= 20; ++k)
        worst = std::max(worst, std::abs(discrete_heat_kernel(t, k) - ref[static_cast<std::size_t>(k + K)]));
      rows.push_back(suite_detail::row_le("max |p_t(k) - expm| |k|<=20 " + time_label(t), worst, 1e-8));
    }
    for (double t : {0.1, 1.0, 10.0}) {
      double worst = 0.0;
      for (int K : {3, 10, 40}) {
        const KernelGrid g(K, 1.0, Boundary::periodic);
        for (int src : {-K, 0, K}) worst = std::max(worst, std::abs(apply_semigroup(LatticeField::unit_mass(g, src), t).total() - 1.0));
      }
      rows.push_back(suite_detail::row_le("periodic row sum error " + time_label(t), worst, 1e-10));
    }
    return rows;
  });
}

inline CriterionReport criterion_killed_kernel(const SuiteOptions& opt) {
  return suite_detail::timed(2, "killed two-particle kernel", [&] {
    std::vector<CheckResult> rows;
    Rng rng = Rng::stream(opt.seed, 1002, 0);
    long long diag_nonzero = 0, above = 0;
    double asym = 0.0;
    for (int trial = 0; trial < 4000; ++trial) {
      auto site = [&] { return static_cast<double>(static_cast<int>(rng.uniform() * 17) - 8); };
      KilledKernelQuery q{0.05 + 5.0 * rng.uniform(), site(), site(), site(), site()};
      if (trial % 4 == 0) q.b = q.a;
      const double k = killed_kernel(q);
      if ((q.x == q.y || q.a == q.b) && k != 0.0) ++diag_nonzero;
      if (k > product_kernel(q)) ++above;
      const double d = std::abs(k - killed_kernel({q.t, q.a, q.b, q.x, q.y}));
      asym = std::max(asym, d);
    }
    rows.push_back(gate_row("diagonal values nonzero (count)", static_cast<double>(diag_nonzero), 0.0, diag_nonzero == 0));
    rows.push_back(gate_row("killed > unkilled (count)", static_cast<double>(above), 0.0, above == 0));
    rows.push_back(suite_detail::row_le("max symmetry defect", asym, 1e-12));

    const int paths = 100000, x = 0, y = 2;
    const double t = 1.0;
    Rng walk = Rng::stream(opt.seed, 1002, 1);
    std::map<std::pair<int, int>, int> hits;
    int alive = 0;
    for (int i = 0; i < paths; ++i)
      if (auto end = killed_pair_walk(t, x, y, walk)) {
        ++hits[*end];
        ++alive;
      }
    auto freq_row = [&](std::string id, double count, double ref) {
      const double p = count / paths;
      return z_check(std::move(id), p, ref, std::sqrt(ref * (1.0 - ref) / paths));
    };
    double survival = 0.0;
    for (int a = -20; a <= 20; ++a)
      for (int b = a + 1; b <= 22; ++b) survival += killed_kernel({t, double(x), double(y), double(a), double(b)});
    rows.push_back(freq_row("two-walk survival from (0,2) t=1", alive, survival));
    for (auto [a, b] : std::vector<std::pair<int, int>>{{0, 2}, {-1, 2}, {0, 3}, {1, 2}, {-1, 1}, {0, 1}})
      rows.push_back(freq_row("two-walk endpoint (" + std::to_string(a) + "," + std::to_string(b) + ")", hits[{a, b}],
                              killed_kernel({t, double(x), double(y), double(a), double(b)})));
    return rows;
  });
}

inline CriterionReport criterion_exit_sampler(const SuiteOptions& opt) {
  return suite_detail::timed(3, "quadrant exit sampler", [&] {
    std::vector<CheckResult> rows;
    Rng rng = Rng::stream(opt.seed, 1003, 0);
    bool exact = true;
    for (double rho : {-0.9, -0.5, 0.0, 0.5}) {
      for (auto [x, y] : {std::pair{2.0, 0.0}, std::pair{0.0, 3.5}, std::pair{0.0, 0.0}}) {
        const auto e = sample_exit_quadrant(x, y, rho, rng);
        exact = exact && e.x == x && e.y == y;
      }
    }
    rows.push_back(gate_row("atom cases returned unchanged", exact ? 1.0 : 0.0, 1.0, exact));
    for (double rho : {-0.9, -0.5, -0.1}) {
      Rng r = Rng::stream(opt.seed, 1003, static_cast<std::uint64_t>(10 + 10 * -rho));
      const auto m = exit_mean_identity_check(1.0, 1.0, rho, 100000, r);
      rows.push_back(z_check("E X from (1,1) rho=" + format_number(rho), m.mean_x, 1.0, m.se_x));
      rows.push_back(z_check("E Y from (1,1) rho=" + format_number(rho), m.mean_y, 1.0, m.se_y));
    }
    Rng r = Rng::stream(opt.seed, 1003, 1);
    const int N = 100000;
    int horiz = 0;
    for (int i = 0; i < N; ++i) horiz += sample_exit_quadrant(1.0, 1.0, 0.0, r).y == 0.0;
    const double p = static_cast<double>(horiz) / N;
    rows.push_back(gate_row("P(exit on horizontal axis) rho=0", p, 0.5, std::abs(p - 0.5) <= 0.005));
    return rows;
  });
}

inline MomentCheckSetup moment_identity_setup(const SuiteOptions& opt) {
  const KernelGrid g(30, 1.0, Boundary::reflecting);
  const auto d0 = LatticeField::unit_mass(g, 0);
  MomentCheckSetup m{PopulationState(d0, d0, -0.5)};
  m.times = {0.5, 1.0};
  m.replicas = 20000;
  m.trotter.delta = 0.02;
  m.seed = opt.seed;
  m.threads = opt.threads;
  return m;
}

inline CriterionReport criterion_moments(const SuiteOptions& opt) {
  return suite_detail::timed(4, "infinite-rate mean, mixed and second moments", [&] {
    return infinite_rate_moment_check(moment_identity_setup(opt));
  });
}

inline CriterionReport criterion_collision(const SuiteOptions& opt) {
  return suite_detail::timed(5, "collision first moment and jump covariation", [&] {
    const auto m = moment_identity_setup(opt);
    CollisionCheckSetup c{m.initial};
    c.t = 1.0;
    c.replicas = m.replicas;
    c.trotter = m.trotter;
    c.seed = opt.seed;
    c.threads = opt.threads;
    const auto r = collision_firstmoment_check(c);
    return std::vector<CheckResult>{r.first_moment, r.covariation};
  });
}

inline CriterionReport criterion_self_duality(const SuiteOptions& opt) {
  return suite_detail::timed(6, "self-duality", [&] {
    std::vector<CheckResult> rows;
    const KernelGrid g(30, 1.0, Boundary::reflecting);
    const auto d0 = LatticeField::unit_mass(g, 0);
    struct Case {
      std::string name;
      PopulationState fwd;
      LatticeField du, dv;
    };
    const std::vector<Case> cases{
        {"delta_0 pair", PopulationState(d0, d0, -0.5), d0, d0},
        {"offset pair", PopulationState(LatticeField::unit_mass(g, -1, 0.6), LatticeField::unit_mass(g, 1, 0.9), -0.5),
         LatticeField::unit_mass(g, 0, 0.5), LatticeField::unit_mass(g, 2, 0.4)},
    };
    for (const auto& c : cases) {
      SelfDualitySetup s{c.fwd, c.du, c.dv};
      s.t = 0.5;
      s.replicas = 20000;
      s.trotter.delta = 0.02;
      s.seed = opt.seed;
      s.threads = opt.threads;
      const auto r = self_duality_test(s);
      rows.push_back(z_check(c.name + " re", r.lhs.real(), r.rhs.real(), r.se_re));
      rows.push_back(z_check(c.name + " im", r.lhs.imag(), r.rhs.imag(), r.se_im));
      s.dual_rho = -0.9;
      const auto q = self_duality_test(s);
      const bool re = std::abs(q.z_re) >= std::abs(q.z_im);
      rows.push_back(negative_control(c.name + " mismatched rho=-0.9 " + (re ? "re" : "im"), re ? q.lhs.real() : q.lhs.imag(),
                                      re ? q.rhs.real() : q.rhs.imag(), re ? q.se_re : q.se_im));
    }
    return rows;
  });
}

inline CriterionReport criterion_separation(const SuiteOptions& opt) {
  return suite_detail::timed(7, "separation of types after every Trotter step", [&] {
    std::vector<CheckResult> rows;
    const KernelGrid g(20, 1.0, Boundary::reflecting);
    const KernelGrid gp(12, 1.0, Boundary::periodic);
    struct Case {
      std::string name;
      PopulationState s;
      ExitMethod method;
    };
    Rng init = Rng::stream(opt.seed, 1007, 0);
    LatticeField ru(gp), rv(gp);
    for (std::size_t i = 0; i < ru.size(); ++i) {
      ru[i] = 2.0 * init.uniform();
      rv[i] = init.uniform() < 0.3 ? 0.0 : init.uniform();
    }
    const std::vector<Case> cases{
        {"heaviside rho=-0.5", PopulationState(suite_detail::heaviside(g, true), suite_detail::heaviside(g, false), -0.5), ExitMethod::direct},
        {"delta_0 pair rho=-0.9", PopulationState(LatticeField::unit_mass(g, 0), LatticeField::unit_mass(g, 0), -0.9), ExitMethod::direct},
        {"random periodic rho=0", PopulationState(ru, rv, 0.0), ExitMethod::direct},
        {"random periodic rho=0.6 conformal", PopulationState(ru, rv, 0.6), ExitMethod::conformal},
        {"overlapping constants rho=-0.3", PopulationState(LatticeField(g, 1.0), LatticeField(g, 0.5), -0.3), ExitMethod::conformal},
    };
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
      TrotterConfig tc;
      tc.delta = 0.05;
      tc.exit.method = cases[ci].method;
      const auto worst = run_replicas(200, opt.seed, 1100 + ci, opt.threads, [&](std::size_t, Rng& rng) {
        suite_detail::SeparationWatch w;
        simulate_infinite_rate(cases[ci].s, tc, {1.0}, rng, w);
        return std::pair{w.worst, w.steps};
      });
      double m = 0.0;
      long long steps = 0;
      for (auto [x, n] : worst) {
        m = std::max(m, x);
        steps += n;
      }
      rows.push_back(gate_row(cases[ci].name + " max u*v over " + std::to_string(steps) + " steps", m, 0.0, m == 0.0));
    }
    return rows;
  });
}

inline CriterionReport criterion_interface(const SuiteOptions& opt) {
  return suite_detail::timed(8, "ordering and single-point interface", [&] {
    std::vector<CheckResult> rows;
    const KernelGrid g(30, 1.0, Boundary::reflecting);
    std::vector<double> viol, nonsingle;
    const std::vector<double> deltas{0.1, 0.05, 0.025};
    for (double d : deltas) {
      InterfaceSetup s{PopulationState(suite_detail::heaviside(g, true), suite_detail::heaviside(g, false), -0.5)};
      s.times = {1.0};
      s.replicas = 2000;
      s.trotter.delta = d;
      s.seed = opt.seed;
      s.threads = opt.threads;
      const auto rep = interface_report(s);
      viol.push_back(1.0 - rep.rows[0].ordered_fraction);
      nonsingle.push_back(1.0 - rep.rows[0].single_point_fraction);
      rows.push_back(gate_row("delta=" + format_number(d) + " ordering-violation fraction", viol.back(), 0.05, true));
      rows.push_back(gate_row("delta=" + format_number(d) + " non-single-point fraction", nonsingle.back(), 0.05, true));
    }
    auto decreasing = [](const std::vector<double>& v) {
      for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] < v[i - 1])) return false;
      return true;
    };
    rows.push_back(gate_row("ordering violations decrease with delta", viol.back(), viol.front(), decreasing(viol)));
    rows.push_back(gate_row("non-single-point decreases with delta", nonsingle.back(), nonsingle.front(), decreasing(nonsingle)));
    rows.push_back(suite_detail::row_le("ordering violations at delta=0.025", viol.back(), 0.05));
    rows.push_back(suite_detail::row_le("non-single-point at delta=0.025", nonsingle.back(), 0.05));
    return rows;
  });
}

inline ConvergenceSetup rescaling_setup(const SuiteOptions& opt) {
  ConvergenceSetup c;
  c.rho = -0.5;
  c.n_list = {4, 16};
  c.t_list = {0.5};
  c.replicas = 5000;
  c.W = 10.0;
  c.exit.method = ExitMethod::conformal;
  c.step.policy = RescaledStep::Policy::fixed_internal;
  c.step.value = 0.05;
  c.tests = {{"A", TestFunction::gaussian(0.5, 1.0), TestFunction::gaussian(0.5, 1.0)},
             {"B", TestFunction::gaussian(0.0, 1.0), TestFunction::gaussian(1.0, 1.0)}};
  c.seed = opt.seed;
  c.threads = opt.threads;
  return c;
}

inline CriterionReport criterion_rescaling(const SuiteOptions& opt, std::vector<TrendRow>* trend = nullptr) {
  return suite_detail::timed(9, "rescaling trend and local CLT", [&] {
    std::vector<CheckResult> rows;
    const auto c = rescaling_setup(opt);
    const auto table = convergence_experiment(c);
    if (trend) *trend = table;
    for (const auto& tp : c.tests)
      for (const char* stat : {"mean", "second_moment", "mixed_moment"}) {
        double g4 = NAN, g16 = NAN;
        for (const auto& r : table) {
          if (r.phi_id != tp.id || r.statistic != stat) continue;
          (r.n == 4 ? g4 : g16) = r.gap;
        }
        rows.push_back(gate_row(std::string(stat) + " gap pair " + tp.id + " n=4 -> 16", g16, g4, g16 < g4));
      }
    const double l4 = local_clt_gap(4, 1.0), l16 = local_clt_gap(16, 1.0), l64 = local_clt_gap(64, 1.0);
    rows.push_back(gate_row("local CLT gap n=4 -> 16", l16, l4, l16 < l4));
    rows.push_back(gate_row("local CLT gap n=16 -> 64", l64, l16, l64 < l16));
    rows.push_back(suite_detail::row_le("local CLT gap n=64", l64, 1e-3));
    return rows;
  });
}

inline CriterionReport criterion_critical_curve(const SuiteOptions& opt, std::vector<MomentProbeResult>* probes = nullptr) {
  return suite_detail::timed(10, "critical curve and p-th moment trend", [&] {
    std::vector<CheckResult> rows;
    const double a = critical_curve(-1.0 / std::numbers::sqrt2), b = critical_curve(-0.5);
    rows.push_back(gate_row("p*(-1/sqrt 2)", a, 4.0, std::abs(a - 4.0) <= 1e-12));
    rows.push_back(gate_row("p*(-0.5)", b, 3.0, std::abs(b - 3.0) <= 1e-12));
    const KernelGrid g(5, 1.0, Boundary::periodic);
    for (auto [rho, p] : {std::pair{-0.8, 2.5}, std::pair{-0.1, 8.0}}) {
      MomentProbeSetup s;
      s.rho = rho;
      s.p = p;
      s.gammas = {1.0, 10.0, 100.0};
      s.u0 = LatticeField(g, 1.0);
      s.v0 = LatticeField(g, 1.0);
      s.t = 1.0;
      s.lambda = 0.5;
      s.dt = 0.01;
      s.scheme = NoiseScheme::local_walk;
      s.replicas = 5000;
      s.seed = opt.seed;
      s.threads = opt.threads;
      const auto r = moment_boundedness_probe(s);
      if (probes) probes->push_back(r);
      const bool below = p < r.p_star;
      std::string trend;
      for (const auto& row : r.rows) trend += (trend.empty() ? "" : " ") + format_number(row.moment);
      rows.push_back(gate_row("rho=" + format_number(rho) + " p=" + format_number(p) + (below ? " flat" : " increasing") +
                                  " [" + trend + "]",
                              r.rows.back().moment, r.rows.front().moment, below ? r.flat : r.increasing));
    }
    return rows;
  });
}

inline const std::map<std::string, std::vector<int>>& suite_members() {
  static const std::map<std::string, std::vector<int>> m{
      {"kernels", {1, 2}},
      {"identities", {3, 4, 5, 6, 7, 10}},
      {"rescaling", {9}},
      {"interface", {8}},
  };
  return m;
}

inline CriterionReport run_criterion(int number, const SuiteOptions& opt) {
  switch (number) {
    case 1: return criterion_kernel_oracle(opt);
    case 2: return criterion_killed_kernel(opt);
    case 3: return criterion_exit_sampler(opt);
    case 4: return criterion_moments(opt);
    case 5: return criterion_collision(opt);
    case 6: return criterion_self_duality(opt);
    case 7: return criterion_separation(opt);
    case 8: return criterion_interface(opt);
    case 9: return criterion_rescaling(opt);
    case 10: return criterion_critical_curve(opt);
  }
  throw std::invalid_argument("no acceptance criterion " + std::to_string(number));
}

inline Json criterion_json(const CriterionReport& r) {
  Json j;
  j["criterion"] = r.number;
  j["title"] = r.title;
  j["pass"] = r.pass;
  j["rows"] = Json::array();
  for (const auto& row : r.rows) j["rows"].push_back(check_json(row));
  return j;
}

}  // namespace sbm
