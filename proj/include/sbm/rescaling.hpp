#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbm/ensemble.hpp"
#include "sbm/infinite_rate.hpp"
#include "sbm/kernels.hpp"
#include "sbm/lattice.hpp"
#include "sbm/stats.hpp"
#include "sbm/test_function.hpp"

namespace sbm {

/// Which end of the cell [k/n, (k+1)/n) is closed when coarse-graining.
enum class CellRule {
  right_open,  // [k/n, (k+1)/n)
  left_open,   // (k/n, (k+1)/n]
};

inline CellRule cell_rule_from_string(const std::string& s) {
  if (s == "right_open") return CellRule::right_open;
  if (s == "left_open") return CellRule::left_open;
  throw std::invalid_argument("unknown cell rule '" + s + "'");
}

/// Initial measure on R from a small named family.
class InitialMeasureSpec {
 public:
  enum class Kind { zero, heaviside_left, heaviside_right, point, density, sum };

  static InitialMeasureSpec zero() { return InitialMeasureSpec(Kind::zero); }
  /// Lebesgue measure on (-inf, 0).
  static InitialMeasureSpec heaviside_left() { return InitialMeasureSpec(Kind::heaviside_left); }
  /// Lebesgue measure on [0, inf).
  static InitialMeasureSpec heaviside_right() { return InitialMeasureSpec(Kind::heaviside_right); }
  static InitialMeasureSpec point(double x, double weight = 1.0) {
    if (!(weight >= 0.0)) throw std::invalid_argument("point mass weight must be nonnegative");
    InitialMeasureSpec m(Kind::point);
    m.x_ = x;
    m.weight_ = weight;
    return m;
  }
  /// f(x) dx; f must be nonnegative.
  static InitialMeasureSpec density(TestFunction f) {
    InitialMeasureSpec m(Kind::density);
    m.density_ = std::make_shared<TestFunction>(f);
    return m;
  }
  static InitialMeasureSpec sum(std::vector<InitialMeasureSpec> terms) {
    InitialMeasureSpec m(Kind::sum);
    m.terms_ = std::move(terms);
    return m;
  }

  [[nodiscard]] Kind kind() const { return kind_; }

  /// Mass of the cell between lo < hi under the given rule, restricted to
  /// [-W, W) (W = inf for no restriction).
  [[nodiscard]] double cell_mass(double lo, double hi, CellRule rule,
                                 double W = std::numeric_limits<double>::infinity()) const {
    const double a = std::max(lo, -W), b = std::min(hi, W);
    switch (kind_) {
      case Kind::zero: return 0.0;
      case Kind::heaviside_left: return std::max(0.0, std::min(b, 0.0) - a);
      case Kind::heaviside_right: return std::max(0.0, b - std::max(a, 0.0));
      case Kind::point: {
        if (x_ < -W || x_ >= W) return 0.0;
        const bool in = rule == CellRule::right_open ? (x_ >= lo && x_ < hi) : (x_ > lo && x_ <= hi);
        return in ? weight_ : 0.0;
      }
      case Kind::density: return a < b ? integrate_density(a, b) : 0.0;
      case Kind::sum: {
        double s = 0.0;
        for (const auto& t : terms_) s += t.cell_mass(lo, hi, rule, W);
        return s;
      }
    }
    return 0.0;
  }

  /// n mu([k/n, (k+1)/n)) (or the left-open cell), computed in the scaled
  /// coordinate s = n x so that indicator-type measures come out exact.
  [[nodiscard]] double scaled_cell_mass(int k, int n, CellRule rule) const {
    const double dn = n;
    const double lo = k, hi = k + 1.0;
    switch (kind_) {
      case Kind::zero: return 0.0;
      case Kind::heaviside_left: return std::max(0.0, std::min(hi, 0.0) - lo);
      case Kind::heaviside_right: return std::max(0.0, hi - std::max(lo, 0.0));
      case Kind::point: {
        const double s = x_ * dn;
        const bool in = rule == CellRule::right_open ? (s >= lo && s < hi) : (s > lo && s <= hi);
        return in ? dn * weight_ : 0.0;
      }
      case Kind::density: {
        const auto& f = *density_;
        if (f.kind() == TestFunction::Kind::indicator)
          return std::max(0.0, std::min(hi, f.param_b() * dn) - std::max(lo, f.param_a() * dn));
        if (f.kind() == TestFunction::Kind::constant) return f.param_b();
        return dn * integrate_density(lo / dn, hi / dn);
      }
      case Kind::sum: {
        double acc = 0.0;
        for (const auto& t : terms_) acc += t.scaled_cell_mass(k, n, rule);
        return acc;
      }
    }
    return 0.0;
  }

  /// True if some atom sits exactly on a point of (1/n)Z.
  [[nodiscard]] bool has_atom_on_grid(int n) const {
    if (kind_ == Kind::point) {
      const double s = x_ * n;
      return s == std::floor(s);
    }
    if (kind_ == Kind::sum)
      return std::any_of(terms_.begin(), terms_.end(), [n](const auto& t) { return t.has_atom_on_grid(n); });
    return false;
  }

  /// Leftmost and rightmost points of the support inside [-W, W]
  /// (+inf, -inf for the zero measure).
  [[nodiscard]] std::pair<double, double> support_bounds(double W) const {
    constexpr double inf = std::numeric_limits<double>::infinity();
    switch (kind_) {
      case Kind::zero: return {inf, -inf};
      case Kind::heaviside_left: return {-W, 0.0};
      case Kind::heaviside_right: return {0.0, W};
      case Kind::point:
        if (weight_ == 0.0 || x_ < -W || x_ > W) return {inf, -inf};
        return {x_, x_};
      case Kind::density: {
        const auto& f = *density_;
        if (f.kind() == TestFunction::Kind::indicator) {
          const double lo = std::max(f.param_a(), -W), hi = std::min(f.param_b(), W);
          return lo < hi ? std::pair{lo, hi} : std::pair{inf, -inf};
        }
        if (f.kind() == TestFunction::Kind::constant && f.param_b() == 0.0) return {inf, -inf};
        return {-W, W};
      }
      case Kind::sum: {
        double l = inf, r = -inf;
        for (const auto& t : terms_) {
          auto [a, b] = t.support_bounds(W);
          l = std::min(l, a);
          r = std::max(r, b);
        }
        return {l, r};
      }
    }
    return {inf, -inf};
  }

  [[nodiscard]] std::string describe() const {
    switch (kind_) {
      case Kind::zero: return "zero";
      case Kind::heaviside_left: return "heaviside_left";
      case Kind::heaviside_right: return "heaviside_right";
      case Kind::point: return "point(" + std::to_string(x_) + "," + std::to_string(weight_) + ")";
      case Kind::density: return "density(" + density_->describe() + ")";
      case Kind::sum: {
        std::string s = "sum(";
        for (std::size_t i = 0; i < terms_.size(); ++i) s += (i ? "," : "") + terms_[i].describe();
        return s + ")";
      }
    }
    return "?";
  }

 private:
  explicit InitialMeasureSpec(Kind k) : kind_(k) {}

  [[nodiscard]] double integrate_density(double a, double b) const {
    const auto& f = *density_;
    if (f.kind() == TestFunction::Kind::indicator)
      return std::max(0.0, std::min(b, f.param_b()) - std::max(a, f.param_a()));
    if (f.kind() == TestFunction::Kind::constant) return f.param_b() * (b - a);
    // Composite 5-point Gauss-Legendre.
    static constexpr std::array<double, 5> xs{0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                                              0.9061798459386640};
    static constexpr std::array<double, 5> ws{0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                                              0.2369268850561891, 0.2369268850561891};
    constexpr int pieces = 8;
    const double h = (b - a) / pieces;
    double s = 0.0;
    for (int p = 0; p < pieces; ++p) {
      const double mid = a + (p + 0.5) * h;
      for (std::size_t i = 0; i < 5; ++i) s += ws[i] * f(mid + 0.5 * h * xs[i]);
    }
    return s * 0.5 * h;
  }

  Kind kind_;
  double x_ = 0.0;
  double weight_ = 0.0;
  std::shared_ptr<TestFunction> density_;
  std::vector<InitialMeasureSpec> terms_;
};

/// Lattice window for physical half-width W at scale n (radius n W).
inline KernelGrid rescaled_window(double W, int n, Boundary b) {
  const int K = static_cast<int>(std::lround(W * n));
  return KernelGrid(K, 1.0 / n, b);
}

/// u0n(k) = n mu0(cell k) on the window of radius K = round(n W); the
/// window is the union of its cells, [-K/n, (K+1)/n).
inline LatticeField coarse_grain(const InitialMeasureSpec& mu, int n, double W, Boundary b,
                                 CellRule rule = CellRule::right_open) {
  if (n < 1) throw std::invalid_argument("scale n must be >= 1");
  const KernelGrid g = rescaled_window(W, n, b);
  LatticeField f(g);
  for (int k = -g.radius; k <= g.radius; ++k) f.at(k) = mu.scaled_cell_mass(k, n, rule);
  return f;
}

/// Coarse-grains the pair of initial measures. Different cell rules for the
/// two types are rejected when an atom sits on a cell boundary, since the
/// types would then be split along different conventions.
inline std::pair<LatticeField, LatticeField> coarse_initial(const InitialMeasureSpec& mu, const InitialMeasureSpec& nu,
                                                            int n, double W, Boundary b,
                                                            CellRule rule_mu = CellRule::right_open,
                                                            CellRule rule_nu = CellRule::right_open) {
  if (rule_mu != rule_nu && (mu.has_atom_on_grid(n) || nu.has_atom_on_grid(n)))
    throw std::invalid_argument("initial.cell_rule: an atom lies on a cell boundary and the two types use different rules");
  return {coarse_grain(mu, n, W, b, rule_mu), coarse_grain(nu, n, W, b, rule_nu)};
}

/// Atoms (k/n, u(k)/n) of a lattice field at scale n.
struct RescaledMeasure {
  int n = 1;
  LatticeField field;

  [[nodiscard]] double position(std::size_t i) const { return field.grid().site(static_cast<int>(i)) / double(n); }
  [[nodiscard]] double mass(std::size_t i) const { return field[i] / n; }
  [[nodiscard]] double total() const { return field.total() / n; }

  /// <mu, phi> = (1/n) sum_k u(k) phi(k/n).
  template <class F>
  [[nodiscard]] double pair(const F& phi) const {
    double s = 0.0;
    for (std::size_t i = 0; i < field.size(); ++i) s += field[i] * phi(position(i));
    return s / n;
  }
};

/// Re-expresses a lattice snapshot taken at internal time n^2 t as a measure
/// on (1/n)Z at rescaled time t.
inline RescaledMeasure rescale_snapshot(const LatticeField& u, double internal_time, int n, double t) {
  if (n < 1) throw std::invalid_argument("scale n must be >= 1");
  const double want = static_cast<double>(n) * n * t;
  if (std::abs(internal_time - want) > 1e-9 * std::max(1.0, want))
    throw std::invalid_argument("snapshot time " + std::to_string(internal_time) + " is not n^2 t = " +
                                std::to_string(want));
  return RescaledMeasure{n, u};
}

/// Continuum measure discretised on a fine grid of spacing h over [-W, W]:
/// node x_j carries the mass of [x_j - h/2, x_j + h/2).
inline GridMeasure continuum_grid(const InitialMeasureSpec& mu, double W, double h) {
  GridMeasure g;
  g.radius = static_cast<int>(std::lround(W / h));
  g.spacing = h;
  g.mass.assign(static_cast<std::size_t>(2 * g.radius + 1), 0.0);
  for (int j = -g.radius; j <= g.radius; ++j)
    g.mass[static_cast<std::size_t>(j + g.radius)] = mu.cell_mass((j - 0.5) * h, (j + 0.5) * h, CellRule::right_open);
  return g;
}

/// <phi, S_t mu0> for a grid measure, with the Gaussian kernel integrated by
/// the trapezoid rule on the same grid.
inline double continuum_first_moment(const TestFunction& phi, const GridMeasure& mu, double t) {
  if (t == 0.0) {
    double s = 0.0;
    for (std::size_t i = 0; i < mu.mass.size(); ++i) s += mu.mass[i] * phi(mu.position(i));
    return s;
  }
  const double h = mu.spacing;
  const int L = static_cast<int>(std::ceil(12.0 * std::sqrt(t) / h)) + 1;
  std::vector<double> ker(static_cast<std::size_t>(L) + 1);
  for (int d = 0; d <= L; ++d) ker[static_cast<std::size_t>(d)] = continuous_heat_kernel(t, d * h) * h;
  double s = 0.0;
  for (std::size_t i = 0; i < mu.mass.size(); ++i) {
    if (mu.mass[i] == 0.0) continue;
    const double x = mu.position(i);
    double sp = 0.0;
    for (int d = -L; d <= L; ++d) sp += ker[static_cast<std::size_t>(std::abs(d))] * phi(x + d * h);
    s += mu.mass[i] * sp;
  }
  return s;
}

/// <u, S phi^(n)> with phi^(n)(k) = phi(k/n)/n, semigroup at internal time t.
inline double lattice_first_moment(const TestFunction& phi, const LatticeField& u, double t, int n) {
  const double dn = n;
  double s = 0.0;
  for (int k = -u.grid().radius; k <= u.grid().radius; ++k) {
    const double m = u.at(k);
    if (m == 0.0) continue;
    s += m * (t == 0.0 ? phi(k / dn) / dn : semigroup_at(t, k, [&](int j) { return phi(j / dn) / dn; }));
  }
  return s;
}

/// Moment references of the infinite-rate system for one test pair.
struct MomentReference {
  double mean_u = 0.0;   // <phi, S_t mu0>
  double second_u = 0.0;  // <phi, S_t mu0>^2 + |rho|^-1 <phi (x) phi, (S2 - S~)(mu0 (x) nu0)>
  double mixed = 0.0;    // <phi (x) psi, S~ (mu0 (x) nu0)>
};

inline MomentReference continuum_reference(const TestFunction& phi, const TestFunction& psi, const GridMeasure& mu,
                                           const GridMeasure& nu, double rho, double t) {
  MomentReference r;
  r.mean_u = continuum_first_moment(phi, mu, t);
  if (t == 0.0) {
    r.second_u = r.mean_u * r.mean_u;
    r.mixed = r.mean_u * continuum_first_moment(psi, nu, 0.0);
    return r;
  }
  const double un = pair_killed_continuous(phi, phi, mu, nu, t, false).value;
  const double ki = pair_killed_continuous(phi, phi, mu, nu, t, true).value;
  r.second_u = r.mean_u * r.mean_u + (un - ki) / std::abs(rho);
  r.mixed = pair_killed_continuous(phi, psi, mu, nu, t, true).value;
  return r;
}

/// Same references for the lattice system at scale n (internal time n^2 t).
inline MomentReference lattice_reference(const TestFunction& phi, const TestFunction& psi, const LatticeField& u0,
                                         const LatticeField& v0, double rho, double t, int n) {
  MomentReference r;
  const double ti = static_cast<double>(n) * n * t;
  r.mean_u = lattice_first_moment(phi, u0, ti, n);
  if (t == 0.0) {
    r.second_u = r.mean_u * r.mean_u;
    r.mixed = r.mean_u * lattice_first_moment(psi, v0, 0.0, n);
    return r;
  }
  const double un = pair_killed(phi, phi, u0, v0, ti, false, n).value;
  const double ki = pair_killed(phi, phi, u0, v0, ti, true, n).value;
  r.second_u = r.mean_u * r.mean_u + (un - ki) / std::abs(rho);
  r.mixed = pair_killed(phi, psi, u0, v0, ti, true, n).value;
  return r;
}

/// Internal Trotter step at scale n.
struct RescaledStep {
  enum class Policy {
    fixed_internal,  // delta_int = value for every n
    fixed_rescaled,  // delta_int = value * n^2
  };
  Policy policy = Policy::fixed_internal;
  double value = 0.05;
  [[nodiscard]] double internal(int n) const {
    return policy == Policy::fixed_internal ? value : value * static_cast<double>(n) * n;
  }
};

struct TestPair {
  std::string id;
  TestFunction phi;
  TestFunction psi;
};

struct ConvergenceSetup {
  InitialMeasureSpec mu0 = InitialMeasureSpec::heaviside_left();
  InitialMeasureSpec nu0 = InitialMeasureSpec::heaviside_right();
  double rho = -0.5;
  std::vector<int> n_list{4, 16};
  std::vector<double> t_list{0.5};
  std::vector<TestPair> tests;
  std::size_t replicas = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  double W = 10.0;
  Boundary boundary = Boundary::reflecting;
  CellRule cell_rule = CellRule::right_open;
  RescaledStep step{};
  ExitSamplerConfig exit{};
  /// Spacing of the grid carrying the continuum references.
  double reference_spacing = 1.0 / 128.0;
};

/// One row of the trend table.
struct TrendRow {
  int n;
  double t;
  std::string phi_id;
  std::string statistic;
  double estimate;
  double std_error;
  double reference;
  double gap;
};

/// Monte Carlo moments of the rescaled infinite-rate system against the
/// continuum references, per scale n, time t and test pair. Statistics:
///   mean, second_moment, mixed_moment  (Monte Carlo vs continuum)
///   lattice_mean, lattice_second_moment, lattice_mixed_moment
///                                      (exact lattice references vs continuum)
///   time_averaged_mean_distance        (int |E<mu_t,phi> - ref| e^-t dt over the time grid;
///                                       only with two or more times)
inline std::vector<TrendRow> convergence_experiment(const ConvergenceSetup& cfg) {
  if (!std::is_sorted(cfg.n_list.begin(), cfg.n_list.end())) throw std::invalid_argument("n_list must be increasing");
  if (!std::is_sorted(cfg.t_list.begin(), cfg.t_list.end())) throw std::invalid_argument("t_list must be increasing");
  if (cfg.tests.empty()) throw std::invalid_argument("convergence experiment needs at least one test pair");
  const GridMeasure mu_c = continuum_grid(cfg.mu0, cfg.W, cfg.reference_spacing);
  const GridMeasure nu_c = continuum_grid(cfg.nu0, cfg.W, cfg.reference_spacing);

  std::vector<std::vector<MomentReference>> cont(cfg.t_list.size());
  for (std::size_t it = 0; it < cfg.t_list.size(); ++it)
    for (const auto& tp : cfg.tests) cont[it].push_back(continuum_reference(tp.phi, tp.psi, mu_c, nu_c, cfg.rho, cfg.t_list[it]));

  std::vector<TrendRow> rows;
  for (std::size_t in = 0; in < cfg.n_list.size(); ++in) {
    const int n = cfg.n_list[in];
    auto [u0, v0] = coarse_initial(cfg.mu0, cfg.nu0, n, cfg.W, cfg.boundary, cfg.cell_rule, cfg.cell_rule);
    TrotterConfig tc{cfg.step.internal(n), cfg.exit};
    std::vector<double> internal_times;
    for (double t : cfg.t_list) internal_times.push_back(static_cast<double>(n) * n * t);
    const std::size_t nt = cfg.t_list.size(), np = cfg.tests.size();
    // Per replica: for each (t, pair) the values <mu,phi>, <mu,phi>^2, <mu,phi><nu,psi>.
    auto per_rep = run_replicas(cfg.replicas, cfg.seed, static_cast<std::uint64_t>(n), cfg.threads,
                                [&](std::size_t, Rng& rng) {
                                  struct Obs {
                                    const ConvergenceSetup& c;
                                    int n;
                                    std::vector<double> out;
                                    std::size_t it = 0;
                                    void on_jump(const JumpEvent&) {}
                                    void on_snapshot(const PopulationState& s) {
                                      const double t = c.t_list[it++];
                                      const auto mu = rescale_snapshot(s.u, s.time, n, t);
                                      const auto nu = rescale_snapshot(s.v, s.time, n, t);
                                      for (const auto& tp : c.tests) {
                                        const double a = mu.pair(tp.phi), b = nu.pair(tp.psi);
                                        out.push_back(a);
                                        out.push_back(a * a);
                                        out.push_back(a * b);
                                      }
                                    }
                                  } obs{cfg, n, {}};
                                  obs.out.reserve(nt * np * 3);
                                  simulate_infinite_rate(PopulationState(u0, v0, cfg.rho), tc, internal_times, rng, obs);
                                  return obs.out;
                                });
    std::vector<std::vector<double>> means(nt, std::vector<double>(np));
    for (std::size_t it = 0; it < nt; ++it) {
      const double t = cfg.t_list[it];
      for (std::size_t ip = 0; ip < np; ++ip) {
        RunningStats s_mean, s_second, s_mixed;
        const std::size_t base = (it * np + ip) * 3;
        for (const auto& r : per_rep) {
          s_mean.add(r[base]);
          s_second.add(r[base + 1]);
          s_mixed.add(r[base + 2]);
        }
        const auto& ref = cont[it][ip];
        const std::string& id = cfg.tests[ip].id;
        rows.push_back({n, t, id, "mean", s_mean.mean(), s_mean.std_error(), ref.mean_u, std::abs(s_mean.mean() - ref.mean_u)});
        rows.push_back({n, t, id, "second_moment", s_second.mean(), s_second.std_error(), ref.second_u,
                        std::abs(s_second.mean() - ref.second_u)});
        rows.push_back({n, t, id, "mixed_moment", s_mixed.mean(), s_mixed.std_error(), ref.mixed,
                        std::abs(s_mixed.mean() - ref.mixed)});
        const auto lat = lattice_reference(cfg.tests[ip].phi, cfg.tests[ip].psi, u0, v0, cfg.rho, t, n);
        rows.push_back({n, t, id, "lattice_mean", lat.mean_u, 0.0, ref.mean_u, std::abs(lat.mean_u - ref.mean_u)});
        rows.push_back({n, t, id, "lattice_second_moment", lat.second_u, 0.0, ref.second_u,
                        std::abs(lat.second_u - ref.second_u)});
        rows.push_back({n, t, id, "lattice_mixed_moment", lat.mixed, 0.0, ref.mixed, std::abs(lat.mixed - ref.mixed)});
        means[it][ip] = s_mean.mean();
      }
    }
    for (std::size_t ip = 0; ip < np && nt > 1; ++ip) {
      double acc = 0.0;
      for (std::size_t it = 1; it < nt; ++it) {
        const double t0 = cfg.t_list[it - 1], t1 = cfg.t_list[it];
        const double f0 = std::abs(means[it - 1][ip] - cont[it - 1][ip].mean_u) * std::exp(-t0);
        const double f1 = std::abs(means[it][ip] - cont[it][ip].mean_u) * std::exp(-t1);
        acc += 0.5 * (f0 + f1) * (t1 - t0);
      }
      rows.push_back({n, cfg.t_list.back(), cfg.tests[ip].id, "time_averaged_mean_distance", acc, 0.0, 0.0, acc});
    }
  }
  return rows;
}

}  // namespace sbm
