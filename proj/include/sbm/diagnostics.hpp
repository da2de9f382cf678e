#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbm/ensemble.hpp"
#include "sbm/finite_rate.hpp"
#include "sbm/infinite_rate.hpp"
#include "sbm/kernels.hpp"
#include "sbm/lattice.hpp"
#include "sbm/rescaling.hpp"
#include "sbm/stats.hpp"

namespace sbm {

/// One row of a diagnostic summary. For a negative control `pass` means the
/// check detected the planted error.
struct CheckResult {
  std::string id;
  double estimate = 0.0;
  double reference = 0.0;
  double std_error = 0.0;
  double z = 0.0;
  bool pass = false;
  bool negative_control = false;
};

inline CheckResult z_check(std::string id, double estimate, double reference, double se, double zmax = 3.0) {
  CheckResult r{std::move(id), estimate, reference, se, z_score(estimate, reference, se), false, false};
  r.pass = std::abs(r.z) <= zmax;
  return r;
}

inline CheckResult negative_control(std::string id, double estimate, double reference, double se,
                                    double zmin = 3.0) {
  CheckResult r{std::move(id), estimate, reference, se, z_score(estimate, reference, se), false, true};
  r.pass = std::abs(r.z) > zmin;
  return r;
}

// ---------------------------------------------------------------------------
// Duality function

/// Site coefficients of the bracket <<mu, nu, phi, psi>> as a linear form
/// sum_k a_k mu(k) + b_k nu(k).
class DualityBracket {
 public:
  DualityBracket(const LatticeField& phi, const LatticeField& psi, double rho) {
    if (!(rho > -1.0 && rho < 1.0)) throw std::invalid_argument("duality function needs rho in (-1, 1)");
    if (!(phi.grid() == psi.grid())) throw std::invalid_argument("phi and psi must share a window");
    const double sm = std::sqrt(1.0 - rho), sp = std::sqrt(1.0 + rho);
    a_.resize(phi.size());
    b_.resize(phi.size());
    for (std::size_t k = 0; k < phi.size(); ++k) {
      const double plus = phi[k] + psi[k], minus = phi[k] - psi[k];
      a_[k] = {-sm * plus, sp * minus};
      b_[k] = {-sm * plus, -sp * minus};
    }
  }

  [[nodiscard]] std::complex<double> a(std::size_t k) const { return a_[k]; }
  [[nodiscard]] std::complex<double> b(std::size_t k) const { return b_[k]; }

  [[nodiscard]] std::complex<double> operator()(const LatticeField& mu, const LatticeField& nu) const {
    if (mu.size() != a_.size() || nu.size() != a_.size()) throw std::invalid_argument("bracket window mismatch");
    std::complex<double> s{0.0, 0.0};
    for (std::size_t k = 0; k < a_.size(); ++k) s += a_[k] * mu[k] + b_[k] * nu[k];
    return s;
  }

 private:
  std::vector<std::complex<double>> a_, b_;
};

/// <<mu, nu, phi, psi>>_rho = -sqrt(1-rho) <mu+nu, phi+psi> + i sqrt(1+rho) <mu-nu, phi-psi>.
inline std::complex<double> duality_bracket(const LatticeField& mu, const LatticeField& nu, const LatticeField& phi,
                                            const LatticeField& psi, double rho) {
  return DualityBracket(phi, psi, rho)(mu, nu);
}

/// F = exp(bracket); |F| <= 1 for nonnegative inputs.
inline std::complex<double> duality_value(const LatticeField& mu, const LatticeField& nu, const LatticeField& phi,
                                          const LatticeField& psi, double rho) {
  return std::exp(duality_bracket(mu, nu, phi, psi, rho));
}

// ---------------------------------------------------------------------------
// Self-duality

struct SelfDualitySetup {
  PopulationState forward;  // (u0, v0) and rho
  LatticeField dual_u;
  LatticeField dual_v;
  double t = 0.5;
  std::size_t replicas = 20000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  TrotterConfig trotter{};
  /// Correlation used to run the dual side; unset means forward.rho.
  std::optional<double> dual_rho = std::nullopt;
};

struct SelfDualityResult {
  std::complex<double> lhs, rhs;
  double se_re = 0.0, se_im = 0.0;  // standard error of lhs - rhs
  double z_re = 0.0, z_im = 0.0;
};

/// E_{u0,v0} F(u_t, v_t, du0, dv0) against E_{du0,dv0} F(u0, v0, du_t, dv_t),
/// both sides by independent infinite-rate ensembles.
inline SelfDualityResult self_duality_test(const SelfDualitySetup& cfg) {
  const double rho = cfg.forward.rho;
  const PopulationState dual(cfg.dual_u, cfg.dual_v, cfg.dual_rho.value_or(rho));
  const DualityBracket fwd_bracket(cfg.dual_u, cfg.dual_v, rho);
  auto side = [&](const PopulationState& start, std::uint64_t experiment, auto&& value) {
    auto vals = run_replicas(cfg.replicas, cfg.seed, experiment, cfg.threads, [&](std::size_t, Rng& rng) {
      struct Obs {
        std::complex<double> f;
        decltype(value)& val;
        void on_jump(const JumpEvent&) {}
        void on_snapshot(const PopulationState& s) { f = val(s); }
      } obs{{}, value};
      simulate_infinite_rate(start, cfg.trotter, {cfg.t}, rng, obs);
      return obs.f;
    });
    RunningStats re, im;
    for (auto z : vals) {
      re.add(z.real());
      im.add(z.imag());
    }
    return std::pair{re, im};
  };
  auto lhs_value = [&](const PopulationState& s) { return std::exp(fwd_bracket(s.u, s.v)); };
  auto rhs_value = [&](const PopulationState& s) {
    return std::exp(duality_bracket(cfg.forward.u, cfg.forward.v, s.u, s.v, rho));
  };
  const auto [lre, lim] = side(cfg.forward, 101, lhs_value);
  const auto [rre, rim] = side(dual, 102, rhs_value);
  SelfDualityResult r;
  r.lhs = {lre.mean(), lim.mean()};
  r.rhs = {rre.mean(), rim.mean()};
  r.se_re = std::hypot(lre.std_error(), rre.std_error());
  r.se_im = std::hypot(lim.std_error(), rim.std_error());
  r.z_re = z_score(r.lhs.real(), r.rhs.real(), r.se_re);
  r.z_im = z_score(r.lhs.imag(), r.rhs.imag(), r.se_im);
  return r;
}

// ---------------------------------------------------------------------------
// Martingale residual

struct MartingaleSetup {
  PopulationState initial;
  LatticeField phi;
  LatticeField psi;
  std::vector<double> times{0.25, 0.5, 1.0};
  std::size_t replicas = 20000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  TrotterConfig trotter{};
  /// Leave out the collision term (negative control).
  bool drop_collision_term = false;
};

struct ResidualRow {
  double t;
  std::complex<double> mean;
  double se_re, se_im;
  double z_re, z_im;
};

/// Replica mean of
///   F(t) - F(0) - 1/2 int_0^t F <<u, v, Lap phi, Lap psi>> ds - 4 (1 - rho^2) int_0^t F phi psi dLambda
/// with F = F(u_s, v_s, phi, psi). The drift integral uses Simpson's rule
/// over each migration step; the collision term at a resampled site is
/// estimated without bias by F_after (1 - exp(-kappa tau)), kappa =
/// 4 (1 - rho^2) phi(k) psi(k), since F exp(-kappa s) is a martingale along
/// the exit path. Needs exit times, i.e. the direct sampler.
inline std::vector<ResidualRow> martingale_residual(const MartingaleSetup& cfg) {
  if (cfg.trotter.exit.method != ExitMethod::direct)
    throw std::invalid_argument("martingale residual needs exit times; use the direct exit sampler");
  const double rho = cfg.initial.rho;
  const DualityBracket bracket(cfg.phi, cfg.psi, rho);
  const DualityBracket lap_bracket(discrete_laplacian(cfg.phi), discrete_laplacian(cfg.psi), rho);
  std::vector<double> kappa(cfg.phi.size());
  for (std::size_t k = 0; k < kappa.size(); ++k) kappa[k] = 4.0 * (1.0 - rho * rho) * cfg.phi[k] * cfg.psi[k];
  const auto half_step = truncated_kernel(0.5 * cfg.trotter.delta);
  const KernelGrid grid = cfg.initial.grid();
  const std::size_t nt = cfg.times.size();

  auto per_rep = run_replicas(cfg.replicas, cfg.seed, 201, cfg.threads, [&](std::size_t, Rng& rng) {
    struct Obs {
      const MartingaleSetup& c;
      const DualityBracket& br;
      const DualityBracket& lap;
      const std::vector<double>& kappa;
      const std::vector<double>& half_step;
      const KernelGrid& grid;
      std::complex<double> current;  // bracket of the current state
      std::complex<double> f0;
      std::complex<double> drift{0.0, 0.0};
      std::complex<double> collision{0.0, 0.0};
      std::vector<std::complex<double>> out;

      std::complex<double> drift_density(const LatticeField& u, const LatticeField& v) const {
        return 0.5 * std::exp(br(u, v)) * lap(u, v);
      }
      void on_migrated(const PopulationState& before, const PopulationState& after) {
        LatticeField mu(grid), mv(grid);
        apply_kernel(grid, before.u.values(), half_step, mu.values());
        apply_kernel(grid, before.v.values(), half_step, mv.values());
        drift += c.trotter.delta / 6.0 *
                 (drift_density(before.u, before.v) + 4.0 * drift_density(mu, mv) + drift_density(after.u, after.v));
        current = br(after.u, after.v);
      }
      void on_jump(const JumpEvent& e) {
        const auto k = static_cast<std::size_t>(grid.index(e.site));
        current += br.a(k) * e.du + br.b(k) * e.dv;
        if (!std::isfinite(e.tau)) throw std::runtime_error("exit time missing from jump record");
        collision += std::exp(current) * -std::expm1(-kappa[k] * e.tau);
      }
      void on_snapshot(const PopulationState&) {
        std::complex<double> r = std::exp(current) - f0 - drift;
        if (!c.drop_collision_term) r -= collision;
        out.push_back(r);
      }
    } obs{cfg, bracket, lap_bracket, kappa, half_step, grid, {}, {}, {}, {}, {}};
    obs.current = bracket(cfg.initial.u, cfg.initial.v);
    obs.f0 = std::exp(obs.current);
    obs.out.reserve(nt);
    simulate_infinite_rate(cfg.initial, cfg.trotter, cfg.times, rng, obs);
    return obs.out;
  });

  std::vector<ResidualRow> rows;
  for (std::size_t i = 0; i < nt; ++i) {
    RunningStats re, im;
    for (const auto& r : per_rep) {
      re.add(r[i].real());
      im.add(r[i].imag());
    }
    rows.push_back({cfg.times[i], {re.mean(), im.mean()}, re.std_error(), im.std_error(),
                    z_score(re.mean(), 0.0, re.std_error()), z_score(im.mean(), 0.0, im.std_error())});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Supports and the interface

/// Leftmost and rightmost sites with value > threshold; (+inf, -inf) when
/// there are none.
struct SupportStats {
  double L = std::numeric_limits<double>::infinity();
  double R = -std::numeric_limits<double>::infinity();
  [[nodiscard]] bool empty() const { return L > R; }
};

inline constexpr double infinite_rate_support_threshold = 1e-12;
inline constexpr double finite_rate_support_threshold = 1e-8;

inline SupportStats support_stats(const LatticeField& f, double threshold = infinite_rate_support_threshold) {
  if (!(threshold >= 0.0)) throw std::invalid_argument("support threshold must be >= 0");
  SupportStats s;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] > threshold) {
      const double site = f.grid().site(static_cast<int>(i));
      s.L = std::min(s.L, site);
      s.R = std::max(s.R, site);
    }
  }
  return s;
}

struct InterfaceSetup {
  PopulationState initial;
  std::vector<double> times{1.0};
  std::size_t replicas = 2000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  TrotterConfig trotter{};
  double threshold = infinite_rate_support_threshold;
  /// Sites with |k| <= core_fraction * K count for the zero-site fraction.
  double core_fraction = 0.5;
};

struct InterfaceRow {
  double t = 0.0;
  double ordered_fraction = 0.0;       // R(u_t) <= L(v_t)
  double single_point_fraction = 0.0;  // R(u_t) = L(v_t) - 1
  double position_mean = 0.0;          // R(u_t) + 1/2 over replicas with both types present
  double position_sd = 0.0;
  double position_median = 0.0;
  double zero_site_fraction = 0.0;     // u + v <= threshold in the core
};

struct InterfaceReport {
  std::vector<InterfaceRow> rows;
  /// positions[time][replica]; NaN when a type is extinct.
  std::vector<std::vector<double>> positions;
};

inline InterfaceReport interface_report(const InterfaceSetup& cfg) {
  const auto su = support_stats(cfg.initial.u, cfg.threshold), sv = support_stats(cfg.initial.v, cfg.threshold);
  if (!(su.R < sv.L)) throw std::invalid_argument("interface report needs an ordered start R(u0) < L(v0)");
  struct Sample {
    bool ordered, single;
    double position;
    double zero_fraction;
  };
  const int K = cfg.initial.grid().radius;
  const int core = static_cast<int>(std::floor(cfg.core_fraction * K));
  auto per_rep = run_replicas(cfg.replicas, cfg.seed, 301, cfg.threads, [&](std::size_t, Rng& rng) {
    struct Obs {
      const InterfaceSetup& c;
      int core;
      std::vector<Sample> out;
      void on_jump(const JumpEvent&) {}
      void on_snapshot(const PopulationState& s) {
        const auto a = support_stats(s.u, c.threshold), b = support_stats(s.v, c.threshold);
        Sample x{};
        x.ordered = a.R <= b.L;
        x.single = !a.empty() && !b.empty() && a.R == b.L - 1;
        x.position = (!a.empty() && !b.empty()) ? a.R + 0.5 : std::numeric_limits<double>::quiet_NaN();
        int zeros = 0;
        for (int k = -core; k <= core; ++k)
          if (s.u.at(k) + s.v.at(k) <= c.threshold) ++zeros;
        x.zero_fraction = static_cast<double>(zeros) / (2 * core + 1);
        out.push_back(x);
      }
    } obs{cfg, core, {}};
    simulate_infinite_rate(cfg.initial, cfg.trotter, cfg.times, rng, obs);
    return obs.out;
  });
  InterfaceReport rep;
  for (std::size_t i = 0; i < cfg.times.size(); ++i) {
    InterfaceRow row;
    row.t = cfg.times[i];
    RunningStats pos, zero;
    std::vector<double> ps, all;
    std::size_t ordered = 0, single = 0;
    for (const auto& r : per_rep) {
      const auto& x = r[i];
      ordered += x.ordered;
      single += x.single;
      zero.add(x.zero_fraction);
      all.push_back(x.position);
      if (!std::isnan(x.position)) {
        pos.add(x.position);
        ps.push_back(x.position);
      }
    }
    const double n = static_cast<double>(per_rep.size());
    row.ordered_fraction = ordered / n;
    row.single_point_fraction = single / n;
    row.position_mean = pos.mean();
    row.position_sd = pos.stddev();
    if (!ps.empty()) {
      std::sort(ps.begin(), ps.end());
      const std::size_t m = ps.size();
      row.position_median = m % 2 ? ps[m / 2] : 0.5 * (ps[m / 2 - 1] + ps[m / 2]);
    }
    row.zero_site_fraction = zero.mean();
    rep.rows.push_back(row);
    rep.positions.push_back(std::move(all));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Moment identities of the infinite-rate system

struct MomentCheckSetup {
  PopulationState initial;
  TestFunction phi = TestFunction::gaussian(0.0, 2.0);
  TestFunction psi = TestFunction::gaussian(0.0, 2.0);
  std::vector<double> times{0.5, 1.0};
  std::size_t replicas = 20000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  TrotterConfig trotter{};
};

namespace detail {

inline LatticeField sample_on(const KernelGrid& g, const TestFunction& f) {
  LatticeField out(g);
  for (int k = -g.radius; k <= g.radius; ++k) out.at(k) = f(k);
  return out;
}

}  // namespace detail

/// Per time: mean <u_t, phi> against <u0, S_t phi> (window semigroup),
/// mixed moment against <phi (x) psi, S~_t (u0 (x) v0)> and second moment
/// against <phi, S_t u0>^2 + |rho|^-1 <phi (x) phi, (S2 - S~)(u0 (x) v0)>.
inline std::vector<CheckResult> infinite_rate_moment_check(const MomentCheckSetup& cfg) {
  const KernelGrid g = cfg.initial.grid();
  const LatticeField phi = detail::sample_on(g, cfg.phi), psi = detail::sample_on(g, cfg.psi);
  const std::size_t nt = cfg.times.size();
  auto per_rep = run_replicas(cfg.replicas, cfg.seed, 401, cfg.threads, [&](std::size_t, Rng& rng) {
    struct Obs {
      const LatticeField& phi;
      const LatticeField& psi;
      std::vector<double> out;
      void on_jump(const JumpEvent&) {}
      void on_snapshot(const PopulationState& s) {
        const double a = s.u.pair(phi), b = s.v.pair(psi);
        out.insert(out.end(), {a, a * a, a * b});
      }
    } obs{phi, psi, {}};
    simulate_infinite_rate(cfg.initial, cfg.trotter, cfg.times, rng, obs);
    return obs.out;
  });
  const double rho = cfg.initial.rho;
  std::vector<CheckResult> rows;
  for (std::size_t i = 0; i < nt; ++i) {
    const double t = cfg.times[i];
    RunningStats m, s2, mx;
    for (const auto& r : per_rep) {
      m.add(r[3 * i]);
      s2.add(r[3 * i + 1]);
      mx.add(r[3 * i + 2]);
    }
    const double mean_ref = cfg.initial.u.pair(apply_semigroup(phi, t));
    double mixed_ref, second_ref;
    if (t == 0.0) {
      mixed_ref = cfg.initial.u.pair(phi) * cfg.initial.v.pair(psi);
      second_ref = mean_ref * mean_ref;
    } else {
      mixed_ref = pair_killed(cfg.phi, cfg.psi, cfg.initial.u, cfg.initial.v, t, true).value;
      const double un = pair_killed(cfg.phi, cfg.phi, cfg.initial.u, cfg.initial.v, t, false).value;
      const double ki = pair_killed(cfg.phi, cfg.phi, cfg.initial.u, cfg.initial.v, t, true).value;
      second_ref = mean_ref * mean_ref + (un - ki) / std::abs(rho);
    }
    const std::string ts = "t=" + std::to_string(t);
    rows.push_back(z_check("mean " + ts, m.mean(), mean_ref, m.std_error()));
    rows.push_back(z_check("mixed_moment " + ts, mx.mean(), mixed_ref, mx.std_error()));
    rows.push_back(z_check("second_moment " + ts, s2.mean(), second_ref, s2.std_error()));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Collision measure

struct CollisionCheckSetup {
  PopulationState initial;
  TestFunction phi = TestFunction::gaussian(0.0, 2.0);
  TestFunction psi = TestFunction::gaussian(0.0, 2.0);
  double t = 1.0;
  std::size_t replicas = 20000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  TrotterConfig trotter{};
};

struct CollisionCheckResult {
  CheckResult first_moment;  // sum over jumps of S_{t-s}phi S_{t-s}psi (k) du^2
  CheckResult covariation;   // sum du dv / sum du^2 against rho
};

/// E int S_{t-s}phi S_{t-s}psi dL against |rho|^-1 <phi (x) psi, (S2 - S~)(u0 (x) v0)>,
/// with the ledger of squared jumps standing in for L, and the ratio of
/// the mixed to the primary ledger against rho.
inline CollisionCheckResult collision_firstmoment_check(const CollisionCheckSetup& cfg) {
  const KernelGrid g = cfg.initial.grid();
  const LatticeField phi = detail::sample_on(g, cfg.phi), psi = detail::sample_on(g, cfg.psi);
  const long long steps = trotter_steps_for(cfg.t, cfg.trotter.delta);
  // weight[j] = S_{t - j delta} phi * S_{t - j delta} psi on the window.
  std::vector<std::vector<double>> weight(static_cast<std::size_t>(steps) + 1);
  for (long long j = 0; j <= steps; ++j) {
    const double rem = static_cast<double>(steps - j) * cfg.trotter.delta;
    const auto a = apply_semigroup(phi, rem), b = apply_semigroup(psi, rem);
    auto& w = weight[static_cast<std::size_t>(j)];
    w.resize(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) w[k] = a[k] * b[k];
  }
  struct Tally {
    double weighted = 0.0, primary = 0.0, mixed = 0.0;
  };
  auto per_rep = run_replicas(cfg.replicas, cfg.seed, 501, cfg.threads, [&](std::size_t, Rng& rng) {
    struct Obs {
      const std::vector<std::vector<double>>& weight;
      const KernelGrid& g;
      double delta;
      Tally tally;
      void on_snapshot(const PopulationState&) {}
      void on_jump(const JumpEvent& e) {
        const auto j = static_cast<std::size_t>(std::llround(e.time / delta));
        const double sq = e.du * e.du;
        tally.weighted += weight[j][static_cast<std::size_t>(g.index(e.site))] * sq;
        tally.primary += sq;
        tally.mixed += e.du * e.dv;
      }
    } obs{weight, g, cfg.trotter.delta, {}};
    simulate_infinite_rate(cfg.initial, cfg.trotter, {cfg.t}, rng, obs);
    return obs.tally;
  });
  RunningStats w;
  std::vector<double> mixed, primary;
  for (const auto& r : per_rep) {
    w.add(r.weighted);
    mixed.push_back(r.mixed);
    primary.push_back(r.primary);
  }
  const double un = pair_killed(cfg.phi, cfg.psi, cfg.initial.u, cfg.initial.v, cfg.t, false).value;
  const double ki = pair_killed(cfg.phi, cfg.psi, cfg.initial.u, cfg.initial.v, cfg.t, true).value;
  const double ref = (un - ki) / std::abs(cfg.initial.rho);
  const auto ratio = ratio_estimate(mixed, primary);
  return {z_check("collision_first_moment", w.mean(), ref, w.std_error()),
          z_check("jump_covariation_ratio", ratio.ratio, cfg.initial.rho, ratio.std_error)};
}

// ---------------------------------------------------------------------------
// Critical curve and moment growth

/// p* = pi / arccos(-rho), the root of rho + cos(pi/p) = 0.
inline double critical_curve(double rho) {
  if (!(rho > -1.0 && rho <= 0.0)) throw std::invalid_argument("critical curve needs rho in (-1, 0]");
  return std::numbers::pi / std::acos(-rho);
}

struct MomentProbeSetup {
  double rho = -0.8;
  double p = 2.5;
  std::vector<double> gammas{1.0, 10.0, 100.0};
  LatticeField u0;
  LatticeField v0;
  double t = 1.0;
  double lambda = 0.5;  // test function exp(-lambda |k|)
  double dt = 0.01;
  NoiseScheme scheme = NoiseScheme::local_walk;
  std::size_t replicas = 2000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

struct MomentProbeRow {
  double gamma;
  double moment;  // E <u_t, phi_lambda>^p
  double std_error;
};

struct MomentProbeResult {
  double p_star = 0.0;
  std::vector<MomentProbeRow> rows;
  bool flat = false;        // every value within a factor 2 of the first
  bool increasing = false;  // strictly increasing
};

inline MomentProbeResult moment_boundedness_probe(const MomentProbeSetup& cfg) {
  if (!(cfg.p >= 2.0)) throw std::invalid_argument("moment probe needs p >= 2");
  MomentProbeResult res;
  res.p_star = critical_curve(cfg.rho);
  LatticeField w(cfg.u0.grid());
  for (int k = -w.grid().radius; k <= w.grid().radius; ++k) w.at(k) = std::exp(-cfg.lambda * std::abs(k));
  for (std::size_t i = 0; i < cfg.gammas.size(); ++i) {
    FiniteRateParams fp;
    fp.gamma = cfg.gammas[i];
    fp.dt = cfg.dt;
    fp.scheme = cfg.scheme;
    const PopulationState start(cfg.u0, cfg.v0, cfg.rho);
    auto vals = run_replicas(cfg.replicas, cfg.seed, 601 + i, cfg.threads, [&](std::size_t, Rng& rng) {
      struct Obs : NullObserver {
        const LatticeField& w;
        double x = 0.0;
        explicit Obs(const LatticeField& w_) : w(w_) {}
        void on_snapshot(const PopulationState& s) { x = s.u.pair(w); }
      } obs(w);
      simulate_finite_rate(start, fp, {cfg.t}, rng, obs);
      return std::pow(obs.x, cfg.p);
    });
    const auto s = summarize(vals);
    res.rows.push_back({cfg.gammas[i], s.mean(), s.std_error()});
  }
  res.flat = true;
  res.increasing = true;
  for (std::size_t i = 1; i < res.rows.size(); ++i) {
    const double r = res.rows[i].moment / res.rows[0].moment;
    if (!(r <= 2.0 && r >= 0.5)) res.flat = false;
    if (!(res.rows[i].moment > res.rows[i - 1].moment)) res.increasing = false;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Semicontinuity of the support extremes under coarse-graining

struct SemicontinuityRow {
  int n;
  double R_mu;  // R(mu^(n)) in physical units
  double L_nu;  // L(nu^(n))
  bool ok;      // R(mu) <= R(mu^(n)) + 1/n and L(nu) >= L(nu^(n)) - 1/n
};

inline std::vector<SemicontinuityRow> semicontinuity_proxy(const InitialMeasureSpec& mu, const InitialMeasureSpec& nu,
                                                           const std::vector<int>& n_list, double W) {
  const auto [mu_l, mu_r] = mu.support_bounds(W);
  const auto [nu_l, nu_r] = nu.support_bounds(W);
  (void)mu_l;
  (void)nu_r;
  std::vector<SemicontinuityRow> rows;
  for (int n : n_list) {
    auto [u, v] = coarse_initial(mu, nu, n, W, Boundary::reflecting);
    const auto su = support_stats(u, 0.0), sv = support_stats(v, 0.0);
    const double r = su.R / n, l = sv.L / n;
    const double eps = 1e-12;
    rows.push_back({n, r, l, mu_r <= r + 1.0 / n + eps && nu_l >= l - 1.0 / n - eps});
  }
  return rows;
}

}  // namespace sbm
