#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sbm/lattice.hpp"
#include "sbm/ledger.hpp"
#include "sbm/random.hpp"

namespace sbm {

/// Thrown when an Euler step would be too coarse for the current state.
class StabilityError : public std::runtime_error {
 public:
  StabilityError(double time, const std::string& what) : std::runtime_error(what), time_(time) {}
  [[nodiscard]] double time() const { return time_; }

 private:
  double time_;
};

/// (g1, g2) standard normals with correlation rho.
inline std::pair<double, double> correlated_noise_pair(Rng& rng, double rho) {
  const double g1 = rng.normal();
  if (rho == 1.0) return {g1, g1};
  if (rho == -1.0) return {g1, -g1};
  const double gp = rng.normal();
  return {g1, rho * g1 + std::sqrt(1.0 - rho * rho) * gp};
}

/// Step size suggested for a state: 0.1 / (gamma (1 + max u max v)).
inline double suggested_dt(const PopulationState& s, double gamma) {
  return 0.1 / (gamma * (1.0 + s.u.max() * s.v.max()));
}

enum class NoiseScheme {
  /// Euler-Maruyama with clamping of negative values to 0.
  euler,
  /// Heat step, then per site the noise part alone, run as a time-changed
  /// planar Brownian walk with steps scaled to the distance from the axes
  /// and absorbed there. Avoids the mass that clamping creates at sites
  /// where one type is tiny.
  local_walk,
};

namespace detail {

inline void check_step(const PopulationState& s, double dt, double gamma, bool bound_noise) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma must be nonnegative");
  if (dt > 1.0) throw StabilityError(s.time, "dt > 1 makes the explicit heat step unstable at t=" + std::to_string(s.time));
  if (!bound_noise) return;
  const double umax = s.u.max(), vmax = s.v.max();
  if (dt * gamma * umax * vmax > 1.0) {
    std::ostringstream msg;
    msg << "step too coarse at t=" << s.time << ": dt*gamma*max(u)*max(v) = " << dt * gamma * umax * vmax
        << " > 1 (suggested dt " << suggested_dt(s, gamma) << ")";
    throw StabilityError(s.time, msg.str());
  }
}

/// Noise part du = sqrt(gamma u v) dW1, dv = sqrt(gamma u v) dW2 at one site
/// over real time dt. Returns the collision increment gamma int u v ds.
inline double local_noise_walk(double& x, double& y, double rho, double gamma, double dt, Rng& rng) {
  double clock = 0.0;  // intrinsic time gamma int u v ds
  double left = dt;
  const double eps = 1e-5 * (x + y);
  while (left > 0.0 && x > 0.0 && y > 0.0) {
    const double lo = std::min(x, y);
    if (lo <= eps) {
      (x <= y ? x : y) = 0.0;
      break;
    }
    const double rate = gamma * x * y;
    const double h = std::min(0.1 * lo * lo, left * rate);
    left -= h / rate;
    clock += h;
    const auto [g1, g2] = correlated_noise_pair(rng, rho);
    const double sh = std::sqrt(h);
    const double nx = x + sh * g1, ny = y + sh * g2;
    if (nx >= 0.0 && ny >= 0.0) {
      x = nx;
      y = ny;
      continue;
    }
    // Stop where the segment leaves the quadrant.
    const double sx = nx < 0.0 ? x / (x - nx) : 1.0;
    const double sy = ny < 0.0 ? y / (y - ny) : 1.0;
    if (sx <= sy) {
      y = y + sx * (ny - y);
      x = 0.0;
    } else {
      x = x + sy * (nx - x);
      y = 0.0;
    }
  }
  return clock;
}

}  // namespace detail

/// One step of the finite-rate system
///   du = Delta u / 2 dt + sqrt(gamma u v) dW1,  dv = Delta v / 2 dt + sqrt(gamma u v) dW2
/// with one rho-correlated noise pair per site. Collision increments are
/// reported to `record(time, site, dL)` (zero increments are skipped); for
/// the Euler scheme dL = gamma u v dt is taken before the update.
template <class Record>
void step_finite_rate(PopulationState& s, double dt, double gamma, Rng& rng, Record&& record,
                      NoiseScheme scheme = NoiseScheme::euler) {
  detail::check_step(s, dt, gamma, scheme == NoiseScheme::euler);
  const KernelGrid& g = s.grid();
  const int m = g.size();
  const auto& u = s.u.raw();
  const auto& v = s.v.raw();
  std::vector<double> nu(u.size()), nv(v.size());
  const double sdt = std::sqrt(dt);
  for (int i = 0; i < m; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto l = static_cast<std::size_t>(g.fold(i - 1));
    const auto r = static_cast<std::size_t>(g.fold(i + 1));
    const double lap_u = u[l] + u[r] - 2.0 * u[ui];
    const double lap_v = v[l] + v[r] - 2.0 * v[ui];
    if (scheme == NoiseScheme::local_walk) {
      nu[ui] = u[ui] + 0.5 * lap_u * dt;
      nv[ui] = v[ui] + 0.5 * lap_v * dt;
      continue;
    }
    const double prod = std::max(u[ui], 0.0) * std::max(v[ui], 0.0);
    const auto [g1, g2] = correlated_noise_pair(rng, s.rho);
    if (prod > 0.0) record(s.time, g.site(i), gamma * prod * dt);
    const double amp = std::sqrt(gamma * prod) * sdt;
    nu[ui] = std::max(u[ui] + 0.5 * lap_u * dt + amp * g1, 0.0);
    nv[ui] = std::max(v[ui] + 0.5 * lap_v * dt + amp * g2, 0.0);
  }
  if (scheme == NoiseScheme::local_walk && gamma > 0.0) {
    for (int i = 0; i < m; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (!(nu[ui] > 0.0 && nv[ui] > 0.0)) continue;
      const double dl = detail::local_noise_walk(nu[ui], nv[ui], s.rho, gamma, dt, rng);
      if (dl > 0.0) record(s.time, g.site(i), dl);
    }
  }
  s.u.raw() = std::move(nu);
  s.v.raw() = std::move(nv);
  s.time += dt;
}

inline void step_finite_rate(PopulationState& s, double dt, double gamma, Rng& rng, CollisionLedger& ledger) {
  step_finite_rate(s, dt, gamma, rng, [&](double t, int k, double dl) { ledger.add(t, k, dl); });
}

struct FiniteRateParams {
  double gamma = 1.0;
  double dt = 1e-3;
  /// Shrink the step to min(dt, 0.5 / (gamma max u max v)) instead of failing.
  bool adaptive_dt = false;
  NoiseScheme scheme = NoiseScheme::euler;
};

/// Receives snapshots and collision increments during a run.
struct NullObserver {
  void on_snapshot(const PopulationState&) {}
  void on_collision(double, int, double) {}
  void on_jump(const JumpEvent&) {}
};

/// Advances `s` to each observation time in turn (sorted, >= s.time),
/// reporting snapshots and collision increments to the observer.
template <class Observer>
void simulate_finite_rate(PopulationState s, const FiniteRateParams& p, const std::vector<double>& times, Rng& rng,
                          Observer& obs) {
  if (!std::is_sorted(times.begin(), times.end())) throw std::invalid_argument("observation times must be sorted");
  auto record = [&](double t, int k, double dl) { obs.on_collision(t, k, dl); };
  constexpr double tol = 1e-12;
  for (double target : times) {
    if (target < s.time - tol) throw std::invalid_argument("observation time precedes the current time");
    // Whole steps are counted from the last observation so time never drifts.
    const double start = s.time;
    long long n = 0;
    while (s.time < target - tol) {
      double h = std::min(p.dt, target - s.time);
      if (p.adaptive_dt && p.scheme == NoiseScheme::euler) {
        const double prod = p.gamma * s.u.max() * s.v.max();
        if (prod > 0.0) h = std::min(h, 0.5 / prod);
      }
      step_finite_rate(s, h, p.gamma, rng, record, p.scheme);
      if (!(p.adaptive_dt && p.scheme == NoiseScheme::euler)) {
        ++n;
        s.time = std::min(start + static_cast<double>(n) * p.dt, target);
      }
    }
    s.time = target;
    obs.on_snapshot(s);
  }
}

struct Trajectory {
  std::vector<PopulationState> snapshots;
  CollisionLedger ledger;
  std::vector<JumpEvent> jumps;
};

/// Records every snapshot and, optionally, the full ledger.
struct TrajectoryRecorder {
  Trajectory traj;
  bool keep_ledger = true;
  void on_snapshot(const PopulationState& s) { traj.snapshots.push_back(s); }
  void on_collision(double t, int k, double dl) {
    if (keep_ledger) traj.ledger.add(t, k, dl);
  }
  void on_jump(const JumpEvent& e) {
    if (!keep_ledger) return;
    traj.ledger.add(e.time, e.site, e.du * e.du);
    traj.ledger.add_mixed(e.time, e.site, e.du * e.dv);
    traj.jumps.push_back(e);
  }
};

inline Trajectory simulate_finite_rate(const PopulationState& s0, const FiniteRateParams& p,
                                       const std::vector<double>& times, Rng& rng) {
  TrajectoryRecorder rec;
  simulate_finite_rate(s0, p, times, rng, rec);
  return std::move(rec.traj);
}

}  // namespace sbm
