#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sbm/exit_measure.hpp"
#include "sbm/finite_rate.hpp"
#include "sbm/kernels.hpp"
#include "sbm/lattice.hpp"
#include "sbm/ledger.hpp"
#include "sbm/random.hpp"

namespace sbm {

struct TrotterConfig {
  double delta = 0.05;
  ExitSamplerConfig exit{};
};

/// Trotter scheme for the infinite-rate system: heat flow over delta for
/// both types, then every site holding both types is replaced by a draw
/// from the quadrant exit measure started at its current pair.
class TrotterScheme {
 public:
  explicit TrotterScheme(TrotterConfig cfg) : cfg_(cfg) {
    if (!(cfg_.delta > 0.0)) throw std::invalid_argument("Trotter step must be positive");
    if (!(cfg_.exit.eps_rel > 0.0)) throw std::invalid_argument("exit tolerance must be positive");
    kernel_ = truncated_kernel(cfg_.delta);
  }

  [[nodiscard]] const TrotterConfig& config() const { return cfg_; }

  /// Resamples all sites with u(k) v(k) > 0 in site order. Afterwards
  /// u(k) v(k) = 0 at every site.
  template <class Observer>
  void resample(PopulationState& s, Rng& rng, Observer& obs) const {
    auto& u = s.u.raw();
    auto& v = s.v.raw();
    const KernelGrid& g = s.grid();
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (!(u[i] > 0.0 && v[i] > 0.0)) continue;
      const auto e = sample_exit_quadrant(u[i], v[i], s.rho, rng, cfg_.exit);
      const JumpEvent j{s.time, g.site(static_cast<int>(i)), u[i], v[i], e.x - u[i], e.y - v[i], e.tau};
      u[i] = e.x;
      v[i] = e.y;
      obs.on_jump(j);
    }
  }

  template <class Observer>
  void step(PopulationState& s, Rng& rng, Observer& obs) const {
    PopulationState before;
    constexpr bool wants_migration = requires(Observer& o) { o.on_migrated(s, s); };
    if constexpr (wants_migration) before = s;
    LatticeField nu(s.grid()), nv(s.grid());
    apply_kernel(s.grid(), s.u.values(), kernel_, nu.values());
    apply_kernel(s.grid(), s.v.values(), kernel_, nv.values());
    s.u = std::move(nu);
    s.v = std::move(nv);
    s.time += cfg_.delta;
    if constexpr (wants_migration) obs.on_migrated(before, s);
    resample(s, rng, obs);
  }

 private:
  TrotterConfig cfg_;
  std::vector<double> kernel_;
};

template <class Observer>
void trotter_step(PopulationState& s, const TrotterConfig& cfg, Rng& rng, Observer& obs) {
  TrotterScheme(cfg).step(s, rng, obs);
}

inline void trotter_step(PopulationState& s, const TrotterConfig& cfg, Rng& rng, CollisionLedger& ledger) {
  struct L {
    CollisionLedger& l;
    void on_jump(const JumpEvent& e) {
      l.add(e.time, e.site, e.du * e.du);
      l.add_mixed(e.time, e.site, e.du * e.dv);
    }
  } obs{ledger};
  trotter_step(s, cfg, rng, obs);
}

/// Number of Trotter steps to reach `t`; throws unless t is a multiple of delta.
inline long long trotter_steps_for(double t, double delta) {
  const double q = t / delta;
  const long long n = std::llround(q);
  if (std::abs(q - static_cast<double>(n)) > 1e-9 * std::max(1.0, q))
    throw std::invalid_argument("observation time " + std::to_string(t) + " is not a multiple of the Trotter step " +
                                std::to_string(delta));
  return n;
}

/// Runs the scheme from s0 and reports snapshots at the requested times
/// (sorted multiples of delta). A start with u0 v0 != 0 somewhere is
/// separated by one resampling at time 0; a snapshot at t = 0 shows the raw
/// initial state. Model time is kept as step count times delta. An observer
/// with on_step(state) sees the state after every resampling.
template <class Observer>
void simulate_infinite_rate(PopulationState s, const TrotterConfig& cfg, const std::vector<double>& times, Rng& rng,
                            Observer& obs) {
  if (!std::is_sorted(times.begin(), times.end())) throw std::invalid_argument("observation times must be sorted");
  const TrotterScheme scheme(cfg);
  s.time = 0.0;
  std::vector<long long> marks;
  marks.reserve(times.size());
  for (double t : times) {
    if (t < 0.0) throw std::invalid_argument("observation times must be nonnegative");
    marks.push_back(trotter_steps_for(t, cfg.delta));
  }
  std::size_t next = 0;
  while (next < marks.size() && marks[next] == 0) {
    obs.on_snapshot(s);
    ++next;
  }
  if (next == marks.size()) return;
  constexpr bool wants_step = requires(Observer& o) { o.on_step(s); };
  scheme.resample(s, rng, obs);
  if constexpr (wants_step) obs.on_step(s);
  for (long long k = 1; next < marks.size(); ++k) {
    scheme.step(s, rng, obs);
    s.time = static_cast<double>(k) * cfg.delta;
    if constexpr (wants_step) obs.on_step(s);
    while (next < marks.size() && marks[next] == k) {
      obs.on_snapshot(s);
      ++next;
    }
  }
}

inline Trajectory simulate_infinite_rate(const PopulationState& s0, const TrotterConfig& cfg,
                                         const std::vector<double>& times, Rng& rng) {
  TrajectoryRecorder rec;
  simulate_infinite_rate(s0, cfg, times, rng, rec);
  return std::move(rec.traj);
}

}  // namespace sbm
