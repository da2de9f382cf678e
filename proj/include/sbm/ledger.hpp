#pragma once

#include <cstddef>
#include <map>
#include <vector>

namespace sbm {

/// One resampling of a site: the state before it, the jump, and the exit
/// time tau of the driving planar Brownian motion (NaN if unavailable).
struct JumpEvent {
  double time;
  int site;
  double u_before, v_before;
  double du, dv;
  double tau;
};

/// Time-stamped per-site increments of the collision measure.
///
/// `primary` holds nonnegative increments (gamma u v dt for the finite-rate
/// system, squared resampling jumps at infinite rate); `mixed` holds the
/// signed products du dv of the infinite-rate jumps.
struct CollisionLedger {
  struct Entry {
    double time;
    int site;
    double value;
  };
  std::vector<Entry> primary;
  std::vector<Entry> mixed;

  void add(double time, int site, double increment) { primary.push_back({time, site, increment}); }
  void add_mixed(double time, int site, double increment) { mixed.push_back({time, site, increment}); }

  [[nodiscard]] double total() const {
    double s = 0.0;
    for (const auto& e : primary) s += e.value;
    return s;
  }
  [[nodiscard]] double mixed_total() const {
    double s = 0.0;
    for (const auto& e : mixed) s += e.value;
    return s;
  }
  /// Cumulative primary mass per site up to and including time t.
  [[nodiscard]] std::map<int, double> per_site(double t) const {
    std::map<int, double> out;
    for (const auto& e : primary)
      if (e.time <= t) out[e.site] += e.value;
    return out;
  }
};

}  // namespace sbm
