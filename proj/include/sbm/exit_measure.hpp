#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "sbm/random.hpp"
#include "sbm/stats.hpp"

namespace sbm {

/// Exit point of the quadrant together with the exit time of the driving
/// planar Brownian motion (NaN when the sampler cannot report it).
struct ExitSample {
  double x = 0.0;
  double y = 0.0;
  double tau = 0.0;
  std::int64_t steps = 0;
};

enum class ExitMethod {
  /// Adaptive Gaussian walk stopped near an axis and projected onto it.
  direct,
  /// Exact draw through the conformal map of the correlated quadrant onto
  /// the half-plane (harmonic measure is Cauchy there). Exit time unavailable.
  conformal,
};

inline ExitMethod exit_method_from_string(const std::string& s) {
  if (s == "direct") return ExitMethod::direct;
  if (s == "conformal") return ExitMethod::conformal;
  throw std::invalid_argument("unknown exit method '" + s + "'");
}

inline std::string to_string(ExitMethod m) { return m == ExitMethod::direct ? "direct" : "conformal"; }

struct ExitSamplerConfig {
  ExitMethod method = ExitMethod::direct;
  /// Inner step h = step_factor * min(x, y)^2.
  double step_factor = 0.1;
  /// Projection tolerance relative to x + y of the start point.
  double eps_rel = 1e-5;
  std::int64_t max_steps = 100'000'000;
};

class ExitSamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline ExitSample exit_direct(double x, double y, double rho, Rng& rng, const ExitSamplerConfig& cfg) {
  ExitSample s{x, y, 0.0, 0};
  const double eps = cfg.eps_rel * (x + y);
  const double c = std::sqrt(1.0 - rho * rho);
  for (;;) {
    const double lo = std::min(s.x, s.y);
    if (lo <= eps) {
      (s.x <= s.y ? s.x : s.y) = 0.0;
      return s;
    }
    if (++s.steps > cfg.max_steps)
      throw ExitSamplerError("exit sampler exceeded " + std::to_string(cfg.max_steps) + " steps from (" +
                             std::to_string(x) + ", " + std::to_string(y) + ")");
    const double h = cfg.step_factor * lo * lo;
    const double sh = std::sqrt(h);
    const double g1 = rng.normal();
    const double g2 = rho * g1 + c * rng.normal();
    const double nx = s.x + sh * g1, ny = s.y + sh * g2;
    if (nx >= 0.0 && ny >= 0.0) {
      s.x = nx;
      s.y = ny;
      s.tau += h;
      continue;
    }
    // Interpolate to where the segment leaves the quadrant.
    const double fx = nx < 0.0 ? s.x / (s.x - nx) : 1.0;
    const double fy = ny < 0.0 ? s.y / (s.y - ny) : 1.0;
    if (fx <= fy) {
      s.y += fx * (ny - s.y);
      s.x = 0.0;
      s.tau += fx * h;
    } else {
      s.x += fy * (nx - s.x);
      s.y = 0.0;
      s.tau += fy * h;
    }
    return s;
  }
}

inline ExitSample exit_conformal(double x, double y, double rho, Rng& rng) {
  const double c = std::sqrt(1.0 - rho * rho);
  // Uncorrelated coordinates: the quadrant becomes the wedge between the
  // rays at angles a0 = asin(-rho) and pi/2, of opening theta = acos(-rho).
  const double w1 = x, w2 = (y - rho * x) / c;
  const double a0 = std::asin(-rho);
  const double opening = std::acos(-rho);
  const double k = std::numbers::pi / opening;
  const double r = std::hypot(w1, w2);
  const double ang = std::atan2(w2, w1) - a0;
  const double rk = std::pow(r, k);
  const double a = rk * std::cos(k * ang), b = rk * std::sin(k * ang);
  const double s = a + b * std::tan(std::numbers::pi * (rng.uniform() - 0.5));
  const double radius = std::pow(std::abs(s), 1.0 / k) * c;
  ExitSample out{0.0, 0.0, std::numeric_limits<double>::quiet_NaN(), 0};
  if (s >= 0.0)
    out.x = radius;
  else
    out.y = radius;
  return out;
}

}  // namespace detail

/// Draws from Q^rho_{x,y}, the law of the point where a rho-correlated
/// planar Brownian motion started at (x, y) leaves the open quadrant.
inline ExitSample sample_exit_quadrant(double x, double y, double rho, Rng& rng, const ExitSamplerConfig& cfg = {}) {
  if (!(x >= 0.0 && y >= 0.0)) throw std::invalid_argument("exit sampler needs x, y >= 0");
  if (!(rho >= -1.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [-1, 1]");
  if (x == 0.0 || y == 0.0) return {x, y, 0.0, 0};
  if (rho == 1.0) {
    // Both coordinates move together until the smaller one hits 0.
    const double m = std::min(x, y);
    return {x - m, y - m, std::numeric_limits<double>::quiet_NaN(), 0};
  }
  if (rho == -1.0) {
    // x + y is conserved; the walk is a gambler's ruin on the segment.
    const double tot = x + y;
    return rng.uniform() < x / tot ? ExitSample{tot, 0.0, x * y, 0} : ExitSample{0.0, tot, x * y, 0};
  }
  if (cfg.method == ExitMethod::conformal) return detail::exit_conformal(x, y, rho, rng);
  return detail::exit_direct(x, y, rho, rng, cfg);
}

struct ExitMeanCheck {
  double mean_x = 0.0, se_x = 0.0, z_x = 0.0;
  double mean_y = 0.0, se_y = 0.0, z_y = 0.0;
};

/// Sample means of the exit coordinates against the start point. Each
/// coordinate is a uniformly integrable martingale up to the exit time, so
/// E X = x and E Y = y.
inline ExitMeanCheck exit_mean_identity_check(double x, double y, double rho, std::size_t n, Rng& rng,
                                              const ExitSamplerConfig& cfg = {}) {
  RunningStats sx, sy;
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = sample_exit_quadrant(x, y, rho, rng, cfg);
    sx.add(e.x);
    sy.add(e.y);
  }
  ExitMeanCheck r;
  r.mean_x = sx.mean();
  r.se_x = sx.std_error();
  r.z_x = z_score(r.mean_x, x, r.se_x);
  r.mean_y = sy.mean();
  r.se_y = sy.std_error();
  r.z_y = z_score(r.mean_y, y, r.se_y);
  return r;
}

}  // namespace sbm
