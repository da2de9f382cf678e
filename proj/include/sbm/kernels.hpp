#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "sbm/fft.hpp"
#include "sbm/lattice.hpp"
#include "sbm/random.hpp"
#include "sbm/test_function.hpp"

namespace sbm {

// ---------------------------------------------------------------------------
// Discrete Laplacian

/// (Delta f)(x) = f(x-1) + f(x+1) - 2 f(x), neighbours resolved by the
/// window's boundary policy.
inline LatticeField discrete_laplacian(const LatticeField& f) {
  const KernelGrid& g = f.grid();
  LatticeField out(g);
  const int m = g.size();
  for (int i = 0; i < m; ++i) {
    const double left = f[static_cast<std::size_t>(g.fold(i - 1))];
    const double right = f[static_cast<std::size_t>(g.fold(i + 1))];
    out[static_cast<std::size_t>(i)] = left + right - 2.0 * f[static_cast<std::size_t>(i)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Heat kernels

/// Row e^{-t} I_k(t), k = 0..kmax: transition probabilities of the
/// continuous-time simple random walk with generator Delta/2.
///
/// Miller's backward recurrence I_{k-1} = (2k/t) I_k + I_{k+1}, normalised
/// by I_0 + 2 sum_k I_k = e^t. This yields the exponentially scaled values
/// directly and never overflows (intermediate values are rescaled).
inline std::vector<double> heat_kernel_row(double t, int kmax) {
  if (!(t >= 0.0)) throw std::invalid_argument("heat kernel time must be >= 0");
  if (kmax < 0) throw std::invalid_argument("kmax must be >= 0");
  std::vector<double> out(static_cast<std::size_t>(kmax) + 1, 0.0);
  if (t == 0.0) {
    out[0] = 1.0;
    return out;
  }
  const double spread = std::sqrt(t);
  const double kcover = std::max(static_cast<double>(kmax), 12.0 * spread + 10.0);
  const int start = static_cast<int>(std::ceil(std::sqrt(kcover * kcover + 50.0 * t))) + 30;

  std::vector<double> w(static_cast<std::size_t>(start) + 2, 0.0);
  w[static_cast<std::size_t>(start) + 1] = 0.0;
  w[static_cast<std::size_t>(start)] = 1e-300;
  constexpr double big = 1e200;
  for (int k = start; k >= 1; --k) {
    const auto uk = static_cast<std::size_t>(k);
    w[uk - 1] = (2.0 * k / t) * w[uk] + w[uk + 1];
    if (w[uk - 1] > big) {
      for (std::size_t j = uk - 1; j < w.size(); ++j) w[j] /= big;
    }
  }
  // I_0 + 2 sum_{k>=1} I_k, summed from the small tail upwards.
  double tail = 0.0;
  for (int k = start; k >= 1; --k) tail += w[static_cast<std::size_t>(k)];
  const double norm = w[0] + 2.0 * tail;
  for (int k = 0; k <= kmax && k <= start; ++k) out[static_cast<std::size_t>(k)] = w[static_cast<std::size_t>(k)] / norm;
  return out;
}

/// ^dp_t(k): probability that the walk started at 0 sits at k at time t.
inline double discrete_heat_kernel(double t, int k) {
  const int a = std::abs(k);
  return heat_kernel_row(t, a)[static_cast<std::size_t>(a)];
}

/// Gaussian density with variance t.
inline double continuous_heat_kernel(double t, double x) {
  if (!(t > 0.0)) throw std::invalid_argument("continuous heat kernel needs t > 0");
  return std::exp(-x * x / (2.0 * t)) / std::sqrt(2.0 * std::numbers::pi * t);
}

/// Half-row of the discrete kernel truncated where it drops below
/// cutoff * p_t(0). Entry d holds p_t(d) = p_t(-d).
inline std::vector<double> truncated_kernel(double t, double cutoff = 1e-30) {
  if (t == 0.0) return {1.0};
  const int kmax = static_cast<int>(std::ceil(14.0 * std::sqrt(t) + 40.0));
  std::vector<double> row = heat_kernel_row(t, kmax);
  const double thr = row[0] * cutoff;
  std::size_t keep = row.size();
  while (keep > 1 && row[keep - 1] < thr) --keep;
  row.resize(keep);
  return row;
}

// ---------------------------------------------------------------------------
// Semigroup ^dS_t on a window

enum class ConvolutionPath { automatic, direct, fft };

namespace detail {

/// Kernel wrapped onto a circle of the given period (entry r = sum of
/// p_t(d) over d congruent to r).
inline std::vector<double> wrapped_kernel(std::span<const double> half, std::size_t period) {
  std::vector<double> w(period, 0.0);
  const long long L = static_cast<long long>(half.size()) - 1;
  const long long p = static_cast<long long>(period);
  for (long long d = -L; d <= L; ++d) {
    long long r = d % p;
    if (r < 0) r += p;
    w[static_cast<std::size_t>(r)] += half[static_cast<std::size_t>(std::abs(d))];
  }
  return w;
}

inline void convolve_direct(const KernelGrid& g, std::span<const double> in, std::span<const double> half,
                            std::span<double> out) {
  const int m = g.size();
  const long long L = static_cast<long long>(half.size()) - 1;
  std::fill(out.begin(), out.end(), 0.0);
  if (2 * L + 1 <= 2LL * m) {
    // Gather form over a padded copy. A site whose whole stencil sees one
    // value c gets c times the kernel mass.
    double mass = half[0];
    for (long long d = 1; d <= L; ++d) mass += 2.0 * half[static_cast<std::size_t>(d)];
    const std::size_t n = static_cast<std::size_t>(m + 2 * L);
    thread_local std::vector<double> ext;
    thread_local std::vector<std::size_t> run_end;
    ext.resize(n);
    run_end.resize(n);
    for (std::size_t p = 0; p < n; ++p) ext[p] = in[static_cast<std::size_t>(g.fold(static_cast<long long>(p) - L))];
    run_end[n - 1] = n;
    for (std::size_t p = n - 1; p-- > 0;) run_end[p] = ext[p] == ext[p + 1] ? run_end[p + 1] : p + 1;
    const auto W = static_cast<std::size_t>(2 * L);
    for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) {
      if (run_end[i] > i + W) {
        out[i] = ext[i] * mass;
        continue;
      }
      const double* c = ext.data() + i + L;
      double acc = half[0] * c[0];
      for (long long d = 1; d <= L; ++d) acc += half[static_cast<std::size_t>(d)] * (c[-d] + c[d]);
      out[i] = acc;
    }
    return;
  }
  // Kernel wider than the window: fold it first.
  if (g.boundary == Boundary::periodic) {
    const auto w = wrapped_kernel(half, static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      const double x = in[static_cast<std::size_t>(j)];
      if (x == 0.0) continue;
      for (int i = 0; i < m; ++i) out[static_cast<std::size_t>(i)] += x * w[static_cast<std::size_t>(((i - j) % m + m) % m)];
    }
  } else {
    const int p = 2 * m;
    const auto w = wrapped_kernel(half, static_cast<std::size_t>(p));
    for (int j = 0; j < m; ++j) {
      const double x = in[static_cast<std::size_t>(j)];
      if (x == 0.0) continue;
      for (int i = 0; i < m; ++i)
        out[static_cast<std::size_t>(i)] +=
            x * (w[static_cast<std::size_t>(((i - j) % p + p) % p)] + w[static_cast<std::size_t>((i + 1 + j) % p)]);
    }
  }
}

inline void convolve_fft(const KernelGrid& g, std::span<const double> in, std::span<const double> half,
                         std::span<double> out) {
  const std::size_t m = static_cast<std::size_t>(g.size());
  const std::size_t period = g.boundary == Boundary::periodic ? m : 2 * m;
  std::vector<double> ext(period, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    ext[j] = in[j];
    if (g.boundary == Boundary::reflecting) ext[period - 1 - j] = in[j];
  }
  const auto w = wrapped_kernel(half, period);
  std::vector<double> res(period);
  convolver_for(period).convolve(ext, w, res);
  // Round-off of the transform can leave values of order 1e-17 below zero.
  for (std::size_t i = 0; i < m; ++i) out[i] = std::max(res[i], 0.0);
}

}  // namespace detail

/// Sites above which the FFT route is taken.
inline constexpr int fft_threshold_sites = 512;

/// Applies a precomputed half-kernel (see truncated_kernel) to raw values.
inline void apply_kernel(const KernelGrid& g, std::span<const double> in, std::span<const double> half,
                         std::span<double> out, ConvolutionPath path = ConvolutionPath::automatic) {
  const bool use_fft = path == ConvolutionPath::fft ||
                       (path == ConvolutionPath::automatic && g.size() > fft_threshold_sites);
  if (use_fft)
    detail::convolve_fft(g, in, half, out);
  else
    detail::convolve_direct(g, in, half, out);
}

/// ^dS_t field: convolution with the discrete heat kernel.
inline LatticeField apply_semigroup(const LatticeField& field, double t,
                                    ConvolutionPath path = ConvolutionPath::automatic) {
  if (!(t >= 0.0)) throw std::invalid_argument("semigroup time must be >= 0");
  if (t == 0.0) return field;
  const auto half = truncated_kernel(t);
  LatticeField out(field.grid());
  apply_kernel(field.grid(), field.values(), half, out.values(), path);
  return out;
}

/// ^dS_t applied to a function given pointwise on all of Z (no window).
inline double semigroup_at(double t, int k, const std::function<double(int)>& f) {
  const auto half = truncated_kernel(t);
  const int L = static_cast<int>(half.size()) - 1;
  double s = 0.0;
  for (int d = -L; d <= L; ++d) s += half[static_cast<std::size_t>(std::abs(d))] * f(k + d);
  return s;
}

// ---------------------------------------------------------------------------
// Killed two-particle kernels

enum class Space { discrete, continuous };

struct KilledKernelQuery {
  double t = 1.0;
  double x = 0.0, y = 0.0;  // source
  double a = 0.0, b = 0.0;  // target
  Space space = Space::discrete;
};

/// Unkilled product kernel p_t(x-a) p_t(y-b).
inline double product_kernel(const KilledKernelQuery& q) {
  if (q.space == Space::discrete) {
    const int dx = static_cast<int>(std::lround(q.x - q.a));
    const int dy = static_cast<int>(std::lround(q.y - q.b));
    return discrete_heat_kernel(q.t, dx) * discrete_heat_kernel(q.t, dy);
  }
  return continuous_heat_kernel(q.t, q.x - q.a) * continuous_heat_kernel(q.t, q.y - q.b);
}

/// Transition density of the pair killed on the diagonal, by reflection:
/// (1{x<y,a<b} + 1{x>y,a>b}) (p2(x-a, y-b) - p2(x-b, y-a)).
inline double killed_kernel(const KilledKernelQuery& q) {
  if (!(q.t > 0.0)) throw std::invalid_argument("killed kernel needs t > 0");
  const bool same_side = (q.x < q.y && q.a < q.b) || (q.x > q.y && q.a > q.b);
  if (!same_side) return 0.0;
  double direct, reflected;
  if (q.space == Space::discrete) {
    const auto k = [&](double d) { return discrete_heat_kernel(q.t, static_cast<int>(std::lround(d))); };
    direct = k(q.x - q.a) * k(q.y - q.b);
    reflected = k(q.x - q.b) * k(q.y - q.a);
  } else {
    direct = continuous_heat_kernel(q.t, q.x - q.a) * continuous_heat_kernel(q.t, q.y - q.b);
    reflected = continuous_heat_kernel(q.t, q.x - q.b) * continuous_heat_kernel(q.t, q.y - q.a);
  }
  return std::clamp(direct - reflected, 0.0, direct);
}

/// Endpoint at time t of two independent continuous-time walks (rate 1/2
/// per direction) started at x and y, or nullopt once they have met. Used
/// as a direct check of the discrete killed kernel.
inline std::optional<std::pair<int, int>> killed_pair_walk(double t, int x, int y, Rng& rng) {
  if (x == y) return std::nullopt;
  double clock = 0.0;
  for (;;) {
    clock -= 0.5 * std::log1p(-rng.uniform());  // total jump rate 2
    if (clock > t) return std::pair{x, y};
    const double r = 4.0 * rng.uniform();
    if (r < 1.0) --x;
    else if (r < 2.0) ++x;
    else if (r < 3.0) --y;
    else ++y;
    if (x == y) return std::nullopt;
  }
}

/// Measure on an equispaced grid x_i = (i - radius) * spacing.
struct GridMeasure {
  int radius = 0;
  double spacing = 1.0;
  std::vector<double> mass;  // size 2*radius+1

  [[nodiscard]] double position(std::size_t i) const { return (static_cast<double>(i) - radius) * spacing; }
  [[nodiscard]] double total() const {
    double s = 0.0;
    for (double m : mass) s += m;
    return s;
  }
};

struct PairingResult {
  double value = 0.0;
  /// Relative change of the unkilled pairing when the target range is
  /// cut back to the source window; large values mean the window is too small.
  double leak = 0.0;
};

inline constexpr double leak_warning_threshold = 1e-6;

namespace detail {

/// Killed and unkilled pairings of (wphi (x) wpsi) against the two-particle
/// semigroup started from mu (x) nu. Sources and targets live on one index
/// grid; ker[d] is the one-particle kernel at index distance d.
/// Runs in O(G * (active sources + kernel width)).
struct PairSums {
  double killed = 0.0;
  double unkilled = 0.0;
};

inline PairSums pair_sums(std::span<const double> mu, std::span<const double> nu, std::span<const double> wphi,
                          std::span<const double> wpsi, std::span<const double> ker, bool want_killed) {
  const long long G = static_cast<long long>(mu.size());
  const long long L = static_cast<long long>(ker.size()) - 1;
  const auto kat = [&](long long d) -> double {
    d = d < 0 ? -d : d;
    return d <= L ? ker[static_cast<std::size_t>(d)] : 0.0;
  };
  PairSums out;
  double fu = 0.0, fv = 0.0;
  for (long long a = 0; a < G; ++a) {
    const double ma = mu[static_cast<std::size_t>(a)], na = nu[static_cast<std::size_t>(a)];
    if (ma == 0.0 && na == 0.0) continue;
    double sphi = 0.0, spsi = 0.0;
    for (long long x = std::max(0LL, a - L); x <= std::min(G - 1, a + L); ++x) {
      sphi += wphi[static_cast<std::size_t>(x)] * kat(x - a);
      spsi += wpsi[static_cast<std::size_t>(x)] * kat(x - a);
    }
    fu += ma * sphi;
    fv += na * spsi;
  }
  out.unkilled = fu * fv;
  if (!want_killed) return out;

  // Q(y) = sum_{b>a} nu(b) p(y-b), R(y) = sum_{b<a} nu(b) p(y-b)
  std::vector<double> Q(static_cast<std::size_t>(G), 0.0), R(static_cast<std::size_t>(G), 0.0);
  const auto add_source = [&](std::vector<double>& acc, long long b, double sign) {
    const double nb = nu[static_cast<std::size_t>(b)];
    if (nb == 0.0) return;
    for (long long y = std::max(0LL, b - L); y <= std::min(G - 1, b + L); ++y)
      acc[static_cast<std::size_t>(y)] += sign * nb * kat(y - b);
  };
  for (long long b = 1; b < G; ++b) add_source(Q, b, 1.0);

  std::vector<double> A(static_cast<std::size_t>(G)), B(static_cast<std::size_t>(G));
  double killed = 0.0;
  for (long long a = 0; a < G; ++a) {
    if (a > 0) {
      add_source(Q, a, -1.0);
      add_source(R, a - 1, 1.0);
    }
    const double ma = mu[static_cast<std::size_t>(a)];
    if (ma == 0.0) continue;
    std::fill(A.begin(), A.end(), 0.0);
    std::fill(B.begin(), B.end(), 0.0);
    double totA = 0.0, totB = 0.0;
    for (long long x = std::max(0LL, a - L); x <= std::min(G - 1, a + L); ++x) {
      A[static_cast<std::size_t>(x)] = wphi[static_cast<std::size_t>(x)] * kat(x - a);
      B[static_cast<std::size_t>(x)] = wpsi[static_cast<std::size_t>(x)] * kat(x - a);
      totA += A[static_cast<std::size_t>(x)];
      totB += B[static_cast<std::size_t>(x)];
    }
    double t1 = 0.0, t2 = 0.0, t3 = 0.0, t4 = 0.0;
    double prefA = 0.0, prefB = 0.0;  // sums over indices < current
    for (long long y = 0; y < G; ++y) {
      const auto uy = static_cast<std::size_t>(y);
      const double sufA = totA - prefA - A[uy];  // indices > y
      const double sufB = totB - prefB - B[uy];
      t1 += wpsi[uy] * Q[uy] * prefA;
      t2 += wphi[uy] * Q[uy] * sufB;
      t3 += wpsi[uy] * R[uy] * sufA;
      t4 += wphi[uy] * R[uy] * prefB;
      prefA += A[uy];
      prefB += B[uy];
    }
    killed += ma * ((t1 - t2) + (t3 - t4));
  }
  out.killed = std::clamp(killed, 0.0, std::max(out.unkilled, 0.0));
  return out;
}

inline void report_leak(double leak) {
  if (leak > leak_warning_threshold)
    std::cerr << "warning: window truncation changes the pairing by a relative " << leak << "\n";
}

}  // namespace detail

/// <phi (x) psi, T_t (mu0 (x) nu0)> on the lattice, with T the killed
/// (killed=true) or plain two-particle semigroup of the walk at internal time
/// t. Test functions are read at scale n: phi^(n)(k) = phi(k/n)/n, so n = 1
/// is the raw lattice pairing sum_k phi(k) f(k).
inline PairingResult pair_killed(const TestFunction& phi, const TestFunction& psi, const LatticeField& mu0,
                                 const LatticeField& nu0, double t, bool killed, int scale = 1) {
  if (!(t > 0.0)) throw std::invalid_argument("pair_killed needs t > 0");
  if (!(mu0.grid() == nu0.grid())) throw std::invalid_argument("mu0 and nu0 must share a window");
  const auto ker = truncated_kernel(t, 1e-25);
  const int margin = static_cast<int>(ker.size());
  const int K = mu0.grid().radius;
  const int G = 2 * (K + margin) + 1;
  const double s = 1.0 / scale;
  std::vector<double> mu(static_cast<std::size_t>(G), 0.0), nu(mu), wphi(mu), wpsi(mu), wphi_w(mu), wpsi_w(mu);
  for (int i = 0; i < G; ++i) {
    const int site = i - (K + margin);
    const auto ui = static_cast<std::size_t>(i);
    wphi[ui] = phi(site * s) * s;
    wpsi[ui] = psi(site * s) * s;
    if (mu0.grid().contains(site)) {
      mu[ui] = mu0.at(site);
      nu[ui] = nu0.at(site);
      wphi_w[ui] = wphi[ui];
      wpsi_w[ui] = wpsi[ui];
    }
  }
  const auto full = detail::pair_sums(mu, nu, wphi, wpsi, ker, killed);
  const auto win = detail::pair_sums(mu, nu, wphi_w, wpsi_w, ker, false);
  PairingResult r;
  r.value = killed ? full.killed : full.unkilled;
  r.leak = full.unkilled != 0.0 ? std::abs(full.unkilled - win.unkilled) / std::abs(full.unkilled) : 0.0;
  detail::report_leak(r.leak);
  return r;
}

/// Continuum counterpart on R: mu0, nu0 are masses on a fine grid, the
/// Gaussian two-particle kernel (killed by reflection or not) is integrated
/// against phi (x) psi by the trapezoid rule on the same grid.
inline PairingResult pair_killed_continuous(const TestFunction& phi, const TestFunction& psi, const GridMeasure& mu0,
                                            const GridMeasure& nu0, double t, bool killed) {
  if (!(t > 0.0)) throw std::invalid_argument("pair_killed_continuous needs t > 0");
  if (mu0.radius != nu0.radius || mu0.spacing != nu0.spacing)
    throw std::invalid_argument("mu0 and nu0 must share a grid");
  const double h = mu0.spacing;
  const int L = static_cast<int>(std::ceil(12.0 * std::sqrt(t) / h)) + 1;
  std::vector<double> ker(static_cast<std::size_t>(L) + 1);
  for (int d = 0; d <= L; ++d) ker[static_cast<std::size_t>(d)] = continuous_heat_kernel(t, d * h);
  const int K = mu0.radius;
  const int G = 2 * (K + L) + 1;
  std::vector<double> mu(static_cast<std::size_t>(G), 0.0), nu(mu), wphi(mu), wpsi(mu), wphi_w(mu), wpsi_w(mu);
  for (int i = 0; i < G; ++i) {
    const int site = i - (K + L);
    const auto ui = static_cast<std::size_t>(i);
    wphi[ui] = phi(site * h) * h;
    wpsi[ui] = psi(site * h) * h;
    if (std::abs(site) <= K) {
      mu[ui] = mu0.mass[static_cast<std::size_t>(site + K)];
      nu[ui] = nu0.mass[static_cast<std::size_t>(site + K)];
      wphi_w[ui] = wphi[ui];
      wpsi_w[ui] = wpsi[ui];
    }
  }
  const auto full = detail::pair_sums(mu, nu, wphi, wpsi, ker, killed);
  const auto win = detail::pair_sums(mu, nu, wphi_w, wpsi_w, ker, false);
  PairingResult r;
  r.value = killed ? full.killed : full.unkilled;
  r.leak = full.unkilled != 0.0 ? std::abs(full.unkilled - win.unkilled) / std::abs(full.unkilled) : 0.0;
  detail::report_leak(r.leak);
  return r;
}

// ---------------------------------------------------------------------------
// Scaling probes

/// sup over |x| <= window_scale * n of |n ^dp_{n^2 t}(x) - p_t(x/n)|.
inline double local_clt_gap(int n, double t, double window_scale = 10.0) {
  if (n < 1) throw std::invalid_argument("local_clt_gap needs n >= 1");
  if (!(t > 0.0)) throw std::invalid_argument("local_clt_gap needs t > 0");
  const int K = static_cast<int>(std::ceil(window_scale * n));
  const double nn = static_cast<double>(n);
  const auto row = heat_kernel_row(nn * nn * t, K);
  double gap = 0.0;
  for (int x = 0; x <= K; ++x) gap = std::max(gap, std::abs(nn * row[static_cast<std::size_t>(x)] - continuous_heat_kernel(t, x / nn)));
  return gap;
}

struct UniformBounds {
  double c_est = 0.0;
  double C_est = 0.0;
};

/// min / max over t in a grid of [0, T] and |k| <= window_scale * n of
/// ^dS_{n^2 t}(phi_lambda(./n))(k) / phi_lambda(k/n).
inline UniformBounds uniform_bound_probe(double lambda, double T, int n, int time_points = 20,
                                         double window_scale = 10.0) {
  if (n < 1) throw std::invalid_argument("uniform_bound_probe needs n >= 1");
  if (!(T > 0.0)) throw std::invalid_argument("uniform_bound_probe needs T > 0");
  const WeightFunction w{lambda};
  const double nn = static_cast<double>(n);
  const int K = static_cast<int>(std::ceil(window_scale * n));
  UniformBounds b{std::numeric_limits<double>::infinity(), 0.0};
  for (int i = 0; i <= time_points; ++i) {
    const double t = T * i / time_points;
    const auto half = truncated_kernel(nn * nn * t);
    const int L = static_cast<int>(half.size()) - 1;
    for (int k = -K; k <= K; ++k) {
      double s = 0.0;
      for (int d = -L; d <= L; ++d) s += half[static_cast<std::size_t>(std::abs(d))] * w((k + d) / nn);
      const double ratio = s / w(k / nn);
      b.c_est = std::min(b.c_est, ratio);
      b.C_est = std::max(b.C_est, ratio);
    }
  }
  return b;
}

}  // namespace sbm
