#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sbm {

enum class Boundary { periodic, reflecting };

inline std::string_view to_string(Boundary b) {
  return b == Boundary::periodic ? "periodic" : "reflecting";
}

inline Boundary boundary_from_string(std::string_view s) {
  if (s == "periodic") return Boundary::periodic;
  if (s == "reflecting") return Boundary::reflecting;
  throw std::invalid_argument("unknown boundary policy '" + std::string(s) + "'");
}

/// Finite window of sites -radius..radius with a lattice spacing and a
/// boundary policy for the nearest-neighbour walk.
struct KernelGrid {
  int radius = 1;
  double spacing = 1.0;
  Boundary boundary = Boundary::periodic;

  KernelGrid() = default;
  KernelGrid(int r, double a = 1.0, Boundary b = Boundary::periodic)
      : radius(r), spacing(a), boundary(b) {
    if (r < 1) throw std::invalid_argument("window radius must be >= 1");
    if (!(a > 0.0)) throw std::invalid_argument("lattice spacing must be positive");
  }

  [[nodiscard]] int size() const { return 2 * radius + 1; }
  [[nodiscard]] int index(int site) const { return site + radius; }
  [[nodiscard]] int site(int idx) const { return idx - radius; }
  [[nodiscard]] bool contains(int site) const { return site >= -radius && site <= radius; }

  /// Maps an unbounded index offset onto the window according to the
  /// boundary policy. Reflection is about the half-integer points just
  /// outside the window, so an edge site is its own outer neighbour.
  [[nodiscard]] int fold(long long idx) const {
    const long long m = size();
    if (boundary == Boundary::periodic) {
      long long r = idx % m;
      return static_cast<int>(r < 0 ? r + m : r);
    }
    const long long period = 2 * m;
    long long r = idx % period;
    if (r < 0) r += period;
    if (r >= m) r = period - 1 - r;
    return static_cast<int>(r);
  }

  bool operator==(const KernelGrid&) const = default;
};

/// Nonnegative (by convention) real values on the sites of a KernelGrid.
class LatticeField {
 public:
  LatticeField() = default;
  explicit LatticeField(KernelGrid grid, double fill = 0.0)
      : grid_(grid), values_(static_cast<std::size_t>(grid.size()), fill) {}
  LatticeField(KernelGrid grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    if (values_.size() != static_cast<std::size_t>(grid_.size()))
      throw std::invalid_argument("field size does not match the window");
  }

  [[nodiscard]] const KernelGrid& grid() const { return grid_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] std::span<const double> values() const { return values_; }
  [[nodiscard]] std::span<double> values() { return values_; }
  [[nodiscard]] std::vector<double>& raw() { return values_; }
  [[nodiscard]] const std::vector<double>& raw() const { return values_; }

  [[nodiscard]] double at(int site) const { return values_[static_cast<std::size_t>(grid_.index(site))]; }
  double& at(int site) { return values_[static_cast<std::size_t>(grid_.index(site))]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  [[nodiscard]] double total() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }
  [[nodiscard]] double max() const { return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end()); }
  [[nodiscard]] double min() const { return values_.empty() ? 0.0 : *std::min_element(values_.begin(), values_.end()); }

  /// Site-wise pairing sum_k f(k) g(k).
  template <class F>
    requires std::invocable<F&, int>
  [[nodiscard]] double pair(F&& g) const {
    double s = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) s += values_[i] * g(grid_.site(static_cast<int>(i)));
    return s;
  }

  [[nodiscard]] double pair(const LatticeField& other) const {
    double s = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) s += values_[i] * other.values_[i];
    return s;
  }

  static LatticeField unit_mass(KernelGrid grid, int site, double mass = 1.0) {
    LatticeField f(grid);
    f.at(site) = mass;
    return f;
  }

  bool operator==(const LatticeField&) const = default;

 private:
  KernelGrid grid_{};
  std::vector<double> values_;
};

/// u and v on a shared window, with the noise correlation and model time.
struct PopulationState {
  LatticeField u;
  LatticeField v;
  double rho = 0.0;
  double time = 0.0;

  PopulationState() = default;
  PopulationState(LatticeField u0, LatticeField v0, double rho_, double t = 0.0)
      : u(std::move(u0)), v(std::move(v0)), rho(rho_), time(t) {
    if (!(u.grid() == v.grid())) throw std::invalid_argument("u and v must share a window");
    if (!(rho >= -1.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [-1, 1]");
  }

  [[nodiscard]] const KernelGrid& grid() const { return u.grid(); }
};

/// rho = -1 is accepted by the simulators but no identity is validated there.
inline bool unvalidated_regime(double rho) { return rho <= -1.0; }

}  // namespace sbm
