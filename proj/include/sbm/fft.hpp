#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace sbm::detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Circular convolution of real sequences of a fixed length via FFTW.
/// Plans are created under a global lock (the FFTW planner is not
/// reentrant); execution uses the new-array interface on owned buffers.
class CircularConvolver {
 public:
  explicit CircularConvolver(std::size_t n) : n_(n), nc_(n / 2 + 1) {
    real_ = static_cast<double*>(fftw_malloc(sizeof(double) * n_));
    spec_a_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * nc_));
    spec_b_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * nc_));
    if (!real_ || !spec_a_ || !spec_b_) throw std::bad_alloc();
    std::lock_guard lock(fftw_planner_mutex());
    fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n_), real_, spec_a_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n_), spec_a_, real_, FFTW_ESTIMATE);
  }
  CircularConvolver(const CircularConvolver&) = delete;
  CircularConvolver& operator=(const CircularConvolver&) = delete;
  ~CircularConvolver() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(fwd_);
      fftw_destroy_plan(inv_);
    }
    fftw_free(real_);
    fftw_free(spec_a_);
    fftw_free(spec_b_);
  }

  [[nodiscard]] std::size_t size() const { return n_; }

  /// out[i] = sum_j a[j] * b[(i - j) mod n]
  void convolve(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    if (a.size() != n_ || b.size() != n_ || out.size() != n_) throw std::invalid_argument("convolver size mismatch");
    std::copy(a.begin(), a.end(), real_);
    fftw_execute_dft_r2c(fwd_, real_, spec_a_);
    std::copy(b.begin(), b.end(), real_);
    fftw_execute_dft_r2c(fwd_, real_, spec_b_);
    for (std::size_t k = 0; k < nc_; ++k) {
      const double re = spec_a_[k][0] * spec_b_[k][0] - spec_a_[k][1] * spec_b_[k][1];
      const double im = spec_a_[k][0] * spec_b_[k][1] + spec_a_[k][1] * spec_b_[k][0];
      spec_a_[k][0] = re;
      spec_a_[k][1] = im;
    }
    fftw_execute_dft_c2r(inv_, spec_a_, real_);
    const double scale = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = real_[i] * scale;
  }

 private:
  std::size_t n_;
  std::size_t nc_;
  double* real_ = nullptr;
  fftw_complex* spec_a_ = nullptr;
  fftw_complex* spec_b_ = nullptr;
  fftw_plan fwd_{};
  fftw_plan inv_{};
};

/// Per-thread cache so repeated semigroup applications reuse plans.
inline CircularConvolver& convolver_for(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<CircularConvolver>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<CircularConvolver>(n);
  return *slot;
}

}  // namespace sbm::detail
