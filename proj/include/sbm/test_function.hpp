#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace sbm {

/// phi_lambda(x) = exp(-lambda |x|).
struct WeightFunction {
  double lambda = 0.0;
  [[nodiscard]] double operator()(double x) const { return std::exp(-lambda * std::abs(x)); }
};

/// Scalar test function on the real line drawn from a small named family.
class TestFunction {
 public:
  enum class Kind { exp_weight, gaussian, indicator, constant };

  static TestFunction exp_weight(double lambda, double center = 0.0) {
    TestFunction f(Kind::exp_weight);
    f.a_ = lambda;
    f.center_ = center;
    return f;
  }
  /// height * exp(-(x - center)^2 / (2 width^2))
  static TestFunction gaussian(double center, double width, double height = 1.0) {
    if (!(width > 0.0)) throw std::invalid_argument("gaussian width must be positive");
    TestFunction f(Kind::gaussian);
    f.center_ = center;
    f.a_ = width;
    f.b_ = height;
    return f;
  }
  /// 1 on [lo, hi).
  static TestFunction indicator(double lo, double hi) {
    if (!(hi >= lo)) throw std::invalid_argument("indicator needs lo <= hi");
    TestFunction f(Kind::indicator);
    f.a_ = lo;
    f.b_ = hi;
    return f;
  }
  static TestFunction constant(double value) {
    TestFunction f(Kind::constant);
    f.b_ = value;
    return f;
  }

  [[nodiscard]] double operator()(double x) const {
    switch (kind_) {
      case Kind::exp_weight: return std::exp(-a_ * std::abs(x - center_));
      case Kind::gaussian: {
        const double z = (x - center_) / a_;
        return b_ * std::exp(-0.5 * z * z);
      }
      case Kind::indicator: return (x >= a_ && x < b_) ? 1.0 : 0.0;
      case Kind::constant: return b_;
    }
    return 0.0;
  }

  [[nodiscard]] Kind kind() const { return kind_; }
  [[nodiscard]] double center() const { return center_; }
  [[nodiscard]] double param_a() const { return a_; }
  [[nodiscard]] double param_b() const { return b_; }

  [[nodiscard]] std::string describe() const {
    switch (kind_) {
      case Kind::exp_weight: return "exp_weight(lambda=" + std::to_string(a_) + ",center=" + std::to_string(center_) + ")";
      case Kind::gaussian:
        return "gaussian(center=" + std::to_string(center_) + ",width=" + std::to_string(a_) + ",height=" + std::to_string(b_) + ")";
      case Kind::indicator: return "indicator[" + std::to_string(a_) + "," + std::to_string(b_) + ")";
      case Kind::constant: return "constant(" + std::to_string(b_) + ")";
    }
    return "?";
  }

 private:
  explicit TestFunction(Kind k) : kind_(k) {}
  Kind kind_;
  double center_ = 0.0;
  double a_ = 0.0;
  double b_ = 0.0;
};

}  // namespace sbm
