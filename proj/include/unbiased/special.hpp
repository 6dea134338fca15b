#pragma once

#include <cmath>
#include <limits>

#include "error.hpp"

namespace unbiased::special {

inline double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

namespace detail {
// Modified Lentz evaluation of the incomplete beta continued fraction.
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  constexpr int max_iter = 500;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) <= eps) return h;
  }
  throw NumericalError("incomplete beta: continued fraction did not converge in 500 iterations");
}
} // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double ibeta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("ibeta: a and b must be positive");
  if (std::isnan(x)) throw DomainError("ibeta: x is NaN");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
  // Evaluate the fraction on whichever side converges quickly.
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_front) * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - std::exp(log_front) * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Compensated (Neumaier) summation.
class KahanSum {
public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

} // namespace unbiased::special
