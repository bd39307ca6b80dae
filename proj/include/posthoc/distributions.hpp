#ifndef POSTHOC_DISTRIBUTIONS_HPP
#define POSTHOC_DISTRIBUTIONS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

#include "posthoc/error.hpp"

namespace posthoc {

/// Two-sided tail P(|T| >= |t|) of Student's t with integer degrees of freedom.
///
/// Evaluated millions of times per null matrix, so the df-dependent constants
/// are computed once. Small df use the closed-form series in c = cos(atan(|t|/sqrt(df))):
/// even df sum the binomial series of (1-c^2)^(-1/2), odd df the series of
/// arcsin(c)/sqrt(1-c^2). Deep in the tail (c^2 < 0.6) the series is summed
/// from the truncation point onwards so that tiny p keep full relative accuracy.
/// Larger df go through the incomplete beta I_x(df/2, 1/2) by continued fraction.
class StudentTail {
public:
  static constexpr std::uint32_t kSeriesMaxDf = 20;

  explicit StudentTail(std::uint32_t df) : df_(df) {
    if (df == 0) throw ParamError("degrees of freedom must be positive");
    a_ = 0.5 * df;
    log_beta_ = std::lgamma(a_) + std::lgamma(0.5) - std::lgamma(a_ + 0.5);
  }

  std::uint32_t df() const noexcept { return df_; }

  double operator()(double t) const {
    const double abs_t = std::fabs(t);
    if (std::isnan(abs_t)) throw DataError("t statistic is NaN");
    if (abs_t == 0.0) return 1.0;
    if (std::isinf(abs_t)) return 0.0;
    const double p = df_ <= kSeriesMaxDf ? series(abs_t) : incomplete_beta(abs_t);
    return std::clamp(p, 0.0, 1.0);
  }

private:
  double series(double abs_t) const {
    constexpr double kTailSwitch = 0.6;
    constexpr double kRelTol = 1e-17;
    constexpr int kMaxTerms = 4000;
    const double sqrt_df = std::sqrt(static_cast<double>(df_));
    const double h = std::hypot(abs_t, sqrt_df);
    const double c = sqrt_df / h;
    const double s = abs_t / h;
    const double c2 = c * c;

    if (df_ % 2 == 0) {
      const std::uint32_t finite_terms = df_ / 2;
      if (c2 < kTailSwitch) {
        double term = 1.0;
        for (std::uint32_t j = 1; j <= finite_terms; ++j) term *= c2 * (2.0 * j - 1.0) / (2.0 * j);
        double sum = 0.0;
        for (int j = static_cast<int>(finite_terms), it = 0; it < kMaxTerms; ++j, ++it) {
          sum += term;
          if (term <= sum * kRelTol) break;
          term *= c2 * (2.0 * j + 1.0) / (2.0 * j + 2.0);
        }
        return s * sum;
      }
      double term = 1.0, sum = 0.0;
      for (std::uint32_t j = 0; j < finite_terms; ++j) {
        sum += term;
        term *= c2 * (2.0 * j + 1.0) / (2.0 * j + 2.0);
      }
      return 1.0 - s * sum;
    }

    const std::uint32_t finite_terms = (df_ - 1) / 2;
    if (c2 < kTailSwitch) {
      double term = c;
      for (std::uint32_t j = 1; j <= finite_terms; ++j) term *= c2 * (2.0 * j) / (2.0 * j + 1.0);
      double sum = 0.0;
      for (int j = static_cast<int>(finite_terms), it = 0; it < kMaxTerms; ++j, ++it) {
        sum += term;
        if (term <= sum * kRelTol) break;
        term *= c2 * (2.0 * j + 2.0) / (2.0 * j + 3.0);
      }
      return 2.0 / std::numbers::pi * s * sum;
    }
    double term = c, sum = 0.0;
    for (std::uint32_t j = 0; j < finite_terms; ++j) {
      sum += term;
      term *= c2 * (2.0 * j + 2.0) / (2.0 * j + 3.0);
    }
    const double theta = std::atan2(abs_t, sqrt_df);
    return 1.0 - 2.0 / std::numbers::pi * (theta + s * sum);
  }

  double incomplete_beta(double abs_t) const {
    const double df = static_cast<double>(df_);
    const double t2 = abs_t * abs_t;
    const double x = df / (df + t2);
    const double y = t2 / (df + t2);
    constexpr double b = 0.5;
    const double front = std::exp(a_ * std::log(x) + b * std::log(y) - log_beta_);
    if (x < (a_ + 1.0) / (a_ + b + 2.0)) return front * continued_fraction(a_, b, x) / a_;
    return 1.0 - front * continued_fraction(b, a_, y) / b;
  }

  // Modified Lentz evaluation of the incomplete-beta continued fraction.
  static double continued_fraction(double a, double b, double x) {
    constexpr double kTiny = 1e-300;
    constexpr double kEps = 1e-16;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    auto guard = [](double v) { return std::fabs(v) < kTiny ? kTiny : v; };
    double c = 1.0;
    double d = 1.0 / guard(1.0 - qab * x / qap);
    double h = d;
    for (int m = 1; m < 10000; ++m) {
      const double m2 = 2.0 * m;
      double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
      d = 1.0 / guard(1.0 + aa * d);
      c = guard(1.0 + aa / c);
      h *= d * c;
      aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
      d = 1.0 / guard(1.0 + aa * d);
      c = guard(1.0 + aa / c);
      const double del = d * c;
      h *= del;
      if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
  }

  std::uint32_t df_;
  double a_;
  double log_beta_;
};

inline double t_two_sided_tail(double t, std::uint32_t df) { return StudentTail(df)(t); }

/// 1 - Phi(z).
inline double normal_upper_tail(double z) noexcept { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

/// z >= 0 with P(|Z| >= z) = p, for p in (0, 1].
inline double normal_two_sided_quantile(double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ParamError("two-sided tail probability must lie in (0, 1]");
  if (p == 1.0) return 0.0;
  return std::numbers::sqrt2 * boost::math::erfc_inv(p);
}

} // namespace posthoc

#endif
