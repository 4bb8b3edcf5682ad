#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace pcfgi {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLn2 = 0.693147180559945309417232121458;

inline double log_add(double a, double b) noexcept {
  if (a < b) std::swap(a, b);
  if (b == kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

inline double log_sum_exp(std::span<const double> values) noexcept {
  double top = kNegInf;
  for (double v : values) top = std::max(top, v);
  if (top == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - top);
  return top + std::log(sum);
}

inline double safe_log(double p) noexcept {
  return p > 0.0 ? std::log(p) : kNegInf;
}

}  // namespace pcfgi
