#pragma once

#include <cmath>
#include <span>

namespace evalign {

inline double norm_pdf(double u) {
  static const double kInvSqrt2Pi = 0.3989422804014326779;
  return kInvSqrt2Pi * std::exp(-0.5 * u * u);
}

inline double norm_cdf(double u) { return 0.5 * std::erfc(-u * 0.70710678118654752440); }

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double mean(std::span<const double> v);

/// Population standard deviation (divides by n).
double stddev(std::span<const double> v);

}  // namespace evalign
