#include "evalign/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "evalign/errors.hpp"
#include "evalign/mathutil.hpp"

namespace evalign {

void validate(const Ensemble& ens) {
  if (ens.samples.empty()) {
    throw InvalidInput("ensemble '" + ens.instance_id + "' has no samples");
  }
  if (!std::isfinite(ens.observation)) {
    throw InvalidInput("ensemble '" + ens.instance_id + "' has a non-finite observation");
  }
  for (const double s : ens.samples) {
    if (!std::isfinite(s)) {
      throw InvalidInput("ensemble '" + ens.instance_id + "' has a non-finite sample");
    }
  }
}

double crps_ensemble(const Ensemble& ens) {
  validate(ens);
  const std::size_t m = ens.samples.size();
  std::vector<double> sorted(ens.samples);
  std::sort(sorted.begin(), sorted.end());

  double term1 = 0.0;
  for (const double s : sorted) {
    term1 += std::abs(s - ens.observation);
  }
  term1 /= static_cast<double>(m);

  // sum_{j<k} (x_(k) - x_(j)) = sum_j x_(j) * (2j - m + 1) with j 0-based,
  // which equals half the full pairwise |.| double sum.
  double spread = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    spread += sorted[j] * (2.0 * static_cast<double>(j) - static_cast<double>(m) + 1.0);
  }
  const double term2 = spread / (static_cast<double>(m) * static_cast<double>(m));

  return term1 - term2;
}

double twcrps_ensemble(const Ensemble& ens, const ChainingSpec& spec) {
  validate(ens);
  const std::size_t m = ens.samples.size();
  std::vector<double> v(m);
  for (std::size_t j = 0; j < m; ++j) {
    v[j] = chaining_eval(spec, ens.samples[j]);
  }
  const double vy = chaining_eval(spec, ens.observation);

  double term1 = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    term1 += std::abs(v[j] - vy);
  }
  term1 /= static_cast<double>(m);

  double term2 = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double row = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      row += std::abs(v[j] - v[k]);
    }
    term2 += row;
  }
  term2 /= 2.0 * static_cast<double>(m) * static_cast<double>(m);

  return term1 - term2;
}

double mean_score(std::span<const double> scores) {
  if (scores.empty()) {
    throw InvalidInput("mean_score: empty input");
  }
  return mean(scores);
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) {
    s += x;
  }
  return s / static_cast<double>(v.size());
}

double stddev(std::span<const double> v) {
  const double mu = mean(v);
  double s = 0.0;
  for (const double x : v) {
    s += (x - mu) * (x - mu);
  }
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace evalign
