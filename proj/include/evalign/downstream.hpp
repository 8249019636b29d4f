#pragma once

#include <span>
#include <vector>

#include "evalign/chaining.hpp"
#include "evalign/ensemble.hpp"

namespace evalign {

/// Per-period newsvendor economics: unit selling price, unit procurement
/// cost, unit holding cost for unsold stock.
struct NewsvendorParams {
  double price = 0.0;
  double cost = 0.0;
  double holding = 0.0;
};

/// Finite and nonnegative. Throws InvalidInput otherwise. A degenerate
/// price <= cost is permitted (the optimal order is then zero).
void validate(const NewsvendorParams& params);

/// Realized profit of ordering a when demand d materializes:
/// p * min(d, a) - c * a - h * max(a - d, 0).
double newsvendor_profit(double order, double demand, const NewsvendorParams& params);

/// Order quantity maximizing the sample-average profit over a >= 0. The
/// objective is concave piecewise linear with breakpoints at the samples,
/// so the maximizer is the empirical quantile at the critical fractile
/// (p - c) / (p + h); ties resolve to the smallest maximizing order.
/// The result is always 0 or one of the samples.
double newsvendor_bayes_act(std::span<const double> demand_samples,
                            const NewsvendorParams& params);

/// Per-instance downstream scores: profit of the Bayes act against the
/// realized observation. Lengths must match.
std::vector<double> downstream_scores(std::span<const Ensemble> forecasts,
                                      std::span<const NewsvendorParams> params_per_instance);

/// Synthetic downstream scores: the threshold-weighted CRPS of each
/// ensemble under a fixed chaining function.
std::vector<double> synth_downstream(std::span<const Ensemble> forecasts,
                                     const ChainingSpec& spec);

}  // namespace evalign
