#include "evalign/downstream.hpp"

#include <algorithm>
#include <cmath>

#include "evalign/errors.hpp"
#include "evalign/scoring.hpp"

namespace evalign {

void validate(const NewsvendorParams& params) {
  const auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (!ok(params.price) || !ok(params.cost) || !ok(params.holding)) {
    throw InvalidInput("newsvendor params must be finite and nonnegative");
  }
}

double newsvendor_profit(double order, double demand, const NewsvendorParams& params) {
  validate(params);
  if (!(order >= 0.0) || !(demand >= 0.0)) {
    throw InvalidInput("newsvendor_profit: order and demand must be nonnegative");
  }
  const double sold = std::min(demand, order);
  const double leftover = std::max(order - demand, 0.0);
  return params.price * sold - params.cost * order - params.holding * leftover;
}

double newsvendor_bayes_act(std::span<const double> demand_samples,
                            const NewsvendorParams& params) {
  validate(params);
  if (demand_samples.empty()) {
    throw InvalidInput("newsvendor_bayes_act: empty sample vector");
  }
  for (const double d : demand_samples) {
    if (!(d >= 0.0) || !std::isfinite(d)) {
      throw InvalidInput("newsvendor_bayes_act: samples must be finite and nonnegative");
    }
  }
  if (params.price <= params.cost) {
    return 0.0;  // every purchased unit loses money in expectation
  }
  const double fractile =
      std::clamp((params.price - params.cost) / (params.price + params.holding), 0.0, 1.0);
  std::vector<double> sorted(demand_samples.begin(), demand_samples.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  // Smallest order statistic whose empirical CDF reaches the fractile; on an
  // exact plateau this is the smallest maximizing order.
  std::size_t k = static_cast<std::size_t>(std::ceil(fractile * static_cast<double>(m)));
  k = std::clamp<std::size_t>(k, 1, m);
  return sorted[k - 1];
}

std::vector<double> downstream_scores(std::span<const Ensemble> forecasts,
                                      std::span<const NewsvendorParams> params_per_instance) {
  if (forecasts.size() != params_per_instance.size()) {
    throw InvalidInput("downstream_scores: forecasts and params lengths differ");
  }
  std::vector<double> scores;
  scores.reserve(forecasts.size());
  for (std::size_t i = 0; i < forecasts.size(); ++i) {
    validate(forecasts[i]);
    const double act = newsvendor_bayes_act(forecasts[i].samples, params_per_instance[i]);
    scores.push_back(newsvendor_profit(act, forecasts[i].observation, params_per_instance[i]));
  }
  return scores;
}

std::vector<double> synth_downstream(std::span<const Ensemble> forecasts,
                                     const ChainingSpec& spec) {
  validate(spec);
  std::vector<double> scores;
  scores.reserve(forecasts.size());
  for (const Ensemble& ens : forecasts) {
    scores.push_back(twcrps_ensemble(ens, spec));
  }
  return scores;
}

}  // namespace evalign
