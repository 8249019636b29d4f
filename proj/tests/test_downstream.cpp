#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "evalign/downstream.hpp"
#include "evalign/errors.hpp"
#include "evalign/rng.hpp"
#include "evalign/scoring.hpp"

using namespace evalign;

namespace {

/// Discrete brute force: the concave piecewise-linear objective attains its
/// maximum on {0} union samples; smallest maximizer wins ties.
double bayes_act_bruteforce(const std::vector<double>& samples, const NewsvendorParams& p) {
  std::vector<double> candidates = samples;
  candidates.push_back(0.0);
  std::sort(candidates.begin(), candidates.end());
  double best_a = 0.0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (const double a : candidates) {
    double v = 0.0;
    for (const double d : samples) {
      v += newsvendor_profit(a, d, p);
    }
    v /= static_cast<double>(samples.size());
    if (v > best_v) {
      best_v = v;
      best_a = a;
    }
  }
  return best_a;
}

double grid_best_value(const std::vector<double>& samples, const NewsvendorParams& p, int n_grid) {
  const double hi = *std::max_element(samples.begin(), samples.end());
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n_grid; ++i) {
    const double a = hi * static_cast<double>(i) / (n_grid - 1);
    double v = 0.0;
    for (const double d : samples) {
      v += newsvendor_profit(a, d, p);
    }
    best = std::max(best, v / static_cast<double>(samples.size()));
  }
  return best;
}

double mean_profit(const std::vector<double>& samples, double a, const NewsvendorParams& p) {
  double v = 0.0;
  for (const double d : samples) {
    v += newsvendor_profit(a, d, p);
  }
  return v / static_cast<double>(samples.size());
}

NewsvendorParams random_params(Rng& rng) {
  NewsvendorParams p;
  p.cost = rng.uniform(0.5, 5.0);
  p.price = p.cost * rng.uniform(1.05, 4.0);
  p.holding = rng.uniform(0.0, 3.0);
  return p;
}

std::vector<double> random_demands(Rng& rng, int m) {
  std::vector<double> d(static_cast<std::size_t>(m));
  for (double& v : d) {
    v = rng.uniform(0.0, 10.0);
  }
  return d;
}

}  // namespace

TEST_CASE("newsvendor profit examples") {
  const NewsvendorParams p{10.0, 4.0, 1.0};
  CHECK(newsvendor_profit(0.0, 7.0, p) == doctest::Approx(0.0));
  CHECK(newsvendor_profit(2.0, 3.0, p) == doctest::Approx(12.0));
  CHECK(newsvendor_profit(3.0, 2.0, p) == doctest::Approx(7.0));
  CHECK_THROWS_AS(newsvendor_profit(-1.0, 2.0, p), InvalidInput);
  CHECK_THROWS_AS(newsvendor_profit(1.0, -2.0, p), InvalidInput);
  CHECK_THROWS_AS(newsvendor_profit(1.0, 2.0, NewsvendorParams{-1.0, 0.0, 0.0}), InvalidInput);
}

TEST_CASE("bayes act examples") {
  // fractile 1/2 on {1,2,3,4}: 2 and 3 tie, the smaller wins
  CHECK(newsvendor_bayes_act(std::vector<double>{1, 2, 3, 4}, {2.0, 1.0, 0.0}) ==
        doctest::Approx(2.0));
  // unprofitable: order nothing
  CHECK(newsvendor_bayes_act(std::vector<double>{5, 6, 7}, {1.0, 2.0, 0.5}) == doctest::Approx(0.0));
  // single profitable sample: match it
  CHECK(newsvendor_bayes_act(std::vector<double>{4.2}, {3.0, 1.0, 1.0}) == doctest::Approx(4.2));
  CHECK_THROWS_AS(newsvendor_bayes_act(std::vector<double>{}, {2.0, 1.0, 0.0}), InvalidInput);
  CHECK_THROWS_AS(newsvendor_bayes_act(std::vector<double>{-1.0}, {2.0, 1.0, 0.0}), InvalidInput);
}

TEST_CASE("bayes act agrees with the discrete brute force exactly") {
  Rng rng(17);
  for (int it = 0; it < 500; ++it) {
    const NewsvendorParams p = random_params(rng);
    const std::vector<double> d = random_demands(rng, 1 + static_cast<int>(rng.bounded(40)));
    const double fast = newsvendor_bayes_act(d, p);
    const double brute = bayes_act_bruteforce(d, p);
    CHECK(fast == brute);
    // fractile consistency: 0 or a sample
    const bool member = fast == 0.0 || std::count(d.begin(), d.end(), fast) > 0;
    CHECK(member);
  }
}

TEST_CASE("bayes act beats a dense action grid") {
  Rng rng(19);
  for (int it = 0; it < 200; ++it) {
    const NewsvendorParams p = random_params(rng);
    const std::vector<double> d = random_demands(rng, 2 + static_cast<int>(rng.bounded(30)));
    const double a = newsvendor_bayes_act(d, p);
    const double at_act = mean_profit(d, a, p);
    const double scale = std::max(1.0, std::abs(at_act));
    CHECK(at_act >= grid_best_value(d, p, 2001) - 1e-9 * scale);
  }
}

TEST_CASE("bayes act economics monotonicity") {
  Rng rng(23);
  for (int it = 0; it < 200; ++it) {
    NewsvendorParams p = random_params(rng);
    const std::vector<double> d = random_demands(rng, 1 + static_cast<int>(rng.bounded(30)));
    const double base = newsvendor_bayes_act(d, p);
    NewsvendorParams higher_price = p;
    higher_price.price *= rng.uniform(1.0, 3.0);
    CHECK(newsvendor_bayes_act(d, higher_price) >= base);
    NewsvendorParams higher_cost = p;
    higher_cost.cost *= rng.uniform(1.0, 3.0);
    CHECK(newsvendor_bayes_act(d, higher_cost) <= base);
  }
}

TEST_CASE("downstream scores chain act and profit") {
  Ensemble perfect;
  perfect.samples.assign(10, 6.0);
  perfect.observation = 6.0;
  const NewsvendorParams p{10.0, 4.0, 2.0};
  const std::vector<Ensemble> forecasts{perfect};
  const std::vector<NewsvendorParams> params{p};
  const std::vector<double> scores = downstream_scores(forecasts, params);
  CHECK(scores.size() == 1);
  CHECK(scores[0] == doctest::Approx((10.0 - 4.0) * 6.0));

  const Ensemble spec_ex{{1, 2, 3, 4}, 4.0, "ex"};
  const std::vector<Ensemble> f2{spec_ex};
  const std::vector<NewsvendorParams> p2{{2.0, 1.0, 0.0}};
  CHECK(downstream_scores(f2, p2)[0] == doctest::Approx(2.0));

  CHECK(downstream_scores(std::vector<Ensemble>{}, std::vector<NewsvendorParams>{}).empty());
  CHECK_THROWS_AS(downstream_scores(f2, std::vector<NewsvendorParams>{}), InvalidInput);
}

TEST_CASE("synthetic downstream equals twcrps per instance") {
  Rng rng(29);
  std::vector<Ensemble> forecasts;
  for (int i = 0; i < 40; ++i) {
    Ensemble ens;
    for (int j = 0; j < 20; ++j) {
      ens.samples.push_back(rng.uniform(-2.0, 2.0));
    }
    ens.observation = rng.uniform(-2.0, 2.0);
    forecasts.push_back(std::move(ens));
  }
  const ChainingSpec gauss{GaussianChaining{0.5, 0.0, 1.0}};
  const std::vector<double> scores = synth_downstream(forecasts, gauss);
  for (std::size_t i = 0; i < forecasts.size(); ++i) {
    CHECK(scores[i] >= 0.0);
    CHECK(scores[i] == doctest::Approx(twcrps_ensemble(forecasts[i], gauss)));
  }
  // identity chaining reduces to plain crps
  const std::vector<double> id_scores = synth_downstream(forecasts, IdentityChaining{});
  for (std::size_t i = 0; i < forecasts.size(); ++i) {
    CHECK(id_scores[i] == doctest::Approx(crps_ensemble(forecasts[i])).epsilon(1e-12));
  }
  // threshold above all values collapses everything to zero
  const std::vector<double> zeros = synth_downstream(forecasts, ThresholdChaining{10.0});
  for (const double s : zeros) {
    CHECK(s == 0.0);
  }
}
