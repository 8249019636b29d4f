#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "evalign/align.hpp"
#include "evalign/errors.hpp"
#include "evalign/rng.hpp"
#include "evalign/scoring.hpp"

using namespace evalign;

namespace {

/// O(n^2) all-pairs tau-b oracle.
double kendall_bruteforce(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double concordant_minus_discordant = 0.0;
  double ties_x = 0.0;
  double ties_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0) {
        ties_x += 1.0;
      }
      if (dy == 0.0) {
        ties_y += 1.0;
      }
      if (dx != 0.0 && dy != 0.0) {
        concordant_minus_discordant += (dx > 0.0) == (dy > 0.0) ? 1.0 : -1.0;
      }
    }
  }
  const double n0 = static_cast<double>(n) * (static_cast<double>(n) - 1.0) / 2.0;
  return concordant_minus_discordant / std::sqrt((n0 - ties_x) * (n0 - ties_y));
}

std::vector<double> random_vector(Rng& rng, int n, bool tie_heavy) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) {
    x = tie_heavy ? static_cast<double>(rng.bounded(6)) : rng.uniform(-5.0, 5.0);
  }
  return v;
}

/// Gaussian-ish ensembles with crps (identity-chaining) targets.
AlignmentDataset crps_dataset(Rng& rng, int n, int m) {
  AlignmentDataset data;
  for (int i = 0; i < n; ++i) {
    AlignmentRecord rec;
    rec.ensemble.instance_id = std::to_string(i);
    const double mu = rng.uniform(-4.0, 4.0);
    const double sigma = std::exp(rng.uniform(-1.5, 0.5));
    for (int j = 0; j < m; ++j) {
      rec.ensemble.samples.push_back(mu + sigma * rng.normal());
    }
    rec.ensemble.observation = mu + sigma * rng.normal();
    rec.downstream_score = crps_ensemble(rec.ensemble);
    data.records.push_back(std::move(rec));
  }
  return data;
}

}  // namespace

TEST_CASE("kendall tau examples") {
  const std::vector<double> a{1, 2, 3};
  CHECK(kendall_tau(a, a) == doctest::Approx(1.0));
  const std::vector<double> rev{3, 2, 1};
  CHECK(kendall_tau(a, rev) == doctest::Approx(-1.0));
  const std::vector<double> mixed{1, 3, 2};
  CHECK(kendall_tau(a, mixed) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("kendall tau input validation") {
  const std::vector<double> a{1, 2, 3};
  const std::vector<double> short_v{1, 2};
  CHECK_THROWS_AS(kendall_tau(a, short_v), InvalidInput);
  const std::vector<double> constant{2, 2, 2};
  CHECK_THROWS_AS(kendall_tau(a, constant), InvalidInput);
  CHECK_THROWS_AS(kendall_tau(constant, a), InvalidInput);
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(kendall_tau(one, one), InvalidInput);
}

TEST_CASE("kendall tau equals the all-pairs oracle exactly") {
  Rng rng(37);
  for (int it = 0; it < 200; ++it) {
    const int n = 2 + static_cast<int>(rng.bounded(199));
    const bool ties = it % 2 == 0;
    const std::vector<double> x = random_vector(rng, n, ties);
    const std::vector<double> y = random_vector(rng, n, ties);
    const bool x_const = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
    const bool y_const = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
    if (x_const || y_const) {
      continue;
    }
    CHECK(kendall_tau(x, y) == kendall_bruteforce(x, y));
  }
}

TEST_CASE("kendall tau symmetry and monotone-map invariance") {
  Rng rng(41);
  for (int it = 0; it < 50; ++it) {
    const int n = 5 + static_cast<int>(rng.bounded(100));
    const std::vector<double> x = random_vector(rng, n, it % 2 == 0);
    const std::vector<double> y = random_vector(rng, n, false);
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) {
      continue;
    }
    CHECK(kendall_tau(x, y) == kendall_tau(y, x));
    std::vector<double> mapped = x;
    for (double& v : mapped) {
      v = std::exp(0.3 * v) + v;  // strictly increasing
    }
    CHECK(kendall_tau(mapped, y) == kendall_tau(x, y));
    std::vector<double> self = x;
    if (!std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) {
      CHECK(kendall_tau(x, x) == doctest::Approx(1.0));
    }
    (void)self;
  }
}

TEST_CASE("mae examples") {
  const std::vector<double> x{1, 2, 3};
  CHECK(mae(x, x) == doctest::Approx(0.0));
  CHECK(mae(std::vector<double>{0, 2}, std::vector<double>{1, 1}) == doctest::Approx(1.0));
  CHECK(mae(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 0}) == doctest::Approx(2.0));
  CHECK_THROWS_AS(mae(x, std::vector<double>{1.0}), InvalidInput);
  CHECK_THROWS_AS(mae(std::vector<double>{}, std::vector<double>{}), InvalidInput);
}

TEST_CASE("delta tau reproduces the published inventory improvements") {
  CHECK(delta_tau(-0.09, 0.74) == doctest::Approx(83.0));
  CHECK(delta_tau(-0.22, 0.70) == doctest::Approx(92.0));
  CHECK(delta_tau(0.25, 0.69) == doctest::Approx(44.0));
  CHECK(delta_tau(0.15, 0.73) == doctest::Approx(58.0));
  CHECK(delta_tau(0.5, 0.5) == doctest::Approx(0.0));
}

TEST_CASE("dataset validation") {
  AlignmentDataset empty;
  CHECK_THROWS_AS(validate(empty), InvalidInput);
  AlignmentDataset bad;
  bad.records.push_back({Ensemble{{1.0, 2.0}, 0.5, "a"}, 1.0});
  bad.records.push_back({Ensemble{{1.0}, 0.5, "b"}, 1.0});
  CHECK_THROWS_AS(validate(bad), InvalidInput);  // mixed M
  AlignmentDataset nan_score;
  nan_score.records.push_back({Ensemble{{1.0}, 0.5, "a"}, std::nan("")});
  CHECK_THROWS_AS(validate(nan_score), InvalidInput);
  AlignmentDataset ok;
  ok.records.push_back({Ensemble{{1.0, 2.0}, 0.5, "a"}, 1.0});
  CHECK(ensemble_size(ok) == 2);
}

TEST_CASE("training is deterministic for a fixed seed") {
  Rng rng(53);
  const AlignmentDataset data = crps_dataset(rng, 60, 8);
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.seed = 99;
  const TrainResult a = train_alignment(data, {}, cfg);
  const TrainResult b = train_alignment(data, {}, cfg);
  CHECK(flatten_params(a.net) == flatten_params(b.net));
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].train_loss == b.trace[i].train_loss);
    CHECK(a.trace[i].val_loss == b.trace[i].val_loss);
  }
}

TEST_CASE("small learning rate decreases the train loss across first epochs") {
  Rng rng(59);
  const AlignmentDataset data = crps_dataset(rng, 80, 8);
  TrainConfig cfg;
  cfg.learning_rate = 1e-4;
  cfg.epochs = 3;
  cfg.batch_size = 1 << 20;  // full batch
  cfg.seed = 3;
  const TrainResult result = train_alignment(data, {}, cfg);
  REQUIRE(result.trace.size() == 3);
  CHECK(result.trace[1].train_loss <= result.trace[0].train_loss);
}

TEST_CASE("training diverges loudly with an absurd learning rate") {
  Rng rng(61);
  const AlignmentDataset data = crps_dataset(rng, 40, 6);
  TrainConfig cfg;
  cfg.learning_rate = 1e12;
  cfg.epochs = 60;
  cfg.seed = 4;
  CHECK_THROWS_AS(train_alignment(data, {}, cfg), TrainingError);
}

TEST_CASE("identity-chaining targets are learned to tight test error") {
  Rng rng(67);
  const AlignmentDataset train_data = crps_dataset(rng, 400, 16);
  const AlignmentDataset test_data = crps_dataset(rng, 200, 16);
  TrainConfig cfg;
  cfg.seed = 5;
  const TrainResult result = train_alignment(train_data, {}, cfg);
  const InferResult inferred = infer_alignment(result.net, test_data);
  std::vector<double> scores;
  for (const AlignmentRecord& rec : test_data.records) {
    scores.push_back(rec.downstream_score);
  }
  CHECK(inferred.mae <= 0.01 * stddev(scores));
}

TEST_CASE("early stopping restores the best monitored snapshot") {
  Rng rng(71);
  const AlignmentDataset data = crps_dataset(rng, 100, 8);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.seed = 6;
  cfg.early_stopping = 5;
  const TrainResult result = train_alignment(data, {}, cfg);
  CHECK(result.trace.size() <= 40);
  // final net reproduces the best recorded val loss
  std::vector<std::size_t> val_idx;
  double best = std::numeric_limits<double>::infinity();
  for (const EpochStats& e : result.trace) {
    best = std::min(best, e.val_loss);
  }
  CHECK(best < std::numeric_limits<double>::infinity());
}

TEST_CASE("inference checks the training ensemble size") {
  Rng rng(73);
  const AlignmentDataset data = crps_dataset(rng, 50, 8);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 7;
  const TrainResult result = train_alignment(data, {}, cfg);
  const AlignmentDataset other = crps_dataset(rng, 10, 9);
  CHECK_THROWS_AS(infer_alignment(result.net, other), InvalidInput);
}

TEST_CASE("inference on a single record and order invariance") {
  AlignmentNet net;  // identity nu, identity head
  net.nu.raw_combiner = {1.0};
  net.head = AffineHead{0.0, 0.0};

  Rng rng(79);
  AlignmentDataset data = crps_dataset(rng, 30, 10);
  const InferResult base = infer_alignment(net, data);
  CHECK(base.mae <= 1e-9);  // targets are exactly the crps values

  AlignmentDataset single;
  single.records.push_back(data.records.front());
  single.records.front().downstream_score += 0.25;
  const InferResult one = infer_alignment(net, single);
  CHECK(one.mae == doctest::Approx(std::abs(one.estimates[0] -
                                            single.records.front().downstream_score)));

  AlignmentDataset shuffled = data;
  rng.shuffle(shuffled.records);
  const InferResult reordered = infer_alignment(net, shuffled);
  CHECK(reordered.mae == doctest::Approx(base.mae).epsilon(1e-12));
}
