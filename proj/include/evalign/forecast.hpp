#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evalign/ensemble.hpp"
#include "evalign/rng.hpp"

namespace evalign {

// ---------------------------------------------------------------------------
// Synthetic regression data
// ---------------------------------------------------------------------------

enum class SynthKind { kSinusoidal, kQuadratic };
enum class NoiseMode { kHeterogeneous, kHomogeneous };

struct SynthDataSpec {
  SynthKind kind = SynthKind::kSinusoidal;
  NoiseMode noise = NoiseMode::kHeterogeneous;
  int n_points = 1000;
  std::uint64_t seed = 0;
};

struct XY {
  double x = 0.0;
  double y = 0.0;
};

/// Noiseless part of the generating process:
///   sinusoidal: x/2 + sin(x), x over (-10, 10)
///   quadratic:  2 x^2,        x over (0, 5)
double synth_mean(SynthKind kind, double x);

/// Draws (x, y) pairs; the noise term is scaled by x (sinusoidal) or x^2/2
/// (quadratic) in heterogeneous mode and is unit-scale in homogeneous mode,
/// with an outer factor of 1/4 for the sinusoidal family. Bitwise
/// reproducible per seed.
std::vector<XY> gen_synth_data(const SynthDataSpec& spec);

// ---------------------------------------------------------------------------
// Gaussian probabilistic regressor trained with sample-based CRPS
// ---------------------------------------------------------------------------

struct DenseLayer {
  int fan_in = 0;
  int fan_out = 0;
  std::vector<double> weights;  // fan_out x fan_in, row-major
  std::vector<double> bias;
};

/// Two rectifier hidden layers with mean and log-variance heads,
/// parameterizing N(mu(x), sigma^2(x)).
struct GaussianRegressor {
  DenseLayer l1;
  DenseLayer l2;
  DenseLayer mu_head;
  DenseLayer logvar_head;
};

struct RegressorConfig {
  int hidden = 64;
  double learning_rate = 1e-2;
  double weight_decay = 1e-4;
  int epochs = 100;
  int batch_size = 128;
  int train_samples = 32;  // reparameterized draws per instance per step
  std::uint64_t seed = 0;
};

/// Fits the regressor by Adam on the ensemble-CRPS of reparameterized
/// samples mu + sigma * eps. Deterministic per seed; throws TrainingError
/// on divergence.
GaussianRegressor train_regressor(std::span<const XY> data, const RegressorConfig& cfg);

struct GaussianPrediction {
  double mean = 0.0;
  double stddev = 0.0;  // floored at 1e-6
};

GaussianPrediction predict(const GaussianRegressor& model, double x);

/// M seeded draws mu(x) + sigma(x) * eps.
Ensemble predict_ensemble(const GaussianRegressor& model, double x, int m, std::uint64_t seed);

/// One ensemble per data row (observation = y), with per-row derived seeds.
std::vector<Ensemble> predict_ensembles(const GaussianRegressor& model, std::span<const XY> data,
                                        int m, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Seasonal exponential smoothing with rolling-origin backtesting
// ---------------------------------------------------------------------------

struct BacktestConfig {
  int initial_window = 24;
  int horizon = 1;
  int stride = 1;
  int ensemble_size = 100;
  std::uint64_t seed = 0;
  int seasonal_period = 12;
  double alpha = 0.3;   // level smoothing
  double beta = 0.05;   // trend smoothing
  double gamma = 0.3;   // seasonal smoothing
  /// Clamp predictive samples at zero (demand cannot be negative).
  bool clamp_nonnegative = false;
};

/// Additive Holt-Winters refit from scratch at every origin on data strictly
/// before it, with predictive samples formed by bootstrapping in-window
/// one-step residuals around the point forecast. Origins run from
/// initial_window to the last index admitting the horizon, stepping by
/// stride; each ensemble's observation is the realized value. Seasonal mode
/// requires initial_window >= 2 * seasonal_period, otherwise the seasonal
/// component is disabled and a trend-only recursion is used.
std::vector<Ensemble> exp_smoothing_backtest(std::span<const double> series,
                                             const BacktestConfig& cfg);

// ---------------------------------------------------------------------------
// Synthetic monthly demand (seasonal, trending) with prices
// ---------------------------------------------------------------------------

struct DemandSpec {
  int n_months = 168;
  double base = 200.0;
  double season_amp = 60.0;
  double season_phase = 0.5;
  double trend = 0.25;
  double noise_sd = 15.0;
  double price_base = 10000.0;
  double price_amp = 1500.0;
  double price_phase = 1.3;
  double price_noise_sd = 300.0;
  std::uint64_t seed = 0;
};

struct MonthRecord {
  int month = 0;
  double demand = 0.0;
  double price = 0.0;
};

/// Monthly demand (clamped to >= 1) and unit price with yearly seasonality.
std::vector<MonthRecord> gen_demand_series(const DemandSpec& spec);

}  // namespace evalign
