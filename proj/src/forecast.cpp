#include "evalign/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "evalign/errors.hpp"
#include "evalign/mathutil.hpp"

namespace evalign {

double synth_mean(SynthKind kind, double x) {
  if (kind == SynthKind::kSinusoidal) {
    return 0.5 * x + std::sin(x);
  }
  return 2.0 * x * x;
}

std::vector<XY> gen_synth_data(const SynthDataSpec& spec) {
  if (spec.n_points < 1) {
    throw InvalidInput("gen_synth_data: n_points must be positive");
  }
  Rng rng(spec.seed);
  std::vector<XY> out;
  out.reserve(static_cast<std::size_t>(spec.n_points));
  const bool hetero = spec.noise == NoiseMode::kHeterogeneous;
  for (int i = 0; i < spec.n_points; ++i) {
    XY p;
    double noise_scale;
    if (spec.kind == SynthKind::kSinusoidal) {
      p.x = rng.uniform(-10.0, 10.0);
      noise_scale = 0.25 * (hetero ? p.x : 1.0);
    } else {
      p.x = rng.uniform(0.0, 5.0);
      noise_scale = hetero ? 0.5 * p.x * p.x : 1.0;
    }
    p.y = synth_mean(spec.kind, p.x) + noise_scale * rng.normal();
    out.push_back(p);
  }
  return out;
}

namespace {

constexpr double kSigmaFloor = 1e-6;

DenseLayer make_dense(int fan_in, int fan_out, Rng& rng) {
  DenseLayer layer;
  layer.fan_in = fan_in;
  layer.fan_out = fan_out;
  const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
  layer.weights.resize(static_cast<std::size_t>(fan_in * fan_out));
  layer.bias.resize(static_cast<std::size_t>(fan_out));
  for (double& w : layer.weights) {
    w = rng.uniform(-r, r);
  }
  for (double& b : layer.bias) {
    b = rng.uniform(-r, r);
  }
  return layer;
}

void dense_forward(const DenseLayer& layer, std::span<const double> x, std::span<double> out) {
  for (int j = 0; j < layer.fan_out; ++j) {
    double acc = layer.bias[static_cast<std::size_t>(j)];
    const double* w = &layer.weights[static_cast<std::size_t>(j * layer.fan_in)];
    for (int i = 0; i < layer.fan_in; ++i) {
      acc += w[i] * x[static_cast<std::size_t>(i)];
    }
    out[static_cast<std::size_t>(j)] = acc;
  }
}

/// d_out -> accumulates layer grads, returns d_x.
void dense_backward(const DenseLayer& layer, std::span<const double> x,
                    std::span<const double> d_out, DenseLayer& grads, std::span<double> d_x) {
  for (int i = 0; i < layer.fan_in; ++i) {
    d_x[static_cast<std::size_t>(i)] = 0.0;
  }
  for (int j = 0; j < layer.fan_out; ++j) {
    const double dj = d_out[static_cast<std::size_t>(j)];
    grads.bias[static_cast<std::size_t>(j)] += dj;
    const double* w = &layer.weights[static_cast<std::size_t>(j * layer.fan_in)];
    double* gw = &grads.weights[static_cast<std::size_t>(j * layer.fan_in)];
    for (int i = 0; i < layer.fan_in; ++i) {
      gw[i] += dj * x[static_cast<std::size_t>(i)];
      d_x[static_cast<std::size_t>(i)] += dj * w[i];
    }
  }
}

struct ForwardState {
  std::vector<double> h1_pre, h1, h2_pre, h2;
  double mu = 0.0;
  double logvar = 0.0;
  double sigma = 0.0;
};

void regressor_forward(const GaussianRegressor& model, double x, ForwardState& st) {
  const int h = model.l1.fan_out;
  st.h1_pre.resize(static_cast<std::size_t>(h));
  st.h1.resize(static_cast<std::size_t>(h));
  st.h2_pre.resize(static_cast<std::size_t>(h));
  st.h2.resize(static_cast<std::size_t>(h));
  const double in[1] = {x};
  dense_forward(model.l1, in, st.h1_pre);
  for (int j = 0; j < h; ++j) {
    st.h1[static_cast<std::size_t>(j)] = std::max(st.h1_pre[static_cast<std::size_t>(j)], 0.0);
  }
  dense_forward(model.l2, st.h1, st.h2_pre);
  for (int j = 0; j < h; ++j) {
    st.h2[static_cast<std::size_t>(j)] = std::max(st.h2_pre[static_cast<std::size_t>(j)], 0.0);
  }
  double out[1];
  dense_forward(model.mu_head, st.h2, out);
  st.mu = out[0];
  dense_forward(model.logvar_head, st.h2, out);
  st.logvar = out[0];
  st.sigma = std::max(std::exp(0.5 * st.logvar), kSigmaFloor);
}

struct RegressorGrads {
  DenseLayer l1, l2, mu_head, logvar_head;
};

template <typename Fn>
void visit_regressor(GaussianRegressor& m, Fn&& fn) {
  for (DenseLayer* layer : {&m.l1, &m.l2, &m.mu_head, &m.logvar_head}) {
    for (double& w : layer->weights) {
      fn(w);
    }
    for (double& b : layer->bias) {
      fn(b);
    }
  }
}

}  // namespace

GaussianRegressor train_regressor(std::span<const XY> data, const RegressorConfig& cfg) {
  if (data.empty()) {
    throw InvalidInput("train_regressor: empty dataset");
  }
  if (cfg.hidden < 1 || cfg.epochs < 1 || cfg.train_samples < 1) {
    throw InvalidInput("train_regressor: invalid config");
  }

  Rng init_rng(derive_seed(cfg.seed, "regressor/init"));
  GaussianRegressor model{make_dense(1, cfg.hidden, init_rng),
                          make_dense(cfg.hidden, cfg.hidden, init_rng),
                          make_dense(cfg.hidden, 1, init_rng),
                          make_dense(cfg.hidden, 1, init_rng)};
  GaussianRegressor grads = model;
  const auto zero_grads = [&grads] {
    visit_regressor(grads, [](double& g) { g = 0.0; });
  };

  // Adam state.
  std::size_t n_params = 0;
  visit_regressor(model, [&n_params](double&) { ++n_params; });
  std::vector<double> m1(n_params, 0.0);
  std::vector<double> m2(n_params, 0.0);
  int step = 0;
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  Rng train_rng(derive_seed(cfg.seed, "regressor/train"));
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const int batch = std::max(1, std::min<int>(cfg.batch_size, static_cast<int>(n)));
  const int m_samp = cfg.train_samples;

  std::vector<double*> params;
  std::vector<double*> gptrs;
  params.reserve(n_params);
  gptrs.reserve(n_params);
  visit_regressor(model, [&params](double& p) { params.push_back(&p); });
  visit_regressor(grads, [&gptrs](double& g) { gptrs.push_back(&g); });

  ForwardState st;
  std::vector<double> eps(static_cast<std::size_t>(m_samp));
  std::vector<double> draws(static_cast<std::size_t>(m_samp));
  std::vector<double> d_h2(static_cast<std::size_t>(cfg.hidden));
  std::vector<double> d_h2b(static_cast<std::size_t>(cfg.hidden));
  std::vector<double> d_h1(static_cast<std::size_t>(cfg.hidden));
  std::vector<double> d_in(1);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    train_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(batch));
      zero_grads();
      for (std::size_t bi = start; bi < stop; ++bi) {
        const XY& pt = data[order[bi]];
        regressor_forward(model, pt.x, st);
        for (int j = 0; j < m_samp; ++j) {
          eps[static_cast<std::size_t>(j)] = train_rng.normal();
          draws[static_cast<std::size_t>(j)] =
              st.mu + st.sigma * eps[static_cast<std::size_t>(j)];
        }
        // Ensemble CRPS of the reparameterized draws and its gradient
        // with respect to mu and sigma.
        double term1 = 0.0;
        double d_mu = 0.0;
        double d_sigma_1 = 0.0;
        for (int j = 0; j < m_samp; ++j) {
          const double diff = draws[static_cast<std::size_t>(j)] - pt.y;
          term1 += std::abs(diff);
          const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          d_mu += s;
          d_sigma_1 += s * eps[static_cast<std::size_t>(j)];
        }
        const double md = static_cast<double>(m_samp);
        term1 /= md;
        d_mu /= md;
        d_sigma_1 /= md;
        double term2 = 0.0;
        double d_sigma_2 = 0.0;
        for (int j = 0; j < m_samp; ++j) {
          double row = 0.0;
          double rowsgn = 0.0;
          for (int k = 0; k < m_samp; ++k) {
            const double diff =
                draws[static_cast<std::size_t>(j)] - draws[static_cast<std::size_t>(k)];
            row += std::abs(diff);
            rowsgn += diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
          }
          term2 += row;
          d_sigma_2 += rowsgn * eps[static_cast<std::size_t>(j)];
        }
        term2 /= 2.0 * md * md;
        d_sigma_2 /= md * md;
        epoch_loss += term1 - term2;
        const double inv_b = 1.0 / static_cast<double>(stop - start);
        const double d_mu_total = d_mu * inv_b;
        const double d_sigma_total = (d_sigma_1 - d_sigma_2) * inv_b;
        // sigma = exp(logvar / 2) above the floor.
        const double d_logvar =
            st.sigma > kSigmaFloor ? d_sigma_total * st.sigma * 0.5 : 0.0;

        const double d_mu_out[1] = {d_mu_total};
        const double d_lv_out[1] = {d_logvar};
        dense_backward(model.mu_head, st.h2, d_mu_out, grads.mu_head, d_h2);
        dense_backward(model.logvar_head, st.h2, d_lv_out, grads.logvar_head, d_h2b);
        for (int j = 0; j < cfg.hidden; ++j) {
          const std::size_t ju = static_cast<std::size_t>(j);
          const double relu_g = st.h2_pre[ju] > 0.0 ? 1.0 : 0.0;
          d_h2[ju] = (d_h2[ju] + d_h2b[ju]) * relu_g;
        }
        dense_backward(model.l2, st.h1, d_h2, grads.l2, d_h1);
        for (int j = 0; j < cfg.hidden; ++j) {
          const std::size_t ju = static_cast<std::size_t>(j);
          d_h1[ju] *= st.h1_pre[ju] > 0.0 ? 1.0 : 0.0;
        }
        const double in[1] = {pt.x};
        dense_backward(model.l1, in, d_h1, grads.l1, d_in);
      }

      ++step;
      const double bc1 = 1.0 - std::pow(kBeta1, step);
      const double bc2 = 1.0 - std::pow(kBeta2, step);
      for (std::size_t pi = 0; pi < n_params; ++pi) {
        const double g = *gptrs[pi] + cfg.weight_decay * *params[pi];
        m1[pi] = kBeta1 * m1[pi] + (1.0 - kBeta1) * g;
        m2[pi] = kBeta2 * m2[pi] + (1.0 - kBeta2) * g * g;
        *params[pi] -= cfg.learning_rate * (m1[pi] / bc1) / (std::sqrt(m2[pi] / bc2) + kEps);
      }
    }
    if (!std::isfinite(epoch_loss)) {
      throw TrainingError("regressor training diverged", epoch);
    }
  }
  return model;
}

GaussianPrediction predict(const GaussianRegressor& model, double x) {
  if (!std::isfinite(x)) {
    throw InvalidInput("predict: non-finite input");
  }
  ForwardState st;
  regressor_forward(model, x, st);
  return {st.mu, st.sigma};
}

Ensemble predict_ensemble(const GaussianRegressor& model, double x, int m, std::uint64_t seed) {
  if (m < 1) {
    throw InvalidInput("predict_ensemble: ensemble size must be positive");
  }
  const GaussianPrediction p = predict(model, x);
  Rng rng(seed);
  Ensemble ens;
  ens.samples.reserve(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    ens.samples.push_back(p.mean + p.stddev * rng.normal());
  }
  return ens;
}

std::vector<Ensemble> predict_ensembles(const GaussianRegressor& model, std::span<const XY> data,
                                        int m, std::uint64_t seed) {
  std::vector<Ensemble> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    Ensemble ens = predict_ensemble(model, data[i].x, m,
                                    derive_seed(seed, "ens/" + std::to_string(i)));
    ens.observation = data[i].y;
    ens.instance_id = std::to_string(i);
    out.push_back(std::move(ens));
  }
  return out;
}

namespace {

struct HoltWintersState {
  double level = 0.0;
  double trend = 0.0;
  std::vector<double> seasonal;  // indexed by t % period; empty = non-seasonal
};

/// Fits on series[0, t0) and returns the state plus in-window one-step
/// residuals. Seasonal initialization averages detrended deviations over the
/// first two seasons.
HoltWintersState fit_holt_winters(std::span<const double> series, std::size_t t0,
                                  const BacktestConfig& cfg, std::vector<double>& residuals) {
  HoltWintersState st;
  residuals.clear();
  const int period = cfg.seasonal_period;
  const bool seasonal = period >= 2 && cfg.initial_window >= 2 * period &&
                        t0 >= static_cast<std::size_t>(2 * period);
  std::size_t warm;
  if (seasonal) {
    const std::size_t p = static_cast<std::size_t>(period);
    double mean1 = 0.0;
    double mean2 = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      mean1 += series[i];
      mean2 += series[p + i];
    }
    mean1 /= static_cast<double>(p);
    mean2 /= static_cast<double>(p);
    st.level = mean1;
    st.trend = (mean2 - mean1) / static_cast<double>(p);
    st.seasonal.resize(p);
    for (std::size_t i = 0; i < p; ++i) {
      st.seasonal[i] = 0.5 * ((series[i] - mean1) + (series[p + i] - mean2));
    }
    warm = 2 * p;
  } else {
    st.level = series[0];
    st.trend = t0 > 1 ? series[1] - series[0] : 0.0;
    warm = std::min<std::size_t>(2, t0);
  }
  for (std::size_t t = warm; t < t0; ++t) {
    const double sea = seasonal ? st.seasonal[t % st.seasonal.size()] : 0.0;
    const double forecast = st.level + st.trend + sea;
    residuals.push_back(series[t] - forecast);
    const double new_level =
        cfg.alpha * (series[t] - sea) + (1.0 - cfg.alpha) * (st.level + st.trend);
    st.trend = cfg.beta * (new_level - st.level) + (1.0 - cfg.beta) * st.trend;
    if (seasonal) {
      st.seasonal[t % st.seasonal.size()] =
          cfg.gamma * (series[t] - new_level) + (1.0 - cfg.gamma) * st.seasonal[t % st.seasonal.size()];
    }
    st.level = new_level;
  }
  return st;
}

}  // namespace

std::vector<Ensemble> exp_smoothing_backtest(std::span<const double> series,
                                             const BacktestConfig& cfg) {
  if (cfg.initial_window < 2) {
    throw InvalidInput("exp_smoothing_backtest: initial_window must be at least 2");
  }
  if (cfg.horizon < 1 || cfg.stride < 1 || cfg.ensemble_size < 1) {
    throw InvalidInput("exp_smoothing_backtest: horizon, stride and ensemble size must be positive");
  }
  if (series.size() < static_cast<std::size_t>(cfg.initial_window + cfg.horizon)) {
    throw InvalidInput("exp_smoothing_backtest: series too short for the initial window");
  }
  for (const double v : series) {
    if (!std::isfinite(v)) {
      throw InvalidInput("exp_smoothing_backtest: non-finite series value");
    }
  }

  std::vector<Ensemble> out;
  std::vector<double> residuals;
  for (std::size_t origin = static_cast<std::size_t>(cfg.initial_window);
       origin + static_cast<std::size_t>(cfg.horizon) - 1 < series.size();
       origin += static_cast<std::size_t>(cfg.stride)) {
    const HoltWintersState st = fit_holt_winters(series, origin, cfg, residuals);
    const std::size_t target = origin + static_cast<std::size_t>(cfg.horizon) - 1;
    double point = st.level + static_cast<double>(cfg.horizon) * st.trend;
    if (!st.seasonal.empty()) {
      point += st.seasonal[target % st.seasonal.size()];
    }
    // Residual pool is empty only at the very first seasonal origin; the
    // ensemble then degenerates to the point forecast.
    Ensemble ens;
    ens.instance_id = std::to_string(target);
    ens.observation = series[target];
    ens.samples.reserve(static_cast<std::size_t>(cfg.ensemble_size));
    Rng rng(derive_seed(cfg.seed, "backtest/" + std::to_string(origin)));
    for (int j = 0; j < cfg.ensemble_size; ++j) {
      const double r =
          residuals.empty() ? 0.0 : residuals[rng.bounded(residuals.size())];
      double sample = point + r;
      if (cfg.clamp_nonnegative) {
        sample = std::max(sample, 0.0);
      }
      ens.samples.push_back(sample);
    }
    out.push_back(std::move(ens));
  }
  return out;
}

std::vector<MonthRecord> gen_demand_series(const DemandSpec& spec) {
  if (spec.n_months < 1) {
    throw InvalidInput("gen_demand_series: n_months must be positive");
  }
  Rng rng(spec.seed);
  std::vector<MonthRecord> out;
  out.reserve(static_cast<std::size_t>(spec.n_months));
  constexpr double kTwoPi = 6.283185307179586;
  for (int t = 0; t < spec.n_months; ++t) {
    MonthRecord rec;
    rec.month = t;
    const double phase = kTwoPi * static_cast<double>(t) / 12.0;
    rec.demand = spec.base + spec.season_amp * std::sin(phase + spec.season_phase) +
                 spec.trend * static_cast<double>(t) + spec.noise_sd * rng.normal();
    rec.demand = std::max(rec.demand, 1.0);
    rec.price = spec.price_base + spec.price_amp * std::sin(phase + spec.price_phase) +
                spec.price_noise_sd * rng.normal();
    rec.price = std::max(rec.price, 1.0);
    out.push_back(rec);
  }
  return out;
}

}  // namespace evalign
