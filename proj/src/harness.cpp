#include "evalign/harness.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <thread>

#include "evalign/downstream.hpp"
#include "evalign/errors.hpp"
#include "evalign/mathutil.hpp"
#include "evalign/rng.hpp"
#include "evalign/scoring.hpp"

namespace evalign {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kConvexToy:
      return "convex_toy";
    case ExperimentKind::kSyntheticDownstream:
      return "synthetic_downstream";
    case ExperimentKind::kInventory:
      return "inventory";
  }
  return "unknown";
}

ExperimentKind experiment_from_string(const std::string& name) {
  if (name == "convex_toy") {
    return ExperimentKind::kConvexToy;
  }
  if (name == "synthetic_downstream") {
    return ExperimentKind::kSyntheticDownstream;
  }
  if (name == "inventory") {
    return ExperimentKind::kInventory;
  }
  throw ConfigError("unknown experiment '" + name + "'");
}

// ---------------------------------------------------------------------------
// Chaining <-> JSON
// ---------------------------------------------------------------------------

json chaining_to_json(const ChainingSpec& spec) {
  return std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, IdentityChaining>) {
          return json{{"family", "identity"}};
        } else if constexpr (std::is_same_v<T, ThresholdChaining>) {
          return json{{"family", "threshold"}, {"t", s.t}};
        } else if constexpr (std::is_same_v<T, IntervalChaining>) {
          return json{{"family", "interval"}, {"a", s.a}, {"b", s.b}};
        } else if constexpr (std::is_same_v<T, GaussianChaining>) {
          return json{{"family", "gaussian"}, {"t", s.t}, {"mu", s.mu}, {"sigma", s.sigma}};
        } else if constexpr (std::is_same_v<T, SumSigmoidsChaining>) {
          return json{{"family", "sum_sigmoids"}, {"a", s.a}, {"b", s.b}, {"c", s.c}, {"d", s.d}};
        } else {
          throw ConfigError("a learned chaining cannot be written to a config");
        }
      },
      spec);
}

ChainingSpec chaining_from_json(const json& j) {
  const std::string family = j.at("family").get<std::string>();
  ChainingSpec spec;
  if (family == "identity") {
    spec = IdentityChaining{};
  } else if (family == "threshold") {
    spec = ThresholdChaining{j.at("t").get<double>()};
  } else if (family == "interval") {
    spec = IntervalChaining{j.at("a").get<double>(), j.at("b").get<double>()};
  } else if (family == "gaussian") {
    spec = GaussianChaining{j.at("t").get<double>(), j.at("mu").get<double>(),
                            j.at("sigma").get<double>()};
  } else if (family == "sum_sigmoids") {
    spec = SumSigmoidsChaining{
        j.at("a").get<std::vector<double>>(), j.at("b").get<std::vector<double>>(),
        j.at("c").get<std::vector<double>>(), j.at("d").get<std::vector<double>>()};
  } else {
    throw ConfigError("unknown chaining family '" + family + "'");
  }
  validate(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig cfg;
  cfg.experiment = kind;
  switch (kind) {
    case ExperimentKind::kSyntheticDownstream:
      cfg.train.epochs = 100;
      break;
    case ExperimentKind::kConvexToy:
      cfg.arch.op = ScoreOperator::kQuadMean;
      cfg.train.epochs = 1000;
      cfg.train.batch_size = 32;
      cfg.out_dir = "out/convex_toy";
      break;
    case ExperimentKind::kInventory:
      cfg.train.epochs = 1000;
      cfg.out_dir = "out/inventory";
      break;
  }
  return cfg;
}

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& target) {
  if (j.contains(key) && !j.at(key).is_null()) {
    target = j.at(key).get<T>();
  }
}

}  // namespace

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["experiment"] = to_string(cfg.experiment);
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["threads"] = cfg.threads;
  j["forecast"] = {
      {"kind", cfg.synth_kind == SynthKind::kSinusoidal ? "sinusoidal" : "quadratic"},
      {"noise", cfg.synth_noise == NoiseMode::kHeterogeneous ? "heterogeneous" : "homogeneous"},
      {"n_regressor", cfg.n_regressor},
      {"n_align", cfg.n_align},
      {"n_test", cfg.n_test},
      {"ensemble_size", cfg.ensemble_size},
      {"regressor",
       {{"hidden", cfg.regressor.hidden},
        {"learning_rate", cfg.regressor.learning_rate},
        {"weight_decay", cfg.regressor.weight_decay},
        {"epochs", cfg.regressor.epochs},
        {"batch_size", cfg.regressor.batch_size},
        {"train_samples", cfg.regressor.train_samples}}}};
  j["downstream"] = {{"chaining", chaining_to_json(cfg.chaining)}};
  j["toy"] = {{"instances", cfg.toy_instances}, {"samples", cfg.toy_samples}};
  j["inventory"] = {
      {"demand_csv", cfg.demand_csv},
      {"demand",
       {{"n_months", cfg.demand.n_months},
        {"base", cfg.demand.base},
        {"season_amp", cfg.demand.season_amp},
        {"season_phase", cfg.demand.season_phase},
        {"trend", cfg.demand.trend},
        {"noise_sd", cfg.demand.noise_sd},
        {"price_base", cfg.demand.price_base},
        {"price_amp", cfg.demand.price_amp},
        {"price_phase", cfg.demand.price_phase},
        {"price_noise_sd", cfg.demand.price_noise_sd}}},
      {"backtest",
       {{"initial_window", cfg.backtest.initial_window},
        {"ensemble_size", cfg.backtest.ensemble_size},
        {"seasonal_period", cfg.backtest.seasonal_period},
        {"alpha", cfg.backtest.alpha},
        {"beta", cfg.backtest.beta},
        {"gamma", cfg.backtest.gamma}}},
      {"test_months", cfg.test_months},
      {"cost_ratio", cfg.cost_ratio},
      {"degenerate_costs", cfg.degenerate_costs},
      {"holding", cfg.holding}};
  json early = nullptr;
  if (cfg.train.early_stopping.has_value()) {
    early = *cfg.train.early_stopping;
  }
  j["align"] = {{"nu_hidden", cfg.arch.nu.hidden},
                {"activation", to_string(cfg.arch.nu.activation)},
                {"monotone_head", cfg.arch.monotone_head},
                {"head_hidden", cfg.arch.head.hidden},
                {"learning_rate", cfg.train.learning_rate},
                {"weight_decay", cfg.train.weight_decay},
                {"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"split_fraction", cfg.train.split_fraction},
                {"early_stopping", early},
                {"standardize_inputs", cfg.train.standardize_inputs},
                {"standardize_targets", cfg.train.standardize_targets}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  const ExperimentKind kind = experiment_from_string(j.at("experiment").get<std::string>());
  ExperimentConfig cfg = default_config(kind);
  maybe(j, "seed", cfg.seed);
  maybe(j, "out_dir", cfg.out_dir);
  maybe(j, "threads", cfg.threads);
  if (j.contains("forecast")) {
    const json& f = j.at("forecast");
    if (f.contains("kind")) {
      const std::string k = f.at("kind").get<std::string>();
      if (k != "sinusoidal" && k != "quadratic") {
        throw ConfigError("forecast.kind must be sinusoidal or quadratic");
      }
      cfg.synth_kind = k == "sinusoidal" ? SynthKind::kSinusoidal : SynthKind::kQuadratic;
    }
    if (f.contains("noise")) {
      const std::string nm = f.at("noise").get<std::string>();
      if (nm != "heterogeneous" && nm != "homogeneous") {
        throw ConfigError("forecast.noise must be heterogeneous or homogeneous");
      }
      cfg.synth_noise = nm == "heterogeneous" ? NoiseMode::kHeterogeneous : NoiseMode::kHomogeneous;
    }
    maybe(f, "n_regressor", cfg.n_regressor);
    maybe(f, "n_align", cfg.n_align);
    maybe(f, "n_test", cfg.n_test);
    maybe(f, "ensemble_size", cfg.ensemble_size);
    if (f.contains("regressor")) {
      const json& r = f.at("regressor");
      maybe(r, "hidden", cfg.regressor.hidden);
      maybe(r, "learning_rate", cfg.regressor.learning_rate);
      maybe(r, "weight_decay", cfg.regressor.weight_decay);
      maybe(r, "epochs", cfg.regressor.epochs);
      maybe(r, "batch_size", cfg.regressor.batch_size);
      maybe(r, "train_samples", cfg.regressor.train_samples);
    }
  }
  if (j.contains("downstream") && j.at("downstream").contains("chaining")) {
    cfg.chaining = chaining_from_json(j.at("downstream").at("chaining"));
  }
  if (j.contains("toy")) {
    maybe(j.at("toy"), "instances", cfg.toy_instances);
    maybe(j.at("toy"), "samples", cfg.toy_samples);
  }
  if (j.contains("inventory")) {
    const json& inv = j.at("inventory");
    maybe(inv, "demand_csv", cfg.demand_csv);
    if (inv.contains("demand")) {
      const json& d = inv.at("demand");
      maybe(d, "n_months", cfg.demand.n_months);
      maybe(d, "base", cfg.demand.base);
      maybe(d, "season_amp", cfg.demand.season_amp);
      maybe(d, "season_phase", cfg.demand.season_phase);
      maybe(d, "trend", cfg.demand.trend);
      maybe(d, "noise_sd", cfg.demand.noise_sd);
      maybe(d, "price_base", cfg.demand.price_base);
      maybe(d, "price_amp", cfg.demand.price_amp);
      maybe(d, "price_phase", cfg.demand.price_phase);
      maybe(d, "price_noise_sd", cfg.demand.price_noise_sd);
    }
    if (inv.contains("backtest")) {
      const json& b = inv.at("backtest");
      maybe(b, "initial_window", cfg.backtest.initial_window);
      maybe(b, "ensemble_size", cfg.backtest.ensemble_size);
      maybe(b, "seasonal_period", cfg.backtest.seasonal_period);
      maybe(b, "alpha", cfg.backtest.alpha);
      maybe(b, "beta", cfg.backtest.beta);
      maybe(b, "gamma", cfg.backtest.gamma);
    }
    maybe(inv, "test_months", cfg.test_months);
    maybe(inv, "cost_ratio", cfg.cost_ratio);
    maybe(inv, "degenerate_costs", cfg.degenerate_costs);
    maybe(inv, "holding", cfg.holding);
  }
  if (j.contains("align")) {
    const json& a = j.at("align");
    maybe(a, "nu_hidden", cfg.arch.nu.hidden);
    if (a.contains("activation")) {
      cfg.arch.nu.activation = activation_from_string(a.at("activation").get<std::string>());
      cfg.arch.head.activation = cfg.arch.nu.activation;
    }
    maybe(a, "monotone_head", cfg.arch.monotone_head);
    maybe(a, "head_hidden", cfg.arch.head.hidden);
    maybe(a, "learning_rate", cfg.train.learning_rate);
    maybe(a, "weight_decay", cfg.train.weight_decay);
    maybe(a, "epochs", cfg.train.epochs);
    maybe(a, "batch_size", cfg.train.batch_size);
    maybe(a, "split_fraction", cfg.train.split_fraction);
    if (a.contains("early_stopping") && !a.at("early_stopping").is_null()) {
      cfg.train.early_stopping = a.at("early_stopping").get<int>();
    }
    maybe(a, "standardize_inputs", cfg.train.standardize_inputs);
    maybe(a, "standardize_targets", cfg.train.standardize_targets);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  ExperimentConfig cfg = config_from_json(j);
  if (!cfg.demand_csv.empty() && !fs::exists(cfg.demand_csv)) {
    throw ConfigError("config references missing file '" + cfg.demand_csv + "'");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

namespace {

std::vector<io::GridRow> grid_of(const std::function<double(double)>& nu, double z_min,
                                 double z_max, int n_points) {
  if (!(z_min < z_max)) {
    throw InvalidInput("export_chaining_grid: requires z_min < z_max");
  }
  if (n_points < 3) {
    throw InvalidInput("export_chaining_grid: need at least 3 grid points");
  }
  const double dz = (z_max - z_min) / static_cast<double>(n_points - 1);
  std::vector<double> zs(static_cast<std::size_t>(n_points));
  std::vector<double> vs(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    zs[static_cast<std::size_t>(i)] = z_min + dz * static_cast<double>(i);
    vs[static_cast<std::size_t>(i)] = nu(zs[static_cast<std::size_t>(i)]);
  }
  std::vector<io::GridRow> rows(static_cast<std::size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    double w;
    if (i == 0) {
      w = (vs[1] - vs[0]) / dz;
    } else if (i == n_points - 1) {
      w = (vs[k] - vs[k - 1]) / dz;
    } else {
      w = (vs[k + 1] - vs[k - 1]) / (2.0 * dz);
    }
    rows[k] = {zs[k], vs[k], w};
  }
  return rows;
}

}  // namespace

std::vector<io::GridRow> export_chaining_grid(const AlignmentNet& net, double z_min, double z_max,
                                              int n_points) {
  return grid_of([&net](double z) { return nu_forward(net, z); }, z_min, z_max, n_points);
}

std::vector<io::GridRow> export_chaining_grid(const ChainingSpec& spec, double z_min, double z_max,
                                              int n_points) {
  validate(spec);
  return grid_of([&spec](double z) { return chaining_eval(spec, z); }, z_min, z_max, n_points);
}

std::pair<std::vector<io::CurveRow>, double> export_alignment_curve(std::span<const double> s_x,
                                                                    std::span<const double> s_d) {
  if (s_x.size() != s_d.size()) {
    throw InvalidInput("export_alignment_curve: length mismatch");
  }
  const std::size_t n = s_x.size();
  const auto ordinal_ranks = [n](std::span<const double> v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<int> ranks(n);
    for (std::size_t r = 0; r < n; ++r) {
      ranks[idx[r]] = static_cast<int>(r) + 1;
    }
    return ranks;
  };
  const std::vector<int> rx = ordinal_ranks(s_x);
  const std::vector<int> rd = ordinal_ranks(s_d);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&s_x](std::size_t a, std::size_t b) { return s_x[a] < s_x[b]; });
  std::vector<io::CurveRow> rows;
  rows.reserve(n);
  for (const std::size_t i : order) {
    rows.push_back({s_x[i], s_d[i], rx[i], rd[i]});
  }
  const double tau = kendall_tau(s_x, s_d);
  return {std::move(rows), tau};
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

namespace {

json manifest_timings(const std::vector<StageTiming>& timings) {
  json arr = json::array();
  for (const StageTiming& t : timings) {
    arr.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
  }
  return arr;
}

/// Exclusive lock file; a stale lock from a crashed run must be removed by
/// hand (the error says so).
class OutputLock {
 public:
  explicit OutputLock(const std::string& dir) : path_(dir + "/.lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw IoError("output directory '" + dir +
                    "' is locked by another run (remove " + path_ + " if stale)");
    }
  }
  ~OutputLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

class StageRunner {
 public:
  StageRunner(std::string out_dir, RunManifest& manifest)
      : out_dir_(std::move(out_dir)), manifest_(manifest) {}

  template <typename Fn>
  void run(const std::string& name, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const std::exception& e) {
      io::write_text_atomic(out_dir_ + "/.partial",
                            "stage " + name + " failed: " + e.what() + "\n");
      throw;
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    manifest_.timings.push_back({name, dt.count()});
  }

 private:
  std::string out_dir_;
  RunManifest& manifest_;
};

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&fn, w, workers, n] {
      for (std::size_t i = w; i < n; i += workers) {
        fn(i);
      }
    });
  }
  for (std::thread& t : pool) {
    t.join();
  }
}

std::vector<double> upstream_crps(std::span<const Ensemble> ensembles, int threads) {
  std::vector<double> out(ensembles.size());
  parallel_for(ensembles.size(), threads,
               [&](std::size_t i) { out[i] = crps_ensemble(ensembles[i]); });
  return out;
}

struct EvalOutcome {
  std::vector<double> estimates;
  json metrics;
};

/// Aligned vs. non-aligned (plain CRPS) evaluation on a test set.
EvalOutcome evaluate_alignment(const AlignmentNet& net, const AlignmentDataset& test,
                               std::size_t n_train, std::uint64_t seed, int threads) {
  EvalOutcome out;
  const InferResult inferred = infer_alignment(net, test);
  std::vector<double> s_d;
  std::vector<Ensemble> ensembles;
  s_d.reserve(test.records.size());
  for (const AlignmentRecord& rec : test.records) {
    s_d.push_back(rec.downstream_score);
    ensembles.push_back(rec.ensemble);
  }
  const std::vector<double> s_u = upstream_crps(ensembles, threads);
  const double tau_aligned = kendall_tau(inferred.estimates, s_d);
  const double tau_nonaligned = kendall_tau(s_u, s_d);
  out.metrics = {{"mae", inferred.mae},
                 {"mae_nonaligned", mae(s_u, s_d)},
                 {"tau_nonaligned", tau_nonaligned},
                 {"tau_aligned", tau_aligned},
                 {"delta_tau", delta_tau(tau_nonaligned, tau_aligned)},
                 {"n_train", n_train},
                 {"n_test", test.records.size()},
                 {"seed", seed}};
  out.estimates = inferred.estimates;
  return out;
}

std::pair<double, double> value_range(const AlignmentDataset& data) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const AlignmentRecord& rec : data.records) {
    for (const double s : rec.ensemble.samples) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    lo = std::min(lo, rec.ensemble.observation);
    hi = std::max(hi, rec.ensemble.observation);
  }
  return {lo, hi};
}

/// Max |nu_hat - nu - c| / range(nu) over a grid, with c the best additive
/// constant (their mean difference).
json nu_recovery_metrics(const AlignmentNet& net, const std::function<double(double)>& nu_true,
                         double lo, double hi, int n_grid) {
  std::vector<double> diff(static_cast<std::size_t>(n_grid));
  double nu_lo = std::numeric_limits<double>::infinity();
  double nu_hi = -nu_lo;
  for (int i = 0; i < n_grid; ++i) {
    const double z = lo + (hi - lo) * static_cast<double>(i) / (n_grid - 1);
    const double nt = nu_true(z);
    diff[static_cast<std::size_t>(i)] = nu_forward(net, z) - nt;
    nu_lo = std::min(nu_lo, nt);
    nu_hi = std::max(nu_hi, nt);
  }
  const double c = mean(diff);
  double max_err = 0.0;
  double sq = 0.0;
  for (const double d : diff) {
    max_err = std::max(max_err, std::abs(d - c));
    sq += (d - c) * (d - c);
  }
  const double range = std::max(nu_hi - nu_lo, 1e-300);
  return json{{"grid_lo", lo},
              {"grid_hi", hi},
              {"offset", c},
              {"nu_range", nu_hi - nu_lo},
              {"max_err", max_err},
              {"max_err_frac", max_err / range},
              {"rmse", std::sqrt(sq / static_cast<double>(n_grid))},
              {"rmse_frac", std::sqrt(sq / static_cast<double>(n_grid)) / range}};
}

std::vector<io::ScoreRow> plain_score_rows(const AlignmentDataset& data) {
  std::vector<io::ScoreRow> rows;
  rows.reserve(data.records.size());
  for (const AlignmentRecord& rec : data.records) {
    rows.push_back({rec.ensemble.instance_id, rec.downstream_score, std::nullopt, std::nullopt});
  }
  return rows;
}

void write_common_artifacts(const std::string& dir, const TrainResult& trained,
                            const AlignmentDataset& test, std::span<const double> estimates,
                            double grid_lo, double grid_hi, RunManifest& manifest) {
  io::write_trace_csv(dir + "/trace.csv", trained.trace);
  manifest.artifacts.push_back("trace.csv");
  io::write_alignment_net(dir + "/alignment_net.json", trained.net);
  manifest.artifacts.push_back("alignment_net.json");
  io::write_grid_csv(dir + "/chaining_grid.csv",
                     export_chaining_grid(trained.net, grid_lo, grid_hi, 512));
  manifest.artifacts.push_back("chaining_grid.csv");
  std::vector<double> s_d;
  s_d.reserve(test.records.size());
  for (const AlignmentRecord& rec : test.records) {
    s_d.push_back(rec.downstream_score);
  }
  const auto [curve, tau] = export_alignment_curve(estimates, s_d);
  io::write_curve_csv(dir + "/alignment_curve.csv", curve, tau);
  manifest.artifacts.push_back("alignment_curve.csv");
}

// --- convex toy pieces ----------------------------------------------------

double toy_target_fn(double x) {
  return 0.5 * (x * x * x * x + 2.0 * x * x * x + 2.0 * x * x);
}

double toy_nu_analytic(double x) {
  const double v = std::sqrt(toy_target_fn(x) / 2.0);
  return x >= 0.0 ? v : -v;
}

void run_convex_toy(const ExperimentConfig& cfg, const std::string& dir, RunManifest& manifest,
                    StageRunner& stages) {
  AlignmentDataset data;
  data.source = "convex_toy";
  stages.run("generate", [&] {
    Rng rng(derive_seed(cfg.seed, "toy/gen"));
    data.records.reserve(static_cast<std::size_t>(cfg.toy_instances));
    for (int i = 0; i < cfg.toy_instances; ++i) {
      AlignmentRecord rec;
      rec.ensemble.instance_id = std::to_string(i);
      rec.ensemble.observation = 0.0;
      rec.ensemble.samples.reserve(static_cast<std::size_t>(cfg.toy_samples));
      for (int j = 0; j < cfg.toy_samples; ++j) {
        rec.ensemble.samples.push_back(rng.uniform(-3.0, 3.0));
      }
      data.records.push_back(std::move(rec));
    }
  });
  stages.run("downstream", [&] {
    for (AlignmentRecord& rec : data.records) {
      double acc = 0.0;
      for (const double s : rec.ensemble.samples) {
        acc += toy_target_fn(s);
      }
      rec.downstream_score = acc / static_cast<double>(rec.ensemble.samples.size());
    }
    io::write_scores_csv(dir + "/scores.csv", plain_score_rows(data));
    manifest.artifacts.push_back("scores.csv");
  });

  TrainResult trained;
  stages.run("align_train", [&] {
    AlignmentNetConfig arch = cfg.arch;
    arch.op = ScoreOperator::kQuadMean;
    TrainConfig train = cfg.train;
    train.seed = derive_seed(cfg.seed, "toy/align");
    trained = train_alignment(data, arch, train);
  });

  stages.run("align_eval", [&] {
    const EvalOutcome eval =
        evaluate_alignment(trained.net, data, data.records.size(), cfg.seed, cfg.threads);
    manifest.metrics = eval.metrics;
    manifest.metrics["nu_recovery"] =
        nu_recovery_metrics(trained.net, toy_nu_analytic, -3.0, 3.0, 1000);
    io::write_text_atomic(dir + "/metrics.json", manifest.metrics.dump(2) + "\n");
    manifest.artifacts.push_back("metrics.json");
    write_common_artifacts(dir, trained, data, eval.estimates, -3.0, 3.0, manifest);
  });

  stages.run("export", [&] {
    std::vector<io::GridRow> reference;
    reference.reserve(1000);
    for (int i = 0; i < 1000; ++i) {
      const double z = -3.0 + 6.0 * static_cast<double>(i) / 999.0;
      const double eps = 3e-3;
      const double w = (toy_nu_analytic(z + eps) - toy_nu_analytic(z - eps)) / (2.0 * eps);
      reference.push_back({z, toy_nu_analytic(z), w});
    }
    io::write_grid_csv(dir + "/nu_analytic.csv", reference);
    manifest.artifacts.push_back("nu_analytic.csv");
  });
}

// --- synthetic downstream pieces -------------------------------------------

void run_synthetic_downstream(const ExperimentConfig& cfg, const std::string& dir,
                              RunManifest& manifest, StageRunner& stages) {
  std::vector<XY> points;
  stages.run("generate", [&] {
    SynthDataSpec spec{cfg.synth_kind, cfg.synth_noise, cfg.n_regressor + cfg.n_align + cfg.n_test,
                       derive_seed(cfg.seed, "synth/gen")};
    points = gen_synth_data(spec);
    io::write_xy_csv(dir + "/data.csv", points);
    manifest.artifacts.push_back("data.csv");
  });

  GaussianRegressor model;
  stages.run("forecaster", [&] {
    RegressorConfig rc = cfg.regressor;
    rc.seed = derive_seed(cfg.seed, "synth/forecaster");
    model = train_regressor(std::span<const XY>(points).subspan(0, static_cast<std::size_t>(cfg.n_regressor)), rc);
    io::write_regressor(dir + "/regressor.json", model);
    manifest.artifacts.push_back("regressor.json");
  });

  AlignmentDataset align_data;
  AlignmentDataset test_data;
  align_data.source = test_data.source = "synthetic_downstream";
  stages.run("forecast", [&] {
    const auto align_xy = std::span<const XY>(points).subspan(
        static_cast<std::size_t>(cfg.n_regressor), static_cast<std::size_t>(cfg.n_align));
    const auto test_xy = std::span<const XY>(points).subspan(
        static_cast<std::size_t>(cfg.n_regressor + cfg.n_align), static_cast<std::size_t>(cfg.n_test));
    std::vector<Ensemble> align_ens =
        predict_ensembles(model, align_xy, cfg.ensemble_size, derive_seed(cfg.seed, "synth/ens_align"));
    std::vector<Ensemble> test_ens =
        predict_ensembles(model, test_xy, cfg.ensemble_size, derive_seed(cfg.seed, "synth/ens_test"));
    io::write_ensembles_csv_wide(dir + "/ensembles_align.csv", align_ens);
    io::write_ensembles_csv_wide(dir + "/ensembles_test.csv", test_ens);
    manifest.artifacts.push_back("ensembles_align.csv");
    manifest.artifacts.push_back("ensembles_test.csv");
    for (Ensemble& ens : align_ens) {
      align_data.records.push_back({std::move(ens), 0.0});
    }
    for (Ensemble& ens : test_ens) {
      test_data.records.push_back({std::move(ens), 0.0});
    }
  });

  double data_lo = 0.0;
  double data_hi = 0.0;
  stages.run("downstream", [&] {
    std::tie(data_lo, data_hi) = value_range(align_data);
    check_monotone(cfg.chaining, data_lo, data_hi);
    std::vector<Ensemble> align_ens;
    std::vector<Ensemble> test_ens;
    for (const AlignmentRecord& rec : align_data.records) {
      align_ens.push_back(rec.ensemble);
    }
    for (const AlignmentRecord& rec : test_data.records) {
      test_ens.push_back(rec.ensemble);
    }
    const std::vector<double> s_align = synth_downstream(align_ens, cfg.chaining);
    const std::vector<double> s_test = synth_downstream(test_ens, cfg.chaining);
    for (std::size_t i = 0; i < s_align.size(); ++i) {
      align_data.records[i].downstream_score = s_align[i];
    }
    for (std::size_t i = 0; i < s_test.size(); ++i) {
      test_data.records[i].downstream_score = s_test[i];
    }
    io::write_scores_csv(dir + "/scores_align.csv", plain_score_rows(align_data));
    io::write_scores_csv(dir + "/scores_test.csv", plain_score_rows(test_data));
    manifest.artifacts.push_back("scores_align.csv");
    manifest.artifacts.push_back("scores_test.csv");
  });

  TrainResult trained;
  stages.run("align_train", [&] {
    TrainConfig train = cfg.train;
    train.seed = derive_seed(cfg.seed, "synth/align");
    trained = train_alignment(align_data, cfg.arch, train);
  });

  stages.run("align_eval", [&] {
    const EvalOutcome eval = evaluate_alignment(trained.net, test_data, align_data.records.size(),
                                                cfg.seed, cfg.threads);
    manifest.metrics = eval.metrics;
    std::vector<double> s_d;
    for (const AlignmentRecord& rec : test_data.records) {
      s_d.push_back(rec.downstream_score);
    }
    manifest.metrics["sd_std"] = stddev(s_d);
    // Ground truth is known here, so report how well the learned transform
    // matches it over the central 90% of the data range.
    const double span = data_hi - data_lo;
    manifest.metrics["nu_recovery"] = nu_recovery_metrics(
        trained.net, [&cfg](double z) { return chaining_eval(cfg.chaining, z); },
        data_lo + 0.05 * span, data_hi - 0.05 * span, 1000);
    io::write_text_atomic(dir + "/metrics.json", manifest.metrics.dump(2) + "\n");
    manifest.artifacts.push_back("metrics.json");
    write_common_artifacts(dir, trained, test_data, eval.estimates, data_lo, data_hi, manifest);
  });

  stages.run("export", [&] {
    io::write_grid_csv(dir + "/chaining_true.csv",
                       export_chaining_grid(cfg.chaining, data_lo, data_hi, 512));
    manifest.artifacts.push_back("chaining_true.csv");
  });
}

// --- inventory pieces -------------------------------------------------------

void run_inventory(const ExperimentConfig& cfg, const std::string& dir, RunManifest& manifest,
                   StageRunner& stages) {
  std::vector<MonthRecord> months;
  stages.run("generate", [&] {
    if (!cfg.demand_csv.empty()) {
      months = io::read_demand_csv(cfg.demand_csv);
    } else {
      DemandSpec spec = cfg.demand;
      spec.seed = derive_seed(cfg.seed, "inventory/demand");
      months = gen_demand_series(spec);
    }
    io::write_demand_csv(dir + "/demand.csv", months);
    manifest.artifacts.push_back("demand.csv");
  });

  std::vector<Ensemble> ensembles;
  stages.run("forecast", [&] {
    std::vector<double> series;
    series.reserve(months.size());
    for (const MonthRecord& m : months) {
      series.push_back(m.demand);
    }
    BacktestConfig bt = cfg.backtest;
    bt.seed = derive_seed(cfg.seed, "inventory/backtest");
    bt.clamp_nonnegative = true;
    ensembles = exp_smoothing_backtest(series, bt);
    io::write_ensembles_csv_wide(dir + "/ensembles.csv", ensembles);
    manifest.artifacts.push_back("ensembles.csv");
  });

  const std::size_t n_total = ensembles.size();
  if (n_total <= static_cast<std::size_t>(cfg.test_months)) {
    throw InvalidInput("inventory: backtest produced too few months for the test split");
  }
  const std::size_t n_align = n_total - static_cast<std::size_t>(cfg.test_months);

  std::vector<NewsvendorParams> params(n_total);
  std::vector<double> scores;
  stages.run("downstream", [&] {
    for (std::size_t i = 0; i < n_total; ++i) {
      const std::size_t month = static_cast<std::size_t>(cfg.backtest.initial_window) + i;
      const double p = months[month].price;
      const double c = cfg.degenerate_costs ? 2.5 * p : p / cfg.cost_ratio;
      params[i] = NewsvendorParams{p, c, cfg.holding};
    }
    scores = downstream_scores(ensembles, params);
    std::vector<io::ScoreRow> rows(n_total);
    parallel_for(n_total, cfg.threads, [&](std::size_t i) {
      rows[i] = {ensembles[i].instance_id, scores[i],
                 newsvendor_bayes_act(ensembles[i].samples, params[i]), params[i]};
    });
    io::write_scores_csv(dir + "/scores.csv", rows);
    io::write_params_csv(dir + "/params.csv", params);
    manifest.artifacts.push_back("scores.csv");
    manifest.artifacts.push_back("params.csv");
  });

  AlignmentDataset align_data;
  AlignmentDataset test_data;
  align_data.source = test_data.source = "inventory";
  align_data.units = test_data.units = "currency";
  for (std::size_t i = 0; i < n_total; ++i) {
    AlignmentRecord rec{ensembles[i], scores[i]};
    if (i < n_align) {
      align_data.records.push_back(std::move(rec));
    } else {
      test_data.records.push_back(std::move(rec));
    }
  }

  TrainResult trained;
  stages.run("align_train", [&] {
    TrainConfig train = cfg.train;
    train.seed = derive_seed(cfg.seed, "inventory/align");
    trained = train_alignment(align_data, cfg.arch, train);
  });

  stages.run("align_eval", [&] {
    const EvalOutcome eval =
        evaluate_alignment(trained.net, test_data, n_align, cfg.seed, cfg.threads);
    manifest.metrics = eval.metrics;
    io::write_text_atomic(dir + "/metrics.json", manifest.metrics.dump(2) + "\n");
    manifest.artifacts.push_back("metrics.json");
    const auto [lo, hi] = value_range(align_data);
    write_common_artifacts(dir, trained, test_data, eval.estimates, lo, hi, manifest);
  });
}

}  // namespace

json manifest_to_json(const RunManifest& manifest) {
  return json{{"experiment", manifest.experiment},
              {"seed", manifest.seed},
              {"library_version", manifest.library_version},
              {"config_echo", manifest.config_echo},
              {"metrics", manifest.metrics},
              {"timings", manifest_timings(manifest.timings)},
              {"artifacts", manifest.artifacts},
              {"manifest_version", 1}};
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
  if (cfg.out_dir.empty()) {
    throw ConfigError("run_experiment: out_dir must be set");
  }
  fs::create_directories(cfg.out_dir);
  OutputLock lock(cfg.out_dir);

  RunManifest manifest;
  manifest.experiment = to_string(cfg.experiment);
  manifest.seed = cfg.seed;
  manifest.library_version = kLibraryVersion;
  manifest.config_echo = config_to_json(cfg);

  StageRunner stages(cfg.out_dir, manifest);
  switch (cfg.experiment) {
    case ExperimentKind::kConvexToy:
      run_convex_toy(cfg, cfg.out_dir, manifest, stages);
      break;
    case ExperimentKind::kSyntheticDownstream:
      run_synthetic_downstream(cfg, cfg.out_dir, manifest, stages);
      break;
    case ExperimentKind::kInventory:
      run_inventory(cfg, cfg.out_dir, manifest, stages);
      break;
  }

  manifest.metrics["config_echo"] = manifest.config_echo;
  io::write_text_atomic(cfg.out_dir + "/metrics.json", manifest.metrics.dump(2) + "\n");
  io::write_text_atomic(cfg.out_dir + "/manifest.json", manifest_to_json(manifest).dump(2) + "\n");
  std::error_code ec;
  fs::remove(cfg.out_dir + "/.partial", ec);
  return manifest;
}

}  // namespace evalign
