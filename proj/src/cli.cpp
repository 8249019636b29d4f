#include <cstdio>
#include <filesystem>
#include <iostream>
#include <unordered_map>

#include <CLI11.hpp>
#include <json.hpp>

#include "evalign/downstream.hpp"
#include "evalign/errors.hpp"
#include "evalign/harness.hpp"
#include "evalign/rng.hpp"
#include "evalign/scoring.hpp"

namespace evalign {

namespace {

using nlohmann::json;

ChainingSpec parse_chaining_arg(const std::string& arg) {
  try {
    return chaining_from_json(json::parse(arg));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("--chaining expects JSON like "
                                  "'{\"family\":\"threshold\",\"t\":0.5}': ") +
                      e.what());
  }
}

AlignmentDataset build_dataset(const std::string& ensembles_path, const std::string& scores_path) {
  std::vector<Ensemble> ensembles = io::read_ensembles_csv(ensembles_path);
  const std::vector<io::ScoreRow> rows = io::read_scores_csv(scores_path);
  std::unordered_map<std::string, double> by_id;
  for (const io::ScoreRow& row : rows) {
    by_id[row.instance_id] = row.s_d;
  }
  AlignmentDataset data;
  data.source = ensembles_path;
  for (Ensemble& ens : ensembles) {
    const auto it = by_id.find(ens.instance_id);
    if (it == by_id.end()) {
      throw InvalidInput("no downstream score for instance '" + ens.instance_id + "' in " +
                         scores_path);
    }
    data.records.push_back({std::move(ens), it->second});
  }
  return data;
}

struct CliState {
  // gen-data
  std::string gen_kind = "sinusoidal";
  std::string gen_noise = "heterogeneous";
  int gen_n = 1000;
  std::string out;
  std::uint64_t seed = 1;
  // train-forecaster / forecast
  std::string data_path;
  std::string model_path;
  std::string series_path;
  RegressorConfig regressor;
  int m = 50;
  BacktestConfig backtest;
  // downstream
  std::string ensembles_path;
  std::string params_path;
  std::string scores_path;
  std::string chaining_json;
  // align
  std::string trace_path;
  std::string estimates_path;
  TrainConfig train;
  AlignmentNetConfig arch;
  std::string activation = "relu";
  std::string op = "twcrps";
  int early_stopping = -1;
  // run
  std::string config_path;
  long long seed_override = -1;
  std::string out_override;
  int threads_override = -1;
  // export
  double z_min = -1.0;
  double z_max = 1.0;
  int n_points = 512;
  std::string x_scores_path;
  std::string d_scores_path;
};

void cmd_gen_data(const CliState& st) {
  if (st.gen_kind == "demand") {
    DemandSpec spec;
    spec.n_months = st.gen_n;
    spec.seed = st.seed;
    io::write_demand_csv(st.out, gen_demand_series(spec));
    return;
  }
  SynthDataSpec spec;
  spec.kind = st.gen_kind == "quadratic" ? SynthKind::kQuadratic : SynthKind::kSinusoidal;
  if (st.gen_kind != "sinusoidal" && st.gen_kind != "quadratic") {
    throw ConfigError("--kind must be sinusoidal, quadratic or demand");
  }
  if (st.gen_noise != "heterogeneous" && st.gen_noise != "homogeneous") {
    throw ConfigError("--noise must be heterogeneous or homogeneous");
  }
  spec.noise = st.gen_noise == "heterogeneous" ? NoiseMode::kHeterogeneous : NoiseMode::kHomogeneous;
  spec.n_points = st.gen_n;
  spec.seed = st.seed;
  io::write_xy_csv(st.out, gen_synth_data(spec));
}

void cmd_train_forecaster(const CliState& st) {
  const std::vector<XY> data = io::read_xy_csv(st.data_path);
  RegressorConfig cfg = st.regressor;
  cfg.seed = st.seed;
  io::write_regressor(st.out, train_regressor(data, cfg));
}

void cmd_forecast(const CliState& st) {
  std::vector<Ensemble> ensembles;
  if (!st.model_path.empty()) {
    const GaussianRegressor model = io::read_regressor(st.model_path);
    const std::vector<XY> data = io::read_xy_csv(st.data_path);
    ensembles = predict_ensembles(model, data, st.m, st.seed);
  } else if (!st.series_path.empty()) {
    const std::vector<MonthRecord> months = io::read_demand_csv(st.series_path);
    std::vector<double> series;
    series.reserve(months.size());
    for (const MonthRecord& rec : months) {
      series.push_back(rec.demand);
    }
    BacktestConfig cfg = st.backtest;
    cfg.ensemble_size = st.m;
    cfg.seed = st.seed;
    ensembles = exp_smoothing_backtest(series, cfg);
  } else {
    throw ConfigError("forecast needs --model with --data, or --series");
  }
  io::write_ensembles_csv_wide(st.out, ensembles);
}

void cmd_downstream(const CliState& st) {
  const std::vector<Ensemble> ensembles = io::read_ensembles_csv(st.ensembles_path);
  const std::vector<NewsvendorParams> params = io::read_params_csv(st.params_path);
  const std::vector<double> scores = downstream_scores(ensembles, params);
  std::vector<io::ScoreRow> rows;
  rows.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    rows.push_back({ensembles[i].instance_id, scores[i],
                    newsvendor_bayes_act(ensembles[i].samples, params[i]), params[i]});
  }
  io::write_scores_csv(st.out, rows);
}

void cmd_synth_downstream(const CliState& st) {
  const std::vector<Ensemble> ensembles = io::read_ensembles_csv(st.ensembles_path);
  const ChainingSpec spec = parse_chaining_arg(st.chaining_json);
  const std::vector<double> scores = synth_downstream(ensembles, spec);
  std::vector<io::ScoreRow> rows;
  rows.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    rows.push_back({ensembles[i].instance_id, scores[i], std::nullopt, std::nullopt});
  }
  io::write_scores_csv(st.out, rows);
}

void cmd_align_train(const CliState& st) {
  AlignmentDataset data = build_dataset(st.ensembles_path, st.scores_path);
  AlignmentNetConfig arch = st.arch;
  arch.nu.activation = activation_from_string(st.activation);
  arch.head.activation = arch.nu.activation;
  if (st.op == "quad_mean") {
    arch.op = ScoreOperator::kQuadMean;
  } else if (st.op != "twcrps") {
    throw ConfigError("--op must be twcrps or quad_mean");
  }
  TrainConfig cfg = st.train;
  cfg.seed = st.seed;
  if (st.early_stopping >= 0) {
    cfg.early_stopping = st.early_stopping;
  }
  const TrainResult result = train_alignment(data, arch, cfg);
  io::write_alignment_net(st.out, result.net);
  if (!st.trace_path.empty()) {
    io::write_trace_csv(st.trace_path, result.trace);
  }
}

void cmd_align_eval(const CliState& st) {
  const AlignmentNet net = io::read_alignment_net(st.model_path);
  AlignmentDataset data = build_dataset(st.ensembles_path, st.scores_path);
  const InferResult inferred = infer_alignment(net, data);
  std::vector<double> s_d;
  std::vector<double> s_u;
  s_d.reserve(data.records.size());
  s_u.reserve(data.records.size());
  for (const AlignmentRecord& rec : data.records) {
    s_d.push_back(rec.downstream_score);
    s_u.push_back(crps_ensemble(rec.ensemble));
  }
  const double tau_aligned = kendall_tau(inferred.estimates, s_d);
  const double tau_nonaligned = kendall_tau(s_u, s_d);
  json metrics{{"mae", inferred.mae},
               {"mae_nonaligned", mae(s_u, s_d)},
               {"tau_aligned", tau_aligned},
               {"tau_nonaligned", tau_nonaligned},
               {"delta_tau", delta_tau(tau_nonaligned, tau_aligned)},
               {"n_train", 0},
               {"n_test", data.records.size()},
               {"seed", st.seed},
               {"config_echo", {{"model", st.model_path}, {"ensembles", st.ensembles_path}}}};
  io::write_text_atomic(st.out, metrics.dump(2) + "\n");
  if (!st.estimates_path.empty()) {
    std::vector<io::ScoreRow> rows;
    for (std::size_t i = 0; i < data.records.size(); ++i) {
      rows.push_back({data.records[i].ensemble.instance_id, inferred.estimates[i], std::nullopt,
                      std::nullopt});
    }
    io::write_scores_csv(st.estimates_path, rows);
  }
}

void cmd_run(const CliState& st) {
  if (!std::filesystem::exists(st.config_path)) {
    throw ConfigError("config file '" + st.config_path + "' does not exist");
  }
  ExperimentConfig cfg = load_config(st.config_path);
  if (st.seed_override >= 0) {
    cfg.seed = static_cast<std::uint64_t>(st.seed_override);
  }
  if (!st.out_override.empty()) {
    cfg.out_dir = st.out_override;
  }
  if (st.threads_override > 0) {
    cfg.threads = st.threads_override;
  }
  const RunManifest manifest = run_experiment(cfg);
  std::cout << "run complete: " << cfg.out_dir << "/manifest.json\n";
  std::cout << manifest.metrics.dump(2) << "\n";
}

void cmd_export_grid(const CliState& st) {
  std::vector<io::GridRow> rows;
  if (!st.model_path.empty()) {
    rows = export_chaining_grid(io::read_alignment_net(st.model_path), st.z_min, st.z_max,
                                st.n_points);
  } else if (!st.chaining_json.empty()) {
    rows = export_chaining_grid(parse_chaining_arg(st.chaining_json), st.z_min, st.z_max,
                                st.n_points);
  } else {
    throw ConfigError("export-grid needs --model or --chaining");
  }
  io::write_grid_csv(st.out, rows);
}

void cmd_export_curve(const CliState& st) {
  const auto read_col = [](const std::string& path) {
    const std::vector<io::ScoreRow> rows = io::read_scores_csv(path);
    std::vector<double> v;
    v.reserve(rows.size());
    for (const io::ScoreRow& r : rows) {
      v.push_back(r.s_d);
    }
    return v;
  };
  const std::vector<double> sx = read_col(st.x_scores_path);
  const std::vector<double> sd = read_col(st.d_scores_path);
  const auto [rows, tau] = export_alignment_curve(sx, sd);
  io::write_curve_csv(st.out, rows, tau);
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"evalign: learn proxy evaluation functions aligned with downstream value"};
  app.require_subcommand(1);
  CliState st;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate synthetic regression or demand data");
  gen->add_option("--kind", st.gen_kind, "sinusoidal | quadratic | demand");
  gen->add_option("--noise", st.gen_noise, "heterogeneous | homogeneous");
  gen->add_option("--n", st.gen_n, "points (or months for demand)");
  gen->add_option("--seed", st.seed, "random seed");
  gen->add_option("--out", st.out, "output CSV")->required();

  CLI::App* tf = app.add_subcommand("train-forecaster",
                                    "Fit the Gaussian regressor with the sample-based CRPS loss");
  tf->add_option("--data", st.data_path, "x,y CSV")->required();
  tf->add_option("--out", st.out, "model JSON")->required();
  tf->add_option("--seed", st.seed, "random seed");
  tf->add_option("--epochs", st.regressor.epochs, "training epochs");
  tf->add_option("--lr", st.regressor.learning_rate, "learning rate");
  tf->add_option("--weight-decay", st.regressor.weight_decay, "L2 strength");
  tf->add_option("--batch", st.regressor.batch_size, "batch size");
  tf->add_option("--hidden", st.regressor.hidden, "hidden width");
  tf->add_option("--samples", st.regressor.train_samples, "reparameterized draws per instance");

  CLI::App* fc = app.add_subcommand("forecast", "Produce forecast ensembles");
  fc->add_option("--model", st.model_path, "regressor JSON (with --data)");
  fc->add_option("--data", st.data_path, "x,y CSV to forecast");
  fc->add_option("--series", st.series_path, "demand CSV for rolling-origin backtesting");
  fc->add_option("--window", st.backtest.initial_window, "initial window (backtest)");
  fc->add_option("--period", st.backtest.seasonal_period, "seasonal period (backtest)");
  fc->add_option("--horizon", st.backtest.horizon, "forecast horizon (backtest)");
  fc->add_option("--stride", st.backtest.stride, "origin stride (backtest)");
  fc->add_flag("--clamp-nonnegative", st.backtest.clamp_nonnegative,
               "clamp predictive samples at zero");
  fc->add_option("--m", st.m, "ensemble size")->required();
  fc->add_option("--seed", st.seed, "random seed");
  fc->add_option("--out", st.out, "ensembles CSV")->required();

  CLI::App* dn = app.add_subcommand("downstream", "Newsvendor downstream scores");
  dn->add_option("--ensembles", st.ensembles_path, "ensembles CSV")->required();
  dn->add_option("--params", st.params_path, "p,c,h CSV (one row per instance)")->required();
  dn->add_option("--out", st.out, "scores CSV")->required();

  CLI::App* sdn = app.add_subcommand("synth-downstream",
                                     "Threshold-weighted CRPS downstream scores");
  sdn->add_option("--ensembles", st.ensembles_path, "ensembles CSV")->required();
  sdn->add_option("--chaining", st.chaining_json,
                  "chaining JSON, e.g. {\"family\":\"threshold\",\"t\":0.5}")
      ->required();
  sdn->add_option("--out", st.out, "scores CSV")->required();

  CLI::App* at = app.add_subcommand("align-train", "Train the alignment model");
  at->add_option("--ensembles", st.ensembles_path, "ensembles CSV")->required();
  at->add_option("--scores", st.scores_path, "downstream scores CSV")->required();
  at->add_option("--out", st.out, "model JSON")->required();
  at->add_option("--trace", st.trace_path, "training trace CSV");
  at->add_option("--seed", st.seed, "random seed");
  at->add_option("--epochs", st.train.epochs, "training epochs");
  at->add_option("--lr", st.train.learning_rate, "learning rate");
  at->add_option("--weight-decay", st.train.weight_decay, "L2 strength");
  at->add_option("--batch", st.train.batch_size, "batch size (0 = default policy)");
  at->add_option("--split", st.train.split_fraction, "train fraction of the alignment set");
  at->add_option("--early-stopping", st.early_stopping, "patience in epochs");
  at->add_option("--activation", st.activation, "relu | gelu");
  at->add_option("--nu-hidden", st.arch.nu.hidden, "nu block hidden widths");
  at->add_flag("--monotone-head", st.arch.monotone_head, "use the monotone multilayer head");
  at->add_option("--head-hidden", st.arch.head.hidden, "monotone head hidden widths");
  at->add_option("--op", st.op, "twcrps | quad_mean");

  CLI::App* ae = app.add_subcommand("align-eval", "Evaluate a trained alignment model");
  ae->add_option("--model", st.model_path, "model JSON")->required();
  ae->add_option("--ensembles", st.ensembles_path, "ensembles CSV")->required();
  ae->add_option("--scores", st.scores_path, "downstream scores CSV")->required();
  ae->add_option("--out", st.out, "metrics JSON")->required();
  ae->add_option("--estimates", st.estimates_path, "optional estimated-scores CSV");

  CLI::App* rn = app.add_subcommand("run", "Run a full experiment from a config");
  rn->add_option("--config", st.config_path, "experiment config JSON")->required();
  rn->add_option("--seed", st.seed_override, "override config seed");
  rn->add_option("--out", st.out_override, "override output directory");
  rn->add_option("--threads", st.threads_override, "override worker threads");

  CLI::App* eg = app.add_subcommand("export-grid", "Export a chaining/weighting grid");
  eg->add_option("--model", st.model_path, "alignment model JSON");
  eg->add_option("--chaining", st.chaining_json, "analytic chaining JSON");
  eg->add_option("--zmin", st.z_min, "grid start")->required();
  eg->add_option("--zmax", st.z_max, "grid end")->required();
  eg->add_option("--n", st.n_points, "grid points");
  eg->add_option("--out", st.out, "grid CSV")->required();

  CLI::App* ec = app.add_subcommand("export-curve", "Export an alignment curve");
  ec->add_option("--x-scores", st.x_scores_path, "upstream/estimated scores CSV")->required();
  ec->add_option("--d-scores", st.d_scores_path, "downstream scores CSV")->required();
  ec->add_option("--out", st.out, "curve CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      cmd_gen_data(st);
    } else if (tf->parsed()) {
      cmd_train_forecaster(st);
    } else if (fc->parsed()) {
      cmd_forecast(st);
    } else if (dn->parsed()) {
      cmd_downstream(st);
    } else if (sdn->parsed()) {
      cmd_synth_downstream(st);
    } else if (at->parsed()) {
      cmd_align_train(st);
    } else if (ae->parsed()) {
      cmd_align_eval(st);
    } else if (rn->parsed()) {
      cmd_run(st);
    } else if (eg->parsed()) {
      cmd_export_grid(st);
    } else if (ec->parsed()) {
      cmd_export_curve(st);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return 5;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace evalign
