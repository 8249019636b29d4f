#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "evalign/align.hpp"
#include "evalign/chaining.hpp"
#include "evalign/forecast.hpp"
#include "evalign/io.hpp"
#include "evalign/monotone.hpp"

namespace evalign {

inline constexpr const char* kLibraryVersion = "0.1.0";

enum class ExperimentKind { kConvexToy, kSyntheticDownstream, kInventory };

std::string to_string(ExperimentKind kind);
ExperimentKind experiment_from_string(const std::string& name);

/// Full experiment description. All randomness flows from `seed`, split per
/// stage by fixed labels.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kSyntheticDownstream;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int threads = 1;

  // --- synthetic downstream ---
  SynthKind synth_kind = SynthKind::kSinusoidal;
  NoiseMode synth_noise = NoiseMode::kHeterogeneous;
  int n_regressor = 2000;
  int n_align = 2000;
  int n_test = 500;
  RegressorConfig regressor;
  int ensemble_size = 50;
  ChainingSpec chaining = ThresholdChaining{0.5};

  // --- convex toy ---
  int toy_instances = 200;
  int toy_samples = 200;

  // --- inventory ---
  DemandSpec demand;
  std::string demand_csv;  // optional ingestion path for a user series
  BacktestConfig backtest{24, 1, 1, 100, 0, 12, 0.3, 0.05, 0.3, true};
  int test_months = 24;
  /// price = cost_ratio * cost. The source experiment sets cost to
  /// 2.5 * price, which makes every purchase unprofitable; that degenerate
  /// economics stays available behind `degenerate_costs`.
  double cost_ratio = 2.5;
  bool degenerate_costs = false;
  double holding = 1000.0;

  // --- alignment ---
  AlignmentNetConfig arch;
  TrainConfig train;
};

/// Built-in defaults per experiment (epochs, architecture, sizes).
ExperimentConfig default_config(ExperimentKind kind);

nlohmann::json chaining_to_json(const ChainingSpec& spec);
ChainingSpec chaining_from_json(const nlohmann::json& j);

/// Reads a JSON config; missing keys fall back to the experiment defaults.
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct RunManifest {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string library_version;
  nlohmann::json config_echo;
  nlohmann::json metrics;
  std::vector<StageTiming> timings;
  std::vector<std::string> artifacts;
};

nlohmann::json manifest_to_json(const RunManifest& manifest);

/// Runs generate -> forecast -> downstream-score -> align-train ->
/// align-eval, writes every artifact plus manifest.json into cfg.out_dir.
/// On stage failure a `.partial` marker naming the stage is left behind and
/// the error is rethrown. The output directory is locked for the duration.
RunManifest run_experiment(const ExperimentConfig& cfg);

/// Uniform grid of the learned (or analytic) chaining with its weight
/// function via central finite differences (one-sided at the endpoints).
std::vector<io::GridRow> export_chaining_grid(const AlignmentNet& net, double z_min, double z_max,
                                              int n_points);
std::vector<io::GridRow> export_chaining_grid(const ChainingSpec& spec, double z_min, double z_max,
                                              int n_points);

/// Per-instance (s_x, s_d) pairs sorted by s_x with ordinal rank
/// annotations; second member is the Kendall tau summary.
std::pair<std::vector<io::CurveRow>, double> export_alignment_curve(std::span<const double> s_x,
                                                                    std::span<const double> s_d);

/// Command line entry point (see --help for subcommands). Returns the
/// process exit code: 0 success, 2 usage/config, 3 I/O, 4 invalid input,
/// 5 training failure.
int cli_main(int argc, const char* const* argv);

}  // namespace evalign
