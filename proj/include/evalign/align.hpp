#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evalign/ensemble.hpp"
#include "evalign/monotone.hpp"

namespace evalign {

/// One alignment example: a forecast instance and the downstream score its
/// decision earned.
struct AlignmentRecord {
  Ensemble ensemble;
  double downstream_score = 0.0;
};

struct AlignmentDataset {
  std::vector<AlignmentRecord> records;
  std::string source;
  std::string units;
};

/// Nonempty, finite scores, all ensembles share one M. Throws InvalidInput.
void validate(const AlignmentDataset& data);

/// Common ensemble size M of a validated dataset.
int ensemble_size(const AlignmentDataset& data);

struct TrainConfig {
  double learning_rate = 0.04;
  double weight_decay = 1e-5;
  int epochs = 100;
  /// Minibatch size; 0 selects the default policy (64, capped at the train
  /// split size). Smaller batches buy more optimizer steps within the fixed
  /// epoch budget, which the chaining-recovery experiments need.
  int batch_size = 0;
  std::uint64_t seed = 0;
  /// Fraction of the alignment set used for fitting; the rest is monitored.
  double split_fraction = 0.8;
  /// Early stopping patience in epochs; when set, training stops after this
  /// many epochs without monitored-loss improvement and the best snapshot is
  /// returned.
  std::optional<int> early_stopping;
  /// Fixed affine maps fitted on the train split: inputs are centered and
  /// scaled before the nu block, targets before the loss. Both maps have
  /// positive scale, so they fold into the learned transforms without
  /// affecting propriety, and they keep optimizer step sizes meaningful
  /// across target units (e.g. euros vs. scores).
  bool standardize_inputs = true;
  bool standardize_targets = true;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  AlignmentNet net;
  std::vector<EpochStats> trace;
};

/// Fits the alignment model by Adam on the squared alignment loss.
/// Deterministic for a fixed seed. Throws TrainingError when the loss turns
/// non-finite.
TrainResult train_alignment(const AlignmentDataset& data, const AlignmentNetConfig& arch,
                            const TrainConfig& cfg);

struct InferResult {
  std::vector<double> estimates;
  double mae = 0.0;
};

/// Per-instance estimated downstream scores and their MAE against the
/// recorded scores. Throws InvalidInput when M differs from the M seen in
/// training.
InferResult infer_alignment(const AlignmentNet& net, const AlignmentDataset& data);

/// Tie-adjusted (tau-b) Kendall rank correlation in [-1, 1]. Throws
/// InvalidInput for length mismatch, n < 2, or an all-constant vector.
double kendall_tau(std::span<const double> x, std::span<const double> y);

/// Mean absolute error between two equal-length vectors.
double mae(std::span<const double> x, std::span<const double> y);

/// Alignment improvement in Kendall tau, in percent points.
double delta_tau(double tau_nonaligned, double tau_aligned);

}  // namespace evalign
