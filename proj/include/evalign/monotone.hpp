#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "evalign/ensemble.hpp"

namespace evalign {

// Monotone network building blocks. Layers use |raw_weights| as effective
// weights, so every trainable configuration is nondecreasing in each input
// coordinate. Per-unit activations mix three variants of a base rectifier:
// the convex original, its point reflection (concave), and a two-sided
// saturating combination (bounded), which together restore the inflection
// expressiveness that nonnegative weights alone would lose.

enum class Activation { kRelu, kGelu };

enum class UnitKind { kConvex, kConcave, kBounded };

struct MonotoneDense {
  int fan_in = 0;
  int fan_out = 0;
  Activation activation = Activation::kRelu;
  std::vector<double> raw_weights;  // fan_out x fan_in, row-major
  std::vector<double> bias;         // fan_out
  std::vector<UnitKind> kinds;      // fan_out
};

/// A scalar-to-scalar monotone map: MonotoneDense layers, a nonnegative
/// linear combiner, then an affine output with positive scale exp(log_scale).
struct MonotoneBlock {
  std::vector<MonotoneDense> layers;
  std::vector<double> raw_combiner;  // last hidden width
  double log_scale = 0.0;
  double offset = 0.0;
};

struct MonotoneBlockConfig {
  std::vector<int> hidden{50};
  Activation activation = Activation::kRelu;
};

/// Output map h. The affine head (slope exp(log_w) > 0) is the
/// propriety-preserving default; the monotone multilayer head reproduces
/// the two-layer output block of the reference architecture.
struct AffineHead {
  double log_w = 0.0;
  double bias = 0.0;
};

/// Scoring operator sitting between the nu block and the head.
///   kTwCrps: CRPS kernel over transformed samples and observation.
///   kQuadMean: mean of 2 * u^2 over transformed samples (the convex-toy
///              source function applied to transformed residuals).
enum class ScoreOperator { kTwCrps, kQuadMean };

struct AlignmentNetConfig {
  MonotoneBlockConfig nu{{50}, Activation::kRelu};
  bool monotone_head = false;
  MonotoneBlockConfig head{{10, 10}, Activation::kRelu};
  ScoreOperator op = ScoreOperator::kTwCrps;
};

/// The alignment model: score = h( S( nu(samples), nu(obs) ) ), with fixed
/// affine input/target maps that carry data standardization. Both maps have
/// positive scale, so monotonicity and argmin preservation are unaffected.
struct AlignmentNet {
  AlignmentNetConfig config;
  MonotoneBlock nu;
  std::variant<AffineHead, MonotoneBlock> head;
  double input_center = 0.0;
  double input_scale = 1.0;   // > 0
  double target_center = 0.0;
  double target_scale = 1.0;  // > 0
  int trained_m = 0;          // ensemble size seen in training; 0 = untrained
};

/// Builds a network with seeded near-identity initialization: raw weights
/// uniform(-r, r) with r = 1/sqrt(fan_in), biases and offsets zero,
/// log-scales zero.
AlignmentNet make_alignment_net(const AlignmentNetConfig& config, std::uint64_t seed);

/// Structural mirror of the same shapes with all values zero, used as a
/// gradient container.
AlignmentNet zeros_like(const AlignmentNet& net);

/// Resets every trainable value to zero (gradient container reuse).
void zero_params(AlignmentNet& net);

/// Number of trainable parameters.
std::size_t param_count(const AlignmentNet& net);

/// Flatten / restore parameters in a fixed traversal order (nu layers,
/// combiner, scale, offset, then head).
std::vector<double> flatten_params(const AlignmentNet& net);
void set_params(AlignmentNet& net, std::span<const double> values);

/// The learned chaining transform, canonicalized: when the head is affine,
/// its slope and the target scale are folded into nu (the kernel is
/// positively homogeneous, so this is the same model re-parameterized with
/// unit head slope). Nondecreasing in z.
double nu_forward(const AlignmentNet& net, double z);

/// Estimated downstream score for one ensemble (M+1 nu evaluations and one
/// head evaluation).
double align_forward(const AlignmentNet& net, const Ensemble& ens);

/// Exact reverse-mode gradient of (align_forward(net, ens) - target)^2 with
/// respect to every parameter, accumulated into grads (an AlignmentNet
/// mirror from zeros_like). Subgradients of |.| and the rectifier kinks are
/// taken as 0. Returns the squared loss.
double align_backward(const AlignmentNet& net, const Ensemble& ens, double target,
                      AlignmentNet& grads);

/// Flat-vector variant of align_backward (parameter order of
/// flatten_params).
std::vector<double> align_backward_flat(const AlignmentNet& net, const Ensemble& ens,
                                        double target);

/// Effective head slope (exp(log_w) for the affine head, smallest
/// finite-difference slope probe for the monotone head).
double head_slope(const AlignmentNet& net);

/// Smallest distance of any nonsmooth argument to its kink in a forward
/// pass: |raw weight| magnitudes, rectifier pre-activation distances, and
/// the kernel's pairwise absolute differences. Finite-difference gradient
/// checks are only meaningful when this gap exceeds the probe step.
double min_kink_gap(const AlignmentNet& net, const Ensemble& ens);

Activation activation_from_string(const std::string& name);
std::string to_string(Activation act);

}  // namespace evalign
