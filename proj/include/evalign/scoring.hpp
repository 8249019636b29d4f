#pragma once

#include <span>

#include "evalign/chaining.hpp"
#include "evalign/ensemble.hpp"

namespace evalign {

/// CRPS of the empirical distribution of the samples against the
/// observation, i.e. mean |x_j - y| - (1/2M^2) sum_{j,k} |x_j - x_k|.
/// Computed from order statistics (sort-before-sum), so permutations of
/// the samples give bitwise-equal results.
double crps_ensemble(const Ensemble& ens);

/// Threshold-weighted CRPS: the CRPS kernel applied to the nu-transformed
/// samples and observation. Evaluated directly in kernel form (pairwise
/// absolute differences), which makes it an independent route from
/// crps_ensemble-on-transformed-values for identity checks.
double twcrps_ensemble(const Ensemble& ens, const ChainingSpec& spec);

/// Arithmetic mean of a nonempty score vector.
double mean_score(std::span<const double> scores);

}  // namespace evalign
