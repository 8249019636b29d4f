#pragma once

#include <string>
#include <vector>

namespace evalign {

/// One forecast instance: M predictive samples plus the realized outcome.
/// Sample order carries no meaning; every score is permutation invariant.
struct Ensemble {
  std::vector<double> samples;
  double observation = 0.0;
  std::string instance_id;
};

/// Throws InvalidInput if the ensemble is empty or holds non-finite values.
void validate(const Ensemble& ens);

}  // namespace evalign
