#pragma once

#include <functional>
#include <string>
#include <variant>
#include <vector>

namespace evalign {

// Chaining functions: nondecreasing maps applied to forecast samples and
// observation before scoring. The derivative of a chaining function is the
// outcome-space weight it induces.

struct IdentityChaining {};

/// nu(z) = max(z, t)
struct ThresholdChaining {
  double t;
};

/// nu(z) = min(max(z, a), b), requires a < b
struct IntervalChaining {
  double a;
  double b;
};

/// nu(z) = (z - t) * Phi((z - mu) / sigma) + sigma * phi((z - mu) / sigma),
/// requires sigma > 0. For t == mu this is the exact antiderivative of the
/// normal CDF weight; for t != mu the far-left tail dips below flat by a
/// vanishing amount (see check_monotone tolerance).
struct GaussianChaining {
  double t;
  double mu;
  double sigma;
};

/// nu(z) = sum_i c_i * sigmoid(a_i * z + b_i) + d_i, equal-length vectors.
/// The d_i act as additive offsets so the family stays monotone for any d.
struct SumSigmoidsChaining {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> c;
  std::vector<double> d;
};

/// Handle to a trained monotone transform (e.g. the nu block of an
/// alignment model).
struct LearnedChaining {
  std::function<double(double)> fn;
  std::string tag;
};

using ChainingSpec = std::variant<IdentityChaining, ThresholdChaining, IntervalChaining,
                                  GaussianChaining, SumSigmoidsChaining, LearnedChaining>;

/// Evaluates the chaining transform at z.
double chaining_eval(const ChainingSpec& spec, double z);

/// Checks structural invariants (a < b, sigma > 0, equal vector lengths).
/// Throws InvalidInput on violation.
void validate(const ChainingSpec& spec);

/// Numerically verifies that nu is nondecreasing on a 1024-point grid over
/// [lo, hi]. Consecutive decreases beyond a small fraction of the sampled
/// range are a construction error (InvalidInput). The tolerance absorbs the
/// vanishing tail dip of the Gaussian family with t != mu while still
/// rejecting genuinely decreasing specs.
void check_monotone(const ChainingSpec& spec, double lo, double hi);

/// Human-readable name of the variant (for reports and manifests).
std::string chaining_name(const ChainingSpec& spec);

}  // namespace evalign
