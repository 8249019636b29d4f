#include "evalign/chaining.hpp"

#include <algorithm>
#include <cmath>

#include "evalign/errors.hpp"
#include "evalign/mathutil.hpp"

namespace evalign {

double chaining_eval(const ChainingSpec& spec, double z) {
  if (!std::isfinite(z)) {
    throw InvalidInput("chaining_eval: non-finite input");
  }
  return std::visit(
      [z](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, IdentityChaining>) {
          return z;
        } else if constexpr (std::is_same_v<T, ThresholdChaining>) {
          return std::max(z, s.t);
        } else if constexpr (std::is_same_v<T, IntervalChaining>) {
          return std::min(std::max(z, s.a), s.b);
        } else if constexpr (std::is_same_v<T, GaussianChaining>) {
          const double u = (z - s.mu) / s.sigma;
          return (z - s.t) * norm_cdf(u) + s.sigma * norm_pdf(u);
        } else if constexpr (std::is_same_v<T, SumSigmoidsChaining>) {
          double out = 0.0;
          for (std::size_t i = 0; i < s.a.size(); ++i) {
            out += s.c[i] * sigmoid(s.a[i] * z + s.b[i]) + s.d[i];
          }
          return out;
        } else {
          static_assert(std::is_same_v<T, LearnedChaining>);
          return s.fn(z);
        }
      },
      spec);
}

void validate(const ChainingSpec& spec) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, IntervalChaining>) {
          if (!(s.a < s.b)) {
            throw InvalidInput("interval chaining requires a < b");
          }
        } else if constexpr (std::is_same_v<T, GaussianChaining>) {
          if (!(s.sigma > 0.0)) {
            throw InvalidInput("gaussian chaining requires sigma > 0");
          }
        } else if constexpr (std::is_same_v<T, SumSigmoidsChaining>) {
          const std::size_t n = s.a.size();
          if (n == 0 || s.b.size() != n || s.c.size() != n || s.d.size() != n) {
            throw InvalidInput("sum-of-sigmoids chaining requires equal-length nonempty vectors");
          }
        } else if constexpr (std::is_same_v<T, LearnedChaining>) {
          if (!s.fn) {
            throw InvalidInput("learned chaining holds no function");
          }
        }
      },
      spec);
}

void check_monotone(const ChainingSpec& spec, double lo, double hi) {
  validate(spec);
  if (!(lo < hi)) {
    throw InvalidInput("check_monotone: requires lo < hi");
  }
  constexpr int kGrid = 1024;
  double vmin = 0.0;
  double vmax = 0.0;
  std::vector<double> vals(kGrid);
  for (int i = 0; i < kGrid; ++i) {
    const double z = lo + (hi - lo) * static_cast<double>(i) / (kGrid - 1);
    vals[i] = chaining_eval(spec, z);
    if (i == 0) {
      vmin = vmax = vals[0];
    } else {
      vmin = std::min(vmin, vals[i]);
      vmax = std::max(vmax, vals[i]);
    }
  }
  // Per-step tolerance: the analytic families are flat-to-increasing up to
  // tail rounding (the Gaussian family with t != mu dips by O(1e-5) of its
  // range far left of mu). A genuine violation moves by O(range).
  const double tol = 1e-4 * (vmax - vmin) + 1e-12;
  for (int i = 1; i < kGrid; ++i) {
    if (vals[i] - vals[i - 1] < -tol) {
      throw InvalidInput("chaining function '" + chaining_name(spec) +
                         "' is decreasing near z = " +
                         std::to_string(lo + (hi - lo) * static_cast<double>(i) / (kGrid - 1)));
    }
  }
}

std::string chaining_name(const ChainingSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, IdentityChaining>) {
          return "identity";
        } else if constexpr (std::is_same_v<T, ThresholdChaining>) {
          return "threshold";
        } else if constexpr (std::is_same_v<T, IntervalChaining>) {
          return "interval";
        } else if constexpr (std::is_same_v<T, GaussianChaining>) {
          return "gaussian";
        } else if constexpr (std::is_same_v<T, SumSigmoidsChaining>) {
          return "sum_sigmoids";
        } else {
          static_assert(std::is_same_v<T, LearnedChaining>);
          return s.tag.empty() ? "learned" : s.tag;
        }
      },
      spec);
}

}  // namespace evalign
