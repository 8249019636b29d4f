#include "evalign/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "evalign/errors.hpp"
#include "evalign/mathutil.hpp"
#include "evalign/rng.hpp"

namespace evalign {

void validate(const AlignmentDataset& data) {
  if (data.records.empty()) {
    throw InvalidInput("alignment dataset is empty");
  }
  const std::size_t m = data.records.front().ensemble.samples.size();
  for (const AlignmentRecord& rec : data.records) {
    validate(rec.ensemble);
    if (!std::isfinite(rec.downstream_score)) {
      throw InvalidInput("alignment dataset: non-finite downstream score for '" +
                         rec.ensemble.instance_id + "'");
    }
    if (rec.ensemble.samples.size() != m) {
      throw InvalidInput("alignment dataset: ensembles must share one sample count");
    }
  }
}

int ensemble_size(const AlignmentDataset& data) {
  validate(data);
  return static_cast<int>(data.records.front().ensemble.samples.size());
}

namespace {

class Adam {
 public:
  Adam(std::size_t n, double lr, double weight_decay)
      : lr_(lr), wd_(weight_decay), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i] + wd_ * params[i];
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g * g;
      params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  double wd_;
  int t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

double squared_loss_sum(const AlignmentNet& net, const AlignmentDataset& data,
                        std::span<const std::size_t> idx) {
  double sum = 0.0;
  for (const std::size_t i : idx) {
    const AlignmentRecord& rec = data.records[i];
    const double d = align_forward(net, rec.ensemble) - rec.downstream_score;
    sum += d * d;
  }
  return sum;
}

}  // namespace

TrainResult train_alignment(const AlignmentDataset& data, const AlignmentNetConfig& arch,
                            const TrainConfig& cfg) {
  validate(data);
  if (!(cfg.learning_rate > 0.0)) {
    throw InvalidInput("train_alignment: learning_rate must be positive");
  }
  if (cfg.epochs < 1) {
    throw InvalidInput("train_alignment: epochs must be positive");
  }
  if (!(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0)) {
    throw InvalidInput("train_alignment: split_fraction must be in (0, 1)");
  }

  const std::size_t n = data.records.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, "align/split"));
  split_rng.shuffle(order);
  std::size_t n_train = static_cast<std::size_t>(
      std::floor(cfg.split_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n);
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + n_train);
  std::vector<std::size_t> val_idx(order.begin() + n_train, order.end());

  AlignmentNet net = make_alignment_net(arch, derive_seed(cfg.seed, "align/init"));
  net.trained_m = static_cast<int>(data.records.front().ensemble.samples.size());

  if (cfg.standardize_inputs) {
    std::vector<double> vals;
    vals.reserve(train_idx.size() * (data.records.front().ensemble.samples.size() + 1));
    for (const std::size_t i : train_idx) {
      const Ensemble& e = data.records[i].ensemble;
      vals.insert(vals.end(), e.samples.begin(), e.samples.end());
      vals.push_back(e.observation);
    }
    net.input_center = mean(vals);
    net.input_scale = std::max(stddev(vals), 1e-12);
  }
  if (cfg.standardize_targets) {
    std::vector<double> tgts;
    tgts.reserve(train_idx.size());
    for (const std::size_t i : train_idx) {
      tgts.push_back(data.records[i].downstream_score);
    }
    net.target_center = mean(tgts);
    net.target_scale = std::max(stddev(tgts), 1e-12);
  }

  int batch = cfg.batch_size;
  if (batch <= 0) {
    batch = 64;
  }
  batch = std::min<int>(batch, static_cast<int>(n_train));

  Adam opt(param_count(net), cfg.learning_rate, cfg.weight_decay);
  Rng batch_rng(derive_seed(cfg.seed, "align/batches"));

  // Losses in the trace are reported in raw target units; optimization runs
  // on the standardized scale (same minimizer, better conditioned steps).
  const double ts2 = net.target_scale * net.target_scale;

  TrainResult result;
  result.trace.reserve(static_cast<std::size_t>(cfg.epochs));

  AlignmentNet grads = zeros_like(net);
  std::vector<double> flat_grads(param_count(net));
  std::vector<double> flat_params(param_count(net));

  AlignmentNet best_net = net;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    batch_rng.shuffle(train_idx);
    double epoch_sq_sum = 0.0;
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(batch)) {
      const std::size_t stop = std::min(train_idx.size(), start + static_cast<std::size_t>(batch));
      const double inv_b = 1.0 / static_cast<double>(stop - start);

      zero_params(grads);
      double batch_sq = 0.0;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const AlignmentRecord& rec = data.records[train_idx[bi]];
        batch_sq += align_backward(net, rec.ensemble, rec.downstream_score, grads);
      }
      epoch_sq_sum += batch_sq;

      // Raw-scale gradients divided by target_scale^2 are exactly the
      // gradients of the standardized loss, which keeps step sizes
      // comparable across target units.
      flat_grads = flatten_params(grads);
      for (double& g : flat_grads) {
        g *= inv_b / ts2;
      }
      flat_params = flatten_params(net);
      opt.step(flat_params, flat_grads);
      set_params(net, flat_params);
    }

    const double train_loss = epoch_sq_sum / static_cast<double>(train_idx.size());
    double val_loss = train_loss;
    if (!val_idx.empty()) {
      val_loss = squared_loss_sum(net, data, val_idx) / static_cast<double>(val_idx.size());
    }
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      throw TrainingError("alignment training diverged", epoch);
    }
    result.trace.push_back({epoch, train_loss, val_loss});

    if (cfg.early_stopping.has_value()) {
      if (val_loss < best_val) {
        best_val = val_loss;
        best_net = net;
        epochs_since_best = 0;
      } else if (++epochs_since_best >= *cfg.early_stopping) {
        net = best_net;
        break;
      }
    }
  }
  if (cfg.early_stopping.has_value() && best_val < std::numeric_limits<double>::infinity()) {
    net = best_net;
  }

  result.net = std::move(net);
  return result;
}

InferResult infer_alignment(const AlignmentNet& net, const AlignmentDataset& data) {
  validate(data);
  const int m = static_cast<int>(data.records.front().ensemble.samples.size());
  if (net.trained_m > 0 && m != net.trained_m) {
    throw InvalidInput("infer_alignment: ensemble size " + std::to_string(m) +
                       " differs from training ensemble size " + std::to_string(net.trained_m));
  }
  InferResult out;
  out.estimates.reserve(data.records.size());
  double abs_sum = 0.0;
  for (const AlignmentRecord& rec : data.records) {
    const double est = align_forward(net, rec.ensemble);
    out.estimates.push_back(est);
    abs_sum += std::abs(est - rec.downstream_score);
  }
  out.mae = abs_sum / static_cast<double>(data.records.size());
  return out;
}

namespace {

/// Counts tied pairs within groups of equal values; v must be sorted so
/// that equal values are adjacent under the given projection.
template <typename Proj>
double tied_pairs(const std::vector<std::size_t>& idx, Proj&& value) {
  double total = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i + 1;
    while (j < idx.size() && value(idx[j]) == value(idx[i])) {
      ++j;
    }
    const double t = static_cast<double>(j - i);
    total += t * (t - 1.0) / 2.0;
    i = j;
  }
  return total;
}

/// Merge sort on y (stable), counting exchanges.
double merge_count(std::vector<double>& y, std::vector<double>& tmp, std::size_t lo,
                   std::size_t hi) {
  if (hi - lo < 2) {
    return 0.0;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  double swaps = merge_count(y, tmp, lo, mid) + merge_count(y, tmp, mid, hi);
  std::size_t a = lo;
  std::size_t b = mid;
  std::size_t k = lo;
  while (a < mid && b < hi) {
    if (y[b] < y[a]) {
      swaps += static_cast<double>(mid - a);
      tmp[k++] = y[b++];
    } else {
      tmp[k++] = y[a++];
    }
  }
  while (a < mid) {
    tmp[k++] = y[a++];
  }
  while (b < hi) {
    tmp[k++] = y[b++];
  }
  std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo),
            tmp.begin() + static_cast<std::ptrdiff_t>(hi),
            y.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw InvalidInput("kendall_tau: length mismatch");
  }
  const std::size_t n = x.size();
  if (n < 2) {
    throw InvalidInput("kendall_tau: need at least two observations");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw InvalidInput("kendall_tau: non-finite value");
    }
  }

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) {
      return x[a] < x[b];
    }
    return y[a] < y[b];
  });

  const double n0 = static_cast<double>(n) * (static_cast<double>(n) - 1.0) / 2.0;
  const double n1 = tied_pairs(idx, [&](std::size_t i) { return x[i]; });
  double n3 = 0.0;  // pairs tied in both
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i + 1;
      while (j < n && x[idx[j]] == x[idx[i]] && y[idx[j]] == y[idx[i]]) {
        ++j;
      }
      const double t = static_cast<double>(j - i);
      n3 += t * (t - 1.0) / 2.0;
      i = j;
    }
  }

  std::vector<double> ysorted(n);
  for (std::size_t i = 0; i < n; ++i) {
    ysorted[i] = y[idx[i]];
  }
  std::vector<double> tmp(n);
  const double swaps = merge_count(ysorted, tmp, 0, n);
  // ysorted is now sorted; count y ties on it.
  double n2 = 0.0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i + 1;
      while (j < n && ysorted[j] == ysorted[i]) {
        ++j;
      }
      const double t = static_cast<double>(j - i);
      n2 += t * (t - 1.0) / 2.0;
      i = j;
    }
  }

  const double denom_x = n0 - n1;
  const double denom_y = n0 - n2;
  if (denom_x <= 0.0 || denom_y <= 0.0) {
    throw InvalidInput("kendall_tau: undefined for an all-constant vector");
  }
  const double concordant_minus_discordant = n0 - n1 - n2 + n3 - 2.0 * swaps;
  return concordant_minus_discordant / std::sqrt(denom_x * denom_y);
}

double mae(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw InvalidInput("mae: length mismatch");
  }
  if (x.empty()) {
    throw InvalidInput("mae: empty input");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += std::abs(x[i] - y[i]);
  }
  return s / static_cast<double>(x.size());
}

double delta_tau(double tau_nonaligned, double tau_aligned) {
  return (tau_aligned - tau_nonaligned) * 100.0;
}

}  // namespace evalign
