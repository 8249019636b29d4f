#include "evalign/monotone.hpp"

#include <cassert>
#include <cmath>
#include <limits>

#include "evalign/errors.hpp"
#include "evalign/mathutil.hpp"
#include "evalign/rng.hpp"

namespace evalign {

namespace {

// Argmin of x * Phi(x). The gelu base is clamped there so the rectifier is
// nondecreasing, which the |weights| construction requires.
constexpr double kGeluArgmin = -0.7517915246935645;

double rho(Activation act, double x) {
  if (act == Activation::kRelu) {
    return x > 0.0 ? x : 0.0;
  }
  const double xc = x < kGeluArgmin ? kGeluArgmin : x;
  return xc * norm_cdf(xc);
}

double rho_grad(Activation act, double x) {
  if (act == Activation::kRelu) {
    return x > 0.0 ? 1.0 : 0.0;
  }
  if (x < kGeluArgmin) {
    return 0.0;
  }
  return norm_cdf(x) + x * norm_pdf(x);
}

double unit_forward(Activation act, UnitKind kind, double p) {
  switch (kind) {
    case UnitKind::kConvex:
      return rho(act, p);
    case UnitKind::kConcave:
      return -rho(act, -p);
    case UnitKind::kBounded:
      return p < 0.0 ? rho(act, p + 1.0) - rho(act, 1.0) : rho(act, 1.0) - rho(act, 1.0 - p);
  }
  return 0.0;
}

double unit_grad(Activation act, UnitKind kind, double p) {
  switch (kind) {
    case UnitKind::kConvex:
      return rho_grad(act, p);
    case UnitKind::kConcave:
      return rho_grad(act, -p);
    case UnitKind::kBounded:
      return p < 0.0 ? rho_grad(act, p + 1.0) : rho_grad(act, 1.0 - p);
  }
  return 0.0;
}

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

struct BlockCache {
  std::vector<std::vector<double>> inputs;   // per layer, size fan_in
  std::vector<std::vector<double>> preacts;  // per layer, size fan_out
  std::vector<double> last;                  // output of final layer
  double combined = 0.0;                     // combiner dot product
};

double block_forward(const MonotoneBlock& block, double z, BlockCache* cache) {
  std::vector<double> x{z};
  if (cache != nullptr) {
    cache->inputs.resize(block.layers.size());
    cache->preacts.resize(block.layers.size());
  }
  for (std::size_t li = 0; li < block.layers.size(); ++li) {
    const MonotoneDense& layer = block.layers[li];
    std::vector<double> p(layer.fan_out, 0.0);
    for (int j = 0; j < layer.fan_out; ++j) {
      double acc = layer.bias[static_cast<std::size_t>(j)];
      const double* w = &layer.raw_weights[static_cast<std::size_t>(j * layer.fan_in)];
      for (int i = 0; i < layer.fan_in; ++i) {
        acc += std::abs(w[i]) * x[static_cast<std::size_t>(i)];
      }
      p[static_cast<std::size_t>(j)] = acc;
    }
    std::vector<double> y(layer.fan_out);
    for (int j = 0; j < layer.fan_out; ++j) {
      y[static_cast<std::size_t>(j)] =
          unit_forward(layer.activation, layer.kinds[static_cast<std::size_t>(j)],
                       p[static_cast<std::size_t>(j)]);
    }
    if (cache != nullptr) {
      cache->inputs[li] = std::move(x);
      cache->preacts[li] = std::move(p);
      x = y;
    } else {
      x = std::move(y);
    }
  }
  double c = 0.0;
  for (std::size_t j = 0; j < block.raw_combiner.size(); ++j) {
    c += std::abs(block.raw_combiner[j]) * x[j];
  }
  if (cache != nullptr) {
    cache->last = std::move(x);
    cache->combined = c;
  }
  return std::exp(block.log_scale) * c + block.offset;
}

void block_backward(const MonotoneBlock& block, const BlockCache& cache, double dout,
                    MonotoneBlock& grads) {
  grads.offset += dout;
  const double scale = std::exp(block.log_scale);
  grads.log_scale += dout * scale * cache.combined;
  const double dc = dout * scale;
  std::vector<double> dx(cache.last.size());
  for (std::size_t j = 0; j < block.raw_combiner.size(); ++j) {
    grads.raw_combiner[j] += dc * sgn(block.raw_combiner[j]) * cache.last[j];
    dx[j] = dc * std::abs(block.raw_combiner[j]);
  }
  for (std::size_t li = block.layers.size(); li-- > 0;) {
    const MonotoneDense& layer = block.layers[li];
    MonotoneDense& glayer = grads.layers[li];
    const std::vector<double>& x = cache.inputs[li];
    const std::vector<double>& p = cache.preacts[li];
    std::vector<double> dprev(static_cast<std::size_t>(layer.fan_in), 0.0);
    for (int j = 0; j < layer.fan_out; ++j) {
      const std::size_t ju = static_cast<std::size_t>(j);
      const double dp =
          dx[ju] * unit_grad(layer.activation, layer.kinds[ju], p[ju]);
      glayer.bias[ju] += dp;
      const double* w = &layer.raw_weights[static_cast<std::size_t>(j * layer.fan_in)];
      double* gw = &glayer.raw_weights[static_cast<std::size_t>(j * layer.fan_in)];
      for (int i = 0; i < layer.fan_in; ++i) {
        const std::size_t iu = static_cast<std::size_t>(i);
        gw[iu] += dp * sgn(w[iu]) * x[iu];
        dprev[iu] += dp * std::abs(w[iu]);
      }
    }
    dx = std::move(dprev);
  }
}

MonotoneBlock make_block(const MonotoneBlockConfig& config, Rng& rng) {
  MonotoneBlock block;
  int fan_in = 1;
  for (const int width : config.hidden) {
    if (width < 1) {
      throw InvalidInput("monotone block: hidden width must be positive");
    }
    MonotoneDense layer;
    layer.fan_in = fan_in;
    layer.fan_out = width;
    layer.activation = config.activation;
    const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    layer.raw_weights.resize(static_cast<std::size_t>(width * fan_in));
    for (double& w : layer.raw_weights) {
      w = rng.uniform(-r, r);
    }
    layer.bias.assign(static_cast<std::size_t>(width), 0.0);
    layer.kinds.resize(static_cast<std::size_t>(width));
    // Units split evenly over the three variants, remainder to bounded.
    const int third = width / 3;
    for (int j = 0; j < width; ++j) {
      layer.kinds[static_cast<std::size_t>(j)] =
          j < third ? UnitKind::kConvex : (j < 2 * third ? UnitKind::kConcave : UnitKind::kBounded);
    }
    block.layers.push_back(std::move(layer));
    fan_in = width;
  }
  const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
  block.raw_combiner.resize(static_cast<std::size_t>(fan_in));
  for (double& v : block.raw_combiner) {
    v = rng.uniform(-r, r);
  }
  block.log_scale = 0.0;
  block.offset = 0.0;
  return block;
}

template <typename Block, typename Fn>
void visit_block(Block& block, Fn&& fn) {
  for (auto& layer : block.layers) {
    for (auto& w : layer.raw_weights) {
      fn(w);
    }
    for (auto& b : layer.bias) {
      fn(b);
    }
  }
  for (auto& v : block.raw_combiner) {
    fn(v);
  }
  fn(block.log_scale);
  fn(block.offset);
}

template <typename Net, typename Fn>
void visit_params_impl(Net& net, Fn&& fn) {
  visit_block(net.nu, fn);
  if (auto* affine = std::get_if<AffineHead>(&net.head)) {
    fn(affine->log_w);
    fn(affine->bias);
  } else {
    visit_block(std::get<MonotoneBlock>(net.head), fn);
  }
}

struct KernelGrads {
  std::vector<double> d_samples;
  double d_obs = 0.0;
};

double kernel_forward(ScoreOperator op, std::span<const double> u, double uy) {
  const std::size_t m = u.size();
  const double md = static_cast<double>(m);
  if (op == ScoreOperator::kQuadMean) {
    double acc = 0.0;
    for (const double uj : u) {
      acc += 2.0 * uj * uj;
    }
    return acc / md;
  }
  double term1 = 0.0;
  for (const double uj : u) {
    term1 += std::abs(uj - uy);
  }
  term1 /= md;
  double term2 = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double row = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      row += std::abs(u[j] - u[k]);
    }
    term2 += row;
  }
  term2 /= 2.0 * md * md;
  return term1 - term2;
}

KernelGrads kernel_backward(ScoreOperator op, std::span<const double> u, double uy, double dk) {
  const std::size_t m = u.size();
  const double md = static_cast<double>(m);
  KernelGrads g;
  g.d_samples.assign(m, 0.0);
  if (op == ScoreOperator::kQuadMean) {
    for (std::size_t j = 0; j < m; ++j) {
      g.d_samples[j] = dk * 4.0 * u[j] / md;
    }
    return g;
  }
  double dobs = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double dj = sgn(u[j] - uy) / md;
    double pair = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      pair += sgn(u[j] - u[k]);
    }
    dj -= pair / (md * md);
    g.d_samples[j] = dk * dj;
    dobs -= sgn(u[j] - uy) / md;
  }
  g.d_obs = dk * dobs;
  return g;
}

}  // namespace

AlignmentNet make_alignment_net(const AlignmentNetConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  AlignmentNet net;
  net.config = config;
  net.nu = make_block(config.nu, rng);
  if (config.monotone_head) {
    net.head = make_block(config.head, rng);
  } else {
    net.head = AffineHead{};
  }
  return net;
}

AlignmentNet zeros_like(const AlignmentNet& net) {
  AlignmentNet z = net;
  visit_params_impl(z, [](double& p) { p = 0.0; });
  z.input_center = 0.0;
  z.input_scale = 1.0;
  z.target_center = 0.0;
  z.target_scale = 1.0;
  return z;
}

void zero_params(AlignmentNet& net) {
  visit_params_impl(net, [](double& p) { p = 0.0; });
}

std::size_t param_count(const AlignmentNet& net) {
  std::size_t n = 0;
  visit_params_impl(net, [&n](const double&) { ++n; });
  return n;
}

std::vector<double> flatten_params(const AlignmentNet& net) {
  std::vector<double> out;
  out.reserve(param_count(net));
  visit_params_impl(net, [&out](const double& p) { out.push_back(p); });
  return out;
}

void set_params(AlignmentNet& net, std::span<const double> values) {
  if (values.size() != param_count(net)) {
    throw InvalidInput("set_params: size mismatch");
  }
  std::size_t i = 0;
  visit_params_impl(net, [&](double& p) { p = values[i++]; });
}

double nu_forward(const AlignmentNet& net, double z) {
  if (!std::isfinite(z)) {
    throw InvalidInput("nu_forward: non-finite input");
  }
  const double raw = block_forward(net.nu, (z - net.input_center) / net.input_scale, nullptr);
  double absorb = 1.0;
  if (const auto* affine = std::get_if<AffineHead>(&net.head)) {
    absorb = net.target_scale * std::exp(affine->log_w);
  }
  return absorb * raw;
}

double align_forward(const AlignmentNet& net, const Ensemble& ens) {
  validate(ens);
  const std::size_t m = ens.samples.size();
  std::vector<double> u(m);
  for (std::size_t j = 0; j < m; ++j) {
    u[j] = block_forward(net.nu, (ens.samples[j] - net.input_center) / net.input_scale, nullptr);
  }
  double uy = 0.0;
  if (net.config.op == ScoreOperator::kTwCrps) {
    uy = block_forward(net.nu, (ens.observation - net.input_center) / net.input_scale, nullptr);
  }
  const double k = kernel_forward(net.config.op, u, uy);
  double out;
  if (const auto* affine = std::get_if<AffineHead>(&net.head)) {
    out = std::exp(affine->log_w) * k + affine->bias;
  } else {
    out = block_forward(std::get<MonotoneBlock>(net.head), k, nullptr);
  }
  return net.target_center + net.target_scale * out;
}

double align_backward(const AlignmentNet& net, const Ensemble& ens, double target,
                      AlignmentNet& grads) {
  validate(ens);
  if (!std::isfinite(target)) {
    throw InvalidInput("align_backward: non-finite target");
  }
  const std::size_t m = ens.samples.size();

  std::vector<BlockCache> caches(m);
  std::vector<double> u(m);
  for (std::size_t j = 0; j < m; ++j) {
    u[j] = block_forward(net.nu, (ens.samples[j] - net.input_center) / net.input_scale,
                         &caches[j]);
  }
  BlockCache obs_cache;
  double uy = 0.0;
  const bool uses_obs = net.config.op == ScoreOperator::kTwCrps;
  if (uses_obs) {
    uy = block_forward(net.nu, (ens.observation - net.input_center) / net.input_scale,
                       &obs_cache);
  }
  const double k = kernel_forward(net.config.op, u, uy);

  BlockCache head_cache;
  double out;
  const auto* affine = std::get_if<AffineHead>(&net.head);
  if (affine != nullptr) {
    out = std::exp(affine->log_w) * k + affine->bias;
  } else {
    out = block_forward(std::get<MonotoneBlock>(net.head), k, &head_cache);
  }
  const double shat = net.target_center + net.target_scale * out;
  const double loss = (shat - target) * (shat - target);

  const double dout = 2.0 * (shat - target) * net.target_scale;
  double dk;
  if (affine != nullptr) {
    auto& haffine = std::get<AffineHead>(grads.head);
    const double w = std::exp(affine->log_w);
    haffine.log_w += dout * w * k;
    haffine.bias += dout;
    dk = dout * w;
  } else {
    // For the monotone head, dk is d out / d k through the block.
    MonotoneBlock& ghead = std::get<MonotoneBlock>(grads.head);
    const MonotoneBlock& hblock = std::get<MonotoneBlock>(net.head);
    // Propagate through head parameters and recover the input sensitivity
    // by an extra pass: reuse block_backward for parameters, then compute
    // d out / d k analytically with the cached forward state.
    block_backward(hblock, head_cache, dout, ghead);
    // Input sensitivity: chain of |W| columns times activation slopes.
    std::vector<double> dx(head_cache.last.size());
    const double scale = std::exp(hblock.log_scale);
    for (std::size_t j = 0; j < hblock.raw_combiner.size(); ++j) {
      dx[j] = scale * std::abs(hblock.raw_combiner[j]);
    }
    for (std::size_t li = hblock.layers.size(); li-- > 0;) {
      const MonotoneDense& layer = hblock.layers[li];
      std::vector<double> dprev(static_cast<std::size_t>(layer.fan_in), 0.0);
      for (int j = 0; j < layer.fan_out; ++j) {
        const std::size_t ju = static_cast<std::size_t>(j);
        const double dp = dx[ju] * unit_grad(layer.activation, layer.kinds[ju],
                                             head_cache.preacts[li][ju]);
        const double* w = &layer.raw_weights[static_cast<std::size_t>(j * layer.fan_in)];
        for (int i = 0; i < layer.fan_in; ++i) {
          dprev[static_cast<std::size_t>(i)] += dp * std::abs(w[static_cast<std::size_t>(i)]);
        }
      }
      dx = std::move(dprev);
    }
    dk = dout * dx[0];
  }

  const KernelGrads kg = kernel_backward(net.config.op, u, uy, dk);
  for (std::size_t j = 0; j < m; ++j) {
    if (kg.d_samples[j] != 0.0) {
      block_backward(net.nu, caches[j], kg.d_samples[j], grads.nu);
    }
  }
  if (uses_obs && kg.d_obs != 0.0) {
    block_backward(net.nu, obs_cache, kg.d_obs, grads.nu);
  }
  return loss;
}

std::vector<double> align_backward_flat(const AlignmentNet& net, const Ensemble& ens,
                                        double target) {
  AlignmentNet grads = zeros_like(net);
  align_backward(net, ens, target, grads);
  return flatten_params(grads);
}

double head_slope(const AlignmentNet& net) {
  if (const auto* affine = std::get_if<AffineHead>(&net.head)) {
    return std::exp(affine->log_w);
  }
  const MonotoneBlock& block = std::get<MonotoneBlock>(net.head);
  double min_slope = std::numeric_limits<double>::infinity();
  double prev = block_forward(block, -3.0, nullptr);
  constexpr int kProbe = 101;
  for (int i = 1; i < kProbe; ++i) {
    const double x = -3.0 + 6.0 * static_cast<double>(i) / (kProbe - 1);
    const double cur = block_forward(block, x, nullptr);
    min_slope = std::min(min_slope, (cur - prev) / (6.0 / (kProbe - 1)));
    prev = cur;
  }
  return min_slope;
}

namespace {

double activation_kink_gap(Activation act, UnitKind kind, double p) {
  if (act == Activation::kRelu) {
    switch (kind) {
      case UnitKind::kConvex:
      case UnitKind::kConcave:
        return std::abs(p);
      case UnitKind::kBounded:
        return std::min(std::abs(p + 1.0), std::abs(p - 1.0));
    }
  } else {
    switch (kind) {
      case UnitKind::kConvex:
        return std::abs(p - kGeluArgmin);
      case UnitKind::kConcave:
        return std::abs(-p - kGeluArgmin);
      case UnitKind::kBounded:
        return std::min(std::abs(p + 1.0 - kGeluArgmin), std::abs(1.0 - p - kGeluArgmin));
    }
  }
  return 0.0;
}

double block_kink_gap(const MonotoneBlock& block, double z) {
  double gap = std::numeric_limits<double>::infinity();
  for (const double v : block.raw_combiner) {
    gap = std::min(gap, std::abs(v));
  }
  BlockCache cache;
  block_forward(block, z, &cache);
  for (std::size_t li = 0; li < block.layers.size(); ++li) {
    const MonotoneDense& layer = block.layers[li];
    for (const double w : layer.raw_weights) {
      gap = std::min(gap, std::abs(w));
    }
    for (int j = 0; j < layer.fan_out; ++j) {
      const std::size_t ju = static_cast<std::size_t>(j);
      gap = std::min(gap, activation_kink_gap(layer.activation, layer.kinds[ju],
                                              cache.preacts[li][ju]));
    }
  }
  return gap;
}

}  // namespace

double min_kink_gap(const AlignmentNet& net, const Ensemble& ens) {
  validate(ens);
  double gap = std::numeric_limits<double>::infinity();
  const std::size_t m = ens.samples.size();
  std::vector<double> u(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double z = (ens.samples[j] - net.input_center) / net.input_scale;
    gap = std::min(gap, block_kink_gap(net.nu, z));
    u[j] = block_forward(net.nu, z, nullptr);
  }
  double k;
  if (net.config.op == ScoreOperator::kTwCrps) {
    const double zy = (ens.observation - net.input_center) / net.input_scale;
    gap = std::min(gap, block_kink_gap(net.nu, zy));
    const double uy = block_forward(net.nu, zy, nullptr);
    for (std::size_t j = 0; j < m; ++j) {
      gap = std::min(gap, std::abs(u[j] - uy));
      for (std::size_t l = j + 1; l < m; ++l) {
        gap = std::min(gap, std::abs(u[j] - u[l]));
      }
    }
    k = kernel_forward(net.config.op, u, uy);
  } else {
    k = kernel_forward(net.config.op, u, 0.0);
  }
  if (const auto* blockp = std::get_if<MonotoneBlock>(&net.head)) {
    gap = std::min(gap, block_kink_gap(*blockp, k));
  }
  return gap;
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") {
    return Activation::kRelu;
  }
  if (name == "gelu") {
    return Activation::kGelu;
  }
  throw ConfigError("unknown activation '" + name + "' (expected relu or gelu)");
}

std::string to_string(Activation act) { return act == Activation::kRelu ? "relu" : "gelu"; }

}  // namespace evalign
