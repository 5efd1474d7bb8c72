#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "drowsy/error.hpp"
#include "drowsy/rng.hpp"

namespace drowsy {

enum class ActivationKind : std::uint8_t { Rectifier, Softmax, Identity };

constexpr std::size_t kLandmarkCount = 68;
constexpr std::size_t kInputDim = kLandmarkCount * 2;
constexpr std::size_t kClassCount = 2;
constexpr double kDefaultDropout = 0.2;
constexpr double kProbabilityFloor = 1e-12;

struct DenseLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> weights;  // row-major, out_dim x in_dim
  std::vector<double> bias;
  ActivationKind activation = ActivationKind::Rectifier;
  double dropout_rate = 0.0;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, ActivationKind act, double dropout)
      : in_dim(in), out_dim(out), weights(in * out, 0.0), bias(out, 0.0), activation(act),
        dropout_rate(dropout) {}

  double& w(std::size_t row, std::size_t col) { return weights[row * in_dim + col]; }
  double w(std::size_t row, std::size_t col) const { return weights[row * in_dim + col]; }
  std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

struct MlpTopology {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> layers;

  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.parameter_count();
    return n;
  }
};

/// Throws Structure unless dims chain, all parameters are finite, the last layer
/// alone is softmax and dropout rates lie in [0, 1).
inline void validate(const MlpTopology& topology) {
  if (topology.input_dim == 0 || topology.layers.empty())
    fail(ErrorKind::Structure, "topology needs a positive input width and at least one layer");
  std::size_t expected_in = topology.input_dim;
  for (std::size_t i = 0; i < topology.layers.size(); ++i) {
    const auto& layer = topology.layers[i];
    const std::string where = "layer " + std::to_string(i);
    if (layer.in_dim != expected_in || layer.out_dim == 0)
      fail(ErrorKind::Structure, where + " has inconsistent dimensions");
    if (layer.weights.size() != layer.in_dim * layer.out_dim || layer.bias.size() != layer.out_dim)
      fail(ErrorKind::Structure, where + " parameter storage does not match its dimensions");
    if (!(layer.dropout_rate >= 0.0 && layer.dropout_rate < 1.0))
      fail(ErrorKind::Structure, where + " dropout rate outside [0, 1)");
    const bool last = i + 1 == topology.layers.size();
    if (last != (layer.activation == ActivationKind::Softmax))
      fail(ErrorKind::Structure, "softmax must be the activation of exactly the last layer");
    if (!last && layer.activation != ActivationKind::Rectifier)
      fail(ErrorKind::Structure, where + " must use the rectifier");
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(layer.weights.begin(), layer.weights.end(), finite) ||
        !std::all_of(layer.bias.begin(), layer.bias.end(), finite))
      fail(ErrorKind::Structure, where + " holds non-finite parameters");
    expected_in = layer.out_dim;
  }
}

/// Rectifier stack over `hidden` widths followed by a softmax layer. Parameters
/// are zero; initialization belongs to training.
inline MlpTopology make_topology(std::size_t input_dim, std::span<const std::size_t> hidden,
                                 std::size_t classes, double dropout_rate) {
  MlpTopology topology;
  topology.input_dim = input_dim;
  std::size_t in = input_dim;
  for (std::size_t width : hidden) {
    topology.layers.emplace_back(in, width, ActivationKind::Rectifier, dropout_rate);
    in = width;
  }
  topology.layers.emplace_back(in, classes, ActivationKind::Softmax, 0.0);
  return topology;
}

inline const std::vector<std::size_t>& canonical_hidden_widths() {
  static const std::vector<std::size_t> widths{100, 10, 10, 10};
  return widths;
}

/// 136 -> 100 -> 10 -> 10 -> 10 -> 2 with 20% dropout after every hidden layer.
inline MlpTopology canonical_topology() {
  return make_topology(kInputDim, canonical_hidden_widths(), kClassCount, kDefaultDropout);
}

inline std::vector<double> softmax(std::span<const double> z) {
  if (z.empty()) fail(ErrorKind::InputShape, "softmax of an empty vector");
  const double shift = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - shift);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

inline std::vector<double> rectifier(std::span<const double> z) {
  std::vector<double> out(z.size());
  std::transform(z.begin(), z.end(), out.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
  return out;
}

inline double cross_entropy_loss(std::span<const double> probabilities, std::size_t label) {
  if (label >= probabilities.size())
    fail(ErrorKind::Label, "label " + std::to_string(label) + " out of range for " +
                               std::to_string(probabilities.size()) + " classes");
  return -std::log(std::max(probabilities[label], kProbabilityFloor));
}

struct ForwardTrace {
  std::vector<std::vector<double>> pre;   // affine outputs
  std::vector<std::vector<double>> post;  // after activation and dropout
  std::vector<std::vector<double>> mask;  // 0 or 1/(1-rate); all 1 at inference
  std::vector<double> input;

  std::size_t depth() const { return pre.size(); }
  const std::vector<double>& probabilities() const { return post.back(); }
};

struct ForwardResult {
  std::vector<double> probabilities;
  ForwardTrace trace;
};

namespace detail {

inline void check_input(const MlpTopology& topology, std::span<const double> x) {
  if (x.size() != topology.input_dim)
    fail(ErrorKind::InputShape, "expected " + std::to_string(topology.input_dim) +
                                    " inputs, got " + std::to_string(x.size()));
  for (double v : x)
    if (!std::isfinite(v)) fail(ErrorKind::NumericInput, "non-finite input value");
}

inline std::vector<double> affine(const DenseLayer& layer, std::span<const double> in) {
  std::vector<double> out(layer.bias);
  for (std::size_t r = 0; r < layer.out_dim; ++r) {
    const double* row = layer.weights.data() + r * layer.in_dim;
    double acc = 0.0;
    for (std::size_t c = 0; c < layer.in_dim; ++c) acc += row[c] * in[c];
    out[r] += acc;
  }
  return out;
}

inline std::vector<double> activate(ActivationKind kind, std::span<const double> z) {
  switch (kind) {
    case ActivationKind::Rectifier: return rectifier(z);
    case ActivationKind::Softmax: return softmax(z);
    case ActivationKind::Identity: break;
  }
  return {z.begin(), z.end()};
}

struct NoDropout {};

template <class MaskSource>
ForwardResult run_forward(const MlpTopology& topology, std::span<const double> x,
                          MaskSource* masks) {
  check_input(topology, x);
  ForwardTrace trace;
  trace.input.assign(x.begin(), x.end());
  std::span<const double> in = trace.input;
  for (const auto& layer : topology.layers) {
    trace.pre.push_back(affine(layer, in));
    auto post = activate(layer.activation, trace.pre.back());
    std::vector<double> mask(layer.out_dim, 1.0);
    if constexpr (!std::is_same_v<MaskSource, NoDropout>) {
      if (layer.dropout_rate > 0.0) {
        const double keep_scale = 1.0 / (1.0 - layer.dropout_rate);
        for (std::size_t i = 0; i < mask.size(); ++i) {
          mask[i] = uniform01(*masks) < layer.dropout_rate ? 0.0 : keep_scale;
          post[i] *= mask[i];
        }
      }
    }
    trace.mask.push_back(std::move(mask));
    trace.post.push_back(std::move(post));
    in = trace.post.back();
  }
  return {trace.post.back(), std::move(trace)};
}

}  // namespace detail

/// Inference: no dropout, pure function of (topology, x).
inline ForwardResult forward(const MlpTopology& topology, std::span<const double> x) {
  return detail::run_forward<detail::NoDropout>(topology, x, nullptr);
}

/// Training: inverted dropout with masks drawn from `masks` and kept in the trace.
template <class Urbg>
ForwardResult forward(const MlpTopology& topology, std::span<const double> x, Urbg& masks) {
  return detail::run_forward(topology, x, &masks);
}

struct LayerGradient {
  std::vector<double> weights;
  std::vector<double> bias;
};

using GradientSet = std::vector<LayerGradient>;

inline GradientSet zero_gradients(const MlpTopology& topology) {
  GradientSet grads;
  grads.reserve(topology.layers.size());
  for (const auto& layer : topology.layers)
    grads.push_back({std::vector<double>(layer.weights.size(), 0.0),
                     std::vector<double>(layer.bias.size(), 0.0)});
  return grads;
}

/// Adds scale * d(cross-entropy)/d(theta) for the traced example into `grads`.
inline void accumulate_backward(const MlpTopology& topology, const ForwardTrace& trace,
                                std::size_t label, double scale, GradientSet& grads) {
  const std::size_t depth = topology.layers.size();
  if (trace.depth() != depth || trace.post.size() != depth || trace.mask.size() != depth ||
      trace.input.size() != topology.input_dim || grads.size() != depth)
    fail(ErrorKind::Trace, "trace depth does not match topology");
  for (std::size_t l = 0; l < depth; ++l) {
    const auto n = topology.layers[l].out_dim;
    if (trace.pre[l].size() != n || trace.post[l].size() != n || trace.mask[l].size() != n)
      fail(ErrorKind::Trace, "trace widths do not match layer " + std::to_string(l));
  }
  if (topology.layers.back().activation != ActivationKind::Softmax)
    fail(ErrorKind::Trace, "backward requires a softmax output layer");
  const auto& probs = trace.post.back();
  if (label >= probs.size()) fail(ErrorKind::Label, "label out of range");

  // Softmax + cross-entropy: dL/dz = p - onehot.
  std::vector<double> delta(probs.begin(), probs.end());
  delta[label] -= 1.0;
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = topology.layers[l];
    const std::vector<double>& in = l == 0 ? trace.input : trace.post[l - 1];
    auto& g = grads[l];
    for (std::size_t r = 0; r < layer.out_dim; ++r) {
      const double d = scale * delta[r];
      g.bias[r] += d;
      if (d == 0.0) continue;
      double* row = g.weights.data() + r * layer.in_dim;
      for (std::size_t c = 0; c < layer.in_dim; ++c) row[c] += d * in[c];
    }
    if (l == 0) break;
    const auto& below = topology.layers[l - 1];
    std::vector<double> upstream(layer.in_dim, 0.0);
    for (std::size_t r = 0; r < layer.out_dim; ++r) {
      if (delta[r] == 0.0) continue;
      const double* row = layer.weights.data() + r * layer.in_dim;
      for (std::size_t c = 0; c < layer.in_dim; ++c) upstream[c] += row[c] * delta[r];
    }
    for (std::size_t c = 0; c < layer.in_dim; ++c) {
      double d = upstream[c] * trace.mask[l - 1][c];
      if (below.activation == ActivationKind::Rectifier && !(trace.pre[l - 1][c] > 0.0)) d = 0.0;
      upstream[c] = d;
    }
    delta = std::move(upstream);
  }
}

inline GradientSet backward(const MlpTopology& topology, const ForwardTrace& trace,
                            std::size_t label) {
  auto grads = zero_gradients(topology);
  accumulate_backward(topology, trace, label, 1.0, grads);
  return grads;
}

namespace detail {

// Inference loss evaluated entirely in `Scalar`; the finite-difference side of
// gradient_check uses long double so that its roundoff stays far below 1e-6.
template <class Scalar>
Scalar loss_in(const MlpTopology& topology, std::span<const double> x, std::size_t label) {
  check_input(topology, x);
  std::vector<Scalar> in(x.begin(), x.end());
  for (const auto& layer : topology.layers) {
    std::vector<Scalar> out(layer.out_dim);
    for (std::size_t r = 0; r < layer.out_dim; ++r) {
      const double* row = layer.weights.data() + r * layer.in_dim;
      Scalar acc = 0;
      for (std::size_t c = 0; c < layer.in_dim; ++c) acc += static_cast<Scalar>(row[c]) * in[c];
      out[r] = static_cast<Scalar>(layer.bias[r]) + acc;
      if (layer.activation == ActivationKind::Rectifier && !(out[r] > 0)) out[r] = 0;
    }
    in = std::move(out);
  }
  if (label >= in.size()) fail(ErrorKind::Label, "label out of range");
  using std::exp;
  using std::log;
  const Scalar shift = *std::max_element(in.begin(), in.end());
  Scalar sum = 0;
  for (Scalar v : in) sum += exp(v - shift);
  const Scalar loss = log(sum) - (in[label] - shift);
  return std::min(loss, -log(static_cast<Scalar>(kProbabilityFloor)));
}

}  // namespace detail

/// Max over all parameters of |analytic - numeric| / max(1e-12, |analytic| + |numeric|),
/// numeric being the central difference with step `epsilon`. Runs without dropout.
inline double gradient_check(const MlpTopology& topology, std::span<const double> x,
                             std::size_t label, double epsilon) {
  const auto analytic = backward(topology, forward(topology, x).trace, label);
  MlpTopology probe = topology;
  double worst = 0.0;
  auto compare = [&](double& param, double grad) {
    const double saved = param;
    const double hi = saved + epsilon;
    const double lo = saved - epsilon;
    param = hi;
    const long double loss_hi = detail::loss_in<long double>(probe, x, label);
    param = lo;
    const long double loss_lo = detail::loss_in<long double>(probe, x, label);
    param = saved;
    const auto numeric = static_cast<double>(
        (loss_hi - loss_lo) / (static_cast<long double>(hi) - static_cast<long double>(lo)));
    const double err =
        std::abs(grad - numeric) / std::max(1e-12, std::abs(grad) + std::abs(numeric));
    worst = std::max(worst, err);
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto& layer = probe.layers[l];
    for (std::size_t i = 0; i < layer.weights.size(); ++i)
      compare(layer.weights[i], analytic[l].weights[i]);
    for (std::size_t i = 0; i < layer.bias.size(); ++i) compare(layer.bias[i], analytic[l].bias[i]);
  }
  return worst;
}

}  // namespace drowsy
