#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "drowsy/data.hpp"
#include "drowsy/error.hpp"
#include "drowsy/mlp.hpp"
#include "drowsy/preprocess.hpp"
#include "drowsy/rng.hpp"

namespace drowsy {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double dropout_rate = kDefaultDropout;
  std::uint64_t seed = 42;
  bool shuffle = true;
  std::vector<std::size_t> hidden = canonical_hidden_widths();

  void validate() const {
    if (epochs == 0) fail(ErrorKind::Config, "epochs must be positive");
    if (batch_size == 0) fail(ErrorKind::Config, "batch size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      fail(ErrorKind::Config, "learning rate must be a nonnegative number");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::Config, "momentum must lie in [0, 1)");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      fail(ErrorKind::Config, "dropout rate must lie in [0, 1)");
    if (std::find(hidden.begin(), hidden.end(), 0U) != hidden.end())
      fail(ErrorKind::Config, "hidden layer widths must be positive");
  }
};

inline Json to_json(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},        {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
              {"dropout_rate", c.dropout_rate},   {"seed", c.seed},
              {"shuffle", c.shuffle},             {"hidden", c.hidden}};
}

/// FNV-1a over the compact JSON form of the config, as 16 hex digits.
inline std::string config_digest(const TrainConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct EpochStats {
  double mean_loss = 0.0;
  double accuracy = 0.0;  // inference-mode accuracy over the training set, in [0, 1]
  double seconds = 0.0;
};

using TrainHistory = std::vector<EpochStats>;

struct ModelMetadata {
  std::string created;  // free-form; empty keeps saved files reproducible
  std::string config_digest;
  Json config = Json::object();
};

struct MlpModel {
  MlpTopology topology;
  MinMaxScaler scaler;
  ModelMetadata metadata;

  void validate() const {
    drowsy::validate(topology);
    scaler.validate();
    if (scaler.size() != topology.input_dim)
      fail(ErrorKind::Structure, "scaler width differs from the model input width");
    if (topology.output_dim() != kClassCount)
      fail(ErrorKind::Structure, "model must have exactly two output classes");
  }
};

/// Interleaved [x0, y0, x1, y1, ..., x67, y67].
inline std::vector<double> flatten_features(std::span<const Point> points) {
  if (points.size() != kLandmarkCount)
    fail(ErrorKind::InputShape, "expected 68 landmarks, got " + std::to_string(points.size()));
  std::vector<double> v(kInputDim);
  for (std::size_t k = 0; k < kLandmarkCount; ++k) {
    v[2 * k] = points[k].x;
    v[2 * k + 1] = points[k].y;
  }
  return v;
}

inline std::vector<double> flatten_features(const LandmarkFrame& frame) {
  return flatten_features(frame.landmarks);
}

inline Landmarks unflatten_features(std::span<const double> v) {
  if (v.size() != kInputDim)
    fail(ErrorKind::InputShape, "expected 136 features, got " + std::to_string(v.size()));
  Landmarks points{};
  for (std::size_t k = 0; k < kLandmarkCount; ++k) points[k] = {v[2 * k], v[2 * k + 1]};
  return points;
}

struct Prediction {
  DrowsyLabel label = DrowsyLabel::NonSleepy;
  double p_sleepy = 0.0;
  double p_notsleepy = 0.0;
};

/// Scale, run the network without dropout, take the argmax (ties go to NonSleepy).
inline Prediction predict_features(const MlpModel& model, std::span<const double> features) {
  const auto scaled = model.scaler.transform(features);
  const auto probs = forward(model.topology, scaled).probabilities;
  Prediction out;
  out.p_notsleepy = probs[class_index(DrowsyLabel::NonSleepy)];
  out.p_sleepy = probs[class_index(DrowsyLabel::Sleepy)];
  out.label = out.p_sleepy > out.p_notsleepy ? DrowsyLabel::Sleepy : DrowsyLabel::NonSleepy;
  return out;
}

inline Prediction predict(const MlpModel& model, const LandmarkFrame& frame) {
  return predict_features(model, flatten_features(frame));
}

inline Prediction predict(const MlpModel& model, const FrameRecord& record) {
  if (!record.landmarks)
    fail(ErrorKind::PredictionInput, "frame at t_ms=" + std::to_string(record.timestamp_ms) +
                                         " has no landmarks");
  return predict_features(model, flatten_features(*record.landmarks));
}

namespace detail {

inline double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

// Widen each feature range to the nearest float32 values outside it, so the
// stored scaler still maps every training value into [0, 1].
inline void round_scaler_outward(MinMaxScaler& scaler) {
  for (std::size_t i = 0; i < scaler.size(); ++i) {
    float lo = static_cast<float>(scaler.min[i]);
    if (static_cast<double>(lo) > scaler.min[i]) lo = std::nextafter(lo, -INFINITY);
    float hi = static_cast<float>(scaler.max[i]);
    if (static_cast<double>(hi) < scaler.max[i]) hi = std::nextafter(hi, INFINITY);
    scaler.min[i] = lo;
    scaler.max[i] = hi;
  }
}

inline void initialize(MlpTopology& topology, Rng& rng) {
  for (auto& layer : topology.layers) {
    const auto fan_in = static_cast<double>(layer.in_dim);
    const auto fan_out = static_cast<double>(layer.out_dim);
    const double bound = layer.activation == ActivationKind::Softmax
                             ? std::sqrt(6.0 / (fan_in + fan_out))   // Glorot-uniform
                             : std::sqrt(6.0 / fan_in);              // He-uniform
    for (double& w : layer.weights) w = round_to_float(uniform(rng, -bound, bound));
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
}

// Total order on frames, used to make training independent of file order.
inline bool canonical_less(const LandmarkFrame& a, const LandmarkFrame& b) {
  return std::tie(a.subject_id, a.scenario, a.label, a.frame_index, a.timestamp_ms, a.landmarks) <
         std::tie(b.subject_id, b.scenario, b.label, b.frame_index, b.timestamp_ms, b.landmarks);
}

}  // namespace detail

struct TrainResult {
  MlpModel model;
  TrainHistory history;
};

/// Mini-batch SGD with classical momentum on cross-entropy. Frames are put in a
/// canonical order first, so the result depends only on the frame multiset, the
/// config and the seed. Parameters are rounded to float32 at the end, which is
/// the precision the model file stores.
using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

inline TrainResult train(const std::vector<LandmarkFrame>& frames, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  if (frames.empty()) fail(ErrorKind::Training, "no training frames");

  std::vector<const LandmarkFrame*> ordered;
  ordered.reserve(frames.size());
  for (const auto& f : frames) ordered.push_back(&f);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return detail::canonical_less(*a, *b); });

  std::vector<std::vector<double>> raw;
  std::vector<std::size_t> labels;
  raw.reserve(frames.size());
  for (const auto* f : ordered) {
    raw.push_back(flatten_features(*f));
    labels.push_back(class_index(f->label));
  }
  if (std::all_of(labels.begin(), labels.end(), [&](auto l) { return l == labels.front(); }))
    fail(ErrorKind::Training, "training data holds a single class");

  MlpModel model;
  model.scaler = fit_scaler(raw);
  detail::round_scaler_outward(model.scaler);
  std::vector<std::vector<double>> inputs;
  inputs.reserve(raw.size());
  for (const auto& r : raw) inputs.push_back(model.scaler.transform(r));

  model.topology = make_topology(kInputDim, config.hidden, kClassCount, config.dropout_rate);
  auto init_rng = make_rng(config.seed, Stream::Init);
  auto shuffle_rng = make_rng(config.seed, Stream::Shuffle);
  auto dropout_rng = make_rng(config.seed, Stream::Dropout);
  detail::initialize(model.topology, init_rng);
  model.metadata.config_digest = config_digest(config);
  model.metadata.config = to_json(config);

  auto& topo = model.topology;
  GradientSet velocity = zero_gradients(topo);
  std::vector<std::size_t> order(inputs.size());
  TrainHistory history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    if (config.shuffle) {
      for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i));
        std::swap(order[i - 1], order[std::min(j, i - 1)]);
      }
    }
    double loss_sum = 0.0;
    for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - begin);
      GradientSet grads = zero_gradients(topo);
      double batch_loss = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t idx = order[k];
        auto result = forward(topo, inputs[idx], dropout_rng);
        batch_loss += cross_entropy_loss(result.probabilities, labels[idx]);
        accumulate_backward(topo, result.trace, labels[idx], scale, grads);
      }
      if (!std::isfinite(batch_loss))
        fail(ErrorKind::Divergence, "non-finite loss at epoch " + std::to_string(epoch + 1) +
                                        ", batch " + std::to_string(batch + 1));
      loss_sum += batch_loss;
      for (std::size_t l = 0; l < topo.layers.size(); ++l) {
        auto step = [&](std::vector<double>& params, std::vector<double>& vel,
                        const std::vector<double>& g) {
          for (std::size_t i = 0; i < params.size(); ++i) {
            vel[i] = config.momentum * vel[i] - config.learning_rate * g[i];
            params[i] += vel[i];
          }
        };
        step(topo.layers[l].weights, velocity[l].weights, grads[l].weights);
        step(topo.layers[l].bias, velocity[l].bias, grads[l].bias);
      }
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto probs = forward(topo, inputs[i]).probabilities;
      const std::size_t guess = probs[1] > probs[0] ? 1 : 0;
      correct += guess == labels[i];
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    history.push_back({loss_sum / static_cast<double>(inputs.size()),
                       static_cast<double>(correct) / static_cast<double>(inputs.size()),
                       elapsed.count()});
    if (on_epoch) on_epoch(epoch + 1, history.back());
  }

  for (auto& layer : topo.layers) {
    for (double& w : layer.weights) w = detail::round_to_float(w);
    for (double& b : layer.bias) b = detail::round_to_float(b);
  }
  for (const auto& layer : topo.layers)
    for (double w : layer.weights)
      if (!std::isfinite(w)) fail(ErrorKind::Divergence, "parameters overflowed float32 storage");
  return {std::move(model), std::move(history)};
}

}  // namespace drowsy
