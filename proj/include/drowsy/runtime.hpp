#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "drowsy/data.hpp"
#include "drowsy/error.hpp"
#include "drowsy/training.hpp"

namespace drowsy {

// ---------------------------------------------------------------------------
// Evaluation

/// Confusion counts with Sleepy as the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t frames() const { return tp + fp + tn + fn; }
  std::uint64_t correct() const { return tp + tn; }
  std::optional<double> accuracy_percent() const {
    if (frames() == 0) return std::nullopt;
    return 100.0 * static_cast<double>(correct()) / static_cast<double>(frames());
  }
  void add(DrowsyLabel truth, DrowsyLabel guess) {
    const bool pos = guess == DrowsyLabel::Sleepy;
    if (truth == DrowsyLabel::Sleepy) (pos ? tp : fn) += 1;
    else (pos ? fp : tn) += 1;
  }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

struct EvalReport {
  std::array<ConfusionCounts, kScenarios.size()> per_scenario{};
  std::vector<DrowsyLabel> predictions;  // input order

  const ConfusionCounts& scenario(Scenario s) const {
    return per_scenario[static_cast<std::size_t>(s)];
  }
  /// Frame-weighted over every scenario.
  ConfusionCounts overall() const {
    ConfusionCounts sum;
    for (const auto& c : per_scenario) sum += c;
    return sum;
  }
};

template <class Classify>
EvalReport evaluate_with(const std::vector<LandmarkFrame>& frames, Classify&& classify) {
  if (frames.empty()) fail(ErrorKind::Evaluation, "no frames to evaluate");
  EvalReport report;
  report.predictions.reserve(frames.size());
  for (const auto& frame : frames) {
    const DrowsyLabel guess = classify(frame);
    report.per_scenario[static_cast<std::size_t>(frame.scenario)].add(frame.label, guess);
    report.predictions.push_back(guess);
  }
  return report;
}

inline EvalReport evaluate(const MlpModel& model, const std::vector<LandmarkFrame>& frames) {
  return evaluate_with(frames, [&](const LandmarkFrame& f) { return predict(model, f).label; });
}

namespace detail {

inline std::string format_accuracy(const std::optional<double>& acc) {
  if (!acc) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *acc);
  return buf;
}

}  // namespace detail

/// Category/Accuracy rows for the five scenarios in fixed order, then "All".
inline std::string report_table(const EvalReport& report) {
  std::ostringstream out;
  out << "Category\tAccuracy\tFrames\tTP\tFP\tTN\tFN\n";
  auto row = [&](std::string_view name, const ConfusionCounts& c) {
    out << name << '\t' << detail::format_accuracy(c.accuracy_percent()) << '\t' << c.frames()
        << '\t' << c.tp << '\t' << c.fp << '\t' << c.tn << '\t' << c.fn << '\n';
  };
  for (Scenario s : kScenarios) row(display_name(s), report.scenario(s));
  row("All", report.overall());
  return out.str();
}

inline Json to_json(const ConfusionCounts& c) {
  const auto acc = c.accuracy_percent();
  return Json{{"accuracy", acc ? Json(*acc) : Json(nullptr)},
              {"frames", c.frames()},
              {"tp", c.tp},
              {"fp", c.fp},
              {"tn", c.tn},
              {"fn", c.fn}};
}

inline Json to_json(const EvalReport& report, bool with_predictions = false) {
  Json scenarios = Json::array();
  for (Scenario s : kScenarios) {
    Json row{{"scenario", wire_name(s)}};
    row.update(to_json(report.scenario(s)));
    scenarios.push_back(std::move(row));
  }
  Json out{{"scenarios", scenarios}, {"all", to_json(report.overall())}};
  if (with_predictions) {
    Json labels = Json::array();
    for (auto l : report.predictions) labels.push_back(wire_name(l));
    out["predictions"] = std::move(labels);
  }
  return out;
}

inline EvalReport report_from_json(const Json& obj) {
  EvalReport report;
  try {
    for (const auto& row : obj.at("scenarios")) {
      const auto s = parse_scenario(row.at("scenario").get<std::string>());
      if (!s) fail(ErrorKind::Parse, "unknown scenario in report");
      auto& c = report.per_scenario[static_cast<std::size_t>(*s)];
      c = {row.at("tp").get<std::uint64_t>(), row.at("fp").get<std::uint64_t>(),
           row.at("tn").get<std::uint64_t>(), row.at("fn").get<std::uint64_t>()};
    }
    if (obj.contains("predictions")) {
      for (const auto& p : obj["predictions"]) {
        const auto l = parse_label(p.get<std::string>());
        if (!l) fail(ErrorKind::Parse, "unknown label in report");
        report.predictions.push_back(*l);
      }
    }
  } catch (const Json::exception& e) {
    fail(ErrorKind::Parse, std::string("malformed report: ") + e.what());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Debouncing

struct DebounceConfig {
  std::size_t window = 10;
  std::size_t threshold = 8;
  double cutoff = 0.5;

  void validate() const {
    if (window == 0) fail(ErrorKind::Config, "debounce window must be positive");
    if (threshold == 0 || threshold > window)
      fail(ErrorKind::Config, "debounce threshold must lie in [1, window]");
    if (!(cutoff >= 0.0 && cutoff <= 1.0)) fail(ErrorKind::Config, "probability cutoff must lie in [0, 1]");
  }
};

enum class Transition : std::uint8_t { None, Raised, Cleared };

constexpr std::string_view wire_name(Transition t) {
  switch (t) {
    case Transition::None: return "none";
    case Transition::Raised: return "raised";
    case Transition::Cleared: return "cleared";
  }
  return "";
}

struct AlertEvent {
  std::uint64_t timestamp_ms = 0;
  DrowsyLabel label = DrowsyLabel::NonSleepy;
  double p_sleepy = 0.0;
  bool alert_active = false;
  Transition transition = Transition::None;
};

/// Alert is active while at least `threshold` of the last `window` observed
/// frames had p_sleepy >= cutoff. Before `window` frames have arrived only the
/// observed ones count.
class Debouncer {
public:
  explicit Debouncer(DebounceConfig config = {}) : config_(config), ring_(config.window, false) {
    config_.validate();
  }

  AlertEvent step(std::uint64_t timestamp_ms, double p_sleepy, DrowsyLabel label) {
    const bool sleepy = p_sleepy >= config_.cutoff;
    if (seen_ >= config_.window) sleepy_count_ -= ring_[head_] ? 1 : 0;
    ring_[head_] = sleepy;
    sleepy_count_ += sleepy ? 1 : 0;
    head_ = (head_ + 1) % config_.window;
    seen_ = std::min(seen_ + 1, config_.window);

    const bool was_active = active_;
    active_ = sleepy_count_ >= config_.threshold;
    AlertEvent event{timestamp_ms, label, p_sleepy, active_, Transition::None};
    if (active_ && !was_active) event.transition = Transition::Raised;
    if (!active_ && was_active) event.transition = Transition::Cleared;
    return event;
  }

  bool active() const { return active_; }
  std::size_t sleepy_in_window() const { return sleepy_count_; }
  std::size_t observed() const { return seen_; }
  const DebounceConfig& config() const { return config_; }

private:
  DebounceConfig config_;
  std::vector<bool> ring_;
  std::size_t head_ = 0;
  std::size_t seen_ = 0;
  std::size_t sleepy_count_ = 0;
  bool active_ = false;
};

// ---------------------------------------------------------------------------
// Latency

constexpr std::size_t kMinLatencySamples = 100;

struct LatencyStats {
  std::size_t frames = 0;
  double mean_us = 0.0;
  double median_us = 0.0;
  double p95_us = 0.0;
  double max_us = 0.0;
};

/// Nearest-rank percentile of an ascending sample, q in (0, 1].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

inline LatencyStats summarize_latency(std::vector<double> samples_us) {
  if (samples_us.empty()) fail(ErrorKind::Benchmark, "no latency samples");
  std::sort(samples_us.begin(), samples_us.end());
  LatencyStats stats;
  stats.frames = samples_us.size();
  double sum = 0.0;
  for (double v : samples_us) sum += v;
  stats.mean_us = sum / static_cast<double>(samples_us.size());
  const std::size_t n = samples_us.size();
  stats.median_us = n % 2 ? samples_us[n / 2] : 0.5 * (samples_us[n / 2 - 1] + samples_us[n / 2]);
  stats.p95_us = percentile_sorted(samples_us, 0.95);
  stats.max_us = samples_us.back();
  stats.mean_us = std::min(stats.mean_us, stats.max_us);  // guards summation rounding
  return stats;
}

/// Wall-clock time of single-frame predict (scale + forward) after one
/// unmeasured warm-up pass. Measures frames.size() * repetitions inferences.
inline LatencyStats bench_latency(const MlpModel& model, const std::vector<LandmarkFrame>& frames,
                                  std::size_t repetitions) {
  if (frames.size() * repetitions < kMinLatencySamples)
    fail(ErrorKind::Benchmark, "need at least " + std::to_string(kMinLatencySamples) +
                                   " measured inferences, got " +
                                   std::to_string(frames.size() * repetitions));
  std::vector<std::vector<double>> features;
  features.reserve(frames.size());
  for (const auto& f : frames) features.push_back(flatten_features(f));
  volatile double sink = 0.0;
  for (const auto& x : features) sink = sink + predict_features(model, x).p_sleepy;
  std::vector<double> samples;
  samples.reserve(features.size() * repetitions);
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (const auto& x : features) {
      const auto t0 = std::chrono::steady_clock::now();
      const double p = predict_features(model, x).p_sleepy;
      const auto t1 = std::chrono::steady_clock::now();
      sink = sink + p;
      samples.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
  }
  return summarize_latency(std::move(samples));
}

inline std::string latency_report(const LatencyStats& s) {
  std::ostringstream out;
  out << "# per-frame inference latency: min-max scaling + MLP forward only;"
         " face detection and landmark extraction are not included\n";
  out << "frames\tmean_us\tmedian_us\tp95_us\tmax_us\n";
  out << s.frames << '\t' << s.mean_us << '\t' << s.median_us << '\t' << s.p95_us << '\t'
      << s.max_us << '\n';
  return out.str();
}

}  // namespace drowsy
