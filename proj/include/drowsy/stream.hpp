#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>

#include "drowsy/data.hpp"
#include "drowsy/error.hpp"
#include "drowsy/runtime.hpp"
#include "drowsy/training.hpp"

namespace drowsy {

constexpr std::size_t kStreamBufferCapacity = 256;

/// Blocking FIFO with a fixed capacity. push blocks while full; pop blocks while
/// empty and returns nullopt once the queue is closed and drained.
template <class T>
class BoundedQueue {
public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_; });
    items_.push_back(std::move(item));
    not_empty_.notify_one();
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
  }

private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
};

struct StreamSummary {
  std::size_t records = 0;
  std::size_t classified = 0;
  std::size_t skipped = 0;
  std::size_t errors = 0;
  std::size_t raised = 0;
  std::size_t cleared = 0;
};

namespace detail {

struct StreamLine {
  std::size_t line_no = 0;
  std::string text;
};

enum class RecordStatus { Classified, Skipped, Error };

struct StreamOutput {
  RecordStatus status = RecordStatus::Classified;
  Transition transition = Transition::None;
  std::string line;
};

inline Json best_effort_timestamp(const std::string& text) {
  try {
    const auto obj = Json::parse(text);
    if (obj.is_object() && obj.contains("t_ms") && obj["t_ms"].is_number_unsigned()) return obj["t_ms"];
  } catch (const Json::exception&) {
  }
  return nullptr;
}

inline std::string output_line(const Json& t_ms, std::string_view label, const Json& p_sleepy,
                               bool alert, Transition transition) {
  Json rec{{"t_ms", t_ms},
           {"label", label},
           {"p_sleepy", p_sleepy},
           {"alert", alert},
           {"transition", wire_name(transition)}};
  return rec.dump();
}

}  // namespace detail

/// Classifies newline-delimited frame records from `in`, writing one JSON line
/// per record to `out` in input order. Malformed records produce an `error`
/// line, null-landmark records a `skipped` line; neither advances the debounce
/// window. Runs reader, classifier and writer as three stages joined by
/// bounded queues; the writer is the calling thread.
inline StreamSummary stream_serve(const MlpModel& model, std::istream& in, std::ostream& out,
                                  const DebounceConfig& debounce, std::ostream* diagnostics = nullptr) {
  model.validate();
  debounce.validate();
  if (!in.good()) fail(ErrorKind::Stream, "input stream is not readable");

  BoundedQueue<detail::StreamLine> lines(kStreamBufferCapacity);
  BoundedQueue<detail::StreamOutput> outputs(kStreamBufferCapacity);

  std::thread reader([&] {
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
      ++line_no;
      if (!text.empty() && text.back() == '\r') text.pop_back();
      if (text.find_first_not_of(" \t") == std::string::npos) continue;
      lines.push({line_no, std::move(text)});
    }
    lines.close();
  });

  std::thread classifier([&] {
    Debouncer debouncer(debounce);
    while (auto item = lines.pop()) {
      detail::StreamOutput result;
      std::optional<FrameRecord> record;
      try {
        record = parse_record(item->text, "line " + std::to_string(item->line_no), RecordMode::Stream);
      } catch (const std::exception& e) {
        if (diagnostics) *diagnostics << e.what() << '\n';
        result.status = detail::RecordStatus::Error;
        result.line = detail::output_line(detail::best_effort_timestamp(item->text), "error", nullptr,
                                          debouncer.active(), Transition::None);
        outputs.push(std::move(result));
        continue;
      }
      if (!record->landmarks) {
        result.status = detail::RecordStatus::Skipped;
        result.line = detail::output_line(record->timestamp_ms, "skipped", nullptr,
                                          debouncer.active(), Transition::None);
        outputs.push(std::move(result));
        continue;
      }
      try {
        const auto prediction = predict(model, *record);
        const auto event = debouncer.step(record->timestamp_ms, prediction.p_sleepy, prediction.label);
        result.transition = event.transition;
        result.line = detail::output_line(event.timestamp_ms, wire_name(event.label), event.p_sleepy,
                                          event.alert_active, event.transition);
      } catch (const std::exception& e) {
        if (diagnostics) *diagnostics << "line " << item->line_no << ": " << e.what() << '\n';
        result.status = detail::RecordStatus::Error;
        result.line = detail::output_line(record->timestamp_ms, "error", nullptr, debouncer.active(),
                                          Transition::None);
      }
      outputs.push(std::move(result));
    }
    outputs.close();
  });

  StreamSummary summary;
  while (auto result = outputs.pop()) {
    out << result->line << '\n';
    out.flush();
    ++summary.records;
    switch (result->status) {
      case detail::RecordStatus::Classified: ++summary.classified; break;
      case detail::RecordStatus::Skipped: ++summary.skipped; break;
      case detail::RecordStatus::Error: ++summary.errors; break;
    }
    summary.raised += result->transition == Transition::Raised;
    summary.cleared += result->transition == Transition::Cleared;
  }
  reader.join();
  classifier.join();
  if (!out) fail(ErrorKind::Stream, "output stream failed");
  return summary;
}

}  // namespace drowsy
