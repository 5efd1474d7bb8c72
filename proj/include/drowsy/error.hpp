#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace drowsy {

enum class ErrorKind {
  InputShape,
  NumericInput,
  Label,
  Trace,
  Fit,
  Parse,
  Split,
  Dataset,
  Config,
  Training,
  Divergence,
  PredictionInput,
  Budget,
  Storage,
  Format,
  Corruption,
  Structure,
  Evaluation,
  Benchmark,
  Stream,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InputShape: return "input-shape";
    case ErrorKind::NumericInput: return "numeric-input";
    case ErrorKind::Label: return "label";
    case ErrorKind::Trace: return "trace";
    case ErrorKind::Fit: return "fit";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Split: return "split";
    case ErrorKind::Dataset: return "dataset";
    case ErrorKind::Config: return "config";
    case ErrorKind::Training: return "training";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::PredictionInput: return "prediction-input";
    case ErrorKind::Budget: return "budget";
    case ErrorKind::Storage: return "storage";
    case ErrorKind::Format: return "format";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Structure: return "structure";
    case ErrorKind::Evaluation: return "evaluation";
    case ErrorKind::Benchmark: return "benchmark";
    case ErrorKind::Stream: return "stream";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the kinds above.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace drowsy
