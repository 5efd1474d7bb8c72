// drowsy: train, evaluate and serve the landmark drowsiness classifier.

#include <csignal>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/socket.h>

#include <CLI11.hpp>

#include "drowsy/drowsy.hpp"
#include "socket_stream.hpp"

namespace {

using namespace drowsy;

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kModelError = 3,
  kBudgetError = 4,
  kRuntimeError = 5,
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return kUsage;
    case ErrorKind::InputShape:
    case ErrorKind::NumericInput:
    case ErrorKind::Label:
    case ErrorKind::Fit:
    case ErrorKind::Parse:
    case ErrorKind::Split:
    case ErrorKind::Dataset:
    case ErrorKind::PredictionInput: return kDataError;
    case ErrorKind::Trace:
    case ErrorKind::Storage:
    case ErrorKind::Format:
    case ErrorKind::Corruption:
    case ErrorKind::Structure: return kModelError;
    case ErrorKind::Budget: return kBudgetError;
    case ErrorKind::Training:
    case ErrorKind::Divergence:
    case ErrorKind::Evaluation:
    case ErrorKind::Benchmark:
    case ErrorKind::Stream: return kRuntimeError;
  }
  return kRuntimeError;
}

// Only set from SOURCE_DATE_EPOCH, so repeated runs write identical files.
std::string creation_time() {
  const char* epoch = std::getenv("SOURCE_DATE_EPOCH");
  if (!epoch || !*epoch) return "";
  const auto t = static_cast<std::time_t>(std::atoll(epoch));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) fail(ErrorKind::Storage, "cannot write " + path);
}

void write_manifest(const DatasetManifest& manifest, const std::string& tsv, const std::string& json) {
  if (!tsv.empty()) write_text(tsv, manifest_report(manifest));
  if (!json.empty()) write_text(json, to_json(manifest).dump(2) + "\n");
}

struct ManifestFlags {
  std::string tsv;
  std::string json;
  void add(CLI::App* cmd) {
    cmd->add_option("--manifest-tsv", tsv, "Write the dataset manifest as a tab-separated table");
    cmd->add_option("--manifest-json", json, "Write the dataset manifest as JSON");
  }
};

template <class Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    std::cerr << "drowsy: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "drowsy: " << e.what() << '\n';
    return kRuntimeError;
  }
}

std::vector<FrameRecord> read_record_source(const std::string& path) {
  if (path == "-") return read_records(std::cin, "<stdin>", RecordMode::Stream);
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Dataset, "cannot open " + path);
  return read_records(in, path, RecordMode::Stream);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Landmark-based driver drowsiness classifier"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("drowsy ") + std::string(kVersion) +
                                        " (model format DMLP v" + std::to_string(kFormatVersion) + ")");

  // train
  TrainConfig train_cfg;
  std::string train_data, train_split, train_out;
  ManifestFlags train_manifest;
  bool no_shuffle = false;
  auto* train_cmd = app.add_subcommand("train", "Fit a model on the training split and save it");
  train_cmd->add_option("--data", train_data, "Frame file or directory of .jsonl files")->required();
  train_cmd->add_option("--split", train_split, "Split file with 'train' and 'eval' subject lists")->required();
  train_cmd->add_option("--out", train_out, "Output model path (.dmlp)")->required();
  train_cmd->add_option("--epochs", train_cfg.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--lr", train_cfg.learning_rate, "SGD learning rate")->capture_default_str();
  train_cmd->add_option("--batch", train_cfg.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--momentum", train_cfg.momentum, "Classical momentum")->capture_default_str();
  train_cmd->add_option("--dropout", train_cfg.dropout_rate, "Dropout rate after each hidden layer")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_cfg.seed, "Root seed for init, shuffling and dropout")
      ->capture_default_str();
  train_cmd->add_flag("--no-shuffle", no_shuffle, "Keep canonical frame order every epoch");
  train_cmd->add_option("--hidden", train_cfg.hidden, "Hidden layer widths")
      ->delimiter(',')
      ->capture_default_str();
  train_manifest.add(train_cmd);

  // eval
  std::string eval_model, eval_data, eval_split, eval_format = "table";
  bool eval_per_frame = false;
  ManifestFlags eval_manifest;
  auto* eval_cmd = app.add_subcommand("eval", "Per-scenario accuracy on the evaluation split");
  eval_cmd->add_option("--model", eval_model, "Model file (.dmlp)")->required();
  eval_cmd->add_option("--data", eval_data, "Frame file or directory of .jsonl files")->required();
  eval_cmd->add_option("--split", eval_split, "Split file with 'train' and 'eval' subject lists")->required();
  eval_cmd->add_option("--format", eval_format, "Output format")
      ->check(CLI::IsMember({"table", "json"}))
      ->capture_default_str();
  eval_cmd->add_flag("--per-frame", eval_per_frame, "Include per-frame labels (json format)");
  eval_manifest.add(eval_cmd);

  // predict
  std::string predict_model, predict_input = "-";
  auto* predict_cmd = app.add_subcommand("predict", "Classify every record of a frame file");
  predict_cmd->add_option("--model", predict_model, "Model file (.dmlp)")->required();
  predict_cmd->add_option("--input", predict_input, "Frame records, '-' for stdin")->capture_default_str();

  // stream
  DebounceConfig debounce;
  std::string stream_model;
  int listen_port = 0;
  bool listen_once = false;
  auto* stream_cmd = app.add_subcommand("stream", "Classify a live record stream with debounced alerts");
  stream_cmd->add_option("--model", stream_model, "Model file (.dmlp)")->required();
  stream_cmd->add_option("--window", debounce.window, "Debounce window length in frames")->capture_default_str();
  stream_cmd->add_option("--threshold", debounce.threshold, "Sleepy frames in the window that raise the alert")
      ->capture_default_str();
  stream_cmd->add_option("--cutoff", debounce.cutoff, "p_sleepy at or above which a frame counts as sleepy")
      ->capture_default_str();
  stream_cmd->add_option("--listen", listen_port, "Serve TCP clients on this port instead of stdin/stdout")
      ->check(CLI::Range(1, 65535));
  stream_cmd->add_flag("--once", listen_once, "With --listen, exit after the first client disconnects");

  // synth
  SynthConfig synth_cfg;
  std::string synth_out = "-", synth_split_out;
  std::size_t synth_train_subjects = 18;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic landmark dataset");
  synth_cmd->add_option("--out", synth_out, "Output frame file, '-' for stdout")->capture_default_str();
  synth_cmd->add_option("--count", synth_cfg.count, "Number of frames")->capture_default_str();
  synth_cmd->add_option("--fraction", synth_cfg.sleepy_fraction, "Fraction of sleepy frames")
      ->capture_default_str();
  synth_cmd->add_option("--noise", synth_cfg.noise_px, "Gaussian landmark jitter in pixels")->capture_default_str();
  synth_cmd->add_option("--seed", synth_cfg.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--subjects", synth_cfg.subjects, "Number of synthetic subjects")->capture_default_str();
  synth_cmd->add_option("--split-out", synth_split_out, "Also write a subject split file here");
  synth_cmd->add_option("--train-subjects", synth_train_subjects, "Subjects in the training split")
      ->capture_default_str();

  // inspect
  std::string inspect_model;
  auto* inspect_cmd = app.add_subcommand("inspect", "Summarize a model file");
  inspect_cmd->add_option("model", inspect_model, "Model file (.dmlp)")->required();

  // bench
  std::string bench_model, bench_data;
  std::size_t bench_reps = 10;
  auto* bench_cmd = app.add_subcommand("bench", "Per-frame inference latency (scaling + forward pass)");
  bench_cmd->add_option("--model", bench_model, "Model file (.dmlp)")->required();
  bench_cmd->add_option("--data", bench_data, "Frame file; null-landmark records are ignored")->required();
  bench_cmd->add_option("--repetitions", bench_reps, "Passes over the frames")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  if (*train_cmd) {
    return guarded([&] {
      train_cfg.shuffle = !no_shuffle;
      train_cfg.validate();
      const auto split = load_split(train_split);
      const auto data = load_dataset(train_data, split);
      write_manifest(data.manifest, train_manifest.tsv, train_manifest.json);

      ModelMetadata meta{creation_time(), config_digest(train_cfg), to_json(train_cfg)};
      {
        MlpModel sizing{make_topology(kInputDim, train_cfg.hidden, kClassCount, train_cfg.dropout_rate),
                        {}, meta};
        sizing.scaler.min.assign(kInputDim, 0.0);
        sizing.scaler.max.assign(kInputDim, 0.0);
        const auto size = encoded_size(sizing);
        if (size > kModelSizeBudget)
          fail(ErrorKind::Budget, "topology encodes to " + std::to_string(size) + " bytes, over the " +
                                      std::to_string(kModelSizeBudget) + "-byte budget");
      }
      auto result = train(data.train, train_cfg, [](std::size_t epoch, const EpochStats& s) {
        std::cout << Json{{"epoch", epoch}, {"loss", s.mean_loss}, {"accuracy", s.accuracy},
                          {"seconds", s.seconds}}.dump()
                  << std::endl;
      });
      result.model.metadata = meta;
      const auto bytes = save(result.model, train_out);
      std::cout << Json{{"model", train_out},
                        {"parameters", result.model.topology.parameter_count()},
                        {"bytes", bytes},
                        {"budget", kModelSizeBudget},
                        {"headroom", kModelSizeBudget - bytes},
                        {"train_frames", data.train.size()},
                        {"final_accuracy", result.history.back().accuracy}}
                       .dump()
                << std::endl;
      return kOk;
    });
  }

  if (*eval_cmd) {
    return guarded([&] {
      const auto model = load(eval_model);
      const auto data = load_dataset(eval_data, load_split(eval_split), false);
      write_manifest(data.manifest, eval_manifest.tsv, eval_manifest.json);
      const auto report = evaluate(model, data.eval);
      if (eval_format == "json") std::cout << to_json(report, eval_per_frame).dump() << '\n';
      else std::cout << report_table(report);
      return kOk;
    });
  }

  if (*predict_cmd) {
    return guarded([&] {
      const auto model = load(predict_model);
      for (const auto& rec : read_record_source(predict_input)) {
        const auto p = predict(model, rec);
        std::cout << Json{{"t_ms", rec.timestamp_ms}, {"label", wire_name(p.label)}, {"p_sleepy", p.p_sleepy}}
                         .dump()
                  << '\n';
      }
      return kOk;
    });
  }

  if (*stream_cmd) {
    return guarded([&] {
      const auto model = load(stream_model);
      debounce.validate();
      if (listen_port == 0) {
        stream_serve(model, std::cin, std::cout, debounce, &std::cerr);
        return kOk;
      }
      std::signal(SIGPIPE, SIG_IGN);
      const auto listener = tools::listen_tcp(static_cast<std::uint16_t>(listen_port));
      std::cerr << "drowsy: listening on port " << listen_port << std::endl;
      do {
        tools::FileDescriptor client(::accept(listener.get(), nullptr, nullptr));
        if (client.get() < 0) continue;
        tools::SocketBuf buf(client.get());
        // Separate stream objects: EOF on the read side must not fail the writer.
        std::istream in(&buf);
        std::ostream out(&buf);
        try {
          stream_serve(model, in, out, debounce, &std::cerr);
        } catch (const Error& e) {
          std::cerr << "drowsy: client: " << e.what() << '\n';
        }
        out.flush();
        ::shutdown(client.get(), SHUT_RDWR);
      } while (!listen_once);
      return kOk;
    });
  }

  if (*synth_cmd) {
    return guarded([&] {
      const auto frames = synth_generate(synth_cfg);
      if (synth_out == "-") {
        write_frames(std::cout, frames);
      } else {
        std::ofstream out(synth_out);
        write_frames(out, frames);
        if (!out) fail(ErrorKind::Storage, "cannot write " + synth_out);
      }
      if (!synth_split_out.empty()) {
        if (synth_train_subjects > synth_cfg.subjects)
          fail(ErrorKind::Config, "--train-subjects exceeds --subjects");
        write_text(synth_split_out, to_json(synth_split(synth_cfg.subjects, synth_train_subjects)).dump(2) + "\n");
      }
      return kOk;
    });
  }

  if (*inspect_cmd) {
    return guarded([&] {
      std::cout << inspect(inspect_model);
      return kOk;
    });
  }

  if (*bench_cmd) {
    return guarded([&] {
      const auto model = load(bench_model);
      std::vector<LandmarkFrame> frames;
      for (const auto& rec : read_record_source(bench_data))
        if (rec.landmarks) frames.push_back(to_frame(rec));
      std::cout << latency_report(bench_latency(model, frames, bench_reps));
      return kOk;
    });
  }
  return kUsage;
}
