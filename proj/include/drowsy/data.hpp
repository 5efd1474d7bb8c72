#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "drowsy/error.hpp"
#include "drowsy/mlp.hpp"
#include "drowsy/rng.hpp"

namespace drowsy {

using Json = nlohmann::ordered_json;

// Recording conditions, in the order the per-category tables list them.
enum class Scenario : std::uint8_t {
  WithGlasses,
  NightWithoutGlasses,
  NightWithGlasses,
  WithoutGlasses,
  WithSunglasses,
};

constexpr std::array<Scenario, 5> kScenarios{
    Scenario::WithGlasses, Scenario::NightWithoutGlasses, Scenario::NightWithGlasses,
    Scenario::WithoutGlasses, Scenario::WithSunglasses};

constexpr std::string_view wire_name(Scenario s) {
  switch (s) {
    case Scenario::WithGlasses: return "glasses";
    case Scenario::NightWithoutGlasses: return "nightnoglasses";
    case Scenario::NightWithGlasses: return "nightglasses";
    case Scenario::WithoutGlasses: return "noglasses";
    case Scenario::WithSunglasses: return "sunglasses";
  }
  return "";
}

constexpr std::string_view display_name(Scenario s) {
  switch (s) {
    case Scenario::WithGlasses: return "With glasses";
    case Scenario::NightWithoutGlasses: return "Night Without glasses";
    case Scenario::NightWithGlasses: return "Night With glasses";
    case Scenario::WithoutGlasses: return "Without glasses";
    case Scenario::WithSunglasses: return "With sunglasses";
  }
  return "";
}

inline std::optional<Scenario> parse_scenario(std::string_view name) {
  for (Scenario s : kScenarios)
    if (wire_name(s) == name) return s;
  return std::nullopt;
}

// Class indices are fixed: 0 = NonSleepy, 1 = Sleepy.
enum class DrowsyLabel : std::uint8_t { NonSleepy = 0, Sleepy = 1 };

constexpr std::size_t class_index(DrowsyLabel label) { return static_cast<std::size_t>(label); }

constexpr std::string_view wire_name(DrowsyLabel label) {
  return label == DrowsyLabel::Sleepy ? "sleepy" : "notsleepy";
}

inline std::optional<DrowsyLabel> parse_label(std::string_view name) {
  if (name == "sleepy") return DrowsyLabel::Sleepy;
  if (name == "notsleepy") return DrowsyLabel::NonSleepy;
  return std::nullopt;
}

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
  auto operator<=>(const Point&) const = default;
};

using Landmarks = std::array<Point, kLandmarkCount>;

struct LandmarkFrame {
  std::string subject_id;
  Scenario scenario = Scenario::WithGlasses;
  DrowsyLabel label = DrowsyLabel::NonSleepy;
  std::uint64_t frame_index = 0;
  std::uint64_t timestamp_ms = 0;
  Landmarks landmarks{};

  bool operator==(const LandmarkFrame&) const = default;
};

/// One parsed line. Dataset files require every metadata field; stream input
/// only requires `t_ms` and `landmarks`.
struct FrameRecord {
  std::optional<std::string> subject_id;
  std::optional<Scenario> scenario;
  std::optional<DrowsyLabel> label;
  std::optional<std::uint64_t> frame_index;
  std::uint64_t timestamp_ms = 0;
  std::optional<Landmarks> landmarks;  // nullopt when the extractor found no face
};

enum class RecordMode { Dataset, Stream };

namespace detail {

inline std::uint64_t read_count(const Json& obj, const char* key, const std::string& where) {
  const auto& v = obj.at(key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  fail(ErrorKind::Parse, where + ": field '" + key + "' must be a nonnegative integer");
}

}  // namespace detail

inline FrameRecord parse_record(std::string_view line, const std::string& where,
                                RecordMode mode = RecordMode::Dataset) {
  Json obj;
  try {
    obj = Json::parse(line);
  } catch (const Json::exception& e) {
    fail(ErrorKind::Parse, where + ": " + e.what());
  }
  if (!obj.is_object()) fail(ErrorKind::Parse, where + ": record is not an object");
  FrameRecord rec;
  const bool strict = mode == RecordMode::Dataset;
  auto require = [&](const char* key) {
    if (!obj.contains(key)) fail(ErrorKind::Parse, where + ": missing field '" + key + "'");
  };
  auto text = [&](const char* key) {
    const auto& v = obj.at(key);
    if (!v.is_string()) fail(ErrorKind::Parse, where + ": field '" + key + "' must be a string");
    return v.get<std::string>();
  };
  if (strict) {
    for (const char* key : {"subject", "scenario", "label", "frame"}) require(key);
  }
  require("t_ms");
  require("landmarks");
  if (obj.contains("subject") && !obj["subject"].is_null()) rec.subject_id = text("subject");
  if (obj.contains("scenario") && !obj["scenario"].is_null()) {
    rec.scenario = parse_scenario(text("scenario"));
    if (!rec.scenario) fail(ErrorKind::Parse, where + ": unknown scenario '" + text("scenario") + "'");
  }
  if (obj.contains("label") && !obj["label"].is_null()) {
    rec.label = parse_label(text("label"));
    if (!rec.label) fail(ErrorKind::Parse, where + ": unknown label '" + text("label") + "'");
  }
  if (obj.contains("frame") && !obj["frame"].is_null())
    rec.frame_index = detail::read_count(obj, "frame", where);
  rec.timestamp_ms = detail::read_count(obj, "t_ms", where);
  if (strict && (!rec.subject_id || !rec.scenario || !rec.label || !rec.frame_index))
    fail(ErrorKind::Parse, where + ": subject, scenario, label and frame must not be null");

  const auto& lm = obj.at("landmarks");
  if (lm.is_null()) return rec;
  if (!lm.is_array() || lm.size() != kLandmarkCount)
    fail(ErrorKind::Parse, where + ": landmarks must be null or an array of 68 points");
  Landmarks points{};
  for (std::size_t k = 0; k < kLandmarkCount; ++k) {
    const auto& p = lm[k];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      fail(ErrorKind::Parse, where + ": landmark " + std::to_string(k) + " is not an [x, y] pair");
    points[k] = {p[0].get<double>(), p[1].get<double>()};
    if (!std::isfinite(points[k].x) || !std::isfinite(points[k].y))
      fail(ErrorKind::Parse, where + ": landmark " + std::to_string(k) + " is not finite");
  }
  rec.landmarks = points;
  return rec;
}

inline Json landmarks_json(const Landmarks& points) {
  Json arr = Json::array();
  for (const auto& p : points) arr.push_back(Json::array({p.x, p.y}));
  return arr;
}

inline Json to_json(const LandmarkFrame& frame) {
  return Json{{"subject", frame.subject_id},
              {"scenario", wire_name(frame.scenario)},
              {"label", wire_name(frame.label)},
              {"frame", frame.frame_index},
              {"t_ms", frame.timestamp_ms},
              {"landmarks", landmarks_json(frame.landmarks)}};
}

inline void write_frames(std::ostream& out, const std::vector<LandmarkFrame>& frames) {
  for (const auto& frame : frames) out << to_json(frame).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Splits and manifest

enum class SplitKind : std::uint8_t { Training, Evaluation };

constexpr std::string_view display_name(SplitKind k) {
  return k == SplitKind::Training ? "Training" : "Evaluation";
}

constexpr std::string_view wire_name(SplitKind k) {
  return k == SplitKind::Training ? "training" : "evaluation";
}

struct SplitSpec {
  std::set<std::string> train;
  std::set<std::string> eval;

  void validate() const {
    for (const auto& id : train)
      if (eval.count(id)) fail(ErrorKind::Split, "subject '" + id + "' is in both splits");
  }

  std::optional<SplitKind> route(const std::string& subject) const {
    if (train.count(subject)) return SplitKind::Training;
    if (eval.count(subject)) return SplitKind::Evaluation;
    return std::nullopt;
  }
};

inline SplitSpec parse_split(const Json& obj) {
  SplitSpec split;
  try {
    for (const auto& id : obj.at("train")) split.train.insert(id.get<std::string>());
    for (const auto& id : obj.at("eval")) split.eval.insert(id.get<std::string>());
  } catch (const Json::exception& e) {
    fail(ErrorKind::Split, std::string("malformed split file: ") + e.what());
  }
  split.validate();
  return split;
}

inline Json to_json(const SplitSpec& split) {
  return Json{{"train", split.train}, {"eval", split.eval}};
}

inline SplitSpec load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Split, "cannot open split file " + path.string());
  try {
    return parse_split(Json::parse(in));
  } catch (const Json::exception& e) {
    fail(ErrorKind::Split, "split file " + path.string() + ": " + e.what());
  }
}

struct ManifestRow {
  std::uint64_t videos = 0;
  std::uint64_t extracted = 0;
  std::uint64_t dropped = 0;

  ManifestRow& operator+=(const ManifestRow& o) {
    videos += o.videos;
    extracted += o.extracted;
    dropped += o.dropped;
    return *this;
  }
  bool operator==(const ManifestRow&) const = default;
};

/// Per (split, scenario) counts. A video is one (subject, scenario, label)
/// recording; extracted counts frames with landmarks, dropped counts null records.
struct DatasetManifest {
  std::map<std::pair<SplitKind, Scenario>, ManifestRow> rows;

  ManifestRow totals() const {
    ManifestRow sum;
    for (const auto& [key, row] : rows) sum += row;
    return sum;
  }
  bool operator==(const DatasetManifest&) const = default;
};

inline std::string manifest_report(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << "Dataset\tCategory\tNbr. Videos\tNbr. Images Extracted\tNbr. Images not detected\n";
  for (const auto& [key, row] : manifest.rows)
    out << display_name(key.first) << '\t' << display_name(key.second) << '\t' << row.videos
        << '\t' << row.extracted << '\t' << row.dropped << '\n';
  const auto total = manifest.totals();
  out << "Total\t\t" << total.videos << '\t' << total.extracted << '\t' << total.dropped << '\n';
  return out.str();
}

inline Json to_json(const DatasetManifest& manifest) {
  Json rows = Json::array();
  for (const auto& [key, row] : manifest.rows)
    rows.push_back({{"split", wire_name(key.first)},
                    {"scenario", wire_name(key.second)},
                    {"videos", row.videos},
                    {"extracted", row.extracted},
                    {"dropped", row.dropped}});
  const auto total = manifest.totals();
  return Json{{"rows", rows},
              {"totals",
               {{"videos", total.videos}, {"extracted", total.extracted}, {"dropped", total.dropped}}}};
}

inline DatasetManifest manifest_from_json(const Json& obj) {
  DatasetManifest manifest;
  try {
    for (const auto& r : obj.at("rows")) {
      const auto split_name = r.at("split").get<std::string>();
      SplitKind split;
      if (split_name == wire_name(SplitKind::Training)) split = SplitKind::Training;
      else if (split_name == wire_name(SplitKind::Evaluation)) split = SplitKind::Evaluation;
      else fail(ErrorKind::Parse, "unknown split '" + split_name + "'");
      const auto scenario = parse_scenario(r.at("scenario").get<std::string>());
      if (!scenario) fail(ErrorKind::Parse, "unknown scenario in manifest");
      manifest.rows[{split, *scenario}] = {r.at("videos").get<std::uint64_t>(),
                                           r.at("extracted").get<std::uint64_t>(),
                                           r.at("dropped").get<std::uint64_t>()};
    }
  } catch (const Json::exception& e) {
    fail(ErrorKind::Parse, std::string("malformed manifest: ") + e.what());
  }
  return manifest;
}

// ---------------------------------------------------------------------------
// Loading

struct LoadedDataset {
  std::vector<LandmarkFrame> train;
  std::vector<LandmarkFrame> eval;
  DatasetManifest manifest;
};

namespace detail {

inline std::vector<std::filesystem::path> frame_files(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) fail(ErrorKind::Dataset, "no such file or directory: " + path.string());
  if (!fs::is_directory(path)) return {path};
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".jsonl" || ext == ".ndjson")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorKind::Dataset, "no .jsonl/.ndjson frame files in " + path.string());
  return files;
}

}  // namespace detail

/// Reads every record of a frame stream in order. Blank lines are ignored.
inline std::vector<FrameRecord> read_records(std::istream& in, const std::string& source,
                                             RecordMode mode = RecordMode::Dataset) {
  std::vector<FrameRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    records.push_back(parse_record(line, source + ":" + std::to_string(line_no), mode));
  }
  return records;
}

inline LandmarkFrame to_frame(const FrameRecord& rec) {
  if (!rec.landmarks) fail(ErrorKind::PredictionInput, "record has no landmarks");
  LandmarkFrame frame;
  frame.subject_id = rec.subject_id.value_or("");
  frame.scenario = rec.scenario.value_or(Scenario::WithGlasses);
  frame.label = rec.label.value_or(DrowsyLabel::NonSleepy);
  frame.frame_index = rec.frame_index.value_or(0);
  frame.timestamp_ms = rec.timestamp_ms;
  frame.landmarks = *rec.landmarks;
  return frame;
}

/// Loads a frame file (or every .jsonl/.ndjson file of a directory, in name
/// order), routes frames by subject and tallies the manifest. Null-landmark
/// records are counted as dropped and never returned. Evaluation-only callers
/// may pass require_train = false.
inline LoadedDataset load_dataset(const std::filesystem::path& path, const SplitSpec& split,
                                  bool require_train = true) {
  split.validate();
  LoadedDataset out;
  std::set<std::tuple<SplitKind, Scenario, std::string, DrowsyLabel>> videos;
  for (const auto& file : detail::frame_files(path)) {
    std::ifstream in(file);
    if (!in) fail(ErrorKind::Dataset, "cannot open " + file.string());
    for (const auto& rec : read_records(in, file.string())) {
      const auto kind = split.route(*rec.subject_id);
      if (!kind)
        fail(ErrorKind::Split, "subject '" + *rec.subject_id + "' in " + file.string() +
                                   " is in neither split list");
      auto& row = out.manifest.rows[{*kind, *rec.scenario}];
      if (videos.emplace(*kind, *rec.scenario, *rec.subject_id, *rec.label).second) ++row.videos;
      if (!rec.landmarks) {
        ++row.dropped;
        continue;
      }
      ++row.extracted;
      (*kind == SplitKind::Training ? out.train : out.eval).push_back(to_frame(rec));
    }
  }
  if (require_train && out.train.empty()) fail(ErrorKind::Dataset, "training split is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic landmark generator

struct SynthConfig {
  std::size_t count = 1000;
  double sleepy_fraction = 0.5;
  double noise_px = 1.5;
  std::uint64_t seed = 7;
  std::size_t subjects = 22;
};

// dlib 68-point indexing: eyes occupy 36..41 and 42..47 with corners at
// 36/39 and 42/45.
constexpr std::size_t kRightEyeBegin = 36;
constexpr std::size_t kLeftEyeBegin = 42;
constexpr double kOpenLidOffsetPx = 5.0;
constexpr double kClosedLidFraction = 0.2;

/// Neutral frontal face centred in a 640x480 image, eyes open.
inline Landmarks face_template() {
  constexpr double pi = 3.14159265358979323846;
  Landmarks p{};
  for (std::size_t k = 0; k <= 16; ++k) {  // jaw
    const double theta = pi - static_cast<double>(k) * pi / 16.0;
    p[k] = {320.0 + 100.0 * std::cos(theta), 220.0 + 130.0 * std::sin(theta)};
  }
  for (std::size_t k = 0; k < 5; ++k) {  // brows
    const double arch = 8.0 - 2.0 * std::abs(static_cast<double>(k) - 2.0);
    p[17 + k] = {245.0 + 13.0 * static_cast<double>(k), 190.0 - arch};
    p[22 + k] = {343.0 + 13.0 * static_cast<double>(k), 190.0 - arch};
  }
  for (std::size_t k = 0; k < 4; ++k) p[27 + k] = {320.0, 205.0 + 16.0 * static_cast<double>(k)};
  for (std::size_t k = 0; k < 5; ++k)  // nostrils
    p[31 + k] = {302.0 + 9.0 * static_cast<double>(k), 262.0 + (k == 2 ? 3.0 : 0.0)};
  auto eye = [&](std::size_t first, double cx) {
    const double cy = 215.0;
    const double h = kOpenLidOffsetPx;
    p[first + 0] = {cx - 15.0, cy};
    p[first + 1] = {cx - 5.0, cy - h};
    p[first + 2] = {cx + 5.0, cy - h};
    p[first + 3] = {cx + 15.0, cy};
    p[first + 4] = {cx + 5.0, cy + h};
    p[first + 5] = {cx - 5.0, cy + h};
  };
  eye(kRightEyeBegin, 275.0);
  eye(kLeftEyeBegin, 365.0);
  auto ring = [&](std::size_t first, std::size_t n, double rx, double ry) {
    for (std::size_t k = 0; k < n; ++k) {
      const double theta = pi + 2.0 * pi * static_cast<double>(k) / static_cast<double>(n);
      p[first + k] = {320.0 + rx * std::cos(theta), 305.0 + ry * std::sin(theta)};
    }
  };
  ring(48, 12, 35.0, 12.0);
  ring(60, 8, 22.0, 5.0);
  return p;
}

/// Pulls the 12 eyelid points of both eyes toward the line through each eye's corners.
inline void close_eyes(Landmarks& p, double keep_fraction) {
  for (std::size_t first : {kRightEyeBegin, kLeftEyeBegin}) {
    const Point a = p[first];
    const Point b = p[first + 3];
    for (std::size_t k = first; k < first + 6; ++k) {
      const double t = ((p[k].x - a.x) * (b.x - a.x) + (p[k].y - a.y) * (b.y - a.y)) /
                       ((b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y));
      const Point foot{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
      p[k] = {foot.x + keep_fraction * (p[k].x - foot.x), foot.y + keep_fraction * (p[k].y - foot.y)};
    }
  }
}

/// Deterministic in the seed. Subjects occupy contiguous frame blocks, each
/// block cycling through the five scenarios; exactly round(count * fraction)
/// frames are Sleepy. Coordinates are rounded to 1/1000 px.
inline std::vector<LandmarkFrame> synth_generate(const SynthConfig& config) {
  if (config.count == 0) fail(ErrorKind::Config, "synthetic frame count must be positive");
  if (!(config.sleepy_fraction >= 0.0 && config.sleepy_fraction <= 1.0))
    fail(ErrorKind::Config, "sleepy fraction must lie in [0, 1]");
  if (!(config.noise_px >= 0.0) || !std::isfinite(config.noise_px))
    fail(ErrorKind::Config, "noise level must be a nonnegative number");
  if (config.subjects == 0 || config.subjects > 999)
    fail(ErrorKind::Config, "subject count must lie in [1, 999]");

  auto rng = make_rng(config.seed, Stream::Synth);
  const auto sleepy_count = static_cast<std::size_t>(
      std::llround(static_cast<double>(config.count) * config.sleepy_fraction));
  std::vector<bool> sleepy(config.count, false);
  std::fill_n(sleepy.begin(), sleepy_count, true);
  for (std::size_t i = config.count; i > 1; --i) {  // Fisher-Yates on our own uniform draws
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(sleepy[i - 1], sleepy[std::min(j, i - 1)]);
  }

  const Landmarks open = face_template();
  Landmarks closed = open;
  close_eyes(closed, kClosedLidFraction);
  std::normal_distribution<double> jitter(0.0, 1.0);

  std::vector<LandmarkFrame> frames(config.count);
  for (std::size_t i = 0; i < config.count; ++i) {
    auto& f = frames[i];
    const std::size_t subject = i * config.subjects / config.count;
    char id[24];
    std::snprintf(id, sizeof id, "s%02zu", subject + 1);
    f.subject_id = id;
    f.scenario = kScenarios[(i * config.subjects * kScenarios.size() / config.count) % kScenarios.size()];
    f.label = sleepy[i] ? DrowsyLabel::Sleepy : DrowsyLabel::NonSleepy;
    f.frame_index = i;
    f.timestamp_ms = i * 1000 / 30;
    f.landmarks = sleepy[i] ? closed : open;
    for (auto& p : f.landmarks) {
      const double dx = jitter(rng) * config.noise_px;
      const double dy = jitter(rng) * config.noise_px;
      p.x = std::round((p.x + dx) * 1000.0) / 1000.0;
      p.y = std::round((p.y + dy) * 1000.0) / 1000.0;
    }
  }
  return frames;
}

/// First `train_subjects` synthetic subjects train, the rest evaluate.
inline SplitSpec synth_split(std::size_t subjects = 22, std::size_t train_subjects = 18) {
  SplitSpec split;
  for (std::size_t s = 0; s < subjects; ++s) {
    char id[24];
    std::snprintf(id, sizeof id, "s%02zu", s + 1);
    (s < train_subjects ? split.train : split.eval).insert(id);
  }
  return split;
}

}  // namespace drowsy
