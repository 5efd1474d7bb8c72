#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <unistd.h>
#include <zlib.h>

#include "drowsy/error.hpp"
#include "drowsy/training.hpp"

// .dmlp layout, all integers and floats little-endian:
//
//   "DMLP" | u16 version | u16 flags | u32 input_dim | u32 layer_count
//   per layer:  u32 out_dim | u8 activation (0 rectifier, 1 softmax) | u16 dropout_milli | u8 0
//   scaler:     input_dim x f32 minimum, then input_dim x f32 maximum
//   per layer:  out_dim x in_dim f32 weights (row-major), then out_dim f32 biases
//   u32 CRC-32 (IEEE) of every byte above
//   u32 trailer length | trailer bytes (UTF-8 JSON metadata, not checksummed)

namespace drowsy {

constexpr std::uint16_t kFormatVersion = 1;
constexpr std::size_t kModelSizeBudget = 102400;
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kLayerDescriptorBytes = 8;

namespace detail {

class ByteWriter {
public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(take(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  std::uint64_t take(int n) {
    if (remaining() < static_cast<std::size_t>(n))
      fail(ErrorKind::Corruption, "model file is truncated at byte " + std::to_string(pos_));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_ieee(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

inline std::string trailer_text(const ModelMetadata& meta) {
  Json trailer{{"labels", {"notsleepy", "sleepy"}},
               {"created", meta.created},
               {"config_digest", meta.config_digest},
               {"config", meta.config}};
  return trailer.dump();
}

}  // namespace detail

/// Exact on-disk size of `model`: fixed sections plus the metadata trailer.
inline std::size_t encoded_size(const MlpModel& model) {
  return kHeaderBytes + kLayerDescriptorBytes * model.topology.layers.size() +
         2 * 4 * model.topology.input_dim + 4 * model.topology.parameter_count() + 4 + 4 +
         detail::trailer_text(model.metadata).size();
}

inline std::vector<std::uint8_t> encode(const MlpModel& model) {
  model.validate();
  detail::ByteWriter w;
  w.raw("DMLP");
  w.u16(kFormatVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(model.topology.input_dim));
  w.u32(static_cast<std::uint32_t>(model.topology.layers.size()));
  for (const auto& layer : model.topology.layers) {
    w.u32(static_cast<std::uint32_t>(layer.out_dim));
    w.u8(layer.activation == ActivationKind::Softmax ? 1 : 0);
    w.u16(static_cast<std::uint16_t>(std::lround(layer.dropout_rate * 1000.0)));
    w.u8(0);
  }
  for (double v : model.scaler.min) w.f32(v);
  for (double v : model.scaler.max) w.f32(v);
  for (const auto& layer : model.topology.layers) {
    for (double v : layer.weights) w.f32(v);
    for (double v : layer.bias) w.f32(v);
  }
  w.u32(detail::crc32_ieee(w.bytes()));
  const auto trailer = detail::trailer_text(model.metadata);
  w.u32(static_cast<std::uint32_t>(trailer.size()));
  w.raw(trailer);
  return std::move(w.bytes());
}

inline MlpModel decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) fail(ErrorKind::Corruption, "model file is truncated");
  if (std::memcmp(bytes.data(), "DMLP", 4) != 0) fail(ErrorKind::Format, "bad magic, not a .dmlp file");
  detail::ByteReader r(bytes.subspan(4));
  const auto version = r.u16();
  if (version != kFormatVersion)
    fail(ErrorKind::Format, "unsupported format version " + std::to_string(version));
  if (r.u16() != 0) fail(ErrorKind::Format, "unknown flags set");
  MlpModel model;
  model.topology.input_dim = r.u32();
  const std::size_t layer_count = r.u32();
  if (model.topology.input_dim > bytes.size())
    fail(ErrorKind::Corruption, "input width exceeds the file size");
  if (layer_count * kLayerDescriptorBytes > r.remaining())
    fail(ErrorKind::Corruption, "model file is truncated in the layer table");

  // Size the checksummed region from the table before touching payload bytes.
  std::uint64_t payload = 2ULL * 4 * model.topology.input_dim;
  std::uint64_t in = model.topology.input_dim;
  std::vector<std::pair<std::uint8_t, std::uint8_t>> descriptor_codes;
  for (std::size_t i = 0; i < layer_count; ++i) {
    DenseLayer layer;
    layer.in_dim = in;
    layer.out_dim = r.u32();
    if (layer.out_dim > bytes.size()) fail(ErrorKind::Corruption, "layer width exceeds the file size");
    const auto act = r.u8();
    layer.dropout_rate = static_cast<double>(r.u16()) / 1000.0;
    descriptor_codes.push_back({act, r.u8()});
    layer.activation = act == 1 ? ActivationKind::Softmax : ActivationKind::Rectifier;
    payload += 4ULL * (in * layer.out_dim + layer.out_dim);
    if (payload > bytes.size()) fail(ErrorKind::Corruption, "model file is truncated");
    in = layer.out_dim;
    model.topology.layers.push_back(std::move(layer));
  }
  const std::size_t checked_end = 4 + r.offset() + payload;
  if (checked_end + 8 > bytes.size()) fail(ErrorKind::Corruption, "model file is truncated");
  {
    detail::ByteReader tail(bytes.subspan(checked_end));
    if (tail.u32() != detail::crc32_ieee(bytes.first(checked_end)))
      fail(ErrorKind::Corruption, "checksum mismatch");
  }
  for (const auto& [act, reserved] : descriptor_codes) {
    if (act > 1) fail(ErrorKind::Structure, "unknown activation code " + std::to_string(act));
    if (reserved != 0) fail(ErrorKind::Structure, "reserved descriptor byte is nonzero");
  }

  const auto dim = model.topology.input_dim;
  model.scaler.min.resize(dim);
  model.scaler.max.resize(dim);
  for (auto& v : model.scaler.min) v = r.f32();
  for (auto& v : model.scaler.max) v = r.f32();
  for (auto& layer : model.topology.layers) {
    layer.weights.resize(layer.in_dim * layer.out_dim);
    layer.bias.resize(layer.out_dim);
    for (auto& v : layer.weights) v = r.f32();
    for (auto& v : layer.bias) v = r.f32();
  }
  r.u32();  // checksum, verified above
  const std::size_t trailer_len = r.u32();
  if (trailer_len != r.remaining())
    fail(ErrorKind::Corruption, "metadata trailer length does not match the file size");
  const auto* text = reinterpret_cast<const char*>(bytes.data()) + 4 + r.offset();
  try {
    const auto trailer = Json::parse(text, text + trailer_len);
    if (trailer.at("labels") != Json{"notsleepy", "sleepy"})
      fail(ErrorKind::Structure, "unexpected label ordering in metadata");
    model.metadata.created = trailer.at("created").get<std::string>();
    model.metadata.config_digest = trailer.at("config_digest").get<std::string>();
    model.metadata.config = trailer.at("config");
  } catch (const Json::exception& e) {
    fail(ErrorKind::Corruption, std::string("unreadable metadata trailer: ") + e.what());
  }
  try {
    model.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Structure, e.what());
  }
  return model;
}

/// Writes atomically (temp file + rename). Refuses models over the size budget.
inline std::size_t save(const MlpModel& model, const std::filesystem::path& path) {
  const auto bytes = encode(model);
  if (bytes.size() > kModelSizeBudget)
    fail(ErrorKind::Budget, "encoded model is " + std::to_string(bytes.size()) +
                                " bytes, over the " + std::to_string(kModelSizeBudget) +
                                "-byte budget");
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      fail(ErrorKind::Storage, "cannot write " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorKind::Storage, "cannot move model into place at " + path.string());
  }
  return bytes.size();
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Storage, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline MlpModel load(const std::filesystem::path& path) { return decode(read_file_bytes(path)); }

constexpr std::string_view activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Rectifier: return "rectifier";
    case ActivationKind::Softmax: return "softmax";
    case ActivationKind::Identity: return "identity";
  }
  return "";
}

inline std::string inspect(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto model = decode(bytes);
  const auto& topo = model.topology;
  std::ostringstream out;
  out << "file: " << path.string() << '\n';
  out << "format: DMLP v" << kFormatVersion << '\n';
  out << "input: " << topo.input_dim << '\n';
  out << "layers: " << topo.layers.size() << '\n';
  for (std::size_t i = 0; i < topo.layers.size(); ++i) {
    const auto& l = topo.layers[i];
    out << "  " << i << ": " << l.in_dim << " -> " << l.out_dim << " " << activation_name(l.activation)
        << ", dropout " << l.dropout_rate << '\n';
  }
  out << "parameters: " << topo.parameter_count() << '\n';
  out << "size: " << bytes.size() << " bytes\n";
  out << "budget: " << kModelSizeBudget << " bytes\n";
  out << "headroom: "
      << static_cast<long long>(kModelSizeBudget) - static_cast<long long>(bytes.size())
      << " bytes\n";
  out << "labels: NonSleepy=0, Sleepy=1\n";
  out << "config digest: "
      << (model.metadata.config_digest.empty() ? "-" : model.metadata.config_digest) << '\n';
  out << "created: " << (model.metadata.created.empty() ? "-" : model.metadata.created) << '\n';
  return out.str();
}

}  // namespace drowsy
