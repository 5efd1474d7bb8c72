#include <cstdint>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "drowsy/model_io.hpp"
#include "test_support.hpp"

namespace drowsy {
namespace {

// Reflected polynomial 0xEDB88320, one bit at a time.
std::uint32_t bitwise_crc32(const std::uint8_t* data, std::size_t n) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) {
    crc ^= data[i];
    for (int b = 0; b < 8; ++b) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

std::uint32_t read_le32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | static_cast<std::uint32_t>(b[at + 1]) << 8 |
         static_cast<std::uint32_t>(b[at + 2]) << 16 | static_cast<std::uint32_t>(b[at + 3]) << 24;
}

MlpModel random_model(std::uint64_t seed, std::vector<std::size_t> hidden = canonical_hidden_widths()) {
  Rng rng(seed);
  MlpModel m;
  m.topology = random_topology(rng, hidden, 136);
  for (auto& layer : m.topology.layers) {
    for (double& w : layer.weights) w = static_cast<float>(w);
    for (double& b : layer.bias) b = static_cast<float>(b);
  }
  for (std::size_t i = 0; i < 136; ++i) {
    m.scaler.min.push_back(static_cast<float>(uniform(rng, 0.0, 300.0)));
    m.scaler.max.push_back(static_cast<float>(m.scaler.min.back() + uniform(rng, 1.0, 300.0)));
  }
  m.metadata.config_digest = "0123456789abcdef";
  m.metadata.config = to_json(TrainConfig{});
  return m;
}

void expect_same_model(const MlpModel& a, const MlpModel& b) {
  ASSERT_EQ(a.topology.layers.size(), b.topology.layers.size());
  EXPECT_EQ(a.topology.input_dim, b.topology.input_dim);
  for (std::size_t l = 0; l < a.topology.layers.size(); ++l) {
    const auto& x = a.topology.layers[l];
    const auto& y = b.topology.layers[l];
    EXPECT_EQ(x.in_dim, y.in_dim);
    EXPECT_EQ(x.out_dim, y.out_dim);
    EXPECT_EQ(x.activation, y.activation);
    EXPECT_EQ(x.dropout_rate, y.dropout_rate);
    EXPECT_EQ(x.weights, y.weights);
    EXPECT_EQ(x.bias, y.bias);
  }
  EXPECT_EQ(a.scaler.min, b.scaler.min);
  EXPECT_EQ(a.scaler.max, b.scaler.max);
  EXPECT_EQ(a.metadata.config_digest, b.metadata.config_digest);
  EXPECT_EQ(a.metadata.config, b.metadata.config);
  EXPECT_EQ(a.metadata.created, b.metadata.created);
}

TEST(ModelFile, SizeMatchesByteAccounting) {
  const auto model = random_model(1);
  // header 16, 5 descriptors of 8, scaler 2*136 floats, 14952 floats, CRC 4
  const std::size_t fixed = 16 + 5 * 8 + 2 * 136 * 4 + 14952 * 4 + 4;
  EXPECT_EQ(fixed, 60956U);
  const auto bytes = encode(model);
  const std::size_t trailer = read_le32(bytes, fixed);
  EXPECT_EQ(bytes.size(), fixed + 4 + trailer);
  EXPECT_EQ(encoded_size(model), bytes.size());
  EXPECT_LT(bytes.size(), 62000U);
  EXPECT_LE(bytes.size(), kModelSizeBudget);
}

TEST(ModelFile, HeaderFields) {
  const auto bytes = encode(random_model(2));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DMLP");
  EXPECT_EQ(bytes[4] | bytes[5] << 8, 1);
  EXPECT_EQ(read_le32(bytes, 8), 136U);
  EXPECT_EQ(read_le32(bytes, 12), 5U);
  EXPECT_EQ(read_le32(bytes, 16), 100U);
  EXPECT_EQ(bytes[20], 0);            // rectifier
  EXPECT_EQ(bytes[21] | bytes[22] << 8, 200);  // dropout 0.2
  EXPECT_EQ(read_le32(bytes, 16 + 4 * 8), 2U);
  EXPECT_EQ(bytes[16 + 4 * 8 + 4], 1);  // softmax
}

TEST(ModelFile, ChecksumMatchesIndependentCrc) {
  const auto bytes = encode(random_model(3));
  EXPECT_EQ(read_le32(bytes, 60952), bitwise_crc32(bytes.data(), 60952));
  const std::uint8_t check[] = {'1', '2', '3', '4', '5', '6', '7', '8', '9'};
  EXPECT_EQ(bitwise_crc32(check, 9), 0xCBF43926u);
  EXPECT_EQ(detail::crc32_ieee(check), 0xCBF43926u);
}

TEST(ModelFile, RoundTripIsBitExact) {
  TempDir dir;
  auto model = random_model(4);
  model.metadata.created = "2026-01-01T00:00:00Z";
  const auto written = save(model, dir / "m.dmlp");
  EXPECT_EQ(written, std::filesystem::file_size(dir / "m.dmlp"));
  const auto loaded = load(dir / "m.dmlp");
  expect_same_model(model, loaded);
  save(loaded, dir / "again.dmlp");
  EXPECT_EQ(read_file_bytes(dir / "m.dmlp"), read_file_bytes(dir / "again.dmlp"));

  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> x(136);
    for (double& v : x) v = uniform(rng, 0.0, 640.0);
    const auto a = predict_features(model, x);
    const auto b = predict_features(loaded, x);
    EXPECT_EQ(a.p_sleepy, b.p_sleepy);
    EXPECT_EQ(a.label, b.label);
  }
}

TEST(ModelFile, TrainedModelRoundTrips) {
  TempDir dir;
  TrainConfig c;
  c.epochs = 2;
  const auto frames = synth_generate({200, 0.5, 1.5, 6});
  const auto model = train(frames, c).model;
  save(model, dir / "t.dmlp");
  const auto loaded = load(dir / "t.dmlp");
  expect_same_model(model, loaded);
  for (const auto& f : frames) EXPECT_EQ(predict(model, f).p_sleepy, predict(loaded, f).p_sleepy);
}

TEST(ModelFile, TruncationIsCorruption) {
  const auto bytes = encode(random_model(7));
  for (std::size_t len : {std::size_t{0}, std::size_t{10}, std::size_t{20}, std::size_t{100},
                          std::size_t{60955}, std::size_t{60960}, bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(len));
    expect_error(ErrorKind::Corruption, [&] { decode(cut); });
  }
}

TEST(ModelFile, HeaderErrorsAreFormat) {
  auto bytes = encode(random_model(8));
  auto bad = bytes;
  bad[0] = 'X';
  expect_error(ErrorKind::Format, [&] { decode(bad); });
  bad = bytes;
  bad[4] = 2;
  expect_error(ErrorKind::Format, [&] { decode(bad); });
  bad = bytes;
  bad[6] = 1;
  expect_error(ErrorKind::Format, [&] { decode(bad); });
}

TEST(ModelFile, PayloadFlipIsCorruption) {
  const auto bytes = encode(random_model(9));
  for (std::size_t at : {std::size_t{100}, std::size_t{5000}, std::size_t{60000}, std::size_t{60953}}) {
    auto bad = bytes;
    bad[at] ^= 0x10;
    expect_error(ErrorKind::Corruption, [&] { decode(bad); });
  }
}

TEST(ModelFile, OversizedModelIsBudgetError) {
  TempDir dir;
  auto model = random_model(10, {200, 10, 10, 10});
  EXPECT_GT(encoded_size(model), kModelSizeBudget);
  try {
    save(model, dir / "big.dmlp");
    FAIL() << "expected a budget error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Budget);
    EXPECT_NE(std::string(e.what()).find(std::to_string(encoded_size(model))), std::string::npos);
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "big.dmlp"));
}

TEST(ModelFile, MissingFileIsStorageError) {
  expect_error(ErrorKind::Storage, [] { load("/nonexistent/dir/m.dmlp"); });
}

TEST(ModelFile, InspectReport) {
  TempDir dir;
  const auto model = random_model(11);
  const auto size = save(model, dir / "m.dmlp");
  const auto text = inspect(dir / "m.dmlp");
  EXPECT_NE(text.find("format: DMLP v1"), std::string::npos);
  EXPECT_NE(text.find("0: 136 -> 100 rectifier, dropout 0.2"), std::string::npos) << text;
  EXPECT_NE(text.find("4: 10 -> 2 softmax, dropout 0"), std::string::npos) << text;
  EXPECT_NE(text.find("parameters: 14952"), std::string::npos);
  EXPECT_NE(text.find("size: " + std::to_string(size) + " bytes"), std::string::npos);
  EXPECT_NE(text.find("headroom: " + std::to_string(102400 - size) + " bytes"), std::string::npos);
  EXPECT_NE(text.find("labels: NonSleepy=0, Sleepy=1"), std::string::npos);
}

}  // namespace
}  // namespace drowsy
