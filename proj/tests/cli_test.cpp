#include <chrono>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <gtest/gtest.h>

#include "drowsy/model_io.hpp"
#include "process.hpp"
#include "test_support.hpp"

namespace drowsy {
namespace {

const std::string kCli = DROWSY_CLI_PATH;

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

class Cli : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    const auto r = run_command(kCli + " synth --count 1000 --seed 7 --out " + quoted(data()) +
                               " --split-out " + quoted(split()));
    ASSERT_EQ(r.exit_code, 0);
    const auto t = run_command(kCli + " train --data " + quoted(data()) + " --split " + quoted(split()) +
                               " --out " + quoted(model()) + " 2>/dev/null");
    train_output_ = new std::string(t.out);
    ASSERT_EQ(t.exit_code, 0) << t.out;
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete train_output_;
  }
  static std::string path(const std::string& name) { return (*dir_ / name).string(); }
  static std::string data() { return path("frames.jsonl"); }
  static std::string split() { return path("split.json"); }
  static std::string model() { return path("model.dmlp"); }

  static TempDir* dir_;
  static std::string* train_output_;
};

TempDir* Cli::dir_ = nullptr;
std::string* Cli::train_output_ = nullptr;

TEST_F(Cli, TrainWithDefaultsStaysInBudget) {
  const auto lines = split_lines(*train_output_);
  ASSERT_EQ(lines.size(), 51U);  // 50 epochs + summary
  const auto first = Json::parse(lines.front());
  EXPECT_EQ(first["epoch"], 1);
  const auto summary = Json::parse(lines.back());
  EXPECT_EQ(summary["parameters"], 14952);
  EXPECT_LE(summary["bytes"].get<std::size_t>(), 102400U);
  EXPECT_EQ(summary["bytes"].get<std::size_t>(), std::filesystem::file_size(model()));
  EXPECT_EQ(summary["train_frames"].get<std::size_t>(), 1000U * 18 / 22 + 1);
}

TEST_F(Cli, EvalTableHasSixRows) {
  const auto r = run_command(kCli + " eval --model " + quoted(model()) + " --data " + quoted(data()) +
                             " --split " + quoted(split()));
  ASSERT_EQ(r.exit_code, 0);
  const auto lines = split_lines(r.out);
  ASSERT_EQ(lines.size(), 7U) << r.out;
  EXPECT_EQ(lines[1].rfind("With glasses\t", 0), 0U);
  EXPECT_EQ(lines[6].rfind("All\t", 0), 0U);
}

TEST_F(Cli, EvalWritesManifest) {
  const auto r = run_command(kCli + " eval --format json --model " + quoted(model()) + " --data " +
                             quoted(data()) + " --split " + quoted(split()) + " --manifest-json " +
                             quoted(path("manifest.json")) + " --manifest-tsv " + quoted(path("manifest.tsv")));
  ASSERT_EQ(r.exit_code, 0);
  std::ifstream in(path("manifest.json"));
  const auto manifest = manifest_from_json(Json::parse(in));
  EXPECT_EQ(manifest.totals().extracted, 1000U);
  EXPECT_EQ(manifest.totals().dropped, 0U);
  const auto report = Json::parse(r.out);
  EXPECT_EQ(report["scenarios"].size(), 5U);
  EXPECT_EQ(report["all"]["frames"].get<std::size_t>(), 1000U - (1000U * 18 / 22 + 1));
}

TEST_F(Cli, InspectShowsBudget) {
  const auto r = run_command(kCli + " inspect " + quoted(model()));
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("parameters: 14952"), std::string::npos);
  EXPECT_NE(r.out.find("budget: 102400 bytes"), std::string::npos);
}

TEST_F(Cli, StreamEmitsOneLinePerRecord) {
  const auto frames = split_lines(run_command("head -n 2 " + quoted(data())).out);
  std::ofstream(path("three.jsonl")) << frames[0] << '\n'
                                     << R"({"t_ms":40,"landmarks":null})" << '\n'
                                     << frames[1] << '\n';
  const auto r = run_command(kCli + " stream --model " + quoted(model()) + " < " + quoted(path("three.jsonl")) +
                             " 2>/dev/null");
  ASSERT_EQ(r.exit_code, 0);
  const auto lines = split_lines(r.out);
  ASSERT_EQ(lines.size(), 3U);
  EXPECT_EQ(Json::parse(lines[1])["label"], "skipped");
}

TEST_F(Cli, PredictOnNullRecordIsDataError) {
  std::ofstream(path("null.jsonl")) << R"({"t_ms":1,"landmarks":null})" << '\n';
  const auto r = run_command(kCli + " predict --model " + quoted(model()) + " --input " +
                             quoted(path("null.jsonl")) + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 2);
}

TEST_F(Cli, PredictPrintsLabels) {
  const auto r = run_command("head -n 5 " + quoted(data()) + " | " + kCli + " predict --model " + quoted(model()));
  ASSERT_EQ(r.exit_code, 0);
  const auto lines = split_lines(r.out);
  ASSERT_EQ(lines.size(), 5U);
  for (const auto& l : lines) {
    const auto j = Json::parse(l);
    EXPECT_TRUE(j["label"] == "sleepy" || j["label"] == "notsleepy");
  }
}

TEST_F(Cli, CorruptModelIsModelError) {
  auto bytes = read_file_bytes(model());
  bytes[500] ^= 0xFF;
  std::ofstream(path("bad.dmlp"), std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  const auto r = run_command(kCli + " inspect " + quoted(path("bad.dmlp")) + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 3);
}

TEST_F(Cli, OversizedTopologyIsBudgetError) {
  const auto r = run_command(kCli + " train --hidden 200,10,10,10 --data " + quoted(data()) + " --split " +
                             quoted(split()) + " --out " + quoted(path("big.dmlp")) + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 4);
  EXPECT_FALSE(std::filesystem::exists(path("big.dmlp")));
}

TEST_F(Cli, MissingDataFlagIsUsageError) {
  const auto r = run_command(kCli + " train --split x --out y 2>/dev/null");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_EQ(run_command(kCli + " 2>/dev/null").exit_code, 1);
  EXPECT_EQ(run_command(kCli + " train --epochs 0 --data " + quoted(data()) + " --split " + quoted(split()) +
                        " --out " + quoted(path("z.dmlp")) + " 2>/dev/null")
                .exit_code,
            1);
}

TEST_F(Cli, MissingDatasetIsDataError) {
  const auto r = run_command(kCli + " train --data /nonexistent --split " + quoted(split()) + " --out " +
                             quoted(path("n.dmlp")) + " 2>/dev/null");
  EXPECT_EQ(r.exit_code, 2);
}

TEST_F(Cli, SynthIsReproducible) {
  const auto a = run_command(kCli + " synth --count 200 --seed 7");
  const auto b = run_command(kCli + " synth --count 200 --seed 7");
  ASSERT_EQ(a.exit_code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(split_lines(a.out).size(), 200U);
}

TEST_F(Cli, HelpShowsDefaults) {
  const auto r = run_command(kCli + " train --help");
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("--epochs"), std::string::npos);
  EXPECT_NE(r.out.find("50"), std::string::npos);
  EXPECT_NE(r.out.find("0.01"), std::string::npos);
  EXPECT_NE(run_command(kCli + " --version").out.find("DMLP v1"), std::string::npos);
}

TEST_F(Cli, CreationTimeComesFromSourceDateEpoch) {
  EXPECT_NE(run_command(kCli + " inspect " + quoted(model())).out.find("created: -"), std::string::npos);
  const auto r = run_command("SOURCE_DATE_EPOCH=86400 " + kCli + " train --epochs 1 --data " + quoted(data()) +
                             " --split " + quoted(split()) + " --out " + quoted(path("dated.dmlp")) +
                             " > /dev/null 2>&1");
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(run_command(kCli + " inspect " + quoted(path("dated.dmlp"))).out.find("created: 1970-01-02T00:00:00Z"),
            std::string::npos);
}

TEST_F(Cli, StreamOverTcp) {
  const int port = 20000 + static_cast<int>(::getpid() % 20000);
  CommandResult server;
  std::thread runner([&] {
    server = run_command(kCli + " stream --once --listen " + std::to_string(port) + " --model " +
                         quoted(model()) + " 2>/dev/null");
  });
  int fd = -1;
  for (int attempt = 0; attempt < 100 && fd < 0; ++attempt) {
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd);
      fd = -1;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }
  ASSERT_GE(fd, 0);
  const auto records = run_command("head -n 4 " + quoted(data())).out;
  ASSERT_EQ(::send(fd, records.data(), records.size(), 0), static_cast<ssize_t>(records.size()));
  ::shutdown(fd, SHUT_WR);
  std::string reply;
  char buf[4096];
  for (ssize_t n; (n = ::recv(fd, buf, sizeof buf, 0)) > 0;) reply.append(buf, static_cast<std::size_t>(n));
  ::close(fd);
  runner.join();
  EXPECT_EQ(server.exit_code, 0);
  const auto lines = split_lines(reply);
  ASSERT_EQ(lines.size(), 4U) << reply;
  EXPECT_TRUE(Json::parse(lines[0]).contains("alert"));
}

}  // namespace
}  // namespace drowsy
