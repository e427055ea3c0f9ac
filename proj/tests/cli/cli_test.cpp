// Drives the keyquorum binary as separate processes: ceremony files, node
// processes over TCP, requests and the offline checks.

#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <thread>

#include <json.hpp>

#include "oracle/oracles.hpp"

#ifndef KEYQUORUM_CLI
#error "KEYQUORUM_CLI must name the keyquorum binary"
#endif

namespace {

namespace fs = std::filesystem;
using Bytes = std::vector<std::uint8_t>;
using nlohmann::json;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
}

json load(const fs::path& p) { return json::parse(slurp(p)); }
void save(const fs::path& p, const json& j) { spit(p, j.dump(2)); }

Bytes unhex(const std::string& h) {
  Bytes out;
  for (std::size_t i = 0; i + 1 < h.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoi(h.substr(i, 2), nullptr, 16)));
  }
  return out;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

pid_t spawn(const std::vector<std::string>& args, const fs::path& out, const fs::path& err) {
  const pid_t pid = ::fork();
  if (pid == 0) {
    const int o = ::open(out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    const int e = ::open(err.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    ::dup2(o, 1);
    ::dup2(e, 2);
    std::vector<char*> argv;
    std::string exe = KEYQUORUM_CLI;
    argv.push_back(exe.data());
    std::vector<std::string> copy = args;
    for (auto& a : copy) argv.push_back(a.data());
    argv.push_back(nullptr);
    ::execv(exe.c_str(), argv.data());
    ::_exit(127);
  }
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

struct CmdResult {
  int code;
  std::string out;
  std::string err;
};

class Workspace {
 public:
  Workspace() {
    std::random_device rd;
    root_ = fs::temp_directory_path() / ("kq-cli-" + std::to_string(::getpid()) + "-" + std::to_string(rd()));
    fs::create_directories(root_);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(root_, ec);
  }
  const fs::path& root() const { return root_; }

  CmdResult run(const std::vector<std::string>& args) {
    const auto n = std::to_string(counter_++);
    const fs::path out = root_ / ("run" + n + ".out"), err = root_ / ("run" + n + ".err");
    const int code = wait_exit(spawn(args, out, err));
    CmdResult r{code, slurp(out), slurp(err)};
    outputs_ += r.out + r.err;
    return r;
  }

  /// Everything any command printed so far.
  const std::string& outputs() const { return outputs_; }

 private:
  fs::path root_;
  int counter_ = 0;
  std::string outputs_;
};

bool port_free(int port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_port = htons(static_cast<std::uint16_t>(port));
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  const bool ok = ::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0;
  ::close(fd);
  return ok;
}

bool port_open(int port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_port = htons(static_cast<std::uint16_t>(port));
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  const bool ok = ::connect(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0;
  ::close(fd);
  return ok;
}

int pick_base_port(int count) {
  std::mt19937 gen(static_cast<unsigned>(::getpid()) ^ std::random_device{}());
  std::uniform_int_distribution<int> dist(20000, 60000);
  for (int attempt = 0; attempt < 200; ++attempt) {
    const int base = dist(gen);
    bool ok = true;
    for (int i = 0; i < count && ok; ++i) ok = port_free(base + i);
    if (ok) return base;
  }
  throw std::runtime_error("no free port range");
}

/// Node processes for one ceremony directory; stopped with SIGTERM on scope exit.
class Cluster {
 public:
  Cluster(fs::path dir, int base_port) : dir_(std::move(dir)), base_port_(base_port) {}
  ~Cluster() { stop(); }

  void start(const std::string& node, const std::string& config_file = "") {
    const fs::path cfg = dir_ / (config_file.empty() ? "node-" + node + ".json" : config_file);
    pids_.push_back(spawn({"node", "--config", cfg.string()}, dir_ / (node + ".out"), dir_ / (node + ".log")));
    int port = base_port_;
    if (node == "custodian") port += 1;
    if (node.rfind("party-", 0) == 0) port += 1 + std::stoi(node.substr(6));
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
    while (!port_open(port) && std::chrono::steady_clock::now() < deadline) {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    ASSERT_TRUE(port_open(port)) << node << " never listened on " << port;
  }

  void stop() {
    for (pid_t p : pids_) ::kill(p, SIGTERM);
    for (pid_t p : pids_) wait_exit(p);
    pids_.clear();
  }

  std::string log(const std::string& node) const { return slurp(dir_ / (node + ".log")); }

 private:
  fs::path dir_;
  int base_port_;
  std::vector<pid_t> pids_;
};

bool contains_key(const std::string& hay, const Bytes& key) {
  const std::string raw(key.begin(), key.end());
  return hay.find(raw) != std::string::npos || hay.find(oracle::hex(key.data(), key.size())) != std::string::npos;
}

constexpr std::uint64_t kSeed = 4242;

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ws_ = new Workspace();
    base_port_ = pick_base_port(5);
    const auto r = ws_->run({"ceremony", "--k", "2", "--n", "3", "--out-dir", dir().string(), "--seed",
                             std::to_string(kSeed), "--base-port", std::to_string(base_port_),
                             "--session-timeout-ms", "1500"});
    ceremony_ = new CmdResult(r);
  }
  static void TearDownTestSuite() {
    delete ceremony_;
    delete ws_;
  }

  static fs::path dir() { return ws_->root() / "ceremony"; }
  static Bytes master() { return oracle::drbg_prefix(kSeed, 32); }

  static Workspace* ws_;
  static CmdResult* ceremony_;
  static int base_port_;
};

Workspace* CliTest::ws_ = nullptr;
CmdResult* CliTest::ceremony_ = nullptr;
int CliTest::base_port_ = 0;

TEST_F(CliTest, CeremonyWritesArtifacts) {
  ASSERT_EQ(ceremony_->code, 0) << ceremony_->err;
  int shares = 0;
  for (const auto& e : fs::directory_iterator(dir())) {
    if (std::regex_match(e.path().filename().string(), std::regex(R"(share-\d+\.json)"))) ++shares;
  }
  EXPECT_EQ(shares, 3);
  for (const char* f : {"sealed.json", "commitments.json", "credential.json", "topology.json", "requester.json",
                        "node-facade.json", "node-custodian.json", "node-party-1.json"}) {
    EXPECT_TRUE(fs::exists(dir() / f)) << f;
  }
  EXPECT_NE(slurp(dir() / "share-1.json"), slurp(dir() / "share-2.json"));
  EXPECT_NE(slurp(dir() / "share-2.json"), slurp(dir() / "share-3.json"));
  // KCV: 24 bits, lowercase hex, newline-terminated.
  EXPECT_EQ(ceremony_->out.size(), 7u);
  EXPECT_EQ(ceremony_->out.back(), '\n');
  for (char ch : trim(ceremony_->out)) EXPECT_TRUE(std::isdigit(ch) || (ch >= 'a' && ch <= 'f')) << ceremony_->out;
}

TEST_F(CliTest, NoFileContainsMasterKey) {
  ASSERT_EQ(ceremony_->code, 0);
  for (const auto& e : fs::directory_iterator(dir())) {
    EXPECT_FALSE(contains_key(slurp(e.path()), master())) << e.path();
  }
}

TEST_F(CliTest, KcvCommandMatchesCeremony) {
  auto r = ws_->run({"kcv", "--sealed", (dir() / "sealed.json").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, ceremony_->out);
}

TEST_F(CliTest, SeedMakesCeremonyReproducible) {
  const auto again = ws_->root() / "again";
  auto r = ws_->run({"ceremony", "--k", "2", "--n", "3", "--out-dir", again.string(), "--seed",
                     std::to_string(kSeed), "--base-port", std::to_string(base_port_), "--session-timeout-ms",
                     "1500"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"sealed.json", "share-1.json", "share-3.json", "commitments.json", "node-party-2.json"}) {
    EXPECT_EQ(slurp(dir() / f), slurp(again / f)) << f;
  }
}

TEST_F(CliTest, RobustSizeAccepted) {
  auto r = ws_->run({"ceremony", "--k", "3", "--n", "5", "--out-dir", (ws_->root() / "k3n5").string(), "--seed",
                     "9", "--group-bits", "512"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(ws_->root() / "k3n5" / "share-5.json"));
}

TEST_F(CliTest, ThresholdAboveNRejected) {
  const auto out = ws_->root() / "k4n3";
  auto r = ws_->run({"ceremony", "--k", "4", "--n", "3", "--out-dir", out.string(), "--group-bits", "512"});
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(out / "sealed.json"));
}

TEST_F(CliTest, VerifyShare) {
  auto ok = ws_->run({"verify-share", "--share", (dir() / "share-2.json").string(), "--commitments",
                      (dir() / "commitments.json").string()});
  EXPECT_EQ(ok.code, 0);
  EXPECT_EQ(ok.out, "OK\n");

  // Hand-edited value: add one to the last hex digit's value.
  auto share = load(dir() / "share-2.json");
  std::string v = share.at("value").get<std::string>();
  v.back() = v.back() == 'f' ? '0' : (v.back() == '9' ? 'a' : static_cast<char>(v.back() + 1));
  share["value"] = v;
  save(ws_->root() / "tampered-share.json", share);
  auto bad = ws_->run({"verify-share", "--share", (ws_->root() / "tampered-share.json").string(), "--commitments",
                       (dir() / "commitments.json").string()});
  EXPECT_NE(bad.code, 0);
  EXPECT_EQ(bad.out, "FAIL(2)\n");

  auto other = ws_->root() / "other";
  ASSERT_EQ(ws_->run({"ceremony", "--k", "2", "--n", "3", "--out-dir", other.string(), "--seed", "77"}).code, 0);
  auto mismatch = ws_->run({"verify-share", "--share", (dir() / "share-2.json").string(), "--commitments",
                            (other / "commitments.json").string()});
  EXPECT_NE(mismatch.code, 0);
  EXPECT_EQ(mismatch.out, "FAIL(2)\n");
}

TEST_F(CliTest, CorruptedSealedFileIsParseError) {
  std::string text = slurp(dir() / "sealed.json");
  spit(ws_->root() / "truncated.json", text.substr(0, text.size() / 2));
  auto r = ws_->run({"kcv", "--sealed", (ws_->root() / "truncated.json").string()});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_TRUE(r.out.empty());

  auto j = load(dir() / "sealed.json");
  j["kcv_len_bits"] = 40;
  save(ws_->root() / "badbits.json", j);
  EXPECT_EQ(ws_->run({"kcv", "--sealed", (ws_->root() / "badbits.json").string()}).code, 4);

  EXPECT_EQ(ws_->run({"kcv", "--sealed", (ws_->root() / "missing.json").string()}).code, 4);
}

TEST_F(CliTest, FullLoopEncryptAndMac) {
  ASSERT_EQ(ceremony_->code, 0);
  Cluster cluster(dir(), base_port_);
  for (const char* n : {"facade", "custodian", "party-1", "party-2", "party-3"}) {
    ASSERT_NO_FATAL_FAILURE(cluster.start(n));
  }
  const std::string message = "transfer 100 units to account 7";
  spit(ws_->root() / "m.txt", message);
  const Bytes m(message.begin(), message.end());
  const auto requester = (dir() / "requester.json").string();
  const auto in = (ws_->root() / "m.txt").string();

  auto enc = ws_->run({"request", "--config", requester, "--op", "encrypt", "--in", in});
  ASSERT_EQ(enc.code, 0) << enc.err;
  auto plain = oracle::gcm_decrypt(master(), unhex(trim(enc.out)));
  ASSERT_TRUE(plain.has_value());
  EXPECT_EQ(*plain, m);

  auto mac1 = ws_->run({"request", "--config", requester, "--op", "mac", "--in", in});
  auto mac2 = ws_->run({"request", "--config", requester, "--op", "mac", "--in", in});
  ASSERT_EQ(mac1.code, 0) << mac1.err;
  EXPECT_EQ(mac1.out, mac2.out);
  EXPECT_EQ(unhex(trim(mac1.out)), oracle::hmac_sha256(master(), m));

  cluster.stop();
  std::string all = ws_->outputs();
  for (const char* n : {"facade", "custodian", "party-1", "party-2", "party-3"}) all += cluster.log(n);
  EXPECT_FALSE(contains_key(all, master()));
  for (int i = 1; i <= 3; ++i) {
    const auto value = load(dir() / ("share-" + std::to_string(i) + ".json")).at("value").get<std::string>();
    EXPECT_EQ(all.find(value), std::string::npos) << "share " << i << " leaked into output";
  }
}

TEST_F(CliTest, KMinusOnePartiesTimesOut) {
  Cluster cluster(dir(), base_port_);
  for (const char* n : {"facade", "custodian", "party-1"}) ASSERT_NO_FATAL_FAILURE(cluster.start(n));
  spit(ws_->root() / "m2.txt", "x");
  auto r = ws_->run({"request", "--config", (dir() / "requester.json").string(), "--op", "mac", "--in",
                     (ws_->root() / "m2.txt").string()});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_TRUE(r.out.empty());
  EXPECT_NE(r.err.find("QuorumTimeout"), std::string::npos) << r.err;
}

TEST_F(CliTest, WrongCredentialIsAuthFailure) {
  Cluster cluster(dir(), base_port_);
  for (const char* n : {"facade", "custodian", "party-1", "party-2"}) ASSERT_NO_FATAL_FAILURE(cluster.start(n));
  auto cred = load(dir() / "credential.json");
  cred["credential_key"] = std::string(64, '7');
  save(dir() / "stolen-credential.json", cred);
  auto req = load(dir() / "requester.json");
  req["credential_file"] = "stolen-credential.json";
  save(dir() / "requester-bad.json", req);
  spit(ws_->root() / "m3.txt", "y");
  auto r = ws_->run({"request", "--config", (dir() / "requester-bad.json").string(), "--op", "encrypt", "--in",
                     (ws_->root() / "m3.txt").string()});
  EXPECT_EQ(r.code, 2) << r.err;
  cluster.stop();
  EXPECT_EQ(cluster.log("party-1").find("contributed"), std::string::npos) << cluster.log("party-1");
}

TEST_F(CliTest, WrongLinkKeyMessagesDropped) {
  auto cfg = load(dir() / "node-party-1.json");
  for (auto& p : cfg["peers"]) {
    if (p["id"] == "custodian") p["link_key"] = std::string(64, 'a');
  }
  save(dir() / "node-party-1-badkey.json", cfg);
  Cluster cluster(dir(), base_port_);
  for (const char* n : {"facade", "custodian", "party-2", "party-3"}) ASSERT_NO_FATAL_FAILURE(cluster.start(n));
  ASSERT_NO_FATAL_FAILURE(cluster.start("party-1", "node-party-1-badkey.json"));
  spit(ws_->root() / "m4.txt", "z");
  auto r = ws_->run({"request", "--config", (dir() / "requester.json").string(), "--op", "mac", "--in",
                     (ws_->root() / "m4.txt").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  // Give the bad contribution time to arrive if it lost the race.
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  cluster.stop();
  EXPECT_NE(cluster.log("custodian").find("dropped envelope from party-1: IntegrityFailure"), std::string::npos)
      << cluster.log("custodian");
}

TEST_F(CliTest, PartyRefusesShareThatFailsCommitments) {
  auto share = load(dir() / "share-3.json");
  std::string v = share.at("value").get<std::string>();
  v.back() = v.back() == '0' ? '1' : '0';
  share["value"] = v;
  save(dir() / "share-3-bad.json", share);
  auto cfg = load(dir() / "node-party-3.json");
  cfg["share_file"] = "share-3-bad.json";
  save(dir() / "node-party-3-bad.json", cfg);
  auto r = ws_->run({"node", "--config", (dir() / "node-party-3-bad.json").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("does not verify"), std::string::npos) << r.err;
}

TEST_F(CliTest, SimulateAndAttackReport) {
  auto sim = ws_->run({"simulate", "--seed", "3", "--op", "mac"});
  ASSERT_EQ(sim.code, 0) << sim.err;
  EXPECT_EQ(json::parse(sim.out).at("result").at("status"), "ok");

  save(ws_->root() / "offline.json",
       json{{"version", 1}, {"links", json::array()}, {"nodes", {{{"id", "party-2"}, {"offline", true}}, {{"id", "party-3"}, {"offline", true}}}}});
  auto timeout = ws_->run({"simulate", "--seed", "3", "--script", (ws_->root() / "offline.json").string(),
                           "--session-timeout-ms", "500"});
  EXPECT_EQ(timeout.code, 3) << timeout.out << timeout.err;

  auto forged = ws_->run({"simulate", "--seed", "3", "--forged"});
  EXPECT_EQ(forged.code, 2);

  auto report = ws_->run({"attack-report", "--group-bits", "512", "--tamper-trials", "20", "--json"});
  ASSERT_EQ(report.code, 0) << report.out << report.err;
  const auto table = json::parse(report.out);
  EXPECT_TRUE(table.at("monotone").get<bool>());
  EXPECT_EQ(table.at("attacks").size(), 4u);
}

TEST_F(CliTest, SampleScenarios) {
  const std::vector<std::tuple<std::string, int, std::string, std::vector<int>>> cases{
      {"eavesdrop", 0, "ok", {}},
      {"duplicate-and-delay", 0, "ok", {}},
      {"malicious-party", 0, "ok", {1}},
      {"two-malicious", 3, "aborted", {1, 3}},
      {"quorum-loss", 3, "aborted", {}},
      {"tamper-reply", 1, "aborted", {}},
  };
  for (const auto& [name, code, status, culprits] : cases) {
    auto r = ws_->run({"simulate", "--seed", "5", "--script", std::string(KEYQUORUM_SCENARIOS) + "/" + name + ".json"});
    EXPECT_EQ(r.code, code) << name << r.err;
    const auto result = json::parse(r.out).at("result");
    EXPECT_EQ(result.at("status"), status) << name;
    EXPECT_EQ(result.at("culprits").get<std::vector<int>>(), culprits) << name;
  }
}

}  // namespace
