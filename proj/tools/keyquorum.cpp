// keyquorum: ceremony, node, request and offline check commands.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <iterator>

#include "keyquorum/attacks.hpp"
#include "keyquorum/deploy_files.hpp"
#include "keyquorum/net/transport.hpp"
#include "keyquorum/protocol/simnet.hpp"

namespace {

using namespace kq;

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

enum Exit : int { kOk = 0, kOther = 1, kAuth = 2, kQuorum = 3, kIo = 4 };

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::AuthenticationFailed: return kAuth;
    case Errc::QuorumTimeout:
    case Errc::InsufficientShares:
    case Errc::InsufficientValidShares: return kQuorum;
    case Errc::IoError:
    case Errc::ParseError: return kIo;
    default: return kOther;
  }
}

void log_line(std::string_view line) { std::cerr << line << '\n'; }

std::unique_ptr<RandomSource> make_rng(const std::optional<std::uint64_t>& seed) {
  if (seed) return std::make_unique<DeterministicRandom>(*seed);
  return std::make_unique<SystemRandom>();
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

protocol::SecureChannel channel_for(const NodeConfig& cfg, RandomSource& rng) {
  protocol::SecureChannel ch(cfg.id, rng);
  for (const auto& p : cfg.peers) ch.add_peer(p.id, p.link_key.clone());
  return ch;
}

std::map<std::string, std::string> peer_addresses(const NodeConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& p : cfg.peers) out[p.id] = p.addr;
  return out;
}

const PeerConfig& require_peer(const NodeConfig& cfg, Role role) {
  const PeerConfig* p = cfg.first_peer(role);
  if (!p) throw Error(Errc::ParseError, cfg.id + " config has no " + std::string(to_string(role)) + " peer");
  return *p;
}

// --- commands ---------------------------------------------------------------------

struct CeremonyArgs {
  std::uint32_t k = 2, n = 3;
  unsigned kcv_bits = 24;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  unsigned group_bits = 2048;
  std::string host = "127.0.0.1";
  std::uint16_t base_port = 7400;
  std::int64_t session_timeout_ms = 30'000;
};

int cmd_ceremony(const CeremonyArgs& a) {
  auto rng = make_rng(a.seed);
  CeremonyOptions opts;
  opts.cfg = ThresholdConfig{a.k, a.n};
  opts.kcv_bits = a.kcv_bits;
  opts.group_bits = a.group_bits;
  const Deployment dep = run_ceremony(opts, *rng);
  const auto files = write_ceremony(dep, a.out_dir, NetworkLayout{a.host, a.base_port, Millis(a.session_timeout_ms)});
  std::cerr << "wrote " << files.written.size() << " files to " << files.dir.string() << '\n';
  std::cout << to_hex(dep.sealed.kcv) << '\n';
  return kOk;
}

int cmd_node(const std::string& config_path) {
  const NodeConfig cfg = load_node_config(config_path);
  if (cfg.role == Role::Requester) throw Error(Errc::ParseError, "requester configs are used with `request`");
  if (cfg.listen.empty()) throw Error(Errc::ParseError, cfg.id + " config has no listen address");
  SystemRandom rng;
  net::SocketTransport transport(peer_addresses(cfg), log_line);
  std::unique_ptr<protocol::Node> node;

  switch (cfg.role) {
    case Role::Party: {
      const auto commitments = load_commitments(cfg.commitments_file);
      const FieldModulus field = commitments.params.scalar_field();
      Share share = load_share(cfg.share_file, &field);
      if (share.index != *cfg.index) throw Error(Errc::ParseError, "share index does not match config index");
      if (!vss_verify(share, commitments.commitments, commitments.params)) {
        throw Error(Errc::ParameterValidation, "share does not verify against the commitments");
      }
      node = std::make_unique<protocol::PartyNode>(channel_for(cfg, rng), std::move(share),
                                                   require_peer(cfg, Role::Facade).id,
                                                   require_peer(cfg, Role::Custodian).id);
      break;
    }
    case Role::Facade: {
      auto auth = std::make_shared<HmacAuthenticator>(load_credential(cfg.credential_file).view());
      std::vector<std::string> parties;
      for (const auto& p : cfg.peers) {
        if (p.role == Role::Party) parties.push_back(p.id);
      }
      node = std::make_unique<protocol::FacadeNode>(channel_for(cfg, rng), require_peer(cfg, Role::Custodian).id,
                                                    std::move(parties), std::move(auth),
                                                    cfg.session_timeout + Millis(1'000));
      break;
    }
    case Role::Custodian: {
      auto auth = std::make_shared<HmacAuthenticator>(load_credential(cfg.credential_file).view());
      auto core = std::make_unique<Custodian>(load_sealed(cfg.sealed_file), auth, rng,
                                              Custodian::Options{64, cfg.session_timeout});
      core->set_log_sink([&transport, id = cfg.id](std::string_view line) { transport.log(id, line); });
      std::map<std::string, std::uint32_t> index_of;
      for (const auto& p : cfg.peers) {
        if (p.role == Role::Party) {
          if (!p.index) throw Error(Errc::ParseError, "party peer " + p.id + " has no index");
          index_of[p.id] = *p.index;
        }
      }
      node = std::make_unique<protocol::CustodianNode>(channel_for(cfg, rng), std::move(core),
                                                       require_peer(cfg, Role::Facade).id, std::move(index_of));
      break;
    }
    case Role::Requester: break;
  }
  node->set_record_view(false);
  transport.attach(*node);
  transport.listen(cfg.listen);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  log_line("[" + cfg.id + "] listening on " + cfg.listen);
  transport.run([] { return g_stop != 0; });
  log_line("[" + cfg.id + "] stopped");
  return kOk;
}

struct RequestArgs {
  std::string config;
  std::string facade;
  std::string op = "encrypt";
  std::string in;
  std::optional<std::int64_t> timeout_ms;
};

int report_outcome(const protocol::ResultMessage& r) {
  if (r.ok()) {
    std::cout << to_hex(r.c) << '\n';
    return kOk;
  }
  const Errc reason = r.reason.value_or(Errc::QuorumTimeout);
  std::cerr << "aborted: " << to_string(reason);
  if (!r.culprits.empty()) {
    std::cerr << " culprits:";
    for (auto c : r.culprits) std::cerr << ' ' << c;
  }
  std::cerr << '\n';
  return exit_code_for(reason);
}

int cmd_request(const RequestArgs& a) {
  NodeConfig cfg = load_node_config(a.config);
  if (cfg.role != Role::Requester) throw Error(Errc::ParseError, "request needs a requester config");
  const PeerConfig& facade = require_peer(cfg, Role::Facade);
  auto peers = peer_addresses(cfg);
  if (!a.facade.empty()) peers[facade.id] = a.facade;
  const Operation op = operation_from_string(a.op);
  const Bytes m = read_file(a.in);
  HmacAuthenticator signer(load_credential(cfg.credential_file).view());

  SystemRandom rng;
  const Millis deadline = a.timeout_ms ? Millis(*a.timeout_ms) : cfg.session_timeout + Millis(2'000);
  net::SocketTransport transport(std::move(peers), log_line);
  protocol::RequesterNode node(channel_for(cfg, rng), facade.id, rng, deadline);
  node.set_record_view(false);
  transport.attach(node);
  node.submit(make_request(op, m, signer), transport);
  if (transport.send_failures() > 0) throw Error(Errc::IoError, "facade unreachable");
  transport.run([&] { return node.outcome().has_value() || g_stop != 0; }, deadline + Millis(1'000));
  if (!node.outcome()) return report_outcome(protocol::ResultMessage::aborted(Errc::QuorumTimeout, {}));
  return report_outcome(*node.outcome());
}

int cmd_verify_share(const std::string& share_path, const std::string& commitments_path) {
  const auto commitments = load_commitments(commitments_path);
  const Share share = share_from_json(read_json_file(share_path));
  if (vss_verify(share, commitments.commitments, commitments.params)) {
    std::cout << "OK\n";
    return kOk;
  }
  std::cout << "FAIL(" << share.index << ")\n";
  return kOther;
}

int cmd_kcv(const std::string& sealed_path) {
  std::cout << to_hex(load_sealed(sealed_path).kcv) << '\n';
  return kOk;
}

struct SimArgs {
  std::uint32_t k = 2, n = 3;
  std::uint64_t seed = 1;
  unsigned group_bits = 512;
  std::string script;
  std::string op = "encrypt";
  std::string in;
  bool forged = false;
  std::int64_t session_timeout_ms = 30'000;
  std::string transcript_out;
};

int cmd_simulate(const SimArgs& a) {
  DeterministicRandom rng(a.seed);
  CeremonyOptions opts;
  opts.cfg = ThresholdConfig{a.k, a.n};
  opts.group_bits = a.group_bits;
  const Deployment dep = run_ceremony(opts, rng);
  protocol::FaultScript script;
  if (!a.script.empty()) script = protocol::fault_script_from_json(read_json_file(a.script));
  protocol::Scenario sc;
  sc.op = operation_from_string(a.op);
  sc.m = a.in.empty() ? to_bytes("keyquorum simulation") : read_file(a.in);
  sc.credential = a.forged ? protocol::Scenario::Credential::Forged : protocol::Scenario::Credential::Valid;
  sc.seed = a.seed;
  sc.session_timeout = Millis(a.session_timeout_ms);
  const auto res = protocol::simnet_run(dep, script, sc);

  nlohmann::json out{{"version", 1},
                     {"result", protocol::result_to_json(res.outcome)},
                     {"finished_at_ms", res.finished_at.count()},
                     {"unlocks", res.unlocks.size()},
                     {"unlock_requests_sent", res.unlock_requests_sent},
                     {"auth_failures", res.auth_failures},
                     {"safety_holds", res.safety_holds},
                     {"envelopes", res.transcript.wire.size()}};
  std::cout << out.dump(2) << '\n';
  if (!a.transcript_out.empty()) {
    nlohmann::json wire = nlohmann::json::array();
    for (const auto& w : res.transcript.wire) {
      wire.push_back({{"sent_at_ms", w.sent_at.count()},
                      {"deliver_at_ms", w.deliver_at.count()},
                      {"from", w.from},
                      {"to", w.to},
                      {"fate", protocol::to_string(w.fate)},
                      {"tampered", w.tampered},
                      {"duplicate", w.duplicate},
                      {"envelope", protocol::envelope_to_json(w.envelope)}});
    }
    write_json_file(a.transcript_out, {{"version", 1}, {"wire", wire}, {"logs", res.transcript.logs}}, false);
  }
  return res.outcome.ok() ? kOk : exit_code_for(res.outcome.reason.value_or(Errc::QuorumTimeout));
}

struct AttackArgs {
  std::uint32_t k = 2, n = 3;
  std::uint64_t seed = 42;
  unsigned group_bits = 2048;
  std::size_t tamper_trials = 1000;
  bool json = false;
};

int cmd_attack_report(const AttackArgs& a) {
  DeterministicRandom rng(a.seed);
  CeremonyOptions opts;
  opts.cfg = ThresholdConfig{a.k, a.n};
  opts.group_bits = a.group_bits;
  const Deployment dep = run_ceremony(opts, rng);
  const auto reports = attacks::run_all_attacks(dep, a.seed, a.tamper_trials);
  if (a.json) {
    std::cout << attacks::verdict_table_json(reports).dump(2) << '\n';
  } else {
    std::cout << attacks::verdict_table_text(reports);
  }
  bool ok = attacks::severity_monotone(reports);
  for (const auto& r : reports) ok = ok && r.as_expected();
  return ok ? kOk : kOther;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Threshold-unlocked key custodian tooling"};
  app.require_subcommand(1);

  CeremonyArgs ceremony;
  auto* c = app.add_subcommand("ceremony", "Generate master key, shares, sealed state and node configs");
  c->add_option("--k", ceremony.k, "Threshold")->required();
  c->add_option("--n", ceremony.n, "Number of parties")->required();
  c->add_option("--kcv-bits", ceremony.kcv_bits, "KCV length in bits (24, 48 or 64)");
  c->add_option("--out-dir", ceremony.out_dir, "Output directory")->required();
  c->add_option("--seed", ceremony.seed, "Deterministic seed (tests only)");
  c->add_option("--group-bits", ceremony.group_bits, "Commitment group modulus size");
  c->add_option("--host", ceremony.host, "Host written into node addresses");
  c->add_option("--base-port", ceremony.base_port, "Facade port; custodian and parties follow");
  c->add_option("--session-timeout-ms", ceremony.session_timeout_ms, "Unlock session timeout");

  std::string node_config;
  auto* nd = app.add_subcommand("node", "Run a facade, custodian or party node");
  nd->add_option("--config", node_config, "Node config file")->required();

  RequestArgs request;
  auto* rq = app.add_subcommand("request", "Send one operation request through the facade");
  rq->add_option("--config", request.config, "Requester config file")->required();
  rq->add_option("--facade", request.facade, "Override facade host:port");
  rq->add_option("--op", request.op, "encrypt or mac")->check(CLI::IsMember({"encrypt", "mac"}));
  rq->add_option("--in", request.in, "Input file")->required();
  rq->add_option("--timeout-ms", request.timeout_ms, "Give up after this long");

  std::string share_file, commitments_file;
  auto* vs = app.add_subcommand("verify-share", "Check a share file against a commitment file");
  vs->add_option("--share", share_file)->required();
  vs->add_option("--commitments", commitments_file)->required();

  std::string sealed_file;
  auto* kc = app.add_subcommand("kcv", "Print the cached key check value");
  kc->add_option("--sealed", sealed_file)->required();

  SimArgs sim;
  auto* sm = app.add_subcommand("simulate", "Run one request through the simulated network");
  sm->add_option("--k", sim.k);
  sm->add_option("--n", sim.n);
  sm->add_option("--seed", sim.seed);
  sm->add_option("--group-bits", sim.group_bits);
  sm->add_option("--script", sim.script, "Fault script JSON");
  sm->add_option("--op", sim.op)->check(CLI::IsMember({"encrypt", "mac"}));
  sm->add_option("--in", sim.in, "Input file");
  sm->add_flag("--forged", sim.forged, "Send a forged request authenticator");
  sm->add_option("--session-timeout-ms", sim.session_timeout_ms);
  sm->add_option("--transcript", sim.transcript_out, "Write the wire transcript here");

  AttackArgs atk;
  auto* ar = app.add_subcommand("attack-report", "Run the attack suite and print the verdict table");
  ar->add_option("--k", atk.k);
  ar->add_option("--n", atk.n);
  ar->add_option("--seed", atk.seed);
  ar->add_option("--group-bits", atk.group_bits);
  ar->add_option("--tamper-trials", atk.tamper_trials);
  ar->add_flag("--json", atk.json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kOther;
  }

  try {
    if (*c) return cmd_ceremony(ceremony);
    if (*nd) return cmd_node(node_config);
    if (*rq) return cmd_request(request);
    if (*vs) return cmd_verify_share(share_file, commitments_file);
    if (*kc) return cmd_kcv(sealed_file);
    if (*sm) return cmd_simulate(sim);
    if (*ar) return cmd_attack_report(atk);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
