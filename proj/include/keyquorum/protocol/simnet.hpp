#pragma once

// Deterministic single-threaded network simulator. Nodes exchange envelopes
// over a virtual clock; a declarative fault script drops, delays, duplicates,
// observes or tampers with traffic per link and marks nodes offline,
// malicious or compromised. Same deployment + script + seed gives the same
// transcript.

#include <json.hpp>

#include <algorithm>
#include <memory>
#include <queue>

#include "keyquorum/ceremony.hpp"
#include "keyquorum/protocol/nodes.hpp"

namespace kq::protocol {

enum class FaultAction { Drop, Delay, Duplicate, Observe, Tamper };

inline std::string_view to_string(FaultAction a) noexcept {
  switch (a) {
    case FaultAction::Drop: return "drop";
    case FaultAction::Delay: return "delay";
    case FaultAction::Duplicate: return "duplicate";
    case FaultAction::Observe: return "observe";
    case FaultAction::Tamper: return "tamper";
  }
  return "?";
}

inline FaultAction fault_action_from_string(std::string_view name) {
  for (auto a : {FaultAction::Drop, FaultAction::Delay, FaultAction::Duplicate, FaultAction::Observe,
                 FaultAction::Tamper}) {
    if (to_string(a) == name) return a;
  }
  throw Error(Errc::ParseError, "unknown fault action: " + std::string(name));
}

inline constexpr std::string_view kAnyNode = "*";

struct LinkRule {
  std::string from{kAnyNode};
  std::string to{kAnyNode};
  FaultAction action = FaultAction::Observe;
  Millis delay{0};
  std::optional<MsgType> msg_type;

  bool matches(const std::string& src, const std::string& dst, std::uint8_t type) const {
    return (from == kAnyNode || from == src) && (to == kAnyNode || to == dst) &&
           (!msg_type || static_cast<std::uint8_t>(*msg_type) == type);
  }
};

struct NodeFault {
  std::string node;
  bool offline = false;
  bool malicious = false;
  bool compromised = false;
};

struct FaultScript {
  std::vector<LinkRule> links;
  std::vector<NodeFault> nodes;
  // Test-only control: disables link encryption (see ChannelOptions).
  bool plaintext_links = false;

  NodeFault fault_for(const std::string& node) const {
    for (const auto& f : nodes) {
      if (f.node == node) return f;
    }
    return NodeFault{node};
  }
};

inline nlohmann::json fault_script_to_json(const FaultScript& s) {
  nlohmann::json links = nlohmann::json::array();
  for (const auto& r : s.links) {
    nlohmann::json j{{"from", r.from}, {"to", r.to}, {"action", to_string(r.action)}};
    if (r.delay.count() != 0) j["delay_ms"] = r.delay.count();
    if (r.msg_type) j["msg_type"] = to_string(*r.msg_type);
    links.push_back(std::move(j));
  }
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& f : s.nodes) {
    nodes.push_back({{"id", f.node}, {"offline", f.offline}, {"malicious", f.malicious},
                     {"compromised", f.compromised}});
  }
  return {{"version", 1}, {"links", links}, {"nodes", nodes}, {"plaintext_links", s.plaintext_links}};
}

inline FaultScript fault_script_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw Error(Errc::ParseError, "fault script must be an object");
    if (j.value("version", 1) != 1) throw Error(Errc::ParseError, "unsupported fault script version");
    FaultScript s;
    for (const auto& r : j.value("links", nlohmann::json::array())) {
      LinkRule rule;
      rule.from = r.value("from", std::string(kAnyNode));
      rule.to = r.value("to", std::string(kAnyNode));
      rule.action = fault_action_from_string(r.at("action").get<std::string>());
      rule.delay = Millis(r.value("delay_ms", 0));
      if (rule.delay.count() < 0) throw Error(Errc::ParseError, "negative delay");
      if (r.contains("msg_type")) rule.msg_type = msg_type_from_string(r.at("msg_type").get<std::string>());
      s.links.push_back(std::move(rule));
    }
    for (const auto& n : j.value("nodes", nlohmann::json::array())) {
      s.nodes.push_back(NodeFault{n.at("id").get<std::string>(), n.value("offline", false),
                                  n.value("malicious", false), n.value("compromised", false)});
    }
    s.plaintext_links = j.value("plaintext_links", false);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("fault script: ") + e.what());
  }
}

struct Scenario {
  enum class Credential { Valid, Forged };
  Operation op = Operation::Encrypt;
  Bytes m = to_bytes("keyquorum");
  Credential credential = Credential::Valid;
  std::uint64_t seed = 1;
  Millis session_timeout{30'000};
  Millis latency{1};
};

enum class Fate { Delivered, Dropped, Undeliverable };

inline std::string_view to_string(Fate f) noexcept {
  switch (f) {
    case Fate::Delivered: return "delivered";
    case Fate::Dropped: return "dropped";
    case Fate::Undeliverable: return "undeliverable";
  }
  return "?";
}

/// One envelope as it appeared on a link. Duplicated deliveries get their own
/// record.
struct WireRecord {
  Millis sent_at{0};
  Millis deliver_at{0};
  std::string from;
  std::string to;
  Envelope envelope;
  Fate fate = Fate::Delivered;
  bool observed = false;
  bool tampered = false;
  bool duplicate = false;
};

struct Transcript {
  std::vector<WireRecord> wire;
  std::map<std::string, std::vector<Bytes>> views;
  std::vector<std::string> logs;

  /// What a passive observer on the marked links holds: the canonical wire
  /// text plus the hex-decoded nonce and ciphertext of every observed envelope.
  Bytes observed_bytes() const { return collect(true); }
  Bytes all_wire_bytes() const { return collect(false); }

  Bytes log_bytes() const {
    Bytes out;
    for (const auto& line : logs) {
      append(out, to_bytes(line));
      out.push_back('\n');
    }
    return out;
  }

  std::size_t count(MsgType type, std::optional<Fate> fate = std::nullopt) const {
    return static_cast<std::size_t>(std::count_if(wire.begin(), wire.end(), [&](const WireRecord& r) {
      return r.envelope.msg_type == static_cast<std::uint8_t>(type) && (!fate || r.fate == *fate);
    }));
  }

 private:
  Bytes collect(bool observed_only) const {
    Bytes out;
    for (const auto& r : wire) {
      if (observed_only && !r.observed) continue;
      append(out, to_bytes(encode_wire(r.envelope)));
      append(out, r.envelope.nonce);
      append(out, r.envelope.ciphertext);
    }
    return out;
  }
};

/// Event loop and NodeContext for in-process nodes.
class SimNet final : public NodeContext {
 public:
  SimNet(FaultScript script, RandomSource& rng, Millis latency)
      : script_(std::move(script)), rng_(rng), latency_(latency) {}

  Node& add(std::unique_ptr<Node> node) {
    const std::string id = node->id();
    auto [it, inserted] = nodes_.emplace(id, std::move(node));
    if (!inserted) throw Error(Errc::InvalidArgument, "duplicate node " + id);
    return *it->second;
  }

  template <typename T>
  T& get(const std::string& id) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw Error(Errc::InvalidArgument, "unknown node " + id);
    return dynamic_cast<T&>(*it->second);
  }

  bool online(const std::string& id) const { return !script_.fault_for(id).offline; }

  Millis now() const override { return now_; }

  void send(Envelope env) override {
    const std::string from = env.sender;
    const std::string to = env.receiver;
    const Millis sent = now_;
    bool dropped = false, observed = false, tamper = false;
    Millis extra{0};
    int copies = 1;
    for (const auto& rule : script_.links) {
      if (!rule.matches(from, to, env.msg_type)) continue;
      switch (rule.action) {
        case FaultAction::Drop: dropped = true; break;
        case FaultAction::Delay: extra += rule.delay; break;
        case FaultAction::Duplicate: ++copies; break;
        case FaultAction::Observe: observed = true; break;
        case FaultAction::Tamper: tamper = true; break;
      }
    }
    if (tamper) flip_bit(env, rng_.uniform(envelope_bit_count(env)));
    if (dropped || !nodes_.contains(to) || !online(to)) {
      const Fate fate = dropped ? Fate::Dropped : Fate::Undeliverable;
      transcript_.wire.push_back(WireRecord{sent, sent, from, to, std::move(env), fate, observed, tamper, false});
      return;
    }
    Millis& clock = link_clock_[{from, to}];
    for (int copy = 0; copy < copies; ++copy) {
      // Per-link FIFO: a copy never overtakes an earlier envelope on its link.
      clock = std::max(clock, sent + latency_ + extra);
      transcript_.wire.push_back(WireRecord{sent, clock, from, to, env, Fate::Delivered, observed, tamper, copy > 0});
      schedule(Event{clock, 0, Event::Kind::Deliver, to, env, 0});
    }
  }

  void set_timer(const std::string& node, Millis delay, std::uint64_t token) override {
    schedule(Event{now_ + delay, 0, Event::Kind::Timer, node, {}, token});
  }

  void log(const std::string& node, std::string_view line) override {
    transcript_.logs.push_back("[" + std::to_string(now_.count()) + "ms] " + node + ": " + std::string(line));
  }

  /// Processes events in (time, insertion) order until none remain or the
  /// horizon passes.
  void run(Millis horizon) {
    while (!queue_.empty() && queue_.top().at <= horizon) {
      Event ev = queue_.top();
      queue_.pop();
      now_ = ev.at;
      auto it = nodes_.find(ev.node);
      if (it == nodes_.end() || !online(ev.node)) continue;
      if (ev.kind == Event::Kind::Deliver) {
        it->second->deliver(ev.env, *this);
      } else {
        it->second->on_timer(ev.token, *this);
      }
    }
  }

  Transcript& transcript() noexcept { return transcript_; }
  const FaultScript& script() const noexcept { return script_; }

 private:
  struct Event {
    enum class Kind { Deliver, Timer };
    Millis at{0};
    std::uint64_t order = 0;
    Kind kind = Kind::Deliver;
    std::string node;
    Envelope env;
    std::uint64_t token = 0;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.order > b.order;
    }
  };

  void schedule(Event ev) {
    ev.order = next_order_++;
    queue_.push(std::move(ev));
  }

  FaultScript script_;
  RandomSource& rng_;
  Millis latency_;
  Millis now_{0};
  std::uint64_t next_order_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::map<std::string, std::unique_ptr<Node>> nodes_;
  std::map<std::pair<std::string, std::string>, Millis> link_clock_;
  Transcript transcript_;
};

struct SimResult {
  ResultMessage outcome;
  Transcript transcript;
  std::vector<UnlockRecord> unlocks;
  std::size_t unlock_requests_sent = 0;
  std::size_t contributions = 0;
  std::size_t auth_failures = 0;
  // Every unlock in the run was backed by at least k distinct valid shares.
  bool safety_holds = true;
  // When the requester received its outcome.
  Millis finished_at{0};
};

namespace detail {

inline void check_script_nodes(const FaultScript& script, const std::vector<std::string>& known) {
  auto ok = [&](const std::string& id) {
    return id == kAnyNode || std::find(known.begin(), known.end(), id) != known.end();
  };
  for (const auto& r : script.links) {
    if (!ok(r.from) || !ok(r.to)) throw Error(Errc::ParseError, "fault script names unknown link " + r.from + "->" + r.to);
  }
  for (const auto& f : script.nodes) {
    if (f.node == kAnyNode || !ok(f.node)) throw Error(Errc::ParseError, "fault script names unknown node " + f.node);
  }
}

}  // namespace detail

/// Runs one request through a fully simulated deployment.
inline SimResult simnet_run(const Deployment& dep, const FaultScript& script, const Scenario& scenario) {
  const std::string requester(roles::kRequester), facade(roles::kFacade), custodian(roles::kCustodian);
  std::vector<std::string> all{requester, facade, custodian};
  for (const auto& p : dep.party_ids()) all.push_back(p);
  detail::check_script_nodes(script, all);

  DeterministicRandom rng(scenario.seed);
  SimNet net(script, rng, scenario.latency);
  const ChannelOptions channel_options{!script.plaintext_links};
  auto channel = [&](const std::string& id) {
    SecureChannel ch(id, rng, channel_options);
    for (const auto& peer : dep.peers_of(id)) ch.add_peer(peer, dep.link_key(id, peer).clone());
    return ch;
  };
  auto authenticator = std::make_shared<HmacAuthenticator>(dep.credential_key.view());

  const Millis timeout = scenario.session_timeout;
  auto& req = net.add(std::make_unique<RequesterNode>(channel(requester), facade, rng, timeout + Millis(2'000)));
  auto& fac = net.add(std::make_unique<FacadeNode>(channel(facade), custodian, dep.party_ids(), authenticator,
                                                   timeout + Millis(1'000)));
  auto core = std::make_unique<Custodian>(dep.sealed, authenticator, rng, Custodian::Options{64, timeout});
  core->set_log_sink([&net, custodian](std::string_view line) { net.log(custodian, line); });
  std::map<std::string, std::uint32_t> index_of;
  for (const auto& s : dep.shares) index_of.emplace(roles::party(s.index), s.index);
  auto& cus = net.add(std::make_unique<CustodianNode>(channel(custodian), std::move(core), facade, index_of));
  std::vector<PartyNode*> parties;
  for (const auto& s : dep.shares) {
    const std::string id = roles::party(s.index);
    auto behavior = script.fault_for(id).malicious ? PartyBehavior::Malicious : PartyBehavior::Honest;
    parties.push_back(&dynamic_cast<PartyNode&>(
        net.add(std::make_unique<PartyNode>(channel(id), s, facade, custodian, behavior))));
  }

  Request request = make_request(scenario.op, scenario.m, *authenticator);
  if (scenario.credential == Scenario::Credential::Forged) request.omega = rng.bytes(crypto::kDigestBytes);

  auto& requester_node = dynamic_cast<RequesterNode&>(req);
  if (net.online(requester)) requester_node.submit(request, net);
  net.run(timeout * 4);

  SimResult out;
  out.outcome = requester_node.outcome().value_or(ResultMessage::aborted(Errc::QuorumTimeout));
  auto& custodian_node = dynamic_cast<CustodianNode&>(cus);
  out.unlocks = custodian_node.custodian().unlock_history();
  for (const auto& u : out.unlocks) out.safety_holds = out.safety_holds && u.distinct_valid_shares >= dep.cfg().k;
  out.unlock_requests_sent = dynamic_cast<FacadeNode&>(fac).unlock_requests_sent();
  out.auth_failures = dynamic_cast<FacadeNode&>(fac).auth_failures();
  for (const auto* p : parties) out.contributions += p->contributions();
  out.finished_at = requester_node.completed_at();
  out.transcript = std::move(net.transcript());
  for (const auto& id : all) {
    if (!script.fault_for(id).compromised) continue;
    out.transcript.views.emplace(id, id == requester   ? req.view()
                                     : id == facade    ? fac.view()
                                     : id == custodian ? cus.view()
                                                       : net.get<PartyNode>(id).view());
  }
  return out;
}

/// Null-fault run.
inline SimResult run_session(const Deployment& dep, const Scenario& scenario) {
  return simnet_run(dep, FaultScript{}, scenario);
}

}  // namespace kq::protocol
