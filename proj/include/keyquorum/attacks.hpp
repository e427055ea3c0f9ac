#pragma once

// Executable adversary scenarios, ordered by attacker strength: a network
// observer, a compromised requester, compromised parties, and a custodian
// whose memory is readable. Each scenario runs seeded simulations, checks
// what the adversary can see or change, and reports a verdict.

#include <json.hpp>

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "keyquorum/protocol/simnet.hpp"

namespace kq::attacks {

enum class Verdict { Defended, Detected, Undefendable };
enum class Capability { Observe, Tamper, FullNodeView };

inline std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::Defended: return "Defended";
    case Verdict::Detected: return "Detected";
    case Verdict::Undefendable: return "Undefendable";
  }
  return "?";
}

inline std::string_view to_string(Capability c) noexcept {
  switch (c) {
    case Capability::Observe: return "Observe";
    case Capability::Tamper: return "Tamper";
    case Capability::FullNodeView: return "FullNodeView";
  }
  return "?";
}

/// 0 = strongest defense.
inline int severity(Verdict v) noexcept { return static_cast<int>(v); }

struct AttackScenario {
  std::string name;
  std::vector<std::string> compromised;
  Capability capability = Capability::Observe;
  Verdict expected = Verdict::Defended;
};

struct Finding {
  std::string check;
  bool passed = false;
  std::string detail;
};

struct AttackReport {
  AttackScenario scenario;
  Verdict verdict = Verdict::Undefendable;
  std::vector<Finding> findings;
  std::optional<std::string> residual;

  bool all_checks_passed() const {
    return std::all_of(findings.begin(), findings.end(), [](const Finding& f) { return f.passed; });
  }
  bool as_expected() const { return verdict == scenario.expected && all_checks_passed(); }
};

// --- key search ---------------------------------------------------------------------

/// Looks for the sealed master key anywhere in `haystack`, raw or as
/// lowercase hex, by testing every 32-byte window against the stored KCV.
inline bool contains_master_key(ByteView haystack, const SealedState& sealed) {
  auto matches = [&](ByteView candidate) {
    return crypto::constant_time_equal(compute_kcv(MasterKey::import(candidate), sealed.kcv_len_bits), sealed.kcv);
  };
  constexpr std::size_t kLen = crypto::kKeyBytes;
  for (std::size_t i = 0; i + kLen <= haystack.size(); ++i) {
    if (matches(haystack.subspan(i, kLen))) return true;
  }
  auto is_hex = [](std::uint8_t c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); };
  std::size_t run = 0;
  for (std::size_t i = 0; i < haystack.size(); ++i) {
    run = is_hex(haystack[i]) ? run + 1 : 0;
    if (run >= 2 * kLen) {
      const std::size_t start = i + 1 - 2 * kLen;
      std::string_view text(reinterpret_cast<const char*>(haystack.data()) + start, 2 * kLen);
      if (matches(from_hex(text))) return true;
    }
  }
  return false;
}

/// Reads a custodian's live state the way a memory-level attacker would.
class MemoryInspector {
 public:
  struct Dump {
    std::vector<Bytes> key_material;
    std::vector<Bytes> share_values;

    Bytes flat() const {
      Bytes out;
      for (const auto& k : key_material) append(out, k);
      for (const auto& s : share_values) append(out, s);
      return out;
    }
  };

  static Dump dump(const Custodian& custodian) {
    std::lock_guard lock(custodian.mu_);
    Dump out;
    for (const auto& [_, s] : custodian.sessions_) {
      if (s.master) {
        ByteView raw = s.master->bytes_.view();
        out.key_material.emplace_back(raw.begin(), raw.end());
      }
      for (const auto& [index, share] : s.accepted) out.share_values.push_back(share.value.to_bytes());
    }
    return out;
  }
};

// --- scenarios ----------------------------------------------------------------------

namespace detail {

inline protocol::Scenario scenario(std::uint64_t seed, Operation op = Operation::Encrypt) {
  protocol::Scenario s;
  s.seed = seed;
  s.op = op;
  DeterministicRandom rng(seed ^ 0x6D5EED);
  s.m = rng.bytes(32);  // 256 bits of entropy, so containment hits are real
  return s;
}

inline protocol::LinkRule everywhere(protocol::FaultAction action) {
  protocol::LinkRule r;
  r.action = action;
  return r;
}

inline std::vector<Bytes> share_values(const Deployment& dep) {
  std::vector<Bytes> out;
  for (const auto& s : dep.shares) out.push_back(s.value.to_bytes());
  return out;
}

inline bool leaks_any_share(ByteView haystack, const Deployment& dep, std::optional<std::uint32_t> except = {}) {
  for (const auto& s : dep.shares) {
    if (except && s.index == *except) continue;
    if (leaks(haystack, s.value.to_bytes())) return true;
  }
  return false;
}

inline Bytes flatten(const std::vector<Bytes>& parts) {
  Bytes out;
  for (const auto& p : parts) append(out, p);
  return out;
}

inline std::string errc_or_ok(const protocol::ResultMessage& r) {
  return r.ok() ? "Ok" : std::string(kq::to_string(r.reason.value_or(Errc::IoError)));
}

}  // namespace detail

struct ChannelAttackOptions {
  bool disable_encryption = false;
  int tamper_trials = 1000;
};

/// Observer on every link, plus a tamper-on-wire variant on the reply leg.
inline AttackReport attack_channel(const Deployment& dep, std::uint64_t seed, ChannelAttackOptions options = {}) {
  using namespace protocol;
  AttackReport report{{options.disable_encryption ? "channel (encryption disabled)" : "channel",
                       {"all links"},
                       Capability::Observe,
                       options.disable_encryption ? Verdict::Undefendable : Verdict::Defended},
                      Verdict::Defended,
                      {},
                      std::nullopt};
  FaultScript observe;
  observe.links.push_back(detail::everywhere(FaultAction::Observe));
  observe.plaintext_links = options.disable_encryption;
  const Scenario s = detail::scenario(seed);
  SimResult run = simnet_run(dep, observe, s);
  const Bytes seen = run.transcript.observed_bytes();
  const bool m_found = leaks(seen, s.m);
  const bool share_found = detail::leaks_any_share(seen, dep);
  const bool key_found = contains_master_key(seen, dep.sealed);
  report.findings.push_back({"run completes", run.outcome.ok(), detail::errc_or_ok(run.outcome)});
  if (options.disable_encryption) {
    report.findings.push_back({"control: m visible in transcript", m_found, m_found ? "m found" : "m not found"});
  } else {
    report.findings.push_back({"m absent from transcript", !m_found, ""});
    report.findings.push_back({"shares absent from transcript", !share_found, ""});
    report.findings.push_back({"master key absent from transcript", !key_found, ""});
  }
  const bool exposed = m_found || share_found || key_found;

  // Tamper variant: flip one bit of every reply to the requester.
  FaultScript tamper;
  LinkRule flip;
  flip.from = std::string(roles::kFacade);
  flip.to = std::string(roles::kRequester);
  flip.action = FaultAction::Tamper;
  tamper.links.push_back(flip);
  tamper.plaintext_links = options.disable_encryption;
  int detected = 0, wrong_accepted = 0;
  for (int trial = 0; trial < options.tamper_trials; ++trial) {
    SimResult t = simnet_run(dep, tamper, detail::scenario(seed + 1 + static_cast<std::uint64_t>(trial)));
    detected += !t.outcome.ok() && t.outcome.reason == Errc::IntegrityFailure ? 1 : 0;
    wrong_accepted += t.outcome.ok() ? 1 : 0;
  }
  report.findings.push_back({"tampered replies abort with IntegrityFailure", detected == options.tamper_trials,
                             std::to_string(detected) + "/" + std::to_string(options.tamper_trials)});
  report.findings.push_back({"no tampered reply accepted", wrong_accepted == 0, std::to_string(wrong_accepted)});
  report.verdict = exposed ? Verdict::Undefendable : Verdict::Defended;
  return report;
}

/// The requester is fully compromised: the adversary reads its view and sends
/// requests of its choosing.
inline AttackReport attack_requester(const Deployment& dep, std::uint64_t seed) {
  using namespace protocol;
  AttackReport report{{"requester", {std::string(roles::kRequester)}, Capability::FullNodeView, Verdict::Defended},
                      Verdict::Defended,
                      {},
                      std::nullopt};
  FaultScript script;
  script.nodes.push_back(NodeFault{std::string(roles::kRequester), false, false, true});

  // Honest request: the view is exactly (m, omega) out and c back.
  const Scenario honest = detail::scenario(seed);
  SimResult run = simnet_run(dep, script, honest);
  const auto& view = run.transcript.views.at(std::string(roles::kRequester));
  bool only_m_omega_c = view.size() == 2 && run.outcome.ok();
  if (only_m_omega_c) {
    Request req = decode_request(view[0]);
    only_m_omega_c = req.m == honest.m && decode_result(view[1]) == run.outcome;
  }
  const Bytes flat = detail::flatten(view);
  report.findings.push_back({"view holds only m, omega, c", only_m_omega_c, std::to_string(view.size()) + " payloads"});
  report.findings.push_back({"no share in view", !detail::leaks_any_share(flat, dep), ""});
  report.findings.push_back({"no master key in view", !contains_master_key(flat, dep.sealed), ""});

  // Forged omega: stopped at the facade before any fan-out.
  Scenario forged = detail::scenario(seed + 1);
  forged.credential = Scenario::Credential::Forged;
  SimResult f = simnet_run(dep, script, forged);
  report.findings.push_back({"forged request rejected",
                             f.outcome.reason == Errc::AuthenticationFailed && f.unlock_requests_sent == 0,
                             detail::errc_or_ok(f.outcome) + ", unlock requests " + std::to_string(f.unlock_requests_sent)});

  // Stolen credential: the adversary's own m goes through. Only the key stays out of reach.
  Scenario stolen = detail::scenario(seed + 2, Operation::Mac);
  stolen.m = to_bytes("adversary-chosen request");
  SimResult st = simnet_run(dep, script, stolen);
  const Bytes stolen_view = detail::flatten(st.transcript.views.at(std::string(roles::kRequester)));
  report.findings.push_back({"stolen credential yields an operation (residual)", st.outcome.ok(), detail::errc_or_ok(st.outcome)});
  report.findings.push_back({"stolen credential never yields key bytes", !contains_master_key(stolen_view, dep.sealed), ""});
  report.residual =
      "a valid stolen requester credential lets the adversary obtain operations of its choice; "
      "key material is never exposed";
  report.verdict = only_m_omega_c && f.outcome.reason == Errc::AuthenticationFailed ? Verdict::Defended
                                                                                     : Verdict::Undefendable;
  return report;
}

/// Parties send faulty shares and/or read everything they receive.
inline AttackReport attack_party(const Deployment& dep, std::uint64_t seed) {
  using namespace protocol;
  const auto& cfg = dep.cfg();
  AttackReport report{{"party", {roles::party(1)}, Capability::Tamper, Verdict::Detected}, Verdict::Detected, {}, std::nullopt};
  bool detected = true;

  // One malicious party, also observing its own view.
  if (cfg.n - 1 >= cfg.k) {
    FaultScript one;
    one.nodes.push_back(NodeFault{roles::party(1), false, true, true});
    SimResult r = simnet_run(dep, one, detail::scenario(seed));
    const bool ok = r.outcome.ok() && r.outcome.culprits == std::vector<std::uint32_t>{1};
    detected = detected && ok;
    report.findings.push_back({"1 malicious party: Ok with culprit [1]", ok, detail::errc_or_ok(r.outcome)});
    const Bytes view = detail::flatten(r.transcript.views.at(roles::party(1)));
    report.findings.push_back({"malicious party sees no other share", !detail::leaks_any_share(view, dep, 1u), ""});
  }

  // n-k+1 malicious parties: the quorum is unreachable and all are named.
  FaultScript many;
  std::vector<std::uint32_t> bad;
  for (std::uint32_t i = 1; i <= cfg.n - cfg.k + 1; ++i) {
    many.nodes.push_back(NodeFault{roles::party(i), false, true, false});
    bad.push_back(i);
    if (i > 1) report.scenario.compromised.push_back(roles::party(i));
  }
  SimResult r = simnet_run(dep, many, detail::scenario(seed + 1));
  const bool aborted = r.outcome.reason == Errc::InsufficientValidShares && r.outcome.culprits == bad && r.unlocks.empty();
  detected = detected && aborted;
  report.findings.push_back({std::to_string(bad.size()) + " malicious parties: InsufficientValidShares with all culprits",
                             aborted, detail::errc_or_ok(r.outcome)});

  // Passive compromised party.
  FaultScript passive;
  passive.nodes.push_back(NodeFault{roles::party(cfg.n), false, false, true});
  SimResult p = simnet_run(dep, passive, detail::scenario(seed + 2));
  const Bytes view = detail::flatten(p.transcript.views.at(roles::party(cfg.n)));
  report.findings.push_back({"passive party sees no other share", !detail::leaks_any_share(view, dep, cfg.n), ""});
  report.findings.push_back({"no unlock below quorum", r.safety_holds && p.safety_holds, ""});
  report.verdict = detected ? Verdict::Detected : Verdict::Undefendable;
  return report;
}

/// The custodian's memory is readable. Checks the exposure window and
/// reports the attack as undefendable.
inline AttackReport attack_custodian_memory(const Deployment& dep, std::uint64_t seed) {
  AttackReport report{{"custodian-memory", {std::string(roles::kCustodian)}, Capability::FullNodeView, Verdict::Undefendable},
                      Verdict::Undefendable,
                      {},
                      std::nullopt};
  DeterministicRandom rng(seed);
  auto auth = std::make_shared<HmacAuthenticator>(dep.credential_key.view());
  Custodian custodian(dep.sealed, auth, rng);
  const Bytes m = rng.bytes(32);
  auto id = custodian.begin_session(make_request(Operation::Mac, m, *auth), Millis(0));
  auto key_present = [&] {
    auto d = MemoryInspector::dump(custodian);
    return contains_master_key(d.flat(), dep.sealed);
  };
  report.findings.push_back({"Collecting: no master key in memory", !key_present(), ""});
  for (std::uint32_t i = 0; i < dep.cfg().k; ++i) (void)custodian.submit_share(id, dep.shares[i], Millis(1));
  const bool exposed = key_present();
  report.findings.push_back({"Unlocked: master key readable", exposed, exposed ? "identified by KCV" : "not found"});
  (void)custodian.perform(id);
  report.findings.push_back({"Done: no key material left", MemoryInspector::dump(custodian).key_material.empty() && !key_present(), ""});
  report.residual =
      "an attacker who can read custodian memory while a session is unlocked recovers the master key; "
      "the design only keeps that window short";
  report.verdict = exposed ? Verdict::Undefendable : Verdict::Defended;
  return report;
}

inline std::vector<AttackReport> run_all_attacks(const Deployment& dep, std::uint64_t seed, int tamper_trials = 1000) {
  return {attack_channel(dep, seed, {false, tamper_trials}), attack_requester(dep, seed + 10'000),
          attack_party(dep, seed + 20'000), attack_custodian_memory(dep, seed + 30'000)};
}

/// Verdicts never get better as the adversary gets stronger.
inline bool severity_monotone(const std::vector<AttackReport>& reports) {
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (severity(reports[i].verdict) < severity(reports[i - 1].verdict)) return false;
  }
  return true;
}

inline nlohmann::json verdict_table_json(const std::vector<AttackReport>& reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json findings = nlohmann::json::array();
    for (const auto& f : r.findings) findings.push_back({{"check", f.check}, {"passed", f.passed}, {"detail", f.detail}});
    rows.push_back({{"scenario", r.scenario.name},
                    {"compromised", r.scenario.compromised},
                    {"capability", to_string(r.scenario.capability)},
                    {"expected", to_string(r.scenario.expected)},
                    {"verdict", to_string(r.verdict)},
                    {"as_expected", r.as_expected()},
                    {"residual", r.residual ? nlohmann::json(*r.residual) : nlohmann::json(nullptr)},
                    {"findings", findings}});
  }
  return {{"version", 1}, {"monotone", severity_monotone(reports)}, {"attacks", rows}};
}

inline std::string verdict_table_text(const std::vector<AttackReport>& reports) {
  std::ostringstream out;
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(s.size(), w), ' ');
    return s;
  };
  out << pad("scenario", 32) << pad("capability", 14) << pad("verdict", 14) << "expected\n";
  for (const auto& r : reports) {
    out << pad(r.scenario.name, 32) << pad(std::string(to_string(r.scenario.capability)), 14)
        << pad(std::string(to_string(r.verdict)), 14) << (r.as_expected() ? "yes" : "NO") << "\n";
    for (const auto& f : r.findings) {
      out << "    [" << (f.passed ? "ok" : "FAIL") << "] " << f.check;
      if (!f.detail.empty()) out << " (" << f.detail << ")";
      out << "\n";
    }
    if (r.residual) out << "    residual: " << *r.residual << "\n";
  }
  return out.str();
}

}  // namespace kq::attacks
