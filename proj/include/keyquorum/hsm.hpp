#pragma once

// Software custodian. The master key is stored only wrapped (AES-256-GCM)
// under an access key that is itself derived from the Feldman-shared secret,
// so the custodian cannot use the master key until a quorum of valid shares
// has been submitted. There is deliberately no operation that returns raw
// master-key or access-key bytes.

#include <json.hpp>

#include <array>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "keyquorum/auth.hpp"
#include "keyquorum/crypto.hpp"
#include "keyquorum/vss.hpp"

namespace kq {

namespace attacks {
class MemoryInspector;
}

inline constexpr std::string_view kWrapContext = "keyquorum/master-key-wrap/v1";
inline constexpr std::string_view kVerifierContext = "keyquorum/access-key-verifier/v1";
inline constexpr std::size_t kSessionIdBytes = 16;

using SessionId = std::array<std::uint8_t, kSessionIdBytes>;
using Millis = std::chrono::milliseconds;

inline std::string session_hex(const SessionId& id) { return to_hex(id); }

namespace detail {
struct KeyOps;
}

/// 32-byte root key. Can be generated or imported, never exported.
class MasterKey {
 public:
  static MasterKey generate(RandomSource& rng) {
    SecretBytes bytes(crypto::kKeyBytes);
    rng.fill(bytes.mutable_view());
    return MasterKey(std::move(bytes));
  }

  static MasterKey import(ByteView bytes) {
    if (bytes.size() != crypto::kKeyBytes) {
      throw Error(Errc::InvalidArgument, "master key must be 32 bytes");
    }
    return MasterKey(SecretBytes(bytes));
  }

  MasterKey(MasterKey&&) noexcept = default;
  MasterKey& operator=(MasterKey&&) noexcept = default;
  MasterKey(const MasterKey&) = delete;
  MasterKey& operator=(const MasterKey&) = delete;

 private:
  explicit MasterKey(SecretBytes bytes) : bytes_(std::move(bytes)) {}
  friend struct detail::KeyOps;
  friend class attacks::MemoryInspector;
  SecretBytes bytes_;
};

/// k_n: SHA-256 of the canonical encoding of the reconstructed Z_q secret.
class AccessKey {
 public:
  static AccessKey derive(const FieldElement& sharing_secret) {
    SecretBytes encoded(sharing_secret.to_bytes());
    auto digest = crypto::sha256(encoded.view());
    AccessKey out{SecretBytes(ByteView(digest))};
    secure_wipe(digest.data(), digest.size());
    return out;
  }

  AccessKey(AccessKey&&) noexcept = default;
  AccessKey& operator=(AccessKey&&) noexcept = default;

  /// H(access key || context). Safe to persist.
  crypto::Digest verifier() const {
    Bytes input(bytes_.view().begin(), bytes_.view().end());
    append(input, ByteView(reinterpret_cast<const std::uint8_t*>(kVerifierContext.data()),
                           kVerifierContext.size()));
    auto out = crypto::sha256(input);
    secure_wipe(input);
    return out;
  }

 private:
  explicit AccessKey(SecretBytes bytes) : bytes_(std::move(bytes)) {}
  friend struct detail::KeyOps;
  SecretBytes bytes_;
};

struct WrappedKey {
  Bytes nonce;
  Bytes ct;  // ciphertext || tag
};

/// Persistent custodian state. Contains neither the raw master key nor the
/// raw access key.
struct SealedState {
  WrappedKey wrap;
  crypto::Digest verifier{};
  Bytes kcv;
  unsigned kcv_len_bits = 24;
  VssGroupParams params;
  CommitmentVector commitments;
  ThresholdConfig cfg;
};

inline void validate_kcv_bits(unsigned bits) {
  if (bits != 24 && bits != 48 && bits != 64) {
    throw Error(Errc::InvalidArgument, "KCV length must be 24, 48 or 64 bits");
  }
}

namespace detail {

inline ByteView context_bytes(std::string_view s) {
  return ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

/// The only code that touches raw key bytes.
struct KeyOps {
  static Bytes kcv(const MasterKey& key, unsigned bits) {
    validate_kcv_bits(bits);
    auto block = crypto::aes256_encrypt_block(key.bytes_.view(), {});
    return Bytes(block.begin(), block.begin() + bits / 8);
  }

  static WrappedKey wrap(const AccessKey& access, const MasterKey& master, RandomSource& rng) {
    Bytes nonce = rng.bytes(crypto::kGcmNonceBytes);
    Bytes ct = crypto::aead_seal(access.bytes_.view(), nonce, master.bytes_.view(),
                                 context_bytes(kWrapContext));
    return WrappedKey{std::move(nonce), std::move(ct)};
  }

  static std::optional<MasterKey> unwrap(const AccessKey& access, const WrappedKey& wrapped) {
    auto plain = crypto::aead_open(access.bytes_.view(), wrapped.nonce, wrapped.ct,
                                   context_bytes(kWrapContext));
    if (!plain || plain->size() != crypto::kKeyBytes) return std::nullopt;
    return MasterKey(std::move(*plain));
  }

  static Bytes encrypt(const MasterKey& key, ByteView m, RandomSource& rng) {
    Bytes out = rng.bytes(crypto::kGcmNonceBytes);
    append(out, crypto::aead_seal(key.bytes_.view(), out, m, {}));
    return out;
  }

  static Bytes mac(const MasterKey& key, ByteView m) {
    auto tag = crypto::hmac_sha256(key.bytes_.view(), m);
    return Bytes(tag.begin(), tag.end());
  }
};

}  // namespace detail

/// Leading kcv_bits of AES-256(master key, 0^128).
inline Bytes compute_kcv(const MasterKey& key, unsigned kcv_bits) {
  return detail::KeyOps::kcv(key, kcv_bits);
}

/// Ceremony step: wraps the master key under the access key derived from the
/// sharing secret, stores the verifier and caches the KCV.
inline SealedState provision(const MasterKey& master_key, const FieldElement& sharing_secret,
                             const CommitmentVector& commitments, const ThresholdConfig& cfg,
                             unsigned kcv_bits, const VssGroupParams& params, RandomSource& rng) {
  validate_kcv_bits(kcv_bits);
  cfg.validate(params.scalar_field());
  if (!(sharing_secret.modulus() == params.scalar_field())) {
    throw Error(Errc::ParameterValidation, "sharing secret must be an element of Z_q");
  }
  if (commitments.threshold() != cfg.k) {
    throw Error(Errc::ParameterValidation, "commitment count must equal k");
  }
  if (params.commit(sharing_secret) != commitments.values.front()) {
    throw Error(Errc::ParameterValidation, "commitments do not bind the sharing secret");
  }
  AccessKey access = AccessKey::derive(sharing_secret);
  SealedState state{detail::KeyOps::wrap(access, master_key, rng),
                    access.verifier(),
                    compute_kcv(master_key, kcv_bits),
                    kcv_bits,
                    params,
                    commitments,
                    cfg};
  return state;
}

// --- sealed state file --------------------------------------------------------

inline nlohmann::json sealed_to_json(const SealedState& s) {
  return nlohmann::json{{"version", 1},
                        {"wrap", {{"nonce", to_hex(s.wrap.nonce)}, {"ct", to_hex(s.wrap.ct)}}},
                        {"verifier", to_hex(s.verifier)},
                        {"kcv", to_hex(s.kcv)},
                        {"kcv_len_bits", s.kcv_len_bits},
                        {"vss", commitments_to_json(s.params, s.commitments)},
                        {"k", s.cfg.k},
                        {"n", s.cfg.n}};
}

inline SealedState sealed_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw Error(Errc::ParseError, "unsupported sealed version");
    auto vss = commitments_from_json(j.at("vss"));
    SealedState s{WrappedKey{from_hex(j.at("wrap").at("nonce").get<std::string>()),
                             from_hex(j.at("wrap").at("ct").get<std::string>())},
                  fixed_from_hex<crypto::kDigestBytes>(j.at("verifier").get<std::string>()),
                  from_hex(j.at("kcv").get<std::string>()),
                  j.at("kcv_len_bits").get<unsigned>(),
                  std::move(vss.params),
                  std::move(vss.commitments),
                  ThresholdConfig{j.at("k").get<std::uint32_t>(), j.at("n").get<std::uint32_t>()}};
    validate_kcv_bits(s.kcv_len_bits);
    if (s.kcv.size() * 8 != s.kcv_len_bits) throw Error(Errc::ParseError, "KCV length mismatch");
    if (s.wrap.nonce.size() != crypto::kGcmNonceBytes ||
        s.wrap.ct.size() != crypto::kKeyBytes + crypto::kGcmTagBytes) {
      throw Error(Errc::ParseError, "malformed wrapped key");
    }
    s.cfg.validate(s.params.scalar_field());
    if (s.commitments.threshold() != s.cfg.k) throw Error(Errc::ParseError, "commitment count != k");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::ParseError) throw;
    throw Error(Errc::ParseError, e.what());
  }
}

// --- custodian ------------------------------------------------------------------

enum class SessionState { Collecting, Unlocked, Done, Aborted };

inline std::string_view to_string(SessionState s) noexcept {
  switch (s) {
    case SessionState::Collecting: return "Collecting";
    case SessionState::Unlocked: return "Unlocked";
    case SessionState::Done: return "Done";
    case SessionState::Aborted: return "Aborted";
  }
  return "?";
}

struct SubmitResult {
  enum class Kind { Progress, Unlocked, Rejected };
  Kind kind = Kind::Progress;
  std::uint32_t index = 0;
  std::size_t valid_shares = 0;
};

/// Observable facts about a session; never carries key or share bytes.
struct SessionAudit {
  SessionState state = SessionState::Collecting;
  bool holds_master_key = false;
  std::size_t retained_shares = 0;
  std::vector<std::uint32_t> culprits;
  std::optional<Errc> abort_reason;
};

struct UnlockRecord {
  SessionId id{};
  std::size_t distinct_valid_shares = 0;
};

class Custodian {
 public:
  struct Options {
    std::size_t max_sessions = 64;
    Millis session_timeout{30'000};
  };

  using LogSink = std::function<void(std::string_view)>;

  Custodian(SealedState state, std::shared_ptr<const Authenticator> authenticator,
            RandomSource& rng, Options options)
      : state_(std::move(state)),
        authenticator_(std::move(authenticator)),
        rng_(rng),
        options_(options) {
    if (!authenticator_) throw Error(Errc::InvalidArgument, "custodian needs an authenticator");
  }
  Custodian(SealedState state, std::shared_ptr<const Authenticator> authenticator, RandomSource& rng)
      : Custodian(std::move(state), std::move(authenticator), rng, Options{}) {}

  Custodian(const Custodian&) = delete;
  Custodian& operator=(const Custodian&) = delete;

  void set_log_sink(LogSink sink) {
    std::lock_guard lock(mu_);
    log_ = std::move(sink);
  }

  /// Maintenance check; needs no quorum.
  ByteView kcv() const noexcept { return state_.kcv; }
  const Options& options() const noexcept { return options_; }
  const SealedState& sealed_state() const noexcept { return state_; }
  const ThresholdConfig& threshold() const noexcept { return state_.cfg; }

  SessionId begin_session(Request request, Millis now) {
    std::lock_guard lock(mu_);
    if (!authenticator_->verify(request.m, request.omega)) {
      log("request rejected: authenticator does not verify");
      throw Error(Errc::AuthenticationFailed, "request authenticator does not verify");
    }
    if (active_count() >= options_.max_sessions) {
      log("request rejected: session cap reached");
      throw Error(Errc::TooManySessions, "too many concurrent sessions");
    }
    SessionId id{};
    do {
      rng_.fill(id);
    } while (sessions_.contains(id));
    const auto op = request.op;
    Session s;
    s.request = std::move(request);
    s.deadline = now + options_.session_timeout;
    sessions_.emplace(id, std::move(s));
    log("session " + session_hex(id) + " opened (" + std::string(to_string(op)) + ")");
    prune_terminal();
    return id;
  }

  SubmitResult submit_share(const SessionId& id, const Share& share, Millis now) {
    std::lock_guard lock(mu_);
    Session& s = find(id);
    if (s.state != SessionState::Collecting) {
      throw Error(Errc::InvalidSessionState, "session is not collecting shares");
    }
    if (now >= s.deadline) {
      terminate(id, s, SessionState::Aborted, Errc::SessionExpired);
      throw Error(Errc::SessionExpired, "session deadline passed");
    }
    const auto index = share.index;
    if (s.accepted.contains(index) ||
        std::find(s.culprits.begin(), s.culprits.end(), index) != s.culprits.end()) {
      throw Error(Errc::DuplicateIndex, "index already submitted for this session");
    }
    const ThresholdConfig& cfg = state_.cfg;
    if (index == 0 || index > cfg.n || !vss_verify(share, state_.commitments, state_.params)) {
      s.culprits.push_back(index);
      std::sort(s.culprits.begin(), s.culprits.end());
      log("session " + session_hex(id) + " rejected share index " + std::to_string(index));
      const std::size_t outstanding = cfg.n - std::min<std::size_t>(cfg.n, s.accepted.size() + s.culprits.size());
      if (s.accepted.size() + outstanding < cfg.k) {
        auto culprits = s.culprits;
        terminate(id, s, SessionState::Aborted, Errc::InsufficientValidShares);
        throw InsufficientValidSharesError(culprits, "quorum can no longer be reached");
      }
      return SubmitResult{SubmitResult::Kind::Rejected, index, s.accepted.size()};
    }
    s.accepted.emplace(index, share);
    log("session " + session_hex(id) + " accepted share index " + std::to_string(index));
    if (s.accepted.size() < cfg.k) {
      return SubmitResult{SubmitResult::Kind::Progress, index, s.accepted.size()};
    }
    unlock(id, s);
    return SubmitResult{SubmitResult::Kind::Unlocked, index, cfg.k};
  }

  /// Executes the operation carried by the authenticated request, then wipes
  /// the master key. The session ends in Done.
  Bytes perform(const SessionId& id) {
    std::lock_guard lock(mu_);
    Session& s = find(id);
    if (s.state != SessionState::Unlocked || !s.master) {
      throw Error(Errc::SessionNotUnlocked, "session is not unlocked");
    }
    Bytes out = s.request.op == Operation::Encrypt
                    ? detail::KeyOps::encrypt(*s.master, s.request.m, rng_)
                    : detail::KeyOps::mac(*s.master, s.request.m);
    terminate(id, s, SessionState::Done, std::nullopt);
    log("session " + session_hex(id) + " completed");
    return out;
  }

  void abort(const SessionId& id, Errc reason) {
    std::lock_guard lock(mu_);
    Session& s = find(id);
    if (is_terminal(s.state)) return;
    terminate(id, s, SessionState::Aborted, reason);
  }

  /// Aborts every live session whose deadline has passed. Collecting
  /// sessions end with QuorumTimeout, unlocked-but-unused ones with
  /// SessionExpired.
  std::vector<SessionId> expire(Millis now) {
    std::lock_guard lock(mu_);
    std::vector<SessionId> out;
    for (auto& [id, s] : sessions_) {
      if (is_terminal(s.state) || now < s.deadline) continue;
      Errc reason = s.state == SessionState::Collecting ? Errc::QuorumTimeout : Errc::SessionExpired;
      terminate(id, s, SessionState::Aborted, reason);
      out.push_back(id);
    }
    return out;
  }

  bool has_session(const SessionId& id) const {
    std::lock_guard lock(mu_);
    return sessions_.contains(id);
  }

  SessionAudit audit(const SessionId& id) const {
    std::lock_guard lock(mu_);
    const Session& s = const_cast<Custodian*>(this)->find(id);
    return SessionAudit{s.state, s.master.has_value(), s.accepted.size(), s.culprits, s.abort_reason};
  }

  std::vector<UnlockRecord> unlock_history() const {
    std::lock_guard lock(mu_);
    return unlocks_;
  }

  std::size_t active_sessions() const {
    std::lock_guard lock(mu_);
    return active_count();
  }

 private:
  friend class attacks::MemoryInspector;

  struct Session {
    SessionState state = SessionState::Collecting;
    Request request;
    Millis deadline{0};
    std::map<std::uint32_t, Share> accepted;
    std::vector<std::uint32_t> culprits;
    std::optional<MasterKey> master;
    std::optional<Errc> abort_reason;
  };

  static bool is_terminal(SessionState s) {
    return s == SessionState::Done || s == SessionState::Aborted;
  }

  Session& find(const SessionId& id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(Errc::UnknownSession, "no such session");
    return it->second;
  }

  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count_if(sessions_.begin(), sessions_.end(), [](const auto& kv) {
      return !is_terminal(kv.second.state);
    }));
  }

  void unlock(const SessionId& id, Session& s) {
    std::vector<Share> quorum;
    for (const auto& [_, share] : s.accepted) quorum.push_back(share);
    const std::size_t distinct = quorum.size();
    FieldElement secret = shamir_reconstruct(quorum, state_.cfg.k);
    quorum.clear();
    AccessKey access = AccessKey::derive(secret);
    if (!crypto::constant_time_equal(access.verifier(), state_.verifier)) {
      terminate(id, s, SessionState::Aborted, Errc::VerifierMismatch);
      throw Error(Errc::VerifierMismatch, "reconstructed access key does not match the verifier");
    }
    auto master = detail::KeyOps::unwrap(access, state_.wrap);
    if (!master) {
      terminate(id, s, SessionState::Aborted, Errc::IntegrityFailure);
      throw Error(Errc::IntegrityFailure, "wrapped master key failed authentication");
    }
    s.accepted.clear();
    s.master = std::move(master);
    s.state = SessionState::Unlocked;
    unlocks_.push_back(UnlockRecord{id, distinct});
    log("session " + session_hex(id) + " unlocked");
  }

  void terminate(const SessionId& id, Session& s, SessionState final_state, std::optional<Errc> reason) {
    s.master.reset();
    s.accepted.clear();
    secure_wipe(s.request.m);
    secure_wipe(s.request.omega);
    s.state = final_state;
    s.abort_reason = reason;
    if (reason) {
      log("session " + session_hex(id) + " aborted: " + std::string(to_string(*reason)));
    }
  }

  void prune_terminal() {
    constexpr std::size_t kRetainTerminal = 1024;
    std::size_t terminal = sessions_.size() - active_count();
    for (auto it = sessions_.begin(); it != sessions_.end() && terminal > kRetainTerminal;) {
      if (is_terminal(it->second.state)) {
        it = sessions_.erase(it);
        --terminal;
      } else {
        ++it;
      }
    }
  }

  void log(const std::string& line) const {
    if (log_) log_(line);
  }

  SealedState state_;
  std::shared_ptr<const Authenticator> authenticator_;
  RandomSource& rng_;
  Options options_;
  mutable std::mutex mu_;
  std::map<SessionId, Session> sessions_;
  std::vector<UnlockRecord> unlocks_;
  LogSink log_;
};

}  // namespace kq
