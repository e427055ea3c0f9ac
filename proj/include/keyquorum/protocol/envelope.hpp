#pragma once

// Pairwise-keyed message envelopes. Every leg of the protocol is an AEAD
// ciphertext under the link key shared by its two endpoints; the header
// fields are bound in as associated data and each (sender, session)
// direction carries a strictly increasing sequence number.

#include <json.hpp>

#include <map>
#include <string>
#include <string_view>
#include <utility>

#include "keyquorum/crypto.hpp"
#include "keyquorum/hsm.hpp"
#include "keyquorum/random.hpp"

namespace kq::protocol {

inline constexpr std::uint8_t kEnvelopeVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 1 << 20;

enum class MsgType : std::uint8_t {
  Request = 1,
  OpenSession = 2,
  SessionOpened = 3,
  UnlockRequest = 4,
  ShareContribution = 5,
  Result = 6,
};

inline std::string_view to_string(MsgType t) noexcept {
  switch (t) {
    case MsgType::Request: return "Request";
    case MsgType::OpenSession: return "OpenSession";
    case MsgType::SessionOpened: return "SessionOpened";
    case MsgType::UnlockRequest: return "UnlockRequest";
    case MsgType::ShareContribution: return "ShareContribution";
    case MsgType::Result: return "Result";
  }
  return "?";
}

inline MsgType msg_type_from_string(std::string_view name) {
  for (std::uint8_t v = 1; v <= 6; ++v) {
    if (to_string(static_cast<MsgType>(v)) == name) return static_cast<MsgType>(v);
  }
  throw Error(Errc::ParseError, "unknown message type: " + std::string(name));
}

inline bool is_known_msg_type(std::uint8_t raw) noexcept { return raw >= 1 && raw <= 6; }

struct Envelope {
  std::uint8_t version = kEnvelopeVersion;
  SessionId session_id{};
  std::string sender;
  std::string receiver;
  std::uint64_t seq = 0;
  // Kept raw so a tampered type byte still round-trips through the wire.
  std::uint8_t msg_type = 0;
  Bytes nonce;
  Bytes ciphertext;

  MsgType type() const { return static_cast<MsgType>(msg_type); }
  bool operator==(const Envelope&) const = default;
};

/// version || session_id || len||sender || len||receiver || be64 seq || type
inline Bytes associated_data(const Envelope& env) {
  Bytes ad;
  ad.push_back(env.version);
  append(ad, env.session_id);
  append_u32_be(ad, static_cast<std::uint32_t>(env.sender.size()));
  append(ad, to_bytes(env.sender));
  append_u32_be(ad, static_cast<std::uint32_t>(env.receiver.size()));
  append(ad, to_bytes(env.receiver));
  append_u64_be(ad, env.seq);
  ad.push_back(env.msg_type);
  return ad;
}

// --- wire encoding ----------------------------------------------------------------

inline nlohmann::json envelope_to_json(const Envelope& env) {
  // nlohmann::json sorts object keys, so dump() is canonical.
  return nlohmann::json{{"version", env.version},
                        {"session_id", to_hex(env.session_id)},
                        {"sender", env.sender},
                        {"receiver", env.receiver},
                        {"seq", env.seq},
                        {"type", env.msg_type},
                        {"nonce", to_hex(env.nonce)},
                        {"ct", to_hex(env.ciphertext)}};
}

inline Envelope envelope_from_json(const nlohmann::json& j) {
  try {
    Envelope env;
    env.version = j.at("version").get<std::uint8_t>();
    env.session_id = fixed_from_hex<kSessionIdBytes>(j.at("session_id").get<std::string>());
    env.sender = j.at("sender").get<std::string>();
    env.receiver = j.at("receiver").get<std::string>();
    env.seq = j.at("seq").get<std::uint64_t>();
    env.msg_type = j.at("type").get<std::uint8_t>();
    env.nonce = from_hex(j.at("nonce").get<std::string>());
    env.ciphertext = from_hex(j.at("ct").get<std::string>());
    return env;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("envelope: ") + e.what());
  }
}

inline std::string encode_wire(const Envelope& env) {
  // Tampered node ids may not be valid UTF-8; replace rather than throw.
  return envelope_to_json(env).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline Envelope decode_wire(std::string_view text) {
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(Errc::ParseError, "envelope is not a JSON object");
  return envelope_from_json(j);
}

/// 4-byte big-endian length prefix followed by the canonical JSON.
inline Bytes frame(const Envelope& env) {
  std::string body = encode_wire(env);
  Bytes out;
  append_u32_be(out, static_cast<std::uint32_t>(body.size()));
  append(out, to_bytes(body));
  return out;
}

// --- bit addressing ----------------------------------------------------------------

/// Number of bits covered by flip_bit: every header field plus nonce and ciphertext.
inline std::size_t envelope_bit_count(const Envelope& env) {
  return 8 * (1 + kSessionIdBytes + env.sender.size() + env.receiver.size() + 8 + 1 + env.nonce.size() +
              env.ciphertext.size());
}

/// Flips one bit, addressing version | session_id | sender | receiver | seq |
/// type | nonce | ciphertext as one concatenated bit string.
inline void flip_bit(Envelope& env, std::size_t bit) {
  if (bit >= envelope_bit_count(env)) throw Error(Errc::InvalidArgument, "bit index out of range");
  std::size_t byte = bit / 8;
  const auto mask = static_cast<std::uint8_t>(1u << (bit % 8));
  auto hit = [&](std::size_t len) {
    if (byte < len) return true;
    byte -= len;
    return false;
  };
  if (hit(1)) {
    env.version ^= mask;
  } else if (hit(kSessionIdBytes)) {
    env.session_id[byte] ^= mask;
  } else if (hit(env.sender.size())) {
    env.sender[byte] = static_cast<char>(env.sender[byte] ^ mask);
  } else if (hit(env.receiver.size())) {
    env.receiver[byte] = static_cast<char>(env.receiver[byte] ^ mask);
  } else if (hit(8)) {
    env.seq ^= std::uint64_t{mask} << (8 * (7 - byte));
  } else if (hit(1)) {
    env.msg_type ^= mask;
  } else if (hit(env.nonce.size())) {
    env.nonce[byte] ^= mask;
  } else {
    env.ciphertext[byte] ^= mask;
  }
}

// --- channel ---------------------------------------------------------------------

struct ChannelOptions {
  // Test-only control switch: payloads travel in the clear with a truncated
  // HMAC tag instead of AES-GCM. Integrity and replay checks still apply.
  bool encrypt = true;
};

/// One node's end of all its links.
class SecureChannel {
 public:
  SecureChannel(std::string self, RandomSource& rng, ChannelOptions options = {})
      : self_(std::move(self)), rng_(&rng), options_(options) {}

  SecureChannel(SecureChannel&&) noexcept = default;
  SecureChannel& operator=(SecureChannel&&) noexcept = default;

  const std::string& self() const noexcept { return self_; }
  const ChannelOptions& options() const noexcept { return options_; }

  void add_peer(const std::string& peer, SecretBytes key) {
    if (key.size() != crypto::kKeyBytes) throw Error(Errc::InvalidArgument, "link key must be 32 bytes");
    if (peer == self_) throw Error(Errc::InvalidArgument, "node cannot link to itself");
    keys_.insert_or_assign(peer, std::move(key));
  }

  bool knows(const std::string& peer) const { return keys_.contains(peer); }

  Envelope seal(const std::string& peer, const SessionId& session, MsgType type, ByteView plaintext) {
    const SecretBytes& key = key_for(peer);
    Envelope env;
    env.session_id = session;
    env.sender = self_;
    env.receiver = peer;
    env.seq = ++send_seq_[{peer, session}];
    env.msg_type = static_cast<std::uint8_t>(type);
    const Bytes ad = associated_data(env);
    if (options_.encrypt) {
      env.nonce = rng_->bytes(crypto::kGcmNonceBytes);
      env.ciphertext = crypto::aead_seal(key.view(), env.nonce, plaintext, ad);
    } else {
      env.ciphertext.assign(plaintext.begin(), plaintext.end());
      append(env.ciphertext, clear_tag(key, ad, plaintext));
    }
    return env;
  }

  /// Authenticates and decrypts. Sequence freshness is checked only after the
  /// tag verifies, so forged envelopes cannot advance the replay window.
  SecretBytes open(const Envelope& env) {
    if (env.receiver != self_) throw Error(Errc::Misaddressed, "envelope addressed to " + env.receiver);
    auto it = keys_.find(env.sender);
    if (it == keys_.end()) throw Error(Errc::IntegrityFailure, "no link to " + env.sender);
    if (env.version != kEnvelopeVersion || !is_known_msg_type(env.msg_type)) {
      throw Error(Errc::IntegrityFailure, "malformed envelope header");
    }
    const Bytes ad = associated_data(env);
    std::optional<SecretBytes> plain;
    if (options_.encrypt) {
      plain = crypto::aead_open(it->second.view(), env.nonce, env.ciphertext, ad);
    } else if (env.ciphertext.size() >= kClearTagBytes && env.nonce.empty()) {
      const std::size_t body = env.ciphertext.size() - kClearTagBytes;
      ByteView payload(env.ciphertext.data(), body);
      ByteView tag(env.ciphertext.data() + body, kClearTagBytes);
      if (crypto::constant_time_equal(clear_tag(it->second, ad, payload), tag)) plain = SecretBytes(payload);
    }
    if (!plain) throw Error(Errc::IntegrityFailure, "envelope failed authentication");
    std::uint64_t& last = recv_seq_[{env.sender, env.session_id}];
    if (env.seq <= last) throw Error(Errc::ReplayDetected, "stale sequence number");
    last = env.seq;
    return std::move(*plain);
  }

 private:
  static constexpr std::size_t kClearTagBytes = 16;

  const SecretBytes& key_for(const std::string& peer) const {
    auto it = keys_.find(peer);
    if (it == keys_.end()) throw Error(Errc::InvalidArgument, "no link key for " + peer);
    return it->second;
  }

  static Bytes clear_tag(const SecretBytes& key, ByteView ad, ByteView payload) {
    Bytes input(ad.begin(), ad.end());
    append(input, payload);
    auto mac = crypto::hmac_sha256(key.view(), input);
    return Bytes(mac.begin(), mac.begin() + kClearTagBytes);
  }

  std::string self_;
  RandomSource* rng_;
  ChannelOptions options_;
  std::map<std::string, SecretBytes> keys_;
  std::map<std::pair<std::string, SessionId>, std::uint64_t> send_seq_;
  std::map<std::pair<std::string, SessionId>, std::uint64_t> recv_seq_;
};

}  // namespace kq::protocol
