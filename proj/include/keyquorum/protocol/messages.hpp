#pragma once

// Payload codecs. Payloads are JSON objects carried inside envelopes.

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "keyquorum/auth.hpp"
#include "keyquorum/hsm.hpp"
#include "keyquorum/sharing.hpp"

namespace kq::protocol {

struct ResultMessage {
  enum class Status { Ok, Aborted };
  Status status = Status::Aborted;
  Bytes c;
  std::optional<Errc> reason;
  std::vector<std::uint32_t> culprits;

  bool ok() const noexcept { return status == Status::Ok; }

  static ResultMessage success(Bytes c, std::vector<std::uint32_t> culprits = {}) {
    return ResultMessage{Status::Ok, std::move(c), std::nullopt, std::move(culprits)};
  }
  static ResultMessage aborted(Errc reason, std::vector<std::uint32_t> culprits = {}) {
    return ResultMessage{Status::Aborted, {}, reason, std::move(culprits)};
  }

  bool operator==(const ResultMessage&) const = default;
};

namespace detail {

template <typename Fn>
auto parse_payload(ByteView payload, Fn&& fn) {
  auto j = nlohmann::json::parse(payload.begin(), payload.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(Errc::ParseError, "payload is not a JSON object");
  try {
    return fn(j);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("payload: ") + e.what());
  }
}

inline Bytes dump(const nlohmann::json& j) { return to_bytes(j.dump()); }

}  // namespace detail

// Request and OpenSession carry the same body.
inline Bytes encode_request(const Request& r) {
  return detail::dump({{"op", to_string(r.op)}, {"m", to_hex(r.m)}, {"omega", to_hex(r.omega)}});
}

inline Request decode_request(ByteView payload) {
  return detail::parse_payload(payload, [](const nlohmann::json& j) {
    return Request{operation_from_string(j.at("op").get<std::string>()),
                   from_hex(j.at("m").get<std::string>()),
                   from_hex(j.at("omega").get<std::string>())};
  });
}

inline Bytes encode_session_opened(const SessionId& id) {
  return detail::dump({{"session_id", to_hex(id)}});
}

inline SessionId decode_session_opened(ByteView payload) {
  return detail::parse_payload(payload, [](const nlohmann::json& j) {
    return fixed_from_hex<kSessionIdBytes>(j.at("session_id").get<std::string>());
  });
}

inline Bytes encode_unlock_request() { return detail::dump(nlohmann::json::object()); }

inline Bytes encode_share_contribution(const Share& share) {
  return detail::dump({{"share", share_to_json(share)}});
}

inline Share decode_share_contribution(ByteView payload, const FieldModulus& expected) {
  return detail::parse_payload(payload, [&](const nlohmann::json& j) {
    return share_from_json(j.at("share"), &expected);
  });
}

inline nlohmann::json result_to_json(const ResultMessage& r) {
  nlohmann::json j{{"status", r.ok() ? "ok" : "aborted"},
                   {"c", to_hex(r.c)},
                   {"culprits", r.culprits}};
  j["reason"] = r.reason ? nlohmann::json(std::string(to_string(*r.reason))) : nlohmann::json(nullptr);
  return j;
}

inline ResultMessage result_from_json(const nlohmann::json& j) {
  try {
    ResultMessage r;
    const auto status = j.at("status").get<std::string>();
    if (status != "ok" && status != "aborted") throw Error(Errc::ParseError, "bad result status");
    r.status = status == "ok" ? ResultMessage::Status::Ok : ResultMessage::Status::Aborted;
    r.c = from_hex(j.at("c").get<std::string>());
    if (!j.at("reason").is_null()) r.reason = errc_from_string(j.at("reason").get<std::string>());
    r.culprits = j.at("culprits").get<std::vector<std::uint32_t>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("result: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw Error(Errc::ParseError, std::string("result: ") + e.what());
  }
}

inline Bytes encode_result(const ResultMessage& r) { return detail::dump(result_to_json(r)); }

inline ResultMessage decode_result(ByteView payload) {
  return detail::parse_payload(payload, [](const nlohmann::json& j) { return result_from_json(j); });
}

}  // namespace kq::protocol
