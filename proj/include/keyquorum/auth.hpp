#pragma once

#include <string>
#include <string_view>

#include "keyquorum/bytes.hpp"
#include "keyquorum/crypto.hpp"

namespace kq {

enum class Operation { Encrypt, Mac };

inline std::string_view to_string(Operation op) noexcept {
  return op == Operation::Encrypt ? "encrypt" : "mac";
}

inline Operation operation_from_string(std::string_view name) {
  if (name == "encrypt") return Operation::Encrypt;
  if (name == "mac") return Operation::Mac;
  throw Error(Errc::ParseError, "unknown operation: " + std::string(name));
}

/// A request (m, omega) for one operation under the master key.
struct Request {
  Operation op = Operation::Encrypt;
  Bytes m;
  Bytes omega;
};

/// Checks the request authenticator omega over m. Pluggable so that omega
/// can be an HMAC, a signature or a token check.
class Authenticator {
 public:
  virtual ~Authenticator() = default;
  virtual bool verify(ByteView m, ByteView omega) const = 0;
};

class RequestSigner {
 public:
  virtual ~RequestSigner() = default;
  virtual Bytes sign(ByteView m) const = 0;
};

/// omega = HMAC-SHA-256(credential key, m).
class HmacAuthenticator final : public Authenticator, public RequestSigner {
 public:
  explicit HmacAuthenticator(ByteView credential_key) : key_(credential_key) {
    if (key_.size() != crypto::kKeyBytes) {
      throw Error(Errc::InvalidArgument, "credential key must be 32 bytes");
    }
  }

  bool verify(ByteView m, ByteView omega) const override {
    auto expected = crypto::hmac_sha256(key_.view(), m);
    return crypto::constant_time_equal(expected, omega);
  }

  Bytes sign(ByteView m) const override {
    auto tag = crypto::hmac_sha256(key_.view(), m);
    return Bytes(tag.begin(), tag.end());
  }

 private:
  SecretBytes key_;
};

inline Request make_request(Operation op, ByteView m, const RequestSigner& signer) {
  return Request{op, Bytes(m.begin(), m.end()), signer.sign(m)};
}

}  // namespace kq
