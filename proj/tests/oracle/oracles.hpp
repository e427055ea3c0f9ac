#pragma once

// Independent oracles for the test suites. Nothing here calls into the
// keyquorum headers' arithmetic or cipher code: small-field checks use plain
// 64-bit integers and brute force, and cipher checks go through libsodium
// rather than OpenSSL.

#include <sodium.h>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace oracle {

using Bytes = std::vector<std::uint8_t>;

// AES-256 encryption of the all-zero block under the all-zero key, computed
// with the Python `cryptography` package (OpenSSL-independent reference run).
inline constexpr const char* kAes256ZeroKeyZeroBlock = "dc95c078a2408989ad48a21492842087";

inline std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t p) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(a) * b) % p);
}

inline std::uint64_t powmod_naive(std::uint64_t a, std::uint64_t e, std::uint64_t p) {
  std::uint64_t out = 1 % p;
  for (std::uint64_t i = 0; i < e; ++i) out = mulmod(out, a % p, p);
  return out;
}

/// Scans Z_p for the multiplicative inverse.
inline std::uint64_t inverse_by_scan(std::uint64_t a, std::uint64_t p) {
  for (std::uint64_t b = 1; b < p; ++b) {
    if (mulmod(a, b, p) == 1) return b;
  }
  throw std::domain_error("no inverse");
}

/// Evaluates sum coeffs[j] x^j mod p term by term (no Horner).
inline std::uint64_t poly_eval(const std::vector<std::uint64_t>& coeffs, std::uint64_t x,
                               std::uint64_t p) {
  std::uint64_t acc = 0;
  for (std::size_t j = 0; j < coeffs.size(); ++j) {
    acc = (acc + mulmod(coeffs[j] % p, powmod_naive(x, j, p), p)) % p;
  }
  return acc;
}

inline void ensure_sodium() {
  if (sodium_init() < 0) throw std::runtime_error("libsodium init failed");
}

inline std::string hex(const std::uint8_t* data, std::size_t len) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < len; ++i) {
    out.push_back(kDigits[data[i] >> 4]);
    out.push_back(kDigits[data[i] & 0xf]);
  }
  return out;
}

inline bool aes_gcm_available() {
  ensure_sodium();
  return crypto_aead_aes256gcm_is_available() != 0;
}

/// Decrypts nonce(12) || ciphertext || tag(16) with AES-256-GCM via libsodium.
inline std::optional<Bytes> gcm_decrypt(const Bytes& key, const Bytes& blob, const Bytes& ad = {}) {
  ensure_sodium();
  if (key.size() != crypto_aead_aes256gcm_KEYBYTES) return std::nullopt;
  if (blob.size() < crypto_aead_aes256gcm_NPUBBYTES + crypto_aead_aes256gcm_ABYTES) return std::nullopt;
  const std::uint8_t* nonce = blob.data();
  const std::uint8_t* ct = blob.data() + crypto_aead_aes256gcm_NPUBBYTES;
  const std::size_t ct_len = blob.size() - crypto_aead_aes256gcm_NPUBBYTES;
  Bytes out(ct_len - crypto_aead_aes256gcm_ABYTES);
  unsigned long long out_len = 0;
  if (crypto_aead_aes256gcm_decrypt(out.data(), &out_len, nullptr, ct, ct_len,
                                    ad.empty() ? nullptr : ad.data(), ad.size(), nonce,
                                    key.data()) != 0) {
    return std::nullopt;
  }
  out.resize(out_len);
  return out;
}

inline Bytes hmac_sha256(const Bytes& key, const Bytes& m) {
  ensure_sodium();
  crypto_auth_hmacsha256_state st;
  crypto_auth_hmacsha256_init(&st, key.data(), key.size());
  crypto_auth_hmacsha256_update(&st, m.data(), m.size());
  Bytes out(crypto_auth_hmacsha256_BYTES);
  crypto_auth_hmacsha256_final(&st, out.data());
  return out;
}

inline Bytes sha256(const Bytes& m) {
  ensure_sodium();
  Bytes out(crypto_hash_sha256_BYTES);
  crypto_hash_sha256(out.data(), m.data(), m.size());
  return out;
}

/// First n bytes of the seeded generator stream: SHA-256(be64(seed) || be64(i)).
inline Bytes drbg_prefix(std::uint64_t seed, std::size_t n) {
  Bytes out;
  for (std::uint64_t block = 0; out.size() < n; ++block) {
    Bytes input;
    for (int s = 56; s >= 0; s -= 8) input.push_back(static_cast<std::uint8_t>(seed >> s));
    for (int s = 56; s >= 0; s -= 8) input.push_back(static_cast<std::uint8_t>(block >> s));
    Bytes digest = sha256(input);
    out.insert(out.end(), digest.begin(), digest.end());
  }
  out.resize(n);
  return out;
}

}  // namespace oracle
