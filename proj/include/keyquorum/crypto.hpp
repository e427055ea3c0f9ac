#pragma once

// Thin RAII wrappers over the OpenSSL primitives the custodian and the
// channel layer need: SHA-256, HMAC-SHA-256, AES-256 single-block ECB (for
// key check values) and AES-256-GCM.

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <array>
#include <cstdint>
#include <memory>
#include <optional>

#include "keyquorum/bytes.hpp"

namespace kq::crypto {

inline constexpr std::size_t kKeyBytes = 32;
inline constexpr std::size_t kDigestBytes = 32;
inline constexpr std::size_t kGcmNonceBytes = 12;
inline constexpr std::size_t kGcmTagBytes = 16;
inline constexpr std::size_t kBlockBytes = 16;

using Digest = std::array<std::uint8_t, kDigestBytes>;

namespace detail {

struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* ctx) const noexcept { EVP_CIPHER_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

inline CipherCtx new_cipher_ctx() {
  CipherCtx ctx(EVP_CIPHER_CTX_new());
  if (!ctx) throw std::bad_alloc();
  return ctx;
}

inline void check(int rc, const char* what) {
  if (rc != 1) throw Error(Errc::InvalidArgument, std::string("openssl: ") + what);
}

inline void require_key(ByteView key) {
  if (key.size() != kKeyBytes) throw Error(Errc::InvalidArgument, "key must be 32 bytes");
}

}  // namespace detail

inline Digest sha256(ByteView data) {
  Digest out{};
  unsigned int len = 0;
  detail::check(EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr),
                "sha256");
  return out;
}

inline Digest hmac_sha256(ByteView key, ByteView message) {
  Digest out{};
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), message.data(), message.size(),
           out.data(), &len) == nullptr) {
    throw Error(Errc::InvalidArgument, "openssl: hmac");
  }
  return out;
}

inline bool constant_time_equal(ByteView a, ByteView b) noexcept {
  return a.size() == b.size() && CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

/// One raw AES-256 block encryption (ECB, no padding).
inline std::array<std::uint8_t, kBlockBytes> aes256_encrypt_block(
    ByteView key, const std::array<std::uint8_t, kBlockBytes>& block) {
  detail::require_key(key);
  auto ctx = detail::new_cipher_ctx();
  detail::check(EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_ecb(), nullptr, key.data(), nullptr),
                "ecb init");
  EVP_CIPHER_CTX_set_padding(ctx.get(), 0);
  std::array<std::uint8_t, kBlockBytes> out{};
  int len = 0;
  detail::check(EVP_EncryptUpdate(ctx.get(), out.data(), &len, block.data(),
                                  static_cast<int>(block.size())),
                "ecb update");
  int tail = 0;
  detail::check(EVP_EncryptFinal_ex(ctx.get(), out.data() + len, &tail), "ecb final");
  return out;
}

/// AES-256-GCM. Returns ciphertext with the 16-byte tag appended.
inline Bytes aead_seal(ByteView key, ByteView nonce, ByteView plaintext, ByteView ad) {
  detail::require_key(key);
  if (nonce.size() != kGcmNonceBytes) throw Error(Errc::InvalidArgument, "nonce must be 12 bytes");
  auto ctx = detail::new_cipher_ctx();
  detail::check(EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr),
                "gcm init");
  detail::check(EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data()),
                "gcm key");
  int len = 0;
  if (!ad.empty()) {
    detail::check(EVP_EncryptUpdate(ctx.get(), nullptr, &len, ad.data(), static_cast<int>(ad.size())),
                  "gcm aad");
  }
  Bytes out(plaintext.size() + kGcmTagBytes);
  int written = 0;
  if (!plaintext.empty()) {
    detail::check(EVP_EncryptUpdate(ctx.get(), out.data(), &written, plaintext.data(),
                                    static_cast<int>(plaintext.size())),
                  "gcm update");
  }
  int tail = 0;
  detail::check(EVP_EncryptFinal_ex(ctx.get(), out.data() + written, &tail), "gcm final");
  detail::check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kGcmTagBytes,
                                    out.data() + plaintext.size()),
                "gcm tag");
  return out;
}

/// Inverse of aead_seal. Empty optional when the tag does not verify.
inline std::optional<SecretBytes> aead_open(ByteView key, ByteView nonce, ByteView sealed,
                                            ByteView ad) {
  detail::require_key(key);
  if (nonce.size() != kGcmNonceBytes || sealed.size() < kGcmTagBytes) return std::nullopt;
  const std::size_t body = sealed.size() - kGcmTagBytes;
  auto ctx = detail::new_cipher_ctx();
  detail::check(EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr),
                "gcm init");
  detail::check(EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data()),
                "gcm key");
  int len = 0;
  if (!ad.empty()) {
    detail::check(EVP_DecryptUpdate(ctx.get(), nullptr, &len, ad.data(), static_cast<int>(ad.size())),
                  "gcm aad");
  }
  SecretBytes out(body);
  int written = 0;
  if (body != 0) {
    detail::check(EVP_DecryptUpdate(ctx.get(), out.mutable_view().data(), &written, sealed.data(),
                                    static_cast<int>(body)),
                  "gcm update");
  }
  std::array<std::uint8_t, kGcmTagBytes> tag{};
  std::copy(sealed.begin() + static_cast<std::ptrdiff_t>(body), sealed.end(), tag.begin());
  detail::check(EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kGcmTagBytes, tag.data()),
                "gcm set tag");
  int tail = 0;
  if (EVP_DecryptFinal_ex(ctx.get(), out.mutable_view().data() + written, &tail) != 1) {
    return std::nullopt;
  }
  return out;
}

}  // namespace kq::crypto
