#pragma once

#include <openssl/crypto.h>

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "keyquorum/errors.hpp"

namespace kq {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline void secure_wipe(void* data, std::size_t len) noexcept {
  if (data != nullptr && len != 0) OPENSSL_cleanse(data, len);
}

inline void secure_wipe(Bytes& bytes) noexcept {
  secure_wipe(bytes.data(), bytes.size());
  bytes.clear();
}

/// Owning byte buffer for key material. Overwritten on destruction and on
/// move-from; never copied implicitly.
class SecretBytes {
 public:
  SecretBytes() = default;
  explicit SecretBytes(ByteView data) : data_(data.begin(), data.end()) {}
  explicit SecretBytes(Bytes&& data) noexcept : data_(std::move(data)) {}
  explicit SecretBytes(std::size_t size) : data_(size, 0) {}

  SecretBytes(const SecretBytes&) = delete;
  SecretBytes& operator=(const SecretBytes&) = delete;

  SecretBytes(SecretBytes&& other) noexcept : data_(std::move(other.data_)) { other.data_.clear(); }
  SecretBytes& operator=(SecretBytes&& other) noexcept {
    if (this != &other) {
      secure_wipe(data_);
      data_ = std::move(other.data_);
      other.data_.clear();
    }
    return *this;
  }

  ~SecretBytes() { secure_wipe(data_); }

  SecretBytes clone() const { return SecretBytes(ByteView(data_)); }

  ByteView view() const noexcept { return data_; }
  std::span<std::uint8_t> mutable_view() noexcept { return data_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  void wipe() noexcept { secure_wipe(data_); }

 private:
  Bytes data_;
};

inline Bytes to_bytes(std::string_view text) { return Bytes(text.begin(), text.end()); }

inline std::string to_string(ByteView bytes) { return std::string(bytes.begin(), bytes.end()); }

inline std::string to_hex(ByteView bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

inline Bytes from_hex(std::string_view hex) {
  auto nibble = [&](char c) -> std::uint8_t {
    if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<std::uint8_t>(c - 'A' + 10);
    throw Error(Errc::ParseError, "invalid hex digit");
  };
  if (hex.size() % 2 != 0) throw Error(Errc::ParseError, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>((nibble(hex[2 * i]) << 4) | nibble(hex[2 * i + 1]));
  }
  return out;
}

template <std::size_t N>
std::array<std::uint8_t, N> fixed_from_hex(std::string_view hex) {
  Bytes raw = from_hex(hex);
  if (raw.size() != N) throw Error(Errc::ParseError, "unexpected field length");
  std::array<std::uint8_t, N> out{};
  std::copy(raw.begin(), raw.end(), out.begin());
  return out;
}

inline bool contains_subsequence(ByteView haystack, ByteView needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) !=
         haystack.end();
}

/// True if the secret appears in the haystack either raw or as lowercase hex.
inline bool leaks(ByteView haystack, ByteView secret) {
  if (contains_subsequence(haystack, secret)) return true;
  std::string hex = to_hex(secret);
  return contains_subsequence(haystack, ByteView(reinterpret_cast<const std::uint8_t*>(hex.data()),
                                                 hex.size()));
}

inline void append_u32_be(Bytes& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

inline void append_u64_be(Bytes& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

inline std::uint32_t read_u32_be(ByteView in) {
  if (in.size() < 4) throw Error(Errc::ParseError, "short u32");
  return (std::uint32_t{in[0]} << 24) | (std::uint32_t{in[1]} << 16) | (std::uint32_t{in[2]} << 8) |
         std::uint32_t{in[3]};
}

inline void append(Bytes& out, ByteView data) { out.insert(out.end(), data.begin(), data.end()); }

}  // namespace kq
