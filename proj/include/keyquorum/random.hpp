#pragma once

#include <openssl/rand.h>

#include <cstdint>
#include <limits>
#include <span>

#include "keyquorum/bytes.hpp"
#include "keyquorum/crypto.hpp"

namespace kq {

/// Source of uniform random bytes. Passed explicitly everywhere randomness is
/// consumed so that ceremonies and simulations can be replayed from a seed.
class RandomSource {
 public:
  virtual ~RandomSource() = default;
  virtual void fill(std::span<std::uint8_t> out) = 0;

  Bytes bytes(std::size_t n) {
    Bytes out(n);
    fill(out);
    return out;
  }

  /// Uniform integer in [0, bound) by rejection sampling.
  std::uint64_t uniform(std::uint64_t bound) {
    if (bound == 0) throw Error(Errc::InvalidArgument, "uniform bound must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    for (;;) {
      std::uint8_t raw[8];
      fill(raw);
      std::uint64_t v = 0;
      for (std::uint8_t b : raw) v = (v << 8) | b;
      if (v < limit) return v % bound;
    }
  }
};

/// Operating-system entropy via the OpenSSL DRBG.
class SystemRandom final : public RandomSource {
 public:
  void fill(std::span<std::uint8_t> out) override {
    if (out.empty()) return;
    if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) {
      throw Error(Errc::EntropyFailure, "RAND_bytes failed");
    }
  }
};

/// Replayable generator for tests, simulations and `--seed` ceremonies.
/// Output block i is SHA-256(seed || be64(i)); blocks are consumed in order.
/// Not for production key generation.
class DeterministicRandom final : public RandomSource {
 public:
  explicit DeterministicRandom(std::uint64_t seed) { append_u64_be(seed_, seed); }
  explicit DeterministicRandom(ByteView seed) : seed_(seed.begin(), seed.end()) {}

  void fill(std::span<std::uint8_t> out) override {
    for (auto& byte : out) {
      if (offset_ == block_.size()) refill();
      byte = block_[offset_++];
    }
  }

 private:
  void refill() {
    Bytes input = seed_;
    append_u64_be(input, counter_++);
    block_ = crypto::sha256(input);
    offset_ = 0;
  }

  Bytes seed_;
  std::uint64_t counter_ = 0;
  crypto::Digest block_{};
  std::size_t offset_ = block_.size();
};

}  // namespace kq
