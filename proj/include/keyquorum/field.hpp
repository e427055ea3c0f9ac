#pragma once

// Prime-field arithmetic over arbitrary-precision integers (GMP).
//
// One code path serves both toy primes (13, 17, 251, used by exhaustive
// tests) and production primes of 256 bits and up. Arithmetic is NOT constant
// time; this code is not hardened against timing side channels.

#include <gmpxx.h>

#include <memory>
#include <string>
#include <string_view>

#include "keyquorum/bytes.hpp"
#include "keyquorum/random.hpp"

namespace kq {

/// Miller-Rabin repetitions for primality checks; error <= 4^-40 = 2^-80.
inline constexpr int kPrimalityReps = 40;

inline bool is_probable_prime(const mpz_class& n) {
  return mpz_probab_prime_p(n.get_mpz_t(), kPrimalityReps) != 0;
}

/// Overwrite the limbs of a big integer before releasing it.
inline void wipe(mpz_class& z) noexcept {
  mpz_ptr raw = z.get_mpz_t();
  if (raw->_mp_d != nullptr && raw->_mp_alloc > 0) {
    secure_wipe(raw->_mp_d, static_cast<std::size_t>(raw->_mp_alloc) * sizeof(mp_limb_t));
  }
  raw->_mp_size = 0;
}

/// Big-endian, minimal-length encoding. Zero encodes as a single 0x00 byte.
inline Bytes encode_be(const mpz_class& value) {
  if (value < 0) throw Error(Errc::InvalidArgument, "cannot encode a negative integer");
  if (value == 0) return Bytes{0};
  std::size_t count = 0;
  Bytes out((mpz_sizeinbase(value.get_mpz_t(), 2) + 7) / 8);
  mpz_export(out.data(), &count, 1, 1, 1, 0, value.get_mpz_t());
  out.resize(count);
  return out;
}

inline mpz_class decode_be(ByteView bytes) {
  mpz_class out;
  if (!bytes.empty()) mpz_import(out.get_mpz_t(), bytes.size(), 1, 1, 1, 0, bytes.data());
  return out;
}

inline std::string to_hex(const mpz_class& value) { return to_hex(encode_be(value)); }

inline mpz_class mpz_from_hex(std::string_view hex) {
  if (hex.empty()) throw Error(Errc::ParseError, "empty integer");
  return decode_be(from_hex(hex));
}

/// Modulus of a prime field. Cheap to copy; the prime is shared.
class FieldModulus {
 public:
  /// Validates primality (probabilistic, error <= 2^-80) and p >= 3.
  explicit FieldModulus(const mpz_class& p) : p_(std::make_shared<const mpz_class>(p)) {
    if (p < 3) throw Error(Errc::ParameterValidation, "field modulus must be >= 3");
    if (!is_probable_prime(p)) throw Error(Errc::ParameterValidation, "field modulus is not prime");
  }
  explicit FieldModulus(unsigned long p) : FieldModulus(mpz_class(p)) {}

  /// 2^256 - 189, the largest prime below 2^256.
  static FieldModulus production() {
    mpz_class p = 1;
    p <<= 256;
    p -= 189;
    return FieldModulus(p);
  }

  const mpz_class& value() const noexcept { return *p_; }
  std::size_t bits() const { return mpz_sizeinbase(p_->get_mpz_t(), 2); }

  friend bool operator==(const FieldModulus& a, const FieldModulus& b) {
    return a.p_ == b.p_ || *a.p_ == *b.p_;
  }

 private:
  std::shared_ptr<const mpz_class> p_;
};

/// Element of Z_p. Immutable value type; its integer is wiped on destruction.
class FieldElement {
 public:
  /// Reduces any integer (including negatives) into [0, p).
  FieldElement(const FieldModulus& modulus, const mpz_class& value) : modulus_(modulus) {
    mpz_mod(value_.get_mpz_t(), value.get_mpz_t(), modulus_.value().get_mpz_t());
  }
  FieldElement(const FieldModulus& modulus, long value) : FieldElement(modulus, mpz_class(value)) {}

  FieldElement(const FieldElement&) = default;
  FieldElement& operator=(const FieldElement& other) {
    if (this != &other) {
      wipe(value_);
      value_ = other.value_;
      modulus_ = other.modulus_;
    }
    return *this;
  }
  FieldElement(FieldElement&&) = default;
  FieldElement& operator=(FieldElement&&) = default;
  ~FieldElement() { wipe(value_); }

  static FieldElement zero(const FieldModulus& m) { return FieldElement(m, 0L); }
  static FieldElement one(const FieldModulus& m) { return FieldElement(m, 1L); }

  const mpz_class& value() const noexcept { return value_; }
  const FieldModulus& modulus() const noexcept { return modulus_; }
  bool is_zero() const { return value_ == 0; }

  Bytes to_bytes() const { return encode_be(value_); }
  std::string hex() const { return kq::to_hex(value_); }

  friend FieldElement add(const FieldElement& a, const FieldElement& b) {
    check_same(a, b);
    return FieldElement(a.modulus_, mpz_class(a.value_ + b.value_));
  }
  friend FieldElement sub(const FieldElement& a, const FieldElement& b) {
    check_same(a, b);
    return FieldElement(a.modulus_, mpz_class(a.value_ - b.value_));
  }
  friend FieldElement mul(const FieldElement& a, const FieldElement& b) {
    check_same(a, b);
    return FieldElement(a.modulus_, mpz_class(a.value_ * b.value_));
  }
  friend FieldElement neg(const FieldElement& a) {
    return FieldElement(a.modulus_, mpz_class(-a.value_));
  }

  friend FieldElement inv(const FieldElement& a) {
    if (a.is_zero()) throw Error(Errc::ZeroInverse, "zero has no multiplicative inverse");
    mpz_class out;
    mpz_invert(out.get_mpz_t(), a.value_.get_mpz_t(), a.modulus_.value().get_mpz_t());
    return FieldElement(a.modulus_, out);
  }

  friend FieldElement pow(const FieldElement& a, const mpz_class& exponent) {
    if (exponent < 0) throw Error(Errc::InvalidArgument, "negative exponent");
    mpz_class out;
    mpz_powm(out.get_mpz_t(), a.value_.get_mpz_t(), exponent.get_mpz_t(),
             a.modulus_.value().get_mpz_t());
    return FieldElement(a.modulus_, out);
  }

  friend FieldElement operator+(const FieldElement& a, const FieldElement& b) { return add(a, b); }
  friend FieldElement operator-(const FieldElement& a, const FieldElement& b) { return sub(a, b); }
  friend FieldElement operator*(const FieldElement& a, const FieldElement& b) { return mul(a, b); }
  friend FieldElement operator-(const FieldElement& a) { return neg(a); }

  friend bool operator==(const FieldElement& a, const FieldElement& b) {
    return a.modulus_ == b.modulus_ && a.value_ == b.value_;
  }

 private:
  static void check_same(const FieldElement& a, const FieldElement& b) {
    if (!(a.modulus_ == b.modulus_)) {
      throw Error(Errc::ModulusMismatch, "operands belong to different fields");
    }
  }

  FieldModulus modulus_;
  mpz_class value_;
};

/// Uniform element of [0, p) by rejection sampling over ceil(bits/8) bytes
/// with the excess high bits masked off.
inline FieldElement random_element(const FieldModulus& modulus, RandomSource& rng) {
  const std::size_t bits = modulus.bits();
  const std::size_t nbytes = (bits + 7) / 8;
  const unsigned top_bits = static_cast<unsigned>(bits - (nbytes - 1) * 8);
  const auto top_mask = static_cast<std::uint8_t>((1u << top_bits) - 1u);
  SecretBytes buf(nbytes);
  for (;;) {
    rng.fill(buf.mutable_view());
    buf.mutable_view()[0] &= top_mask;
    mpz_class candidate = decode_be(buf.view());
    if (candidate < modulus.value()) {
      FieldElement out(modulus, candidate);
      wipe(candidate);
      return out;
    }
    wipe(candidate);
  }
}

}  // namespace kq
