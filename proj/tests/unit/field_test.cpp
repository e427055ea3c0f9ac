#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "keyquorum/field.hpp"
#include "oracle/oracles.hpp"

namespace kq {
namespace {

FieldElement fe(const FieldModulus& m, long v) { return FieldElement(m, v); }

TEST(FieldModulus, RejectsCompositesAndTinyValues) {
  EXPECT_THROW(FieldModulus(15UL), Error);
  EXPECT_THROW(FieldModulus(2UL), Error);
  EXPECT_THROW(FieldModulus(1UL), Error);
  EXPECT_NO_THROW(FieldModulus(3UL));
  EXPECT_NO_THROW(FieldModulus(251UL));
}

TEST(FieldModulus, ProductionPrimeIsLargestBelow2To256) {
  auto m = FieldModulus::production();
  EXPECT_EQ(m.bits(), 256u);
  // 2^256 - k is composite for every even k and for every odd k < 189.
  mpz_class top = 1;
  top <<= 256;
  for (unsigned long k = 1; k < 189; ++k) {
    EXPECT_FALSE(is_probable_prime(mpz_class(top - k))) << k;
  }
}

TEST(Field, AddExamples) {
  FieldModulus p(17UL);
  EXPECT_EQ(add(fe(p, 16), fe(p, 1)), fe(p, 0));
  EXPECT_EQ(add(fe(p, 0), fe(p, 5)), fe(p, 5));
  EXPECT_EQ(add(fe(p, 10), fe(p, 14)), fe(p, 7));
}

TEST(Field, MulExamples) {
  FieldModulus p(17UL);
  EXPECT_EQ(mul(fe(p, 1), fe(p, 9)), fe(p, 9));
  EXPECT_EQ(mul(fe(p, 3), fe(p, 6)), fe(p, 1));
  EXPECT_EQ(mul(fe(p, 0), fe(p, 12)), fe(p, 0));
}

TEST(Field, InvExamplesMatchScan) {
  FieldModulus p(17UL);
  EXPECT_EQ(inv(fe(p, 1)), fe(p, 1));
  EXPECT_EQ(inv(fe(p, 3)), fe(p, 6));
  EXPECT_EQ(inv(fe(p, 15)), fe(p, 8));
  EXPECT_EQ(oracle::inverse_by_scan(3, 17), 6u);
  EXPECT_EQ(oracle::inverse_by_scan(15, 17), 8u);
  EXPECT_THROW(inv(fe(p, 0)), Error);
}

TEST(Field, PowExamples) {
  FieldModulus p17(17UL);
  FieldModulus p23(23UL);
  EXPECT_EQ(pow(fe(p17, 2), 0), fe(p17, 1));
  EXPECT_EQ(pow(fe(p17, 2), 4), fe(p17, 16));
  EXPECT_EQ(pow(fe(p23, 2), 11), fe(p23, 1));
  EXPECT_EQ(oracle::powmod_naive(2, 11, 23), 1u);
}

TEST(Field, ModulusMismatchThrows) {
  FieldModulus a(17UL);
  FieldModulus b(13UL);
  try {
    (void)add(fe(a, 1), fe(b, 1));
    FAIL() << "expected ModulusMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ModulusMismatch);
  }
  EXPECT_THROW((void)mul(fe(a, 1), fe(b, 1)), Error);
}

TEST(Field, NegativeInputsAreReduced) {
  FieldModulus p(17UL);
  EXPECT_EQ(fe(p, -1).value(), 16);
  EXPECT_EQ(fe(p, 34).value(), 0);
}

TEST(Field, ExhaustiveAgreementWithOracleSmallPrimes) {
  for (unsigned long prime : {3UL, 13UL, 17UL, 23UL}) {
    FieldModulus p(prime);
    for (unsigned long a = 0; a < prime; ++a) {
      for (unsigned long b = 0; b < prime; ++b) {
        EXPECT_EQ(add(fe(p, a), fe(p, b)).value(), (a + b) % prime);
        EXPECT_EQ(mul(fe(p, a), fe(p, b)).value(), oracle::mulmod(a, b, prime));
      }
      if (a != 0) {
        EXPECT_EQ(inv(fe(p, a)).value(), oracle::inverse_by_scan(a, prime));
        // Fermat
        EXPECT_EQ(pow(fe(p, a), prime - 1), FieldElement::one(p));
      }
    }
  }
}

TEST(FieldProperty, RingAxiomsOverRandomTriples) {
  DeterministicRandom rng(7);
  for (const auto& m : {FieldModulus(251UL), FieldModulus::production()}) {
    for (int trial = 0; trial < 300; ++trial) {
      auto a = random_element(m, rng);
      auto b = random_element(m, rng);
      auto c = random_element(m, rng);
      EXPECT_EQ((a + b) + c, a + (b + c));
      EXPECT_EQ((a * b) * c, a * (b * c));
      EXPECT_EQ(a + b, b + a);
      EXPECT_EQ(a * b, b * a);
      EXPECT_EQ(a * (b + c), a * b + a * c);
      if (!a.is_zero()) {
        EXPECT_EQ(a * inv(a), FieldElement::one(m));
      }
    }
  }
}

TEST(RandomElement, DeterministicUnderFixedSeed) {
  FieldModulus p(17UL);
  DeterministicRandom r1(0xC0FFEE);
  DeterministicRandom r2(0xC0FFEE);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(random_element(p, r1), random_element(p, r2));
}

TEST(RandomElement, RangeContainmentAtP3) {
  FieldModulus p(3UL);
  DeterministicRandom rng(3);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(random_element(p, rng).value(), 3);
}

TEST(RandomElement, NeverEmitsValueAtOrAboveP) {
  // 257 needs 9 bits, so half of all 2-byte draws are rejected.
  FieldModulus p(257UL);
  DeterministicRandom rng(11);
  for (int i = 0; i < 5000; ++i) EXPECT_LT(random_element(p, rng).value(), 257);
}

TEST(RandomElement, FrequenciesWithinFiveSigmaAndChiSquare) {
  constexpr int kDraws = 10'000;
  constexpr unsigned long kP = 13;
  FieldModulus p(kP);
  DeterministicRandom rng(2024);
  std::array<int, kP> counts{};
  for (int i = 0; i < kDraws; ++i) ++counts[random_element(p, rng).value().get_ui()];
  const double expected = static_cast<double>(kDraws) / kP;
  const double sigma = std::sqrt(kDraws * (1.0 / kP) * (1.0 - 1.0 / kP));
  double chi2 = 0;
  for (int c : counts) {
    EXPECT_LT(std::abs(c - expected), 5 * sigma);
    chi2 += (c - expected) * (c - expected) / expected;
  }
  // chi-square with 12 degrees of freedom, p = 0.001 critical value.
  EXPECT_LT(chi2, 32.91);
}

class FailingRandom : public RandomSource {
 public:
  void fill(std::span<std::uint8_t>) override { throw Error(Errc::EntropyFailure, "no entropy"); }
};

TEST(RandomElement, EntropyFailurePropagates) {
  FailingRandom rng;
  try {
    (void)random_element(FieldModulus(17UL), rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EntropyFailure);
  }
}

TEST(Encoding, BigEndianMinimalLength) {
  EXPECT_EQ(to_hex(mpz_class(0)), "00");
  EXPECT_EQ(to_hex(mpz_class(255)), "ff");
  EXPECT_EQ(to_hex(mpz_class(256)), "0100");
  EXPECT_EQ(mpz_from_hex("0100"), 256);
  DeterministicRandom rng(5);
  auto m = FieldModulus::production();
  for (int i = 0; i < 100; ++i) {
    auto x = random_element(m, rng);
    EXPECT_EQ(mpz_from_hex(x.hex()), x.value());
  }
}

}  // namespace
}  // namespace kq
