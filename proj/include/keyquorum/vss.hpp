#pragma once

// Feldman verifiable secret sharing over a Schnorr group: a prime-order-q
// subgroup of Z_P^* generated by g. Secrets and shares live in Z_q; the
// dealer publishes C_j = g^{a_j} mod P for each polynomial coefficient, and
// a share (i, y) is valid iff g^y == prod_j C_j^{i^j} (mod P).

#include <json.hpp>

#include <memory>
#include <set>
#include <span>
#include <vector>

#include "keyquorum/sharing.hpp"

namespace kq {

class VssGroupParams {
 public:
  /// Validates P and q prime, q | P-1, 1 < g < P and g^q == 1 (mod P).
  VssGroupParams(mpz_class P, mpz_class q, mpz_class g)
      : P_(std::move(P)), q_(std::move(q)), g_(std::move(g)), scalar_field_(checked_q(q_)) {
    if (P_ < 3 || !is_probable_prime(P_)) throw Error(Errc::ParameterValidation, "P is not prime");
    if (mpz_class((P_ - 1) % q_) != 0) throw Error(Errc::ParameterValidation, "q does not divide P-1");
    if (g_ <= 1 || g_ >= P_) throw Error(Errc::ParameterValidation, "generator out of range");
    if (powm(g_, q_) != 1) throw Error(Errc::ParameterValidation, "g does not have order q");
  }

  /// Hand-checkable group (P=23, q=11, g=2) for tests.
  static VssGroupParams toy() { return VssGroupParams(23, 11, 2); }

  /// Fresh Schnorr group: a q_bits prime q, then P = r*q + 1 prime of
  /// exactly p_bits, and g = h^((P-1)/q) for the first h giving g != 1.
  static VssGroupParams generate(RandomSource& rng, unsigned p_bits = 2048, unsigned q_bits = 256) {
    if (q_bits < 16 || p_bits < q_bits + 16) {
      throw Error(Errc::InvalidArgument, "group sizes too small");
    }
    mpz_class q = random_prime(rng, q_bits);
    const unsigned r_bits = p_bits - q_bits;
    for (;;) {
      mpz_class r = random_bits(rng, r_bits);
      mpz_setbit(r.get_mpz_t(), r_bits - 1);
      mpz_clrbit(r.get_mpz_t(), 0);
      mpz_class P = r * q + 1;
      if (mpz_sizeinbase(P.get_mpz_t(), 2) != p_bits) continue;
      if (!is_probable_prime(P)) continue;
      mpz_class exponent = (P - 1) / q;
      for (mpz_class h = 2; h < P - 1; ++h) {
        mpz_class g;
        mpz_powm(g.get_mpz_t(), h.get_mpz_t(), exponent.get_mpz_t(), P.get_mpz_t());
        if (g != 1) return VssGroupParams(P, q, g);
      }
    }
  }

  const mpz_class& P() const noexcept { return P_; }
  const mpz_class& q() const noexcept { return q_; }
  const mpz_class& g() const noexcept { return g_; }

  /// Z_q, where secrets, coefficients and shares live.
  const FieldModulus& scalar_field() const noexcept { return scalar_field_; }

  mpz_class powm(const mpz_class& base, const mpz_class& exponent) const {
    mpz_class out;
    mpz_powm(out.get_mpz_t(), base.get_mpz_t(), exponent.get_mpz_t(), P_.get_mpz_t());
    return out;
  }

  /// g^a mod P.
  mpz_class commit(const FieldElement& a) const { return powm(g_, a.value()); }

  bool in_subgroup(const mpz_class& x) const { return x >= 1 && x < P_ && powm(x, q_) == 1; }

  friend bool operator==(const VssGroupParams& a, const VssGroupParams& b) {
    return a.P_ == b.P_ && a.q_ == b.q_ && a.g_ == b.g_;
  }

 private:
  static FieldModulus checked_q(const mpz_class& q) {
    if (q < 3 || !is_probable_prime(q)) throw Error(Errc::ParameterValidation, "q is not prime");
    return FieldModulus(q);
  }

  static mpz_class random_bits(RandomSource& rng, unsigned bits) {
    Bytes raw = rng.bytes((bits + 7) / 8);
    mpz_class v = decode_be(raw);
    mpz_class mask = 1;
    mask <<= bits;
    return v % mask;
  }

  static mpz_class random_prime(RandomSource& rng, unsigned bits) {
    for (;;) {
      mpz_class c = random_bits(rng, bits);
      mpz_setbit(c.get_mpz_t(), bits - 1);
      mpz_setbit(c.get_mpz_t(), 0);
      if (is_probable_prime(c)) return c;
    }
  }

  mpz_class P_;
  mpz_class q_;
  mpz_class g_;
  FieldModulus scalar_field_;
};

/// Public commitments C_0 .. C_{k-1}; length equals the threshold.
struct CommitmentVector {
  std::vector<mpz_class> values;

  std::size_t threshold() const noexcept { return values.size(); }
  friend bool operator==(const CommitmentVector&, const CommitmentVector&) = default;
};

struct VerifiableShare {
  Share share;
  std::shared_ptr<const CommitmentVector> commitments;
};

struct VssSplit {
  std::vector<VerifiableShare> shares;
  std::shared_ptr<const CommitmentVector> commitments;
};

inline CommitmentVector vss_commit(const SharePolynomial& poly, const VssGroupParams& params) {
  CommitmentVector out;
  out.values.reserve(poly.threshold());
  for (const auto& a : poly.coefficients()) out.values.push_back(params.commit(a));
  return out;
}

/// Deals an explicit polynomial over Z_q.
inline VssSplit vss_deal(const SharePolynomial& poly, std::uint32_t n, const VssGroupParams& params) {
  if (!(poly.modulus() == params.scalar_field())) {
    throw Error(Errc::ParameterValidation, "polynomial is not over Z_q");
  }
  auto commitments = std::make_shared<const CommitmentVector>(vss_commit(poly, params));
  VssSplit out{{}, commitments};
  for (auto& share : make_shares(poly, n)) out.shares.push_back({std::move(share), commitments});
  return out;
}

inline VssSplit vss_split(const FieldElement& secret, const ThresholdConfig& cfg,
                          const VssGroupParams& params, RandomSource& rng) {
  if (!(secret.modulus() == params.scalar_field())) {
    throw Error(Errc::ParameterValidation, "secret must be an element of Z_q");
  }
  auto split = shamir_split(secret, cfg, rng);
  return vss_deal(split.polynomial, cfg.n, params);
}

/// g^y == prod_j C_j^{index^j mod q} (mod P). Returns false, never throws, on
/// malformed input (wrong field, commitments outside the subgroup).
inline bool vss_verify(const Share& share, const CommitmentVector& commitments,
                       const VssGroupParams& params) {
  if (commitments.values.empty()) return false;
  if (!(share.modulus() == params.scalar_field())) return false;
  for (const auto& c : commitments.values) {
    if (!params.in_subgroup(c)) return false;
  }
  const mpz_class& P = params.P();
  const mpz_class& q = params.q();
  mpz_class rhs = 1;
  mpz_class x_pow = 1;
  const mpz_class x = share.index;
  for (const auto& c : commitments.values) {
    rhs = (rhs * params.powm(c, x_pow)) % P;
    x_pow = (x_pow * x) % q;
  }
  return params.commit(share.value) == rhs;
}

struct VssReconstruction {
  FieldElement secret;
  std::vector<std::uint32_t> culprits;
};

/// Verifies every supplied share, then interpolates from the k lowest-indexed
/// valid ones. Shares that fail verification (or carry index 0) are reported
/// as culprits.
inline VssReconstruction vss_reconstruct(std::span<const VerifiableShare> shares, std::uint32_t k,
                                         const CommitmentVector& commitments,
                                         const VssGroupParams& params) {
  if (k < 1) throw Error(Errc::InvalidArgument, "threshold must be at least 1");
  if (shares.size() < k) throw Error(Errc::InsufficientShares, "fewer than k shares supplied");
  std::vector<Share> valid;
  std::vector<std::uint32_t> culprits;
  std::set<std::uint32_t> seen;
  for (const auto& vs : shares) {
    if (!seen.insert(vs.share.index).second) {
      throw Error(Errc::DuplicateIndex, "duplicate share index");
    }
    if (vs.share.index != 0 && vss_verify(vs.share, commitments, params)) {
      valid.push_back(vs.share);
    } else {
      culprits.push_back(vs.share.index);
    }
  }
  std::sort(culprits.begin(), culprits.end());
  if (valid.size() < k) {
    throw InsufficientValidSharesError(culprits, "fewer than k shares passed verification");
  }
  return VssReconstruction{shamir_reconstruct(valid, k), std::move(culprits)};
}

// --- commitment file ------------------------------------------------------------

inline nlohmann::json commitments_to_json(const VssGroupParams& params,
                                          const CommitmentVector& commitments) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : commitments.values) list.push_back(to_hex(c));
  return nlohmann::json{{"version", 1},
                        {"P", to_hex(params.P())},
                        {"q", to_hex(params.q())},
                        {"g", to_hex(params.g())},
                        {"commitments", std::move(list)}};
}

struct CommitmentFile {
  VssGroupParams params;
  CommitmentVector commitments;
};

/// Parses and validates group parameters and subgroup membership of every
/// commitment.
inline CommitmentFile commitments_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) {
      throw Error(Errc::ParseError, "unsupported commitment file version");
    }
    VssGroupParams params(mpz_from_hex(j.at("P").get<std::string>()),
                          mpz_from_hex(j.at("q").get<std::string>()),
                          mpz_from_hex(j.at("g").get<std::string>()));
    CommitmentVector commitments;
    for (const auto& c : j.at("commitments")) {
      commitments.values.push_back(mpz_from_hex(c.get<std::string>()));
      if (!params.in_subgroup(commitments.values.back())) {
        throw Error(Errc::ParameterValidation, "commitment outside the order-q subgroup");
      }
    }
    if (commitments.values.empty()) throw Error(Errc::ParseError, "empty commitment vector");
    return CommitmentFile{std::move(params), std::move(commitments)};
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
}

}  // namespace kq
