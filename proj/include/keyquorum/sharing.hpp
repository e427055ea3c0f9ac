#pragma once

// Additive n-out-of-n sharing with complement distribution, and Shamir
// (k, n)-threshold sharing with Lagrange reconstruction at zero.

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "keyquorum/field.hpp"

namespace kq {

struct ThresholdConfig {
  std::uint32_t k = 1;
  std::uint32_t n = 1;

  /// 1 <= k <= n, and n < p so that indices 1..n are distinct nonzero points.
  void validate(const FieldModulus& modulus) const {
    if (k < 1 || k > n) throw Error(Errc::InvalidArgument, "threshold requires 1 <= k <= n");
    if (mpz_class(n) >= modulus.value()) {
      throw Error(Errc::InvalidArgument, "share count must be below the field modulus");
    }
  }

  friend bool operator==(const ThresholdConfig&, const ThresholdConfig&) = default;
};

/// One evaluation point (index, q(index)). Index 0 is never issued.
struct Share {
  std::uint32_t index = 0;
  FieldElement value;

  const FieldModulus& modulus() const noexcept { return value.modulus(); }
  friend bool operator==(const Share&, const Share&) = default;
};

/// q(x) = a_0 + a_1 x + ... + a_{k-1} x^{k-1}, with a_0 the secret.
/// Coefficients are wiped when the polynomial is destroyed.
class SharePolynomial {
 public:
  explicit SharePolynomial(std::vector<FieldElement> coefficients)
      : coefficients_(std::move(coefficients)) {
    if (coefficients_.empty()) throw Error(Errc::InvalidArgument, "polynomial needs a_0");
    for (const auto& c : coefficients_) {
      if (!(c.modulus() == coefficients_.front().modulus())) {
        throw Error(Errc::ModulusMismatch, "coefficients from different fields");
      }
    }
  }

  const std::vector<FieldElement>& coefficients() const noexcept { return coefficients_; }
  const FieldElement& secret() const { return coefficients_.front(); }
  const FieldModulus& modulus() const { return coefficients_.front().modulus(); }
  std::size_t threshold() const noexcept { return coefficients_.size(); }

  /// Horner evaluation.
  FieldElement evaluate(const FieldElement& x) const {
    FieldElement acc = coefficients_.back();
    for (auto it = coefficients_.rbegin() + 1; it != coefficients_.rend(); ++it) {
      acc = acc * x + *it;
    }
    return acc;
  }

  FieldElement evaluate(std::uint32_t x) const {
    return evaluate(FieldElement(modulus(), static_cast<long>(x)));
  }

 private:
  std::vector<FieldElement> coefficients_;
};

// --- additive sharing -------------------------------------------------------

/// r_1 .. r_{n-1} uniform, r_n = x - sum; the addends sum to x.
inline std::vector<FieldElement> additive_split(const FieldElement& x, std::size_t n,
                                                RandomSource& rng) {
  if (n < 2) throw Error(Errc::InvalidArgument, "additive sharing needs at least 2 addends");
  std::vector<FieldElement> addends;
  addends.reserve(n);
  FieldElement last = x;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    addends.push_back(random_element(x.modulus(), rng));
    last = last - addends.back();
  }
  addends.push_back(std::move(last));
  return addends;
}

/// Addends held by one party, keyed by 1-based addend number.
using AddendView = std::map<std::size_t, FieldElement>;

/// Party P_j (1-based) receives every addend except r_j, so any two parties
/// jointly hold the full set while no single party does.
inline std::map<std::size_t, AddendView> complement_views(const std::vector<FieldElement>& addends,
                                                          std::size_t parties) {
  if (addends.size() != parties) {
    throw Error(Errc::InvalidArgument, "addend count must equal party count");
  }
  std::map<std::size_t, AddendView> views;
  for (std::size_t party = 1; party <= parties; ++party) {
    AddendView view;
    for (std::size_t r = 1; r <= addends.size(); ++r) {
      if (r != party) view.emplace(r, addends[r - 1]);
    }
    views.emplace(party, std::move(view));
  }
  return views;
}

/// Sums the union of the given views; fails unless every addend is present.
inline FieldElement combine_views(std::span<const AddendView> views, std::size_t n) {
  AddendView merged;
  for (const auto& view : views) merged.insert(view.begin(), view.end());
  if (merged.size() != n) throw Error(Errc::InsufficientShares, "views do not cover every addend");
  FieldElement sum = FieldElement::zero(merged.begin()->second.modulus());
  for (const auto& [_, r] : merged) sum = sum + r;
  return sum;
}

// --- Shamir -------------------------------------------------------------------

struct ShamirSplit {
  SharePolynomial polynomial;
  std::vector<Share> shares;
};

/// Evaluates an existing polynomial at 1..n.
inline std::vector<Share> make_shares(const SharePolynomial& poly, std::uint32_t n) {
  ThresholdConfig{static_cast<std::uint32_t>(poly.threshold()), n}.validate(poly.modulus());
  std::vector<Share> shares;
  shares.reserve(n);
  for (std::uint32_t i = 1; i <= n; ++i) shares.push_back(Share{i, poly.evaluate(i)});
  return shares;
}

/// Random polynomial of degree k-1 with a_0 = secret. The leading coefficient
/// is drawn from the whole field and may be zero.
inline ShamirSplit shamir_split(const FieldElement& secret, const ThresholdConfig& cfg,
                                RandomSource& rng) {
  cfg.validate(secret.modulus());
  std::vector<FieldElement> coefficients;
  coefficients.reserve(cfg.k);
  coefficients.push_back(secret);
  for (std::uint32_t j = 1; j < cfg.k; ++j) {
    coefficients.push_back(random_element(secret.modulus(), rng));
  }
  SharePolynomial poly(std::move(coefficients));
  auto shares = make_shares(poly, cfg.n);
  return ShamirSplit{std::move(poly), std::move(shares)};
}

/// Lagrange interpolation at zero over exactly the given points.
inline FieldElement lagrange_at_zero(std::span<const Share> points) {
  const FieldModulus& m = points.front().modulus();
  FieldElement secret = FieldElement::zero(m);
  for (std::size_t i = 0; i < points.size(); ++i) {
    FieldElement xi(m, static_cast<long>(points[i].index));
    FieldElement num = FieldElement::one(m);
    FieldElement den = FieldElement::one(m);
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j == i) continue;
      FieldElement xj(m, static_cast<long>(points[j].index));
      num = num * xj;
      den = den * (xj - xi);
    }
    secret = secret + points[i].value * num * inv(den);
  }
  return secret;
}

/// Reconstructs q(0) from the k lowest-indexed shares. Extra shares are not
/// consistency-checked; use vss_reconstruct for that.
inline FieldElement shamir_reconstruct(std::span<const Share> shares, std::uint32_t k) {
  if (k < 1) throw Error(Errc::InvalidArgument, "threshold must be at least 1");
  if (shares.size() < k) throw Error(Errc::InsufficientShares, "fewer than k shares supplied");
  const FieldModulus& m = shares.front().modulus();
  std::set<std::uint32_t> seen;
  for (const auto& s : shares) {
    if (!(s.modulus() == m)) throw Error(Errc::ModulusMismatch, "shares from different fields");
    if (s.index == 0) throw Error(Errc::InvalidArgument, "share index 0 is not allowed");
    if (!seen.insert(s.index).second) throw Error(Errc::DuplicateIndex, "duplicate share index");
  }
  std::vector<Share> sorted(shares.begin(), shares.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const Share& a, const Share& b) { return a.index < b.index; });
  sorted.resize(k, sorted.front());
  return lagrange_at_zero(sorted);
}

/// Share count that tolerates losing k-1 shares: n = 2k - 1.
constexpr std::uint32_t robust_n_for(std::uint32_t k) {
  if (k < 1) throw Error(Errc::InvalidArgument, "threshold must be at least 1");
  return 2 * k - 1;
}

// --- share file ---------------------------------------------------------------

inline nlohmann::json share_to_json(const Share& share) {
  return nlohmann::json{{"version", 1},
                        {"index", share.index},
                        {"value", share.value.hex()},
                        {"modulus", to_hex(share.modulus().value())}};
}

/// Parses a share file. When `expected` is given the modulus must match it,
/// which avoids re-running the primality check on a known field.
inline Share share_from_json(const nlohmann::json& j, const FieldModulus* expected = nullptr) {
  try {
    if (j.at("version").get<int>() != 1) throw Error(Errc::ParseError, "unsupported share version");
    auto index = j.at("index").get<std::uint32_t>();
    if (index == 0) throw Error(Errc::ParseError, "share index 0 is not allowed");
    mpz_class p = mpz_from_hex(j.at("modulus").get<std::string>());
    mpz_class v = mpz_from_hex(j.at("value").get<std::string>());
    FieldModulus modulus = expected != nullptr && expected->value() == p ? *expected : FieldModulus(p);
    if (expected != nullptr && !(modulus == *expected)) {
      throw Error(Errc::ParseError, "share modulus does not match the expected field");
    }
    if (v >= p) throw Error(Errc::ParseError, "share value out of range");
    Share out{index, FieldElement(modulus, v)};
    wipe(v);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
}

}  // namespace kq
