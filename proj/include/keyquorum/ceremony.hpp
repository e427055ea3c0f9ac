#pragma once

// Key ceremony: generates (or imports) the master key, deals Feldman shares
// of a fresh sharing secret, seals the master key under the derived access
// key and hands out the credential and pairwise link keys for a deployment.

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "keyquorum/hsm.hpp"

namespace kq {

namespace roles {
inline constexpr std::string_view kRequester = "requester";
inline constexpr std::string_view kFacade = "facade";
inline constexpr std::string_view kCustodian = "custodian";
inline std::string party(std::uint32_t index) { return "party-" + std::to_string(index); }
}  // namespace roles

inline constexpr unsigned kMinGroupBits = 512;
inline constexpr unsigned kScalarBits = 256;

struct CeremonyOptions {
  ThresholdConfig cfg{2, 3};
  unsigned kcv_bits = 24;
  unsigned group_bits = 2048;
  // Reuses an existing group instead of generating one.
  std::optional<VssGroupParams> params;
};

/// Everything a ceremony hands out. The master key and the sharing secret are
/// not part of it.
struct Deployment {
  using LinkId = std::pair<std::string, std::string>;

  SealedState sealed;
  std::vector<Share> shares;
  SecretBytes credential_key;
  std::map<LinkId, SecretBytes> links;

  const ThresholdConfig& cfg() const noexcept { return sealed.cfg; }
  const VssGroupParams& params() const noexcept { return sealed.params; }
  const CommitmentVector& commitments() const noexcept { return sealed.commitments; }

  static LinkId link_id(std::string a, std::string b) {
    if (b < a) std::swap(a, b);
    return {std::move(a), std::move(b)};
  }

  const SecretBytes& link_key(const std::string& a, const std::string& b) const {
    auto it = links.find(link_id(a, b));
    if (it == links.end()) throw Error(Errc::InvalidArgument, "no link " + a + " <-> " + b);
    return it->second;
  }

  std::vector<std::string> peers_of(const std::string& node) const {
    std::vector<std::string> out;
    for (const auto& [id, _] : links) {
      if (id.first == node) out.push_back(id.second);
      if (id.second == node) out.push_back(id.first);
    }
    return out;
  }

  std::vector<std::string> party_ids() const {
    std::vector<std::string> out;
    for (std::uint32_t i = 1; i <= cfg().n; ++i) out.push_back(roles::party(i));
    return out;
  }
};

/// Topology: requester - facade - {custodian, parties}, plus a direct link
/// from each party to the custodian for share delivery.
inline std::vector<Deployment::LinkId> deployment_links(std::uint32_t n) {
  const std::string f(roles::kFacade), e(roles::kCustodian);
  std::vector<Deployment::LinkId> out{{std::string(roles::kRequester), f}, {f, e}};
  for (std::uint32_t i = 1; i <= n; ++i) {
    out.emplace_back(f, roles::party(i));
    out.emplace_back(roles::party(i), e);
  }
  return out;
}

inline Deployment run_ceremony(const CeremonyOptions& options, RandomSource& rng, const MasterKey& master) {
  const ThresholdConfig& cfg = options.cfg;
  if (cfg.k < 1 || cfg.k > cfg.n) throw Error(Errc::InvalidArgument, "threshold requires 1 <= k <= n");
  validate_kcv_bits(options.kcv_bits);
  VssGroupParams params = [&] {
    if (options.params) return *options.params;
    if (options.group_bits < kMinGroupBits) {
      throw Error(Errc::InvalidArgument, "group must be at least " + std::to_string(kMinGroupBits) + " bits");
    }
    return VssGroupParams::generate(rng, options.group_bits, kScalarBits);
  }();
  cfg.validate(params.scalar_field());

  FieldElement secret = random_element(params.scalar_field(), rng);
  VssSplit split = vss_split(secret, cfg, params, rng);
  Deployment out{provision(master, secret, *split.commitments, cfg, options.kcv_bits, params, rng), {}, {}, {}};

  for (auto& vs : split.shares) out.shares.push_back(std::move(vs.share));
  out.credential_key = SecretBytes(rng.bytes(crypto::kKeyBytes));
  for (auto& [a, b] : deployment_links(cfg.n)) {
    out.links.emplace(Deployment::link_id(a, b), SecretBytes(rng.bytes(crypto::kKeyBytes)));
  }
  return out;
}

/// Draws the master key first (32 bytes), then runs the ceremony with it.
inline Deployment run_ceremony(const CeremonyOptions& options, RandomSource& rng) {
  MasterKey master = MasterKey::generate(rng);
  return run_ceremony(options, rng, master);
}

}  // namespace kq
