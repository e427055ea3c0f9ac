#pragma once

// On-disk ceremony artifacts and node configuration files. Every file is a
// JSON object with a version field.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "keyquorum/ceremony.hpp"

namespace kq {

namespace fs = std::filesystem;

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(Errc::ParseError, path.string() + " is not a JSON object");
  return j;
}

/// Writes atomically-enough for a ceremony (temp file + rename). Secret-bearing
/// files are created owner-read/write only.
inline void write_json_file(const fs::path& path, const nlohmann::json& j, bool secret) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
    if (secret) {
      std::error_code ec;
      fs::permissions(tmp, fs::perms::owner_read | fs::perms::owner_write, ec);
    }
    out << j.dump(2) << '\n';
    if (!out.flush()) throw Error(Errc::IoError, "short write to " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(Errc::IoError, "cannot move " + tmp.string() + ": " + ec.message());
}

enum class Role { Requester, Facade, Custodian, Party };

inline std::string_view to_string(Role r) noexcept {
  switch (r) {
    case Role::Requester: return "requester";
    case Role::Facade: return "facade";
    case Role::Custodian: return "custodian";
    case Role::Party: return "party";
  }
  return "?";
}

inline Role role_from_string(std::string_view name) {
  for (auto r : {Role::Requester, Role::Facade, Role::Custodian, Role::Party}) {
    if (to_string(r) == name) return r;
  }
  throw Error(Errc::ParseError, "unknown role: " + std::string(name));
}

struct PeerConfig {
  std::string id;
  Role role = Role::Party;
  std::optional<std::uint32_t> index;
  std::string addr;
  SecretBytes link_key;
};

struct NodeConfig {
  std::string id;
  Role role = Role::Party;
  std::optional<std::uint32_t> index;
  std::string listen;
  std::vector<PeerConfig> peers;
  fs::path share_file;
  fs::path commitments_file;
  fs::path sealed_file;
  fs::path credential_file;
  Millis session_timeout{30'000};

  const PeerConfig* first_peer(Role r) const {
    for (const auto& p : peers) {
      if (p.role == r) return &p;
    }
    return nullptr;
  }
};

/// Paths inside the file are resolved relative to the file's directory.
inline NodeConfig load_node_config(const fs::path& path) {
  const auto j = read_json_file(path);
  const fs::path base = path.parent_path();
  auto resolve = [&](const char* key) -> fs::path {
    if (!j.contains(key) || j.at(key).is_null()) return {};
    fs::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base / p;
  };
  try {
    if (j.at("version").get<int>() != 1) throw Error(Errc::ParseError, "unsupported node config version");
    NodeConfig c;
    c.id = j.at("id").get<std::string>();
    c.role = role_from_string(j.at("role").get<std::string>());
    if (j.contains("index") && !j.at("index").is_null()) c.index = j.at("index").get<std::uint32_t>();
    c.listen = j.value("listen", "");
    for (const auto& p : j.at("peers")) {
      PeerConfig peer;
      peer.id = p.at("id").get<std::string>();
      peer.role = role_from_string(p.at("role").get<std::string>());
      if (p.contains("index") && !p.at("index").is_null()) peer.index = p.at("index").get<std::uint32_t>();
      peer.addr = p.value("addr", "");
      Bytes key = from_hex(p.at("link_key").get<std::string>());
      if (key.size() != crypto::kKeyBytes) throw Error(Errc::ParseError, "link key must be 32 bytes");
      peer.link_key = SecretBytes(std::move(key));
      c.peers.push_back(std::move(peer));
    }
    c.share_file = resolve("share_file");
    c.commitments_file = resolve("commitments_file");
    c.sealed_file = resolve("sealed_file");
    c.credential_file = resolve("credential_file");
    c.session_timeout = Millis(j.value("session_timeout_ms", 30'000));
    if (c.role == Role::Party && !c.index) throw Error(Errc::ParseError, "party config needs an index");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

inline SecretBytes load_credential(const fs::path& path) {
  const auto j = read_json_file(path);
  try {
    Bytes key = from_hex(j.at("credential_key").get<std::string>());
    if (key.size() != crypto::kKeyBytes) throw Error(Errc::ParseError, "credential key must be 32 bytes");
    return SecretBytes(std::move(key));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

inline SealedState load_sealed(const fs::path& path) { return sealed_from_json(read_json_file(path)); }

inline CommitmentFile load_commitments(const fs::path& path) {
  try {
    return commitments_from_json(read_json_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

inline Share load_share(const fs::path& path, const FieldModulus* expected = nullptr) {
  return share_from_json(read_json_file(path), expected);
}

// --- ceremony output -----------------------------------------------------------------

struct NetworkLayout {
  std::string host = "127.0.0.1";
  std::uint16_t base_port = 7400;
  Millis session_timeout{30'000};

  /// facade = base, custodian = base+1, party-i = base+1+i. The requester only
  /// dials out.
  std::string address_of(const std::string& node) const {
    std::uint32_t offset = 0;
    if (node == roles::kRequester) return "";
    if (node == roles::kCustodian) offset = 1;
    if (node.rfind("party-", 0) == 0) offset = 1 + static_cast<std::uint32_t>(std::stoul(node.substr(6)));
    return host + ":" + std::to_string(base_port + offset);
  }
};

inline Role role_of(const std::string& node) {
  if (node == roles::kRequester) return Role::Requester;
  if (node == roles::kFacade) return Role::Facade;
  if (node == roles::kCustodian) return Role::Custodian;
  return Role::Party;
}

inline std::optional<std::uint32_t> index_of(const std::string& node) {
  if (role_of(node) != Role::Party) return std::nullopt;
  return static_cast<std::uint32_t>(std::stoul(node.substr(6)));
}

struct CeremonyFiles {
  fs::path dir;
  std::vector<fs::path> written;
};

inline std::string node_file_name(const std::string& node) {
  return node == roles::kRequester ? "requester.json" : "node-" + node + ".json";
}

/// Writes sealed.json, commitments.json, share-<i>.json, credential.json,
/// one config per node and topology.json.
inline CeremonyFiles write_ceremony(const Deployment& dep, const fs::path& dir, const NetworkLayout& layout) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
  CeremonyFiles out{dir, {}};
  auto put = [&](const std::string& name, const nlohmann::json& j, bool secret) {
    write_json_file(dir / name, j, secret);
    out.written.push_back(dir / name);
  };
  put("sealed.json", sealed_to_json(dep.sealed), false);
  put("commitments.json", commitments_to_json(dep.params(), dep.commitments()), false);
  for (const auto& s : dep.shares) put("share-" + std::to_string(s.index) + ".json", share_to_json(s), true);
  put("credential.json", {{"version", 1}, {"credential_key", to_hex(dep.credential_key.view())}}, true);

  std::vector<std::string> nodes{std::string(roles::kRequester), std::string(roles::kFacade),
                                 std::string(roles::kCustodian)};
  for (const auto& p : dep.party_ids()) nodes.push_back(p);
  nlohmann::json topo_nodes = nlohmann::json::array();
  for (const auto& id : nodes) {
    const Role role = role_of(id);
    nlohmann::json peers = nlohmann::json::array();
    for (const auto& peer : dep.peers_of(id)) {
      nlohmann::json p{{"id", peer},
                       {"role", to_string(role_of(peer))},
                       {"addr", layout.address_of(peer)},
                       {"link_key", to_hex(dep.link_key(id, peer).view())}};
      if (auto i = index_of(peer)) p["index"] = *i;
      peers.push_back(std::move(p));
    }
    nlohmann::json cfg{{"version", 1},
                       {"id", id},
                       {"role", to_string(role)},
                       {"listen", layout.address_of(id)},
                       {"peers", peers},
                       {"session_timeout_ms", layout.session_timeout.count()}};
    if (auto i = index_of(id)) {
      cfg["index"] = *i;
      cfg["share_file"] = "share-" + std::to_string(*i) + ".json";
      cfg["commitments_file"] = "commitments.json";
    }
    if (role == Role::Custodian) cfg["sealed_file"] = "sealed.json";
    if (role != Role::Party) cfg["credential_file"] = "credential.json";
    put(node_file_name(id), cfg, true);

    nlohmann::json t{{"id", id}, {"role", to_string(role)}, {"addr", layout.address_of(id)}};
    if (auto i = index_of(id)) t["index"] = *i;
    topo_nodes.push_back(std::move(t));
  }
  nlohmann::json links = nlohmann::json::array();
  for (const auto& [id, _] : dep.links) links.push_back({id.first, id.second});
  put("topology.json",
      {{"version", 1}, {"k", dep.cfg().k}, {"n", dep.cfg().n}, {"kcv", to_hex(dep.sealed.kcv)},
       {"kcv_len_bits", dep.sealed.kcv_len_bits}, {"nodes", topo_nodes}, {"links", links}},
      false);
  return out;
}

}  // namespace kq
