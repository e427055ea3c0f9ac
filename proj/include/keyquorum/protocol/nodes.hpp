#pragma once

// Message-driven node roles. Each node reacts to delivered envelopes and
// timer ticks through a NodeContext, which is either the deterministic
// simulator or the socket transport.

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "keyquorum/protocol/envelope.hpp"
#include "keyquorum/protocol/messages.hpp"

namespace kq::protocol {

class NodeContext {
 public:
  virtual ~NodeContext() = default;
  virtual Millis now() const = 0;
  virtual void send(Envelope env) = 0;
  virtual void set_timer(const std::string& node, Millis delay, std::uint64_t token) = 0;
  virtual void log(const std::string& node, std::string_view line) = 0;
};

class Node {
 public:
  explicit Node(SecureChannel channel) : channel_(std::move(channel)) {}
  virtual ~Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  const std::string& id() const noexcept { return channel_.self(); }

  /// Opens the envelope and dispatches it. Envelopes that fail to open are
  /// dropped and audit-logged; they never reach the role logic.
  void deliver(const Envelope& env, NodeContext& ctx) {
    SecretBytes plain;
    try {
      plain = channel_.open(env);
    } catch (const Error& e) {
      ++rejections_[e.code()];
      log(ctx, "dropped envelope from " + env.sender + ": " + std::string(kq::to_string(e.code())));
      on_rejected(env, e.code(), ctx);
      return;
    }
    record(plain.view());
    try {
      on_message(env, plain.view(), ctx);
    } catch (const Error& e) {
      log(ctx, "ignored " + std::string(to_string(env.type())) + " from " + env.sender + ": " +
                   std::string(kq::to_string(e.code())));
    }
  }

  virtual void on_timer(std::uint64_t /*token*/, NodeContext& /*ctx*/) {}

  /// Every plaintext payload this node has sent or accepted, in order.
  const std::vector<Bytes>& view() const noexcept { return view_; }
  void set_record_view(bool on) noexcept { record_view_ = on; }

  std::size_t rejections(Errc code) const {
    auto it = rejections_.find(code);
    return it == rejections_.end() ? 0 : it->second;
  }

 protected:
  virtual void on_message(const Envelope& env, ByteView payload, NodeContext& ctx) = 0;
  virtual void on_rejected(const Envelope& /*env*/, Errc /*why*/, NodeContext& /*ctx*/) {}

  void send(NodeContext& ctx, const std::string& peer, const SessionId& session, MsgType type,
            ByteView payload) {
    record(payload);
    ctx.send(channel_.seal(peer, session, type, payload));
  }

  void log(NodeContext& ctx, std::string_view line) { ctx.log(id(), line); }

  SecureChannel channel_;

 private:
  void record(ByteView payload) {
    if (record_view_) view_.emplace_back(payload.begin(), payload.end());
  }

  std::vector<Bytes> view_;
  bool record_view_ = true;
  std::map<Errc, std::size_t> rejections_;
};

// --- requester ---------------------------------------------------------------------

class RequesterNode final : public Node {
 public:
  RequesterNode(SecureChannel channel, std::string facade, RandomSource& rng, Millis deadline)
      : Node(std::move(channel)), facade_(std::move(facade)), rng_(rng), deadline_(deadline) {}

  /// Sends (m, omega) to the facade under a fresh random request id.
  SessionId submit(const Request& request, NodeContext& ctx) {
    if (request_id_) throw Error(Errc::InvalidSessionState, "requester already has a request in flight");
    SessionId rid{};
    rng_.fill(rid);
    request_id_ = rid;
    send(ctx, facade_, rid, MsgType::Request, encode_request(request));
    ctx.set_timer(id(), deadline_, 0);
    log(ctx, "request " + session_hex(rid) + " sent (" + std::string(kq::to_string(request.op)) + ")");
    return rid;
  }

  const std::optional<ResultMessage>& outcome() const noexcept { return outcome_; }
  const std::optional<SessionId>& request_id() const noexcept { return request_id_; }
  Millis completed_at() const noexcept { return completed_at_; }

  void on_timer(std::uint64_t, NodeContext& ctx) override {
    if (request_id_ && !outcome_) finish(ResultMessage::aborted(Errc::QuorumTimeout), ctx);
  }

 protected:
  void on_message(const Envelope& env, ByteView payload, NodeContext& ctx) override {
    if (env.sender != facade_ || env.type() != MsgType::Result) {
      log(ctx, "unexpected " + std::string(to_string(env.type())) + " from " + env.sender);
      return;
    }
    if (!request_id_ || env.session_id != *request_id_ || outcome_) return;
    finish(decode_result(payload), ctx);
  }

  void on_rejected(const Envelope&, Errc why, NodeContext& ctx) override {
    // Anything on our only link that fails authentication while we wait is a
    // tampered answer; duplicates are absorbed silently.
    if (why != Errc::ReplayDetected && request_id_ && !outcome_) {
      finish(ResultMessage::aborted(Errc::IntegrityFailure), ctx);
    }
  }

 private:
  void finish(ResultMessage r, NodeContext& ctx) {
    log(ctx, r.ok() ? std::string("result ok")
                    : "result aborted: " + std::string(kq::to_string(r.reason.value_or(Errc::IoError))));
    outcome_ = std::move(r);
    completed_at_ = ctx.now();
  }

  std::string facade_;
  RandomSource& rng_;
  Millis deadline_;
  std::optional<SessionId> request_id_;
  std::optional<ResultMessage> outcome_;
  Millis completed_at_{0};
};

// --- facade ------------------------------------------------------------------------

class FacadeNode final : public Node {
 public:
  FacadeNode(SecureChannel channel, std::string custodian, std::vector<std::string> parties,
             std::shared_ptr<const Authenticator> authenticator, Millis deadline)
      : Node(std::move(channel)),
        custodian_(std::move(custodian)),
        parties_(std::move(parties)),
        authenticator_(std::move(authenticator)),
        deadline_(deadline) {
    if (!authenticator_) throw Error(Errc::InvalidArgument, "facade needs an authenticator");
  }

  std::size_t unlock_requests_sent() const noexcept { return unlock_requests_sent_; }
  std::size_t auth_failures() const noexcept { return auth_failures_; }

  void on_timer(std::uint64_t token, NodeContext& ctx) override {
    auto t = timers_.find(token);
    if (t == timers_.end()) return;
    const SessionId rid = t->second;
    timers_.erase(t);
    auto it = pending_.find(rid);
    if (it == pending_.end() || it->second.done) return;
    reply(rid, it->second, ResultMessage::aborted(Errc::QuorumTimeout), ctx);
  }

 protected:
  void on_message(const Envelope& env, ByteView payload, NodeContext& ctx) override {
    switch (env.type()) {
      case MsgType::Request:
        if (env.sender == custodian_ || is_party(env.sender)) break;
        handle_request(env, payload, ctx);
        return;
      case MsgType::SessionOpened:
        if (env.sender != custodian_) break;
        handle_opened(env, payload, ctx);
        return;
      case MsgType::Result:
        if (env.sender != custodian_) break;
        handle_result(env, payload, ctx);
        return;
      default:
        break;
    }
    log(ctx, "unexpected " + std::string(to_string(env.type())) + " from " + env.sender);
  }

 private:
  struct Pending {
    std::string requester;
    std::optional<SessionId> session;
    bool done = false;
  };

  bool is_party(const std::string& node) const {
    return std::find(parties_.begin(), parties_.end(), node) != parties_.end();
  }

  void handle_request(const Envelope& env, ByteView payload, NodeContext& ctx) {
    const SessionId rid = env.session_id;
    if (pending_.contains(rid)) return;
    Request request = decode_request(payload);
    Pending& p = pending_[rid];
    p.requester = env.sender;
    if (!authenticator_->verify(request.m, request.omega)) {
      ++auth_failures_;
      log(ctx, "request " + session_hex(rid) + " failed authentication");
      reply(rid, p, ResultMessage::aborted(Errc::AuthenticationFailed), ctx);
      return;
    }
    send(ctx, custodian_, rid, MsgType::OpenSession, encode_request(request));
    const std::uint64_t token = next_timer_++;
    timers_.emplace(token, rid);
    ctx.set_timer(id(), deadline_, token);
  }

  void handle_opened(const Envelope& env, ByteView payload, NodeContext& ctx) {
    auto it = pending_.find(env.session_id);
    if (it == pending_.end() || it->second.done || it->second.session) return;
    const SessionId sid = decode_session_opened(payload);
    it->second.session = sid;
    session_to_request_.emplace(sid, env.session_id);
    for (const auto& party : parties_) {
      send(ctx, party, sid, MsgType::UnlockRequest, encode_unlock_request());
      ++unlock_requests_sent_;
    }
    log(ctx, "session " + session_hex(sid) + " fanned out to " + std::to_string(parties_.size()) + " parties");
  }

  void handle_result(const Envelope& env, ByteView payload, NodeContext& ctx) {
    SessionId rid = env.session_id;
    if (auto s = session_to_request_.find(env.session_id); s != session_to_request_.end()) rid = s->second;
    auto it = pending_.find(rid);
    if (it == pending_.end() || it->second.done) return;
    reply(rid, it->second, decode_result(payload), ctx);
  }

  void reply(const SessionId& rid, Pending& p, const ResultMessage& r, NodeContext& ctx) {
    p.done = true;
    send(ctx, p.requester, rid, MsgType::Result, encode_result(r));
  }

  std::string custodian_;
  std::vector<std::string> parties_;
  std::shared_ptr<const Authenticator> authenticator_;
  Millis deadline_;
  std::map<SessionId, Pending> pending_;
  std::map<SessionId, SessionId> session_to_request_;
  std::map<std::uint64_t, SessionId> timers_;
  std::uint64_t next_timer_ = 1;
  std::size_t unlock_requests_sent_ = 0;
  std::size_t auth_failures_ = 0;
};

// --- party -------------------------------------------------------------------------

enum class PartyBehavior { Honest, Malicious };

class PartyNode final : public Node {
 public:
  PartyNode(SecureChannel channel, Share share, std::string facade, std::string custodian,
            PartyBehavior behavior = PartyBehavior::Honest)
      : Node(std::move(channel)),
        share_(std::move(share)),
        facade_(std::move(facade)),
        custodian_(std::move(custodian)),
        behavior_(behavior) {}

  std::uint32_t index() const noexcept { return share_.index; }
  std::size_t contributions() const noexcept { return contributed_.size(); }

 protected:
  void on_message(const Envelope& env, ByteView, NodeContext& ctx) override {
    if (env.sender != facade_ || env.type() != MsgType::UnlockRequest) {
      log(ctx, "unexpected " + std::string(to_string(env.type())) + " from " + env.sender);
      return;
    }
    if (!contributed_.insert(env.session_id).second) return;
    Share out = share_;
    if (behavior_ == PartyBehavior::Malicious) out.value = out.value + FieldElement::one(out.value.modulus());
    send(ctx, custodian_, env.session_id, MsgType::ShareContribution, encode_share_contribution(out));
    log(ctx, "contributed share index " + std::to_string(share_.index) + " to session " +
                 session_hex(env.session_id));
  }

 private:
  Share share_;
  std::string facade_;
  std::string custodian_;
  PartyBehavior behavior_;
  std::set<SessionId> contributed_;
};

// --- custodian ---------------------------------------------------------------------

class CustodianNode final : public Node {
 public:
  CustodianNode(SecureChannel channel, std::unique_ptr<Custodian> custodian, std::string facade,
                std::map<std::string, std::uint32_t> party_index)
      : Node(std::move(channel)),
        custodian_(std::move(custodian)),
        facade_(std::move(facade)),
        party_index_(std::move(party_index)) {
    if (!custodian_) throw Error(Errc::InvalidArgument, "custodian node needs a custodian");
  }

  Custodian& custodian() noexcept { return *custodian_; }
  const Custodian& custodian() const noexcept { return *custodian_; }

  void on_timer(std::uint64_t, NodeContext& ctx) override {
    for (const SessionId& sid : custodian_->expire(ctx.now())) {
      auto it = sessions_.find(sid);
      if (it == sessions_.end() || it->second.finished) continue;
      auto audit = custodian_->audit(sid);
      Errc reason = it->second.integrity_failures ? Errc::IntegrityFailure
                                                  : audit.abort_reason.value_or(Errc::QuorumTimeout);
      finish(sid, it->second, ResultMessage::aborted(reason, audit.culprits), ctx);
    }
  }

 protected:
  void on_message(const Envelope& env, ByteView payload, NodeContext& ctx) override {
    if (env.type() == MsgType::OpenSession && env.sender == facade_) {
      handle_open(env, payload, ctx);
    } else if (env.type() == MsgType::ShareContribution && party_index_.contains(env.sender)) {
      handle_share(env, payload, ctx);
    } else {
      log(ctx, "unexpected " + std::string(to_string(env.type())) + " from " + env.sender);
    }
  }

  void on_rejected(const Envelope& env, Errc why, NodeContext&) override {
    if (why != Errc::IntegrityFailure) return;
    if (auto it = sessions_.find(env.session_id); it != sessions_.end()) ++it->second.integrity_failures;
  }

 private:
  struct Tracked {
    bool finished = false;
    std::size_t integrity_failures = 0;
  };

  void handle_open(const Envelope& env, ByteView payload, NodeContext& ctx) {
    const SessionId rid = env.session_id;
    if (!opened_requests_.insert(rid).second) return;
    SessionId sid{};
    try {
      sid = custodian_->begin_session(decode_request(payload), ctx.now());
    } catch (const Error& e) {
      send(ctx, facade_, rid, MsgType::Result, encode_result(ResultMessage::aborted(e.code())));
      return;
    }
    sessions_.emplace(sid, Tracked{});
    ctx.set_timer(id(), custodian_->options().session_timeout, 0);
    send(ctx, facade_, rid, MsgType::SessionOpened, encode_session_opened(sid));
  }

  void handle_share(const Envelope& env, ByteView payload, NodeContext& ctx) {
    const SessionId sid = env.session_id;
    auto it = sessions_.find(sid);
    if (it == sessions_.end() || it->second.finished) return;
    Share share = decode_share_contribution(payload, custodian_->sealed_state().params.scalar_field());
    // The index is bound to the authenticated link, not taken from the payload.
    share.index = party_index_.at(env.sender);
    try {
      auto r = custodian_->submit_share(sid, share, ctx.now());
      if (r.kind != SubmitResult::Kind::Unlocked) return;
      auto culprits = custodian_->audit(sid).culprits;
      Bytes c = custodian_->perform(sid);
      finish(sid, it->second, ResultMessage::success(std::move(c), std::move(culprits)), ctx);
    } catch (const InsufficientValidSharesError& e) {
      finish(sid, it->second, ResultMessage::aborted(e.code(), e.culprits()), ctx);
    } catch (const Error& e) {
      if (e.code() == Errc::DuplicateIndex || e.code() == Errc::InvalidSessionState) throw;
      finish(sid, it->second, ResultMessage::aborted(e.code(), custodian_->audit(sid).culprits), ctx);
    }
  }

  void finish(const SessionId& sid, Tracked& t, const ResultMessage& r, NodeContext& ctx) {
    t.finished = true;
    send(ctx, facade_, sid, MsgType::Result, encode_result(r));
  }

  std::unique_ptr<Custodian> custodian_;
  std::string facade_;
  std::map<std::string, std::uint32_t> party_index_;
  std::set<SessionId> opened_requests_;
  std::map<SessionId, Tracked> sessions_;
};

}  // namespace kq::protocol
