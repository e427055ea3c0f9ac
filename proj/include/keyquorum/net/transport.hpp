#pragma once

// TCP transport for a single node: length-prefixed envelope frames over
// persistent connections, one poll loop, timers on the steady clock.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "keyquorum/protocol/nodes.hpp"

namespace kq::net {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) noexcept : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(std::string_view addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == addr.size()) {
    throw Error(Errc::ParseError, "address must be host:port: " + std::string(addr));
  }
  Endpoint ep{std::string(addr.substr(0, colon)), 0};
  unsigned long port = 0;
  try {
    std::size_t used = 0;
    port = std::stoul(std::string(addr.substr(colon + 1)), &used);
    if (used != addr.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw Error(Errc::ParseError, "bad port in " + std::string(addr));
  }
  if (port > 65535) throw Error(Errc::ParseError, "port out of range in " + std::string(addr));
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

namespace detail {

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) ::freeaddrinfo(head);
  }
};

inline void resolve(const Endpoint& ep, bool passive, AddrInfo& out) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  const std::string port = std::to_string(ep.port);
  const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &out.head);
  if (rc != 0) throw Error(Errc::IoError, "cannot resolve " + ep.host + ": " + ::gai_strerror(rc));
}

inline std::string errno_text() { return std::strerror(errno); }

}  // namespace detail

class SocketTransport final : public protocol::NodeContext {
 public:
  using LogSink = std::function<void(std::string_view)>;

  /// peer_addrs maps node id to host:port for peers this node may dial.
  SocketTransport(std::map<std::string, std::string> peer_addrs, LogSink sink)
      : peer_addrs_(std::move(peer_addrs)), sink_(std::move(sink)), start_(Clock::now()) {}

  void listen(const std::string& addr) {
    const Endpoint ep = parse_endpoint(addr);
    detail::AddrInfo ai;
    detail::resolve(ep, true, ai);
    Fd fd(::socket(ai.head->ai_family, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!fd) throw Error(Errc::IoError, "socket: " + detail::errno_text());
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd.get(), ai.head->ai_addr, ai.head->ai_addrlen) != 0) {
      throw Error(Errc::IoError, "bind " + addr + ": " + detail::errno_text());
    }
    if (::listen(fd.get(), 16) != 0) throw Error(Errc::IoError, "listen " + addr + ": " + detail::errno_text());
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
    listener_ = std::move(fd);
  }

  std::uint16_t port() const noexcept { return port_; }
  std::size_t send_failures() const noexcept { return send_failures_; }

  void attach(protocol::Node& node) { node_ = &node; }

  Millis now() const override {
    return std::chrono::duration_cast<Millis>(Clock::now() - start_);
  }

  void send(protocol::Envelope env) override {
    Conn* conn = route(env.receiver);
    if (!conn) {
      ++send_failures_;
      log(env.sender, "no route to " + env.receiver + ", dropping " + std::string(protocol::to_string(env.type())));
      return;
    }
    const Bytes wire = protocol::frame(env);
    if (!write_all(conn->fd.get(), wire)) {
      ++send_failures_;
      log(env.sender, "write to " + env.receiver + " failed: " + detail::errno_text());
      close_conn(conn);
    }
  }

  void set_timer(const std::string&, Millis delay, std::uint64_t token) override {
    timers_.push(Timer{now() + delay, seq_++, token});
  }

  void log(const std::string& node, std::string_view line) override {
    if (sink_) sink_("[" + node + "] " + std::string(line));
  }

  /// Polls until `done()` returns true or `limit` of wall time passes.
  void run(const std::function<bool()>& done, std::optional<Millis> limit = std::nullopt) {
    if (!node_) throw Error(Errc::InvalidArgument, "transport has no node attached");
    const Millis until = limit ? now() + *limit : Millis::max();
    while (!done()) {
      fire_due_timers();
      if (done()) break;
      const Millis t = now();
      if (t >= until) break;
      Millis wait = std::min<Millis>(Millis(100), until - t);
      if (!timers_.empty()) wait = std::min(wait, std::max(Millis(0), timers_.top().at - t));
      poll_once(static_cast<int>(wait.count()));
    }
  }

 private:
  using Clock = std::chrono::steady_clock;

  struct Conn {
    Fd fd;
    std::string peer;  // empty until an authenticated-looking frame names it
    Bytes inbuf;
  };

  struct Timer {
    Millis at;
    std::uint64_t seq;
    std::uint64_t token;
    bool operator>(const Timer& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  Conn* route(const std::string& peer) {
    for (auto& c : conns_) {
      if (c->peer == peer) return c.get();
    }
    auto it = peer_addrs_.find(peer);
    if (it == peer_addrs_.end() || it->second.empty()) return nullptr;
    try {
      const Endpoint ep = parse_endpoint(it->second);
      detail::AddrInfo ai;
      detail::resolve(ep, false, ai);
      Fd fd(::socket(ai.head->ai_family, SOCK_STREAM | SOCK_CLOEXEC, 0));
      if (!fd) return nullptr;
      if (::connect(fd.get(), ai.head->ai_addr, ai.head->ai_addrlen) != 0) {
        if (node_) log(node_->id(), "cannot reach " + peer + " at " + it->second + ": " + detail::errno_text());
        return nullptr;
      }
      int one = 1;
      ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      conns_.push_back(std::make_unique<Conn>(Conn{std::move(fd), peer, {}}));
      return conns_.back().get();
    } catch (const Error& e) {
      if (node_) log(node_->id(), "cannot reach " + peer + ": " + e.what());
      return nullptr;
    }
  }

  static bool write_all(int fd, ByteView data) {
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

  void close_conn(Conn* conn) {
    std::erase_if(conns_, [conn](const auto& c) { return c.get() == conn; });
  }

  void fire_due_timers() {
    while (!timers_.empty() && timers_.top().at <= now()) {
      const Timer t = timers_.top();
      timers_.pop();
      node_->on_timer(t.token, *this);
    }
  }

  void poll_once(int timeout_ms) {
    std::vector<pollfd> fds;
    if (listener_) fds.push_back(pollfd{listener_.get(), POLLIN, 0});
    std::vector<Conn*> order;
    for (auto& c : conns_) {
      fds.push_back(pollfd{c->fd.get(), POLLIN, 0});
      order.push_back(c.get());
    }
    const int rc = ::poll(fds.data(), fds.size(), timeout_ms);
    if (rc <= 0) return;
    std::size_t i = 0;
    if (listener_) {
      if (fds[0].revents & POLLIN) accept_one();
      i = 1;
    }
    for (Conn* c : order) {
      const short ev = fds[i++].revents;
      if ((ev & (POLLIN | POLLHUP | POLLERR)) && alive(c)) read_from(c);
    }
  }

  void accept_one() {
    Fd fd(::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!fd) return;
    int one = 1;
    ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    conns_.push_back(std::make_unique<Conn>(Conn{std::move(fd), {}, {}}));
  }

  void read_from(Conn* conn) {
    std::uint8_t buf[16384];
    const ssize_t n = ::recv(conn->fd.get(), buf, sizeof buf, 0);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) return;
      close_conn(conn);
      return;
    }
    conn->inbuf.insert(conn->inbuf.end(), buf, buf + n);
    while (conn->inbuf.size() >= 4) {
      const std::uint32_t len = read_u32_be(ByteView(conn->inbuf).first(4));
      if (len > protocol::kMaxFrameBytes) {
        log(node_->id(), "oversized frame, closing connection");
        close_conn(conn);
        return;
      }
      if (conn->inbuf.size() < 4 + std::size_t{len}) break;
      const std::string body(conn->inbuf.begin() + 4, conn->inbuf.begin() + 4 + len);
      conn->inbuf.erase(conn->inbuf.begin(), conn->inbuf.begin() + 4 + len);
      protocol::Envelope env;
      try {
        env = protocol::decode_wire(body);
      } catch (const Error& e) {
        log(node_->id(), std::string("malformed frame dropped: ") + e.what());
        continue;
      }
      // The reply path follows whichever connection first carried a known
      // peer id; forged ids still fail envelope authentication.
      if (conn->peer.empty() && peer_addrs_.contains(env.sender)) conn->peer = env.sender;
      node_->deliver(env, *this);
      if (!alive(conn)) return;
    }
  }

  bool alive(const Conn* conn) const {
    for (const auto& c : conns_) {
      if (c.get() == conn) return true;
    }
    return false;
  }

  std::map<std::string, std::string> peer_addrs_;
  LogSink sink_;
  Clock::time_point start_;
  Fd listener_;
  std::uint16_t port_ = 0;
  protocol::Node* node_ = nullptr;
  std::vector<std::unique_ptr<Conn>> conns_;
  std::priority_queue<Timer, std::vector<Timer>, std::greater<>> timers_;
  std::uint64_t seq_ = 0;
  std::size_t send_failures_ = 0;
};

}  // namespace kq::net
