#pragma once

// Live input over TCP: clients send S (sample) and E (event) lines, one engine
// consumes them all and emits AffectState and directive lines through a sink.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "affloop/affect.hpp"
#include "affloop/affect_engine.hpp"
#include "affloop/catalog.hpp"
#include "affloop/error.hpp"
#include "affloop/loop_engine.hpp"
#include "affloop/signal_model.hpp"
#include "affloop/text.hpp"

namespace affloop {

struct ServeOptions {
  int port = 7070;  // 0 picks a free port
  std::string bind_address = "127.0.0.1";
  EngineConfig engine;
  ControllerConfig controller;
  bool directives = true;
  std::size_t max_line = 65536;
};

class StreamServer {
 public:
  using Sink = std::function<void(const std::string&)>;

  StreamServer(Baseline baseline, ServeOptions opt, Catalog catalog, Sink sink)
      : opt_(std::move(opt)), catalog_(std::move(catalog)), sink_(std::move(sink)),
        engine_(baseline, opt_.engine, &catalog_) {
    opt_.controller.validate();
    if (opt_.directives) check_controller_catalog(catalog_);
  }

  StreamServer(const StreamServer&) = delete;
  StreamServer& operator=(const StreamServer&) = delete;
  ~StreamServer() { stop(); }

  /// Binds and starts accepting. Throws IoError when the port cannot be bound.
  void start() {
    if (listen_fd_ >= 0) return;
    if (::pipe(wake_) != 0) throw IoError("serve: pipe: " + std::string(std::strerror(errno)));
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw IoError("serve: socket: " + std::string(std::strerror(errno)));
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(opt_.port));
    if (::inet_pton(AF_INET, opt_.bind_address.c_str(), &addr.sin_addr) != 1) {
      ::close(fd);
      throw UsageError("serve: bad bind address '" + opt_.bind_address + "'");
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 16) != 0) {
      std::string why = std::strerror(errno);
      ::close(fd);
      throw IoError("serve: cannot listen on port " + std::to_string(opt_.port) + ": " + why);
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    listen_fd_ = fd;
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  [[nodiscard]] int port() const noexcept { return port_; }
  /// Connections whose input has been read to the end and handled.
  [[nodiscard]] std::size_t finished_connections() const noexcept { return finished_; }

  /// Stops accepting, disconnects clients, and emits the end-of-input state.
  void stop() {
    if (listen_fd_ < 0 || stopping_.exchange(true)) return;
    char b = 1;
    [[maybe_unused]] auto w = ::write(wake_[1], &b, 1);
    if (acceptor_.joinable()) acceptor_.join();
    {
      std::lock_guard lk(clients_mu_);
      for (int c : client_fds_) ::shutdown(c, SHUT_RDWR);
    }
    for (auto& t : workers_)
      if (t.joinable()) t.join();
    ::close(listen_fd_);
    ::close(wake_[0]);
    ::close(wake_[1]);
    std::lock_guard lk(engine_mu_);
    if (auto st = engine_.flush()) emit(*st);
  }

  /// Handles one input line as if it came from a client; returns the error reply, if any.
  std::optional<std::string> handle_line(std::string_view line, std::size_t lineno) {
    auto tl = text::trim(line);
    if (tl.empty() || tl.front() == '#') return std::nullopt;
    try {
      auto f = text::split_ws(tl);
      if (f[0] == "S") {
        Sample s = parse_sample_fields(f, lineno);
        std::lock_guard lk(engine_mu_);
        engine_.push(s);
        for (const auto& st : engine_.poll()) emit(st);
      } else if (f[0] == "E") {
        GameEvent e = parse_event_fields(f, lineno);
        std::lock_guard lk(engine_mu_);
        engine_.push_event(e);
      } else {
        throw ParseError(lineno, "expected an S or E line");
      }
    } catch (const ParseError& e) {
      return "ERR " + std::to_string(lineno) + " " + e.message();
    } catch (const std::exception& e) {
      return "ERR " + std::to_string(lineno) + " " + e.what();
    }
    return std::nullopt;
  }

 private:
  void emit(const AffectState& st) {
    sink_(format_affect_line(st));
    if (!opt_.directives) return;
    auto [dirs, next] = control_step(st.t, st, opt_.controller, catalog_, ctl_);
    ctl_ = std::move(next);
    for (const auto& d : dirs) sink_(format_directive_line(d));
  }

  void accept_loop() {
    pollfd fds[2] = {{listen_fd_, POLLIN, 0}, {wake_[0], POLLIN, 0}};
    while (!stopping_) {
      if (::poll(fds, 2, -1) < 0) {
        if (errno == EINTR) continue;
        break;
      }
      if (fds[1].revents) break;
      if (!(fds[0].revents & POLLIN)) continue;
      int c = ::accept(listen_fd_, nullptr, nullptr);
      if (c < 0) continue;
      std::lock_guard lk(clients_mu_);
      client_fds_.push_back(c);
      workers_.emplace_back([this, c] { client_loop(c); });
    }
  }

  void client_loop(int fd) {
    std::string buf;
    std::size_t lineno = 0;
    char chunk[4096];
    auto reply = [fd](const std::string& s) {
      std::string out = s + "\n";
      [[maybe_unused]] auto n = ::send(fd, out.data(), out.size(), MSG_NOSIGNAL);
    };
    for (;;) {
      auto n = ::recv(fd, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      buf.append(chunk, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (auto nl = buf.find('\n', start); nl != std::string::npos; nl = buf.find('\n', start)) {
        if (auto err = handle_line(std::string_view(buf).substr(start, nl - start), ++lineno)) reply(*err);
        start = nl + 1;
      }
      buf.erase(0, start);
      if (buf.size() > opt_.max_line) {
        reply("ERR " + std::to_string(++lineno) + " line too long");
        buf.clear();
      }
    }
    if (!buf.empty())
      if (auto err = handle_line(buf, ++lineno)) reply(*err);
    std::lock_guard lk(clients_mu_);
    std::erase(client_fds_, fd);
    ::close(fd);
    ++finished_;
  }

  ServeOptions opt_;
  Catalog catalog_;
  Sink sink_;
  std::mutex engine_mu_;
  AffectEngine engine_;
  ControllerState ctl_;

  int listen_fd_ = -1;
  int port_ = 0;
  int wake_[2] = {-1, -1};
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> finished_{0};
  std::thread acceptor_;
  std::mutex clients_mu_;
  std::vector<int> client_fds_;
  std::vector<std::thread> workers_;
};

}  // namespace affloop
