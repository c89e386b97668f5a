/*
 * Copyright 2026 The GTV Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <string>

#include "gtv/messages.hpp"

namespace gtv {

// Ordered reliable message pipes between the server and each client. The
// in-process pipe moves Message values through a queue; the TCP pipe frames
// them as newline-delimited JSON over loopback. Both ends block on recv.

class Duplex {
 public:
  virtual ~Duplex() = default;
  virtual void send(Message m) = 0;
  virtual Message recv() = 0;
};

namespace transport_detail {

class MessageQueue {
 public:
  void push(Message m) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      q_.push_back(std::move(m));
    }
    cv_.notify_one();
  }
  Message pop() {
    std::unique_lock<std::mutex> lk(mu_);
    cv_.wait(lk, [&] { return !q_.empty(); });
    Message m = std::move(q_.front());
    q_.pop_front();
    return m;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Message> q_;
};

}  // namespace transport_detail

/// In-process pipe pair. Every sent message is recorded in the shared log.
class InProcessDuplex : public Duplex {
 public:
  struct Shared {
    transport_detail::MessageQueue to_a;
    transport_detail::MessageQueue to_b;
  };

  InProcessDuplex(std::shared_ptr<Shared> shared, bool is_a, MessageLog* log)
      : shared_(std::move(shared)), is_a_(is_a), log_(log) {}

  void send(Message m) override {
    if (log_) log_->record(m);
    (is_a_ ? shared_->to_b : shared_->to_a).push(std::move(m));
  }
  Message recv() override {
    return (is_a_ ? shared_->to_a : shared_->to_b).pop();
  }

  static std::pair<std::unique_ptr<Duplex>, std::unique_ptr<Duplex>> make_pair(
      MessageLog* log) {
    auto shared = std::make_shared<Shared>();
    return {std::make_unique<InProcessDuplex>(shared, true, log),
            std::make_unique<InProcessDuplex>(shared, false, log)};
  }

 private:
  std::shared_ptr<Shared> shared_;
  bool is_a_;
  MessageLog* log_;
};

/// Newline-delimited JSON frames over a connected socket.
class TcpDuplex : public Duplex {
 public:
  TcpDuplex(int fd, MessageLog* log) : fd_(fd), log_(log) {}
  ~TcpDuplex() override {
    if (fd_ >= 0) ::close(fd_);
  }
  TcpDuplex(const TcpDuplex&) = delete;

  void send(Message m) override {
    if (log_) log_->record(m);
    std::string frame = message_to_json(m).dump();
    frame += '\n';
    std::size_t off = 0;
    while (off < frame.size()) {
      ssize_t n =
          ::send(fd_, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
      require<ProtocolError>(n > 0, "tcp send failed");
      off += static_cast<std::size_t>(n);
    }
  }

  Message recv() override {
    for (;;) {
      auto pos = buf_.find('\n');
      if (pos != std::string::npos) {
        std::string line = buf_.substr(0, pos);
        buf_.erase(0, pos + 1);
        return message_from_json(json::parse(line));
      }
      char chunk[65536];
      ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
      require<ProtocolError>(n > 0, "tcp connection closed mid-protocol");
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  MessageLog* log_;
  std::string buf_;
};

/// Loopback listener: accepts one connection per client, in client-id order
/// (clients identify themselves with a one-line hello).
class TcpListener {
 public:
  explicit TcpListener(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    require<ProtocolError>(fd_ >= 0, "socket() failed");
    int yes = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    require<ProtocolError>(
        ::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0,
        "bind failed on loopback port ", port);
    require<ProtocolError>(::listen(fd_, 16) == 0, "listen failed");
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  int port() const { return port_; }

  int accept_one() {
    int c = ::accept(fd_, nullptr, nullptr);
    require<ProtocolError>(c >= 0, "accept failed");
    return c;
  }

 private:
  int fd_ = -1;
  int port_ = 0;
};

inline int tcp_connect_loopback(int port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  require<ProtocolError>(fd >= 0, "socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  require<ProtocolError>(
      ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0,
      "connect to loopback port ", port, " failed");
  return fd;
}

}  // namespace gtv
