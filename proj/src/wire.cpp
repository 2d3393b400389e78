/*
 * Copyright (c) 2026, The dfov Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "dfov/wire.hpp"

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include "dfov/png_io.hpp"
#include "dfov/scores.hpp"

namespace dfov::wire {

using Kind = TransportError::Kind;

namespace {

[[noreturn]] void fail(Kind kind, const std::string& msg) { throw TransportError(kind, msg); }

std::string sys_error(std::string_view what) { return fmt::format("{}: {}", what, std::strerror(errno)); }

}  // namespace

Endpoint Endpoint::parse(std::string_view uri) {
  Endpoint e;
  auto split_host = [&](std::string_view rest) {
    const auto colon = rest.rfind(':');
    if (colon == std::string_view::npos || colon + 1 == rest.size())
      throw ConfigError(fmt::format("endpoint '{}' lacks a port", uri));
    e.host = std::string(rest.substr(0, colon));
    if (e.host.empty()) e.host = "127.0.0.1";
    try {
      std::size_t used = 0;
      e.port = std::stoi(std::string(rest.substr(colon + 1)), &used);
      if (used != rest.size() - colon - 1 || e.port <= 0 || e.port > 65535) throw std::invalid_argument("port");
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("endpoint '{}' has an invalid port", uri));
    }
  };
  if (uri.starts_with("wire://")) {
    split_host(uri.substr(7));
  } else if (uri.starts_with("tcp://")) {
    split_host(uri.substr(6));
  } else if (uri.starts_with("stdio:")) {
    e.transport = Transport::Stdio;
    std::string_view rest = uri.substr(6);
    std::size_t i = 0;
    while (i < rest.size()) {
      while (i < rest.size() && rest[i] == ' ') ++i;
      std::size_t j = i;
      while (j < rest.size() && rest[j] != ' ') ++j;
      if (j > i) e.argv.emplace_back(rest.substr(i, j - i));
      i = j;
    }
    if (e.argv.empty()) throw ConfigError("stdio endpoint needs a command");
  } else {
    throw ConfigError(fmt::format("unrecognized detector endpoint '{}'", uri));
  }
  return e;
}

std::string Endpoint::to_string() const {
  if (transport == Transport::Tcp) return fmt::format("wire://{}:{}", host, port);
  std::string out = "stdio:";
  for (std::size_t i = 0; i < argv.size(); ++i) out += (i ? " " : "") + argv[i];
  return out;
}

LineChannel::LineChannel(int read_fd, int write_fd, bool socket)
    : read_fd_(read_fd), write_fd_(write_fd), socket_(socket) {}

LineChannel::~LineChannel() {
  if (read_fd_ >= 0) ::close(read_fd_);
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
}

void LineChannel::send_line(std::string_view line) {
  std::string data(line);
  data.push_back('\n');
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = socket_ ? ::send(write_fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL)
                              : ::write(write_fd_, data.data() + sent, data.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(Kind::Connection, sys_error("send"));
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::string LineChannel::recv_line(int timeout_ms) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  for (;;) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
    if (left <= 0) fail(Kind::Timeout, fmt::format("no response within {} ms", timeout_ms));
    pollfd p{read_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, static_cast<int>(left));
    if (ready < 0) {
      if (errno == EINTR) continue;
      fail(Kind::Connection, sys_error("poll"));
    }
    if (ready == 0) continue;
    char chunk[65536];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      fail(Kind::Connection, sys_error("read"));
    }
    if (n == 0) fail(Kind::Connection, "adapter closed the connection");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::unique_ptr<LineChannel> connect_tcp(const std::string& host, int port, int timeout_ms) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0)
    fail(Kind::Connection, fmt::format("resolve {}: {}", host, ::gai_strerror(rc)));
  std::string last = "no address";
  for (addrinfo* a = res; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    const int flags = ::fcntl(fd, F_GETFL);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd, a->ai_addr, a->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, timeout_ms) == 1 ? 0 : -1;
      int err = 0;
      socklen_t len = sizeof err;
      if (rc == 0 && (::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) < 0 || err != 0)) {
        errno = err;
        rc = -1;
      }
      if (rc < 0 && err == 0) errno = ETIMEDOUT;
    }
    if (rc == 0) {
      ::fcntl(fd, F_SETFL, flags);
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      ::freeaddrinfo(res);
      return std::make_unique<LineChannel>(fd, fd, true);
    }
    last = sys_error("connect");
    ::close(fd);
  }
  ::freeaddrinfo(res);
  fail(Kind::Connection, fmt::format("{}:{}: {}", host, port, last));
}

nlohmann::json encode_frame_request(const ImageFrame& frame, std::int64_t seq) {
  const auto png = io::encode_png(frame.image);
  return {{"v", kProtocolVersion},
          {"seq", seq},
          {"frame", {{"w", frame.width()}, {"h", frame.height()}, {"png_b64", io::base64_encode(png)}}},
          {"stream", frame.stream == StreamId::Mid ? "MID" : "LONG"}};
}

nlohmann::json ping_request() { return {{"v", kProtocolVersion}, {"ping", true}}; }

nlohmann::json encode_detection(const Detection& d) {
  return {{"bbox", {d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max}},
          {"logits", std::vector<double>(d.scores.logits.data(), d.scores.logits.data() + d.scores.logits.size())},
          {"class", d.class_id}};
}

nlohmann::json capability_response(const detect::Capabilities& caps) {
  nlohmann::json j{{"v", kProtocolVersion},
                   {"pong", true},
                   {"name", caps.name},
                   {"classes", caps.vocabulary.names()},
                   {"outputs", caps.raw_logits ? nlohmann::json{"logits"} : nlohmann::json{"probs"}}};
  if (caps.max_width) j["max_w"] = *caps.max_width;
  if (caps.max_height) j["max_h"] = *caps.max_height;
  return j;
}

namespace {

void check_version(const nlohmann::json& r) {
  if (!r.is_object()) fail(Kind::Malformed, "response is not a JSON object");
  if (!r.contains("v")) fail(Kind::VersionMismatch, "response lacks the mandatory version field");
  if (!r["v"].is_number_integer() || r["v"].get<long>() != kProtocolVersion)
    fail(Kind::VersionMismatch, fmt::format("protocol version {} (expected {})", r["v"].dump(), kProtocolVersion));
  if (r.contains("error")) fail(Kind::Malformed, "adapter error: " + r["error"].dump());
}

}  // namespace

std::vector<Detection> decode_detections(const nlohmann::json& r, std::int64_t seq, int k) {
  check_version(r);
  if (!r.contains("seq") || !r["seq"].is_number_integer() || r["seq"].get<std::int64_t>() != seq)
    fail(Kind::Malformed, fmt::format("response seq {} does not match request {}", r.value("seq", nlohmann::json()).dump(), seq));
  if (!r.contains("dets") || !r["dets"].is_array()) fail(Kind::Malformed, "response lacks a 'dets' list");
  std::vector<Detection> out;
  for (const auto& d : r["dets"]) {
    if (!d.is_object()) fail(Kind::Malformed, "detection is not an object");
    if (!d.contains("logits")) {
      if (d.contains("probs") || d.contains("scores"))
        fail(Kind::MissingLogits, "detection carries probabilities without raw logits");
      fail(Kind::Malformed, "detection lacks logits");
    }
    const auto& bb = d.contains("bbox") ? d["bbox"] : nlohmann::json();
    if (!bb.is_array() || bb.size() != 4) fail(Kind::Malformed, "bbox must be [x1, y1, x2, y2]");
    const auto& lg = d["logits"];
    if (!lg.is_array() || static_cast<int>(lg.size()) != k)
      fail(Kind::Malformed, fmt::format("logits must hold {} values", k));
    Eigen::VectorXd logits(k);
    Box box;
    try {
      for (int i = 0; i < k; ++i) logits[i] = lg[static_cast<std::size_t>(i)].get<double>();
      box = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()};
    } catch (const nlohmann::json::exception& e) {
      fail(Kind::Malformed, std::string("non-numeric detection field: ") + e.what());
    }
    if (!logits.allFinite()) fail(Kind::Malformed, "non-finite logits");
    auto det = Detection::from_logits(box, std::move(logits));
    if (d.contains("class") && (!d["class"].is_number_integer() || d["class"].get<int>() != det.class_id))
      fail(Kind::Malformed, fmt::format("class {} disagrees with argmax of logits ({})", d["class"].dump(), det.class_id));
    out.push_back(std::move(det));
  }
  return out;
}

detect::Capabilities decode_capabilities(const nlohmann::json& r) {
  check_version(r);
  if (!r.value("pong", false)) fail(Kind::Malformed, "ping answered without 'pong'");
  detect::Capabilities caps;
  try {
    caps.name = r.value("name", std::string("wire"));
    caps.vocabulary = ClassVocabulary(r.at("classes").get<std::vector<std::string>>());
    if (r.contains("outputs")) {
      const auto outs = r["outputs"].get<std::vector<std::string>>();
      caps.raw_logits = std::find(outs.begin(), outs.end(), "logits") != outs.end();
    }
    if (r.contains("max_w")) caps.max_width = r["max_w"].get<int>();
    if (r.contains("max_h")) caps.max_height = r["max_h"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(Kind::Malformed, std::string("capability advertisement: ") + e.what());
  }
  caps.concurrent = false;
  return caps;
}

WireDetector::WireDetector(Endpoint endpoint, WireOptions options, std::unique_ptr<LineChannel> channel,
                           int child_pid)
    : endpoint_(std::move(endpoint)), options_(options), channel_(std::move(channel)), child_pid_(child_pid) {}

WireDetector::~WireDetector() {
  channel_.reset();
  if (child_pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(child_pid_, &status, WNOHANG) == child_pid_) return;
      ::usleep(10'000);
    }
    ::kill(child_pid_, SIGKILL);
    ::waitpid(child_pid_, &status, 0);
  }
}

std::shared_ptr<WireDetector> WireDetector::connect(const Endpoint& endpoint, const WireOptions& options) {
  if (endpoint.transport == Endpoint::Transport::Tcp) {
    auto ch = connect_tcp(endpoint.host, endpoint.port, options.connect_timeout_ms);
    return std::shared_ptr<WireDetector>(new WireDetector(endpoint, options, std::move(ch), -1));
  }
  int to_child[2], from_child[2];
  if (::pipe(to_child) < 0) fail(Kind::Connection, sys_error("pipe"));
  if (::pipe(from_child) < 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    fail(Kind::Connection, sys_error("pipe"));
  }
  std::vector<char*> args;
  for (const auto& a : endpoint.argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  const pid_t pid = ::fork();
  if (pid < 0) fail(Kind::Connection, sys_error("fork"));
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  std::signal(SIGPIPE, SIG_IGN);
  auto ch = std::make_unique<LineChannel>(from_child[0], to_child[1], false);
  return std::shared_ptr<WireDetector>(new WireDetector(endpoint, options, std::move(ch), pid));
}

nlohmann::json WireDetector::exchange(const nlohmann::json& request, std::int64_t seq) {
  if (!channel_) fail(Kind::Connection, "connection closed");
  channel_->send_line(request.dump());
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(options_.timeout_ms);
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
    if (left <= 0) fail(Kind::Timeout, fmt::format("no response within {} ms", options_.timeout_ms));
    const std::string line = channel_->recv_line(static_cast<int>(left));
    nlohmann::json r = nlohmann::json::parse(line, nullptr, false);
    if (r.is_discarded()) fail(Kind::Malformed, "response is not valid JSON");
    // Late answers to requests that already timed out are skipped.
    if (seq > 0 && r.is_object() && r.contains("seq") && r["seq"].is_number_integer() &&
        r["seq"].get<std::int64_t>() < seq)
      continue;
    return r;
  }
}

detect::Capabilities WireDetector::capabilities() {
  if (!caps_) caps_ = decode_capabilities(exchange(ping_request(), 0));
  return *caps_;
}

std::vector<Detection> WireDetector::infer(const ImageFrame& frame) {
  const int k = capabilities().vocabulary.size();
  const std::int64_t seq = next_seq_++;
  return decode_detections(exchange(encode_frame_request(frame, seq), seq), seq, k);
}

}  // namespace dfov::wire
