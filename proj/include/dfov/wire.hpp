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


#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfov/detector.hpp"

namespace dfov::wire {

inline constexpr int kProtocolVersion = 1;

struct Endpoint {
  enum class Transport : std::uint8_t { Tcp, Stdio };
  Transport transport = Transport::Tcp;
  std::string host = "127.0.0.1";
  int port = 0;
  /// Adapter command line for the stdio transport.
  std::vector<std::string> argv;

  /// `wire://host:port`, `tcp://host:port` or `stdio:<command> [args...]`.
  static Endpoint parse(std::string_view uri);
  std::string to_string() const;
};

struct WireOptions {
  int timeout_ms = 500;
  int connect_timeout_ms = 2000;
};

/// Newline-delimited byte stream with deadline-bounded reads.
class LineChannel {
 public:
  /// Takes ownership of the descriptors (the same fd twice for a socket).
  LineChannel(int read_fd, int write_fd, bool socket);
  LineChannel(const LineChannel&) = delete;
  LineChannel& operator=(const LineChannel&) = delete;
  ~LineChannel();

  /// Throws TransportError(Connection) when the peer has gone.
  void send_line(std::string_view line);
  /// Throws TransportError(Timeout) after `timeout_ms`, (Connection) on EOF.
  std::string recv_line(int timeout_ms);

 private:
  int read_fd_;
  int write_fd_;
  bool socket_;
  std::string buffer_;
};

std::unique_ptr<LineChannel> connect_tcp(const std::string& host, int port, int timeout_ms);

nlohmann::json encode_frame_request(const ImageFrame& frame, std::int64_t seq);
nlohmann::json ping_request();
nlohmann::json encode_detection(const Detection& d);
nlohmann::json capability_response(const detect::Capabilities& caps);

/// Parses a response for request `seq`. Throws TransportError: VersionMismatch
/// on a wrong or absent version, MissingLogits for probability-only entries,
/// Malformed for anything else unexpected.
std::vector<Detection> decode_detections(const nlohmann::json& response, std::int64_t seq,
                                         int num_classes);
detect::Capabilities decode_capabilities(const nlohmann::json& response);

/// Client for an external detector adapter. Single in-flight request per
/// connection; declares single-client mode.
class WireDetector final : public detect::Detector {
 public:
  static std::shared_ptr<WireDetector> connect(const Endpoint& endpoint, const WireOptions& options = {});
  ~WireDetector() override;

  detect::Capabilities capabilities() override;
  std::vector<Detection> infer(const ImageFrame& frame) override;
  const Endpoint& endpoint() const noexcept { return endpoint_; }

 private:
  WireDetector(Endpoint endpoint, WireOptions options, std::unique_ptr<LineChannel> channel, int child_pid);
  nlohmann::json exchange(const nlohmann::json& request, std::int64_t seq);

  Endpoint endpoint_;
  WireOptions options_;
  std::unique_ptr<LineChannel> channel_;
  int child_pid_ = -1;
  std::int64_t next_seq_ = 1;
  std::optional<detect::Capabilities> caps_;
};

}  // namespace dfov::wire
