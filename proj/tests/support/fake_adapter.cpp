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


#include "fake_adapter.hpp"

#include <chrono>
#include <stdexcept>
#include <thread>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "dfov/core.hpp"
#include "dfov/png_io.hpp"
#include "dfov/wire.hpp"

namespace dfov::testing {

using nlohmann::json;

AdapterMode parse_adapter_mode(std::string_view s) {
  if (s == "debug") return AdapterMode::Debug;
  if (s == "echo") return AdapterMode::Echo;
  if (s == "stall") return AdapterMode::Stall;
  if (s == "stall-once") return AdapterMode::StallOnce;
  if (s == "probs") return AdapterMode::Probs;
  if (s == "malformed") return AdapterMode::Malformed;
  if (s == "version") return AdapterMode::Version;
  throw std::invalid_argument("unknown adapter mode " + std::string(s));
}

namespace {

json debug_detections(const RgbImage& img, int k) {
  int x0 = img.width(), y0 = img.height(), x1 = -1, y1 = -1;
  int red = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img.at(x, y, 0) || img.at(x, y, 1) || img.at(x, y, 2)) {
        if (x1 < 0) red = img.at(x, y, 0);
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  json dets = json::array();
  if (x1 < 0) return dets;
  const int cls = red % k;
  std::vector<double> logits(static_cast<std::size_t>(k), -2.0);
  logits[static_cast<std::size_t>(cls)] = 4.0;
  dets.push_back({{"bbox", {x0, y0, x1 + 1, y1 + 1}}, {"logits", logits}, {"class", cls}});
  return dets;
}

}  // namespace

std::string adapter_reply(const std::string& line, AdapterMode mode, int& frames_seen) {
  const json req = json::parse(line, nullptr, false);
  if (req.is_discarded() || !req.is_object()) return json{{"v", wire::kProtocolVersion}, {"error", "bad request"}}.dump();
  const int k = ClassVocabulary::standard().size();
  if (req.value("ping", false)) {
    detect::Capabilities caps{"fake-" + std::to_string(static_cast<int>(mode)), ClassVocabulary::standard()};
    caps.raw_logits = mode != AdapterMode::Probs;
    return wire::capability_response(caps).dump();
  }
  const auto seq = req.value("seq", std::int64_t{-1});
  const int nth = frames_seen++;
  json reply{{"v", wire::kProtocolVersion}, {"seq", seq}};
  switch (mode) {
    case AdapterMode::Stall:
      std::this_thread::sleep_for(std::chrono::milliseconds(600));
      reply["dets"] = json::array();
      break;
    case AdapterMode::StallOnce:
      if (nth == 0) std::this_thread::sleep_for(std::chrono::milliseconds(600));
      reply["dets"] = json::array();
      break;
    case AdapterMode::Echo:
      reply["dets"] = json::array({{{"bbox", kEchoBox}, {"logits", kEchoLogits}}});
      break;
    case AdapterMode::Probs:
      reply["dets"] = json::array({{{"bbox", kEchoBox}, {"probs", {0.5, 0.5, 0, 0, 0, 0, 0}}}});
      break;
    case AdapterMode::Version:
      reply["v"] = wire::kProtocolVersion + 1;
      reply["dets"] = json::array();
      break;
    case AdapterMode::Malformed:
      if (nth == 0) return "{\"v\": 1, \"seq\": ";
      [[fallthrough]];
    case AdapterMode::Debug: {
      try {
        const auto& f = req.at("frame");
        const auto png = io::base64_decode(f.at("png_b64").get<std::string>());
        reply["dets"] = debug_detections(io::decode_png(png), k);
      } catch (const std::exception& e) {
        return json{{"v", wire::kProtocolVersion}, {"seq", seq}, {"error", e.what()}}.dump();
      }
      break;
    }
  }
  return reply.dump();
}

void serve_adapter(int in_fd, int out_fd, AdapterMode mode) {
  std::string buffer;
  char chunk[65536];
  int frames = 0;
  for (;;) {
    const ssize_t n = ::read(in_fd, chunk, sizeof chunk);
    if (n <= 0) return;
    buffer.append(chunk, static_cast<std::size_t>(n));
    for (auto nl = buffer.find('\n'); nl != std::string::npos; nl = buffer.find('\n')) {
      const std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      std::string out = adapter_reply(line, mode, frames);
      if (out.empty()) continue;
      out.push_back('\n');
      std::size_t sent = 0;
      while (sent < out.size()) {
        const ssize_t w = ::write(out_fd, out.data() + sent, out.size() - sent);
        if (w <= 0) return;
        sent += static_cast<std::size_t>(w);
      }
    }
  }
}

}  // namespace dfov::testing
