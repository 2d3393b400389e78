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

#include <string>
#include <string_view>

namespace dfov::testing {

/// Behaviours of the scripted detector adapter.
enum class AdapterMode {
  /// Debug model: one detection around the non-black pixels, class from the
  /// red level; blank frames give no detections.
  Debug,
  /// Same fixed detection for every frame.
  Echo,
  /// Answers pings at once and frames after 600 ms.
  Stall,
  /// Stalls 600 ms on the first frame only.
  StallOnce,
  /// Advertises and returns probabilities only.
  Probs,
  /// Garbage instead of the first frame response, then behaves like Debug.
  Malformed,
  /// Wrong protocol version on frame responses.
  Version,
};

AdapterMode parse_adapter_mode(std::string_view s);

/// Fixed detection of Echo mode, as logits in class order.
inline constexpr double kEchoLogits[7] = {0.125, -1.5, 3.75, 0.0, 2.5, -0.0625, 1.0};
inline constexpr double kEchoBox[4] = {10.5, 2.25, 30.0, 24.75};

/// Request/response loop over newline-delimited JSON until EOF.
void serve_adapter(int in_fd, int out_fd, AdapterMode mode);

/// Answer to one request line; empty when the line should go unanswered.
std::string adapter_reply(const std::string& line, AdapterMode mode, int& frames_seen);

}  // namespace dfov::testing
