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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <thread>

#include <Eigen/Core>

#include "dfov/core.hpp"
#include "dfov/rng.hpp"
#include "fake_adapter.hpp"

namespace dfov::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(std::string_view tag = "dfov");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Adapter listening on an ephemeral loopback port; serves one client.
class LoopbackServer {
 public:
  explicit LoopbackServer(AdapterMode mode);
  ~LoopbackServer();
  int port() const noexcept { return port_; }

 private:
  int listen_fd_ = -1;
  int port_ = 0;
  std::thread thread_;
};

/// A loopback port with nothing listening on it.
int unused_port();

RgbImage random_image(int w, int h, Rng& rng);

/// Detection whose logits put `confidence` on `cls` and spread the rest
/// evenly over the other classes.
Detection detection_with(const Box& b, int cls, double confidence, int k = 7);

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

/// Runs a shell command, capturing stdout and stderr together.
CommandResult run_command(const std::string& cmd);

std::string read_file(const std::filesystem::path& p);

/// Hash over relative paths and contents of every regular file in a tree.
std::uint64_t tree_hash(const std::filesystem::path& root);

}  // namespace dfov::testing
