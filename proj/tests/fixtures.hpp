// SPDX-License-Identifier: Apache-2.0
// Temporary directories, captured warnings, error-kind checks and the small
// model used by the training tests.
#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "homdet/config.hpp"
#include "homdet/error.hpp"

namespace fixture {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("homdet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  std::string str(const std::string& leaf = "") const { return leaf.empty() ? path_.string() : (path_ / leaf).string(); }

 private:
  fs::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Collects warnings while alive.
class WarningCapture {
 public:
  WarningCapture() { homdet::set_warning_handler(&WarningCapture::sink, this); }
  ~WarningCapture() { homdet::set_warning_handler(nullptr, nullptr); }
  const std::vector<std::string>& messages() const { return messages_; }
  bool contains(const std::string& needle) const {
    for (const auto& m : messages_)
      if (m.find(needle) != std::string::npos) return true;
    return false;
  }

 private:
  static void sink(const char* msg, void* user) { static_cast<WarningCapture*>(user)->messages_.emplace_back(msg); }
  std::vector<std::string> messages_;
};

/// Kind of the homdet::Error thrown by `fn`, or -1 if nothing was thrown.
inline int thrown_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const homdet::Error& e) {
    return static_cast<int>(e.kind());
  }
  return -1;
}

inline int kind(homdet::ErrorKind k) { return static_cast<int>(k); }

/// Message of the homdet::Error thrown by `fn`, empty if none.
inline std::string thrown_message(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const homdet::Error& e) {
    return e.what();
  }
  return {};
}

/// A model small enough to train for a few dozen steps in a unit test.
inline homdet::RunConfig small_run(long steps, std::uint64_t seed = 1) {
  homdet::RunConfig c;
  auto& m = c.model;
  m.unet_depth = 2;
  m.unet_base_channels = 3;
  m.anchor_cfg.strides = {4, 8};
  m.anchor_cfg.scales = {2.5, 3.5};
  m.anchor_cfg.aspect_ratios = {1.0};
  m.detector_channels = 4;
  m.detector_head_convs = 1;
  m.domain_head_channels = 4;
  m.extractor_channels = 4;
  m.init_seed = seed;
  c.train.seed = seed;
  c.train.batch_size = 3;
  c.train.learning_rate = 2e-3;
  c.train.max_steps = steps;
  return c;
}

}  // namespace fixture
