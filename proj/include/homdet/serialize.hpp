// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary helpers shared by the tensor container and the
// checkpoint format.
//
// Tensor container layout:
//   magic "HDTW" | u32 version (=1) | u32 count |
//   count x { u32 rank | rank x u32 dim | prod(dims) x f64 }
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "homdet/tensor.hpp"

namespace homdet {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v);
  void str(const std::string& s);
  void tensor(const Tensor& t);
  const std::vector<unsigned char>& buffer() const { return buf_; }
  void write_file(const std::string& path) const;

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> data, std::string what = "file")
      : buf_(std::move(data)), what_(std::move(what)) {}
  static ByteReader from_file(const std::string& path);

  void bytes(void* p, std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64();
  std::string str();
  Tensor tensor();
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

void write_tensor_container(const std::string& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_tensor_container(const std::string& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace homdet
