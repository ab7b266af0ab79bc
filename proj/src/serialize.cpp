// SPDX-License-Identifier: Apache-2.0
#include "homdet/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "homdet/error.hpp"

namespace homdet {
namespace {

static_assert(std::endian::native == std::endian::little, "serialisation assumes little-endian hosts");

constexpr char kContainerMagic[4] = {'H', 'D', 'T', 'W'};
constexpr std::uint32_t kContainerVersion = 1;
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

void ByteWriter::bytes(const void* p, std::size_t n) {
  const auto* c = static_cast<const unsigned char*>(p);
  buf_.insert(buf_.end(), c, c + n);
}
void ByteWriter::u32(std::uint32_t v) { bytes(&v, sizeof v); }
void ByteWriter::u64(std::uint64_t v) { bytes(&v, sizeof v); }
void ByteWriter::f64(double v) { bytes(&v, sizeof v); }
void ByteWriter::str(const std::string& s) {
  u64(s.size());
  bytes(s.data(), s.size());
}
void ByteWriter::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) u32(static_cast<std::uint32_t>(d));
  bytes(t.data(), t.size() * sizeof(double));
}

void ByteWriter::write_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

ByteReader ByteReader::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, "cannot open: " + path);
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ByteReader(std::move(data), path);
}

void ByteReader::bytes(void* p, std::size_t n) {
  if (buf_.size() - pos_ < n) fail(ErrorKind::Truncated, what_ + ": unexpected end of data");
  std::memcpy(p, buf_.data() + pos_, n);
  pos_ += n;
}
std::uint32_t ByteReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}
std::uint64_t ByteReader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return v;
}
double ByteReader::f64() {
  double v;
  bytes(&v, sizeof v);
  return v;
}
std::string ByteReader::str() {
  const std::uint64_t n = u64();
  if (buf_.size() - pos_ < n) fail(ErrorKind::Truncated, what_ + ": unexpected end of data");
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}
Tensor ByteReader::tensor() {
  const std::uint32_t rank = u32();
  if (rank > kMaxRank) fail(ErrorKind::Schema, what_ + ": tensor rank " + std::to_string(rank) + " too large");
  std::vector<int> shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = static_cast<int>(u32());
    count *= static_cast<std::uint32_t>(d);
    if (count > (buf_.size() - pos_) / sizeof(double))
      fail(ErrorKind::Truncated, what_ + ": tensor payload exceeds remaining data");
  }
  Tensor t(shape);
  bytes(t.data(), t.size() * sizeof(double));
  return t;
}

void write_tensor_container(const std::string& path, const std::vector<Tensor>& tensors) {
  ByteWriter w;
  w.bytes(kContainerMagic, 4);
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) w.tensor(t);
  w.write_file(path);
}

std::vector<Tensor> read_tensor_container(const std::string& path) {
  auto r = ByteReader::from_file(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kContainerMagic, 4) != 0)
    fail(ErrorKind::Version, path + ": not a tensor container (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    fail(ErrorKind::Version, path + ": unsupported tensor container version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(r.tensor());
  return out;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace homdet
