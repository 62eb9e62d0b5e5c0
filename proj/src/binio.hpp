#pragma once

// Little-endian binary file helpers shared by the checkpoint and
// prediction-matrix writers. Readers track the byte offset so truncation
// and corruption errors can name the position.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "hvc/errors.hpp"

namespace hvc::io {

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), f_(path, std::ios::binary) {
    if (!f_) throw DataError("cannot write " + path);
  }
  void bytes(const void* p, std::size_t n) {
    f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!f_) throw DataError("short write on " + path_);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) {
    std::uint8_t b[4] = {std::uint8_t(v), std::uint8_t(v >> 8),
                         std::uint8_t(v >> 16), std::uint8_t(v >> 24)};
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void close() {
    f_.close();
    if (!f_) throw DataError("close failed on " + path_);
  }

 private:
  std::string path_;
  std::ofstream f_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    f.seekg(0, std::ios::end);
    buf_.resize(static_cast<std::size_t>(f.tellg()));
    f.seekg(0, std::ios::beg);
    f.read(reinterpret_cast<char*>(buf_.data()),
           static_cast<std::streamsize>(buf_.size()));
    if (!f) throw DataError("short read on " + path);
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n)
      throw DataError(path_ + ": unexpected end of file at offset " +
                      std::to_string(pos_) + ", need " + std::to_string(n) +
                      " more bytes but " + std::to_string(remaining()) +
                      " remain");
  }
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    bytes(b, 4);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
           (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | (std::uint64_t(u32()) << 32);
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t max_len = 1 << 20) {
    const std::size_t off = pos_;
    const std::uint32_t n = u32();
    if (n > max_len)
      throw DataError(path_ + ": string length " + std::to_string(n) +
                      " at offset " + std::to_string(off) + " exceeds limit");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void expect_magic(const char magic[4]) {
    const std::size_t off = pos_;
    char got[5] = {0, 0, 0, 0, 0};
    bytes(got, 4);
    if (std::memcmp(got, magic, 4) != 0)
      throw DataError(path_ + ": bad magic at offset " + std::to_string(off) +
                      ", expected '" + std::string(magic, 4) + "'");
  }
  void expect_done() const {
    if (remaining() != 0)
      throw DataError(path_ + ": " + std::to_string(remaining()) +
                      " trailing bytes at offset " + std::to_string(pos_));
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace hvc::io
