#pragma once

// Little-endian binary helpers shared by the checkpoint and archive formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "trajret/error.hpp"

namespace trajret::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume little-endian hosts");

constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    if (n != 0) buf_.append(static_cast<const char*>(data), n);
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  /// Appends the FNV-1a checksum of everything written so far.
  void seal() { put<std::uint64_t>(fnv1a(buf_)); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  // The checksum is checked before any field is read, so a corrupt size
  // field can never drive an allocation.
  Reader(std::string_view data, std::string context) : ctx_(std::move(context)) {
    if (data.size() < sizeof(std::uint64_t)) throw ParseError("io", ctx_ + ": truncated before checksum");
    const std::string_view payload = data.substr(0, data.size() - sizeof(std::uint64_t));
    std::uint64_t stored;
    std::memcpy(&stored, data.data() + payload.size(), sizeof(stored));
    if (stored != fnv1a(payload)) throw ParseError("io", ctx_ + ": checksum mismatch");
    data_ = payload;
  }

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    need(n);
    if (n == 0) return;  // out may be null for empty tensors
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

  /// Every payload byte must have been consumed.
  void finish() const {
    if (pos_ != data_.size()) throw ParseError("io", ctx_ + ": trailing bytes before checksum");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw ParseError("io", ctx_ + ": truncated at byte " + std::to_string(pos_));
  }
  std::string_view data_;
  std::string ctx_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
/// Writes to a sibling temp file then renames, so readers never see a partial file.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace trajret::io
