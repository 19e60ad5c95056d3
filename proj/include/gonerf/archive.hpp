#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "gonerf/errors.hpp"
#include "gonerf/png_io.hpp"

// Versioned, checksummed little-endian binary container.
//
//   magic "GONERFAR" | u32 kind | u32 version | u64 payload size | payload | u32 crc32(payload)
namespace gonerf::archive {

inline constexpr std::array<char, 8> kMagic{'G', 'O', 'N', 'E', 'R', 'F', 'A', 'R'};

class Writer {
 public:
  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    buf_.append(s);
  }
  template <class T>
  void put_span(std::span<const T> data) {
    put<std::uint64_t>(data.size());
    buf_.append(reinterpret_cast<const char*>(data.data()), data.size_bytes());
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const char> data) : data_(data) {}

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  template <class T>
  std::vector<T> get_vector() {
    const auto n = get<std::uint64_t>();
    need(n * sizeof(T));
    std::vector<T> v(n);
    std::memcpy(v.data(), data_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return v;
  }
  // Reads exactly `out.size()` elements; throws when the stored count differs.
  template <class T>
  void get_into(std::span<T> out) {
    const auto n = get<std::uint64_t>();
    if (n != out.size()) throw IoError("archive: element count mismatch");
    need(n * sizeof(T));
    std::memcpy(out.data(), data_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw IoError("archive: truncated payload");
  }
  std::span<const char> data_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc(std::span<const char> data) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

inline std::string seal(std::uint32_t kind, std::uint32_t version, const std::string& payload) {
  Writer w;
  std::string out(kMagic.data(), kMagic.size());
  w.put(kind);
  w.put(version);
  w.put<std::uint64_t>(payload.size());
  out += w.bytes();
  out += payload;
  const std::uint32_t c = crc(payload);
  out.append(reinterpret_cast<const char*>(&c), sizeof(c));
  return out;
}

// Validates header and checksum; returns the payload.
inline std::string open(const std::string& bytes, std::uint32_t kind, std::uint32_t version) {
  constexpr std::size_t header = 8 + 4 + 4 + 8;
  if (bytes.size() < header + 4 || std::memcmp(bytes.data(), kMagic.data(), 8) != 0)
    throw IoError("archive: bad magic or truncated header");
  Reader r(std::span<const char>(bytes.data() + 8, header - 8));
  const auto k = r.get<std::uint32_t>();
  const auto v = r.get<std::uint32_t>();
  const auto size = r.get<std::uint64_t>();
  if (k != kind) throw IoError("archive: unexpected archive kind");
  if (v != version)
    throw VersionMismatch("archive: version " + std::to_string(v) + " does not match supported version " +
                          std::to_string(version));
  if (bytes.size() != header + size + 4) throw ChecksumError("archive: size mismatch (corrupted file)");
  std::string payload = bytes.substr(header, size);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + header + size, 4);
  if (stored != crc(payload)) throw ChecksumError("archive: checksum mismatch (corrupted file)");
  return payload;
}

inline void write(const std::filesystem::path& path, const std::string& sealed) {
  png::write_file_atomic(path, sealed.data(), sealed.size());
}

inline std::string read(const std::filesystem::path& path) {
  const auto bytes = png::read_file(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace gonerf::archive
