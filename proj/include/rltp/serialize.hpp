#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rltp/errors.hpp"

namespace rltp {

// Versioned little-endian binary container: 8-byte magic, then u32 version,
// then module-defined payload. Doubles round-trip bit-exactly.
class BinWriter {
 public:
  BinWriter(const std::string& path, const char magic[8], std::uint32_t version)
      : out_(path, std::ios::binary) {
    if (!out_) throw FormatError("cannot open for writing: " + path);
    out_.write(magic, 8);
    put_u32(version);
  }

  void put_u32(std::uint32_t v) { raw(&v, sizeof v); }
  void put_u64(std::uint64_t v) { raw(&v, sizeof v); }
  void put_i64(std::int64_t v) { raw(&v, sizeof v); }
  void put_f64(double v) { raw(&v, sizeof v); }

  void put_string(const std::string& s) {
    put_u64(s.size());
    raw(s.data(), s.size());
  }
  void put_f64_vec(const std::vector<double>& v) {
    put_u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }
  void put_i64_vec(const std::vector<std::int64_t>& v) {
    put_u64(v.size());
    raw(v.data(), v.size() * sizeof(std::int64_t));
  }

  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw FormatError("short write");
  }

 private:
  std::ofstream out_;
};

class BinReader {
 public:
  BinReader(const std::string& path, const char magic[8], std::uint32_t expect_version)
      : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw FormatError("cannot open: " + path);
    char got[8];
    raw(got, 8);
    if (std::memcmp(got, magic, 8) != 0)
      throw FormatError("bad magic in " + path + " (expected " + std::string(magic, 8) + ")");
    std::uint32_t v = get_u32();
    if (v != expect_version)
      throw FormatError("unsupported version " + std::to_string(v) + " in " + path);
  }

  std::uint32_t get_u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
  std::uint64_t get_u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
  std::int64_t get_i64() { std::int64_t v; raw(&v, sizeof v); return v; }
  double get_f64() { double v; raw(&v, sizeof v); return v; }

  std::string get_string() {
    std::string s(get_u64(), '\0');
    raw(s.data(), s.size());
    return s;
  }
  std::vector<double> get_f64_vec() {
    std::vector<double> v(get_u64());
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }
  std::vector<std::int64_t> get_i64_vec() {
    std::vector<std::int64_t> v(get_u64());
    raw(v.data(), v.size() * sizeof(std::int64_t));
    return v;
  }

  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw FormatError("truncated file: " + path_);
  }

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace rltp
