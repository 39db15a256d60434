#pragma once

#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbmd {

// Error taxonomy. Kinds map 1:1 onto CLI exit codes.
enum class ErrorKind : int {
  Usage = 2,
  Config = 3,
  Data = 4,
  Numeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

/// Dense row-major matrix of doubles. Used for signals (channels x samples).
struct SignalMatrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> v;

  SignalMatrix() = default;
  SignalMatrix(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0.0) {}

  double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
  double* row(int64_t r) { return v.data() + r * cols; }
  const double* row(int64_t r) const { return v.data() + r * cols; }
  int64_t numel() const { return rows * cols; }

  bool same_shape(const SignalMatrix& o) const { return rows == o.rows && cols == o.cols; }
};

// splitmix64: seed mixing for derived RNG streams.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t s = mix64(base);
  s = mix64(s ^ a);
  s = mix64(s ^ b);
  s = mix64(s ^ c);
  return s;
}

inline std::mt19937_64 make_rng(uint64_t seed) { return std::mt19937_64(mix64(seed)); }

/// Fixed-precision float formatting (deterministic across runs and locales).
inline std::string fmt_fixed(double x, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, x);
  return std::string(buf);
}

inline std::string fmt_sci(double x, int precision = 9) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*e", precision, x);
  return std::string(buf);
}

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

/// Hex SHA-256 of a byte string (content hashes recorded in run metadata).
std::string sha256_hex(const std::string& bytes);

}  // namespace mbmd
