#ifndef CTFLOW_CORE_HPP
#define CTFLOW_CORE_HPP

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <boost/crc.hpp>

namespace ctflow {

/// Error categories shared by every module. The CLI maps them onto exit codes.
enum class Errc {
  parse,
  duplicate,
  not_found,
  invalid_argument,
  empty_trigger,
  diverged,
  io,
  checksum,
  broken_chain,
  shape_mismatch,
  validation,
  no_triggers,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::parse: return "parse";
    case Errc::duplicate: return "duplicate";
    case Errc::not_found: return "not_found";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::empty_trigger: return "empty_trigger";
    case Errc::diverged: return "diverged";
    case Errc::io: return "io";
    case Errc::checksum: return "checksum";
    case Errc::broken_chain: return "broken_chain";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::validation: return "validation";
    case Errc::no_triggers: return "no_triggers";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// ---------------------------------------------------------------------------
// Little-endian byte helpers. All on-disk formats in this project are LE.

namespace le {

template <typename T>
inline T load(const std::byte* p) {
  static_assert(std::is_trivially_copyable_v<T>);
  T value;
  std::memcpy(&value, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* b = reinterpret_cast<std::byte*>(&value);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  return value;
}

template <typename T>
inline void store(std::byte* p, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    auto* b = reinterpret_cast<std::byte*>(&value);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  std::memcpy(p, &value, sizeof(T));
}

template <typename T>
inline void append(std::vector<std::byte>& out, T value) {
  const auto at = out.size();
  out.resize(at + sizeof(T));
  store<T>(out.data() + at, value);
}

}  // namespace le

inline std::span<const std::byte> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::byte*>(s.data()), s.size()};
}

inline void append_magic(std::vector<std::byte>& out, std::string_view magic) {
  for (char c : magic) out.push_back(static_cast<std::byte>(c));
}

inline bool has_magic(std::span<const std::byte> bytes, std::string_view magic) {
  if (bytes.size() < magic.size()) return false;
  return std::memcmp(bytes.data(), magic.data(), magic.size()) == 0;
}

/// CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xor-out).
inline std::uint64_t crc64(std::span<const std::byte> bytes) {
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true> crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// ---------------------------------------------------------------------------
// Seeds. Every component draws from a named sub-seed of the pipeline seed.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return splitmix64(seed ^ h);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name, std::uint64_t index) {
  return splitmix64(derive_seed(seed, name) + splitmix64(index));
}

/// floor(ratio * n), robust against ratios like 0.1 that are not exact in binary.
inline std::size_t budget(std::size_t n, double ratio) {
  const double raw = ratio * static_cast<double>(n);
  return static_cast<std::size_t>(std::floor(raw + 1e-9 * std::max(1.0, raw)));
}

// ---------------------------------------------------------------------------

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  void append_row(std::span<const double> values) {
    if (rows == 0 && cols == 0) cols = values.size();
    if (values.size() != cols) throw Error(Errc::shape_mismatch, "row width mismatch");
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Selects the given rows, in order.
inline Matrix take_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = m.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace ctflow

#endif  // CTFLOW_CORE_HPP
