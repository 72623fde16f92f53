#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>

namespace seqorder {

using TokenId = std::uint32_t;

// Runtime failure that ends a pipeline stage. The message is a single line
// so the CLI can print it verbatim as a machine-parsable reason.
class FatalError : public std::runtime_error {
 public:
  explicit FatalError(const std::string& what) : std::runtime_error(what) {}
};

// Violated precondition inside the library (wrong shapes, label not in
// scheme, ...). Never expected on valid input.
class ProgrammingError : public std::logic_error {
 public:
  explicit ProgrammingError(const std::string& what) : std::logic_error(what) {}
};

namespace detail {

inline void append_all(std::ostringstream&) {}

template <typename T, typename... Rest>
void append_all(std::ostringstream& oss, T&& head, Rest&&... rest) {
  oss << std::forward<T>(head);
  append_all(oss, std::forward<Rest>(rest)...);
}

}  // namespace detail

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  detail::append_all(oss, std::forward<Args>(args)...);
  return oss.str();
}

template <typename... Args>
[[noreturn]] void fatal(Args&&... args) {
  throw FatalError(concat(std::forward<Args>(args)...));
}

// ---------------------------------------------------------------------------
// Random streams
//
// The engine is std::mt19937_64. Distributions are implemented here instead
// of using <random>'s, whose output is implementation-defined; every stream
// must replay bit-identically from (seed, stream id).
// ---------------------------------------------------------------------------
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : engine_(mix(seed, stream)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer on [0, n). Rejection sampling, no modulo bias.
  std::uint64_t index(std::uint64_t n) {
    if (n == 0) throw ProgrammingError("Rng::index called with n = 0");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t draw;
    do {
      draw = engine_();
    } while (draw >= limit);
    return draw % n;
  }

  // Standard normal via Box-Muller; the second variate is discarded so the
  // stream position depends only on the number of calls.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::string state() const {
    std::ostringstream oss;
    oss << engine_;
    return oss.str();
  }

  void restore(const std::string& text) {
    std::istringstream iss(text);
    iss >> engine_;
    if (!iss) fatal("corrupt random stream state");
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  // splitmix64 finalizer over (seed, stream) so nearby seeds and stream ids
  // land on unrelated engine states.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Little-endian binary IO shared by the examples file and checkpoints.
// ---------------------------------------------------------------------------
namespace io {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
  unsigned char bytes[sizeof(T)];
  if constexpr (std::is_floating_point_v<T>) {
    static_assert(sizeof(T) == 8);
    std::uint64_t bits;
    std::memcpy(&bits, &value, 8);
    for (std::size_t i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  } else {
    using U = std::make_unsigned_t<T>;
    const U bits = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bytes[i] = static_cast<unsigned char>(static_cast<std::uint64_t>(bits) >> (8 * i));
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!is) fatal("unexpected end of binary stream");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_floating_point_v<T>) {
    static_assert(sizeof(T) == 8);
    T value;
    std::memcpy(&value, &bits, 8);
    return value;
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace io

}  // namespace seqorder
