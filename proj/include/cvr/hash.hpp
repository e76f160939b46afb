#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace cvr {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

// 64-bit FNV-1a. `seed` lets callers chain several buffers into one digest.
inline std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                           std::uint64_t seed = kFnvOffset) noexcept {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = kFnvOffset) noexcept {
  return fnv1a(std::span<const unsigned char>(
                   reinterpret_cast<const unsigned char*>(s.data()), s.size()),
               seed);
}

// Hashes the key as its 8 big-endian bytes, independent of host byte order.
inline std::uint64_t fnv1a_u64(std::uint64_t key, std::uint64_t seed = kFnvOffset) noexcept {
  unsigned char be[8];
  for (int i = 0; i < 8; ++i) be[i] = static_cast<unsigned char>(key >> (56 - 8 * i));
  return fnv1a(std::span<const unsigned char>(be, 8), seed);
}

inline std::uint64_t fnv1a_f64(double v, std::uint64_t seed = kFnvOffset) noexcept {
  std::uint64_t bits;
  static_assert(sizeof bits == sizeof v);
  __builtin_memcpy(&bits, &v, sizeof bits);
  return fnv1a_u64(bits, seed);
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace cvr
