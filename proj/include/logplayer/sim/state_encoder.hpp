#pragma once

#include <cstdint>
#include <string>

#include "logplayer/types.hpp"

namespace logplayer::sim {

/// Canonical byte encoding of a simulated world, used to recognise revisited
/// states. Integers are LEB128 varints.
class StateEncoder {
 public:
  void put(std::uint64_t v) {
    do {
      auto byte = static_cast<unsigned char>(v & 0x7f);
      v >>= 7;
      if (v) byte |= 0x80;
      buf_.push_back(static_cast<char>(byte));
    } while (v);
  }

  template <class Range>
  void put_indexes(const Range& messages) {
    put(std::size(messages));
    for (const Message& m : messages) put(m.index * 2 + (m.is_dummy ? 1 : 0));
  }

  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

/// 128-bit fingerprint of an encoded state.
struct Fingerprint {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;
  bool operator==(const Fingerprint&) const = default;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Fingerprint fingerprint(const std::string& bytes) {
  std::uint64_t fnv = 0xcbf29ce484222325ULL;
  std::uint64_t mix = 0x243f6a8885a308d3ULL ^ bytes.size();
  std::uint64_t word = 0;
  std::size_t n = 0;
  for (char ch : bytes) {
    const auto c = static_cast<unsigned char>(ch);
    fnv = (fnv ^ c) * 0x100000001b3ULL;
    word = (word << 8) | c;
    if (++n == 8) {
      mix = splitmix64(mix ^ word);
      word = 0;
      n = 0;
    }
  }
  mix = splitmix64(mix ^ word ^ (static_cast<std::uint64_t>(n) << 56));
  return {fnv, mix};
}

struct FingerprintHash {
  std::size_t operator()(const Fingerprint& f) const noexcept { return static_cast<std::size_t>(f.lo ^ (f.hi * 31)); }
};

}  // namespace logplayer::sim
