#pragma once

// XOR keystream, the non-linear tag function, nonce handling and session-key
// derivation. Everything here is a pure function; generators are owned by
// the caller.

#include <cstdint>

#include "easysec/error.hpp"
#include "easysec/rng.hpp"
#include "easysec/types.hpp"

namespace easysec::crypto {

/// Payload XOR the key repeated cyclically (MSB first), truncated to the
/// payload length. Self-inverse.
inline BitString keystream_xor(const BitString& key, const BitString& payload) {
  if (key.empty()) throw Error(ErrorCode::Parameter, "keystream key is empty");
  if (payload.empty()) throw Error(ErrorCode::Parameter, "keystream payload is empty");

  std::uint64_t stream = 0;
  unsigned filled = 0;
  while (filled < payload.size()) {
    const unsigned take = std::min(key.size(), payload.size() - filled);
    const std::uint64_t chunk = key.value() >> (key.size() - take);
    stream = take == 64 ? chunk : (stream << take) | chunk;
    filled += take;
  }
  return BitString(payload.value() ^ stream, payload.size());
}

/// Fixed 64-bit bijective mixer used as the protocol's non-linear function.
constexpr std::uint64_t f_nl(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

/// 0xA1B2 -> 0xA1B2A1B2A1B2A1B2
constexpr std::uint64_t extend_nonce(Nonce16 n) noexcept {
  return std::uint64_t{n.bits} * 0x0001000100010001ULL;
}

constexpr SessionKey derive_session_key(Response r_ci, Nonce16 n_v) noexcept {
  return SessionKey{f_nl(r_ci.bits ^ extend_nonce(n_v))};
}

/// Phase-3 tag F_nl(R_{C+I} xor N_s).
constexpr std::uint64_t phase3_tag(Response r_ci, Nonce16 n_s) noexcept {
  return f_nl(r_ci.bits ^ extend_nonce(n_s));
}

inline Nonce16 gen_nonce(rng::Engine& eng) {
  return Nonce16{static_cast<std::uint16_t>(eng() >> 48)};
}

}  // namespace easysec::crypto
