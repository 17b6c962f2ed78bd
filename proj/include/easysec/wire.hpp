#pragma once

// Wire layouts. All multi-byte fields are big-endian; fields appear in the
// order they are declared. Sizes are fixed, there is no tag or length prefix.
//
//   Phase1Msg        10 bytes  v_pid(8) n_v(2)
//   Phase2Msg        14 bytes  c(8) k(1) ct(5)
//   Phase3Msg         8 bytes  f3(8)
//   PidForward        8 bytes  pid(8)
//   NewKeyGrant      16 bytes  pid_new(8) ct_sk(8)
//   KeyRequest        8 bytes  pid_plus_one(8)
//   KeyDelivery       8 bytes  ct_sk(8)
//
// The Phase-2 ciphertext is the 40-bit plaintext N_v(16) N_s(16) I(8) XORed
// with the keystream of R^{K+1}.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "easysec/error.hpp"
#include "easysec/types.hpp"

namespace easysec::wire {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kPhase1Size = 10;
inline constexpr std::size_t kPhase2Size = 14;
inline constexpr std::size_t kPhase3Size = 8;
inline constexpr std::size_t kPidForwardSize = 8;
inline constexpr std::size_t kNewKeyGrantSize = 16;
inline constexpr std::size_t kKeyRequestSize = 8;
inline constexpr std::size_t kKeyDeliverySize = 8;

inline constexpr unsigned kMinK = 15;
inline constexpr unsigned kMaxK = 63;
inline constexpr unsigned kPhase2PlainBits = 40;

struct Phase1Msg {
  PseudoId v_pid;
  Nonce16 n_v;
  friend bool operator==(const Phase1Msg&, const Phase1Msg&) = default;
};

struct Phase2Msg {
  Challenge c;
  std::uint8_t k = kMinK;
  std::uint64_t ct = 0;  // low 40 bits
  friend bool operator==(const Phase2Msg&, const Phase2Msg&) = default;
};

struct Phase3Msg {
  std::uint64_t f3 = 0;
  friend bool operator==(const Phase3Msg&, const Phase3Msg&) = default;
};

struct PidForward {
  PseudoId pid;
  friend bool operator==(const PidForward&, const PidForward&) = default;
};

struct NewKeyGrant {
  PseudoId pid_new;
  std::uint64_t ct_sk = 0;
  friend bool operator==(const NewKeyGrant&, const NewKeyGrant&) = default;
};

struct KeyRequest {
  PseudoId pid_plus_one;
  friend bool operator==(const KeyRequest&, const KeyRequest&) = default;
};

struct KeyDelivery {
  std::uint64_t ct_sk = 0;
  friend bool operator==(const KeyDelivery&, const KeyDelivery&) = default;
};

struct Phase2Plaintext {
  Nonce16 n_v;
  Nonce16 n_s;
  std::uint8_t i = 0;
  friend bool operator==(const Phase2Plaintext&, const Phase2Plaintext&) = default;
};

constexpr std::uint64_t pack(const Phase2Plaintext& p) noexcept {
  return (std::uint64_t{p.n_v.bits} << 24) | (std::uint64_t{p.n_s.bits} << 8) | p.i;
}

constexpr Phase2Plaintext unpack_phase2_plaintext(std::uint64_t v) noexcept {
  return {Nonce16{static_cast<std::uint16_t>(v >> 24)}, Nonce16{static_cast<std::uint16_t>(v >> 8)},
          static_cast<std::uint8_t>(v)};
}

namespace detail {

inline void put_be(std::uint8_t* out, std::uint64_t v, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * (n - 1 - i)));
}

inline std::uint64_t get_be(const std::uint8_t* in, std::size_t n) noexcept {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v = (v << 8) | in[i];
  return v;
}

inline void require_size(std::span<const std::uint8_t> bytes, std::size_t expected, const char* what) {
  if (bytes.size() != expected)
    throw Error(ErrorCode::Frame, std::string(what) + ": expected " + std::to_string(expected) + " bytes, got " +
                                      std::to_string(bytes.size()));
}

}  // namespace detail

inline std::array<std::uint8_t, kPhase1Size> encode(const Phase1Msg& m) {
  std::array<std::uint8_t, kPhase1Size> out{};
  detail::put_be(out.data(), m.v_pid.bits, 8);
  detail::put_be(out.data() + 8, m.n_v.bits, 2);
  return out;
}

inline std::array<std::uint8_t, kPhase2Size> encode(const Phase2Msg& m) {
  if (m.k < kMinK || m.k > kMaxK) throw Error(ErrorCode::MalformedField, "phase-2 K outside [15,63]");
  std::array<std::uint8_t, kPhase2Size> out{};
  detail::put_be(out.data(), m.c.bits, 8);
  out[8] = m.k;
  detail::put_be(out.data() + 9, m.ct & low_mask(kPhase2PlainBits), 5);
  return out;
}

inline std::array<std::uint8_t, kPhase3Size> encode(const Phase3Msg& m) {
  std::array<std::uint8_t, kPhase3Size> out{};
  detail::put_be(out.data(), m.f3, 8);
  return out;
}

inline std::array<std::uint8_t, kPidForwardSize> encode(const PidForward& m) {
  std::array<std::uint8_t, kPidForwardSize> out{};
  detail::put_be(out.data(), m.pid.bits, 8);
  return out;
}

inline std::array<std::uint8_t, kNewKeyGrantSize> encode(const NewKeyGrant& m) {
  std::array<std::uint8_t, kNewKeyGrantSize> out{};
  detail::put_be(out.data(), m.pid_new.bits, 8);
  detail::put_be(out.data() + 8, m.ct_sk, 8);
  return out;
}

inline std::array<std::uint8_t, kKeyRequestSize> encode(const KeyRequest& m) {
  std::array<std::uint8_t, kKeyRequestSize> out{};
  detail::put_be(out.data(), m.pid_plus_one.bits, 8);
  return out;
}

inline std::array<std::uint8_t, kKeyDeliverySize> encode(const KeyDelivery& m) {
  std::array<std::uint8_t, kKeyDeliverySize> out{};
  detail::put_be(out.data(), m.ct_sk, 8);
  return out;
}

inline Phase1Msg decode_phase1(std::span<const std::uint8_t> b) {
  detail::require_size(b, kPhase1Size, "phase-1");
  return {PseudoId{detail::get_be(b.data(), 8)}, Nonce16{static_cast<std::uint16_t>(detail::get_be(b.data() + 8, 2))}};
}

inline Phase2Msg decode_phase2(std::span<const std::uint8_t> b) {
  detail::require_size(b, kPhase2Size, "phase-2");
  const std::uint8_t k = b[8];
  if (k < kMinK || k > kMaxK) throw Error(ErrorCode::MalformedField, "phase-2 K outside [15,63]");
  return {Challenge{detail::get_be(b.data(), 8)}, k, detail::get_be(b.data() + 9, 5)};
}

inline Phase3Msg decode_phase3(std::span<const std::uint8_t> b) {
  detail::require_size(b, kPhase3Size, "phase-3");
  return {detail::get_be(b.data(), 8)};
}

inline PidForward decode_pid_forward(std::span<const std::uint8_t> b) {
  detail::require_size(b, kPidForwardSize, "pid-forward");
  return {PseudoId{detail::get_be(b.data(), 8)}};
}

inline NewKeyGrant decode_new_key_grant(std::span<const std::uint8_t> b) {
  detail::require_size(b, kNewKeyGrantSize, "new-key-grant");
  return {PseudoId{detail::get_be(b.data(), 8)}, detail::get_be(b.data() + 8, 8)};
}

inline KeyRequest decode_key_request(std::span<const std::uint8_t> b) {
  detail::require_size(b, kKeyRequestSize, "key-request");
  return {PseudoId{detail::get_be(b.data(), 8)}};
}

inline KeyDelivery decode_key_delivery(std::span<const std::uint8_t> b) {
  detail::require_size(b, kKeyDeliverySize, "key-delivery");
  return {detail::get_be(b.data(), 8)};
}

template <std::size_t N>
Bytes to_bytes(const std::array<std::uint8_t, N>& a) {
  return Bytes(a.begin(), a.end());
}

inline std::string hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

}  // namespace easysec::wire
