#pragma once

#include <bit>
#include <compare>
#include <cstdint>
#include <functional>
#include <string>

#include "easysec/error.hpp"

namespace easysec {

/// Fixed-width word carrying a domain tag so challenges, responses, PIDs and
/// keys cannot be mixed up by accident.
template <typename Tag, typename Rep = std::uint64_t>
struct Word {
  Rep bits{};

  constexpr Word() = default;
  constexpr explicit Word(Rep v) : bits(v) {}

  friend constexpr auto operator<=>(const Word&, const Word&) = default;
};

struct ChallengeTag {};
struct ResponseTag {};
struct PseudoIdTag {};
struct NonceTag {};
struct SessionKeyTag {};

using Challenge = Word<ChallengeTag>;
using Response = Word<ResponseTag>;
using PseudoId = Word<PseudoIdTag>;
using Nonce16 = Word<NonceTag, std::uint16_t>;
using SessionKey = Word<SessionKeyTag>;

/// Simulator node identity; also the link-layer identity the grey list keys on.
using NodeId = std::uint32_t;
using FlowId = std::uint64_t;

/// Challenge offset C + I, wrapping modulo 2^64.
constexpr Challenge offset(Challenge c, std::uint64_t i) noexcept { return Challenge{c.bits + i}; }

constexpr std::uint64_t low_mask(unsigned width) noexcept {
  return width >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << width) - 1;
}

/// Up to 64 bits, stored right-aligned; bit 0 of the string is the MSB of the
/// value (position size-1 in the word).
class BitString {
 public:
  constexpr BitString() = default;

  constexpr BitString(std::uint64_t value, unsigned size) : value_(value & low_mask(size)), size_(size) {
    if (size > 64) throw Error(ErrorCode::Parameter, "bit-string longer than 64 bits");
  }

  static BitString parse(const std::string& text) {
    if (text.size() > 64) throw Error(ErrorCode::Parameter, "bit-string longer than 64 bits");
    std::uint64_t v = 0;
    for (char ch : text) {
      if (ch != '0' && ch != '1') throw Error(ErrorCode::Input, "bit-string must contain only 0/1");
      v = (v << 1) | static_cast<std::uint64_t>(ch == '1');
    }
    return BitString(v, static_cast<unsigned>(text.size()));
  }

  constexpr std::uint64_t value() const noexcept { return value_; }
  constexpr unsigned size() const noexcept { return size_; }
  constexpr bool empty() const noexcept { return size_ == 0; }

  /// Bit at position `i` counted from the front (MSB first).
  constexpr bool at(unsigned i) const noexcept { return (value_ >> (size_ - 1 - i)) & 1U; }

  std::string str() const {
    std::string out;
    out.reserve(size_);
    for (unsigned i = 0; i < size_; ++i) out.push_back(at(i) ? '1' : '0');
    return out;
  }

  friend constexpr bool operator==(const BitString&, const BitString&) = default;

 private:
  std::uint64_t value_ = 0;
  unsigned size_ = 0;
};

inline std::string to_hex(std::uint64_t v, unsigned digits = 16) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(digits, '0');
  for (unsigned i = 0; i < digits; ++i) out[digits - 1 - i] = kDigits[(v >> (4 * i)) & 0xF];
  return out;
}

constexpr unsigned hamming(std::uint64_t a, std::uint64_t b) noexcept {
  return static_cast<unsigned>(std::popcount(a ^ b));
}

}  // namespace easysec

template <typename Tag, typename Rep>
struct std::hash<easysec::Word<Tag, Rep>> {
  std::size_t operator()(const easysec::Word<Tag, Rep>& w) const noexcept { return std::hash<Rep>{}(w.bits); }
};
