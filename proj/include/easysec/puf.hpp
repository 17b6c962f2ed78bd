#pragma once

// Software arbiter PUF.
//
// Each response bit i comes from an independent arbiter chain under the
// additive linear delay model. With challenge bit j read as (c >> j) & 1 and
// mapped to a sign s_j = 1 - 2 * bit, the chain sees the parity features
//
//     phi[j] = s_j * s_{j+1} * ... * s_{W-1}   for j < W,   phi[W] = 1
//
// and its delay difference is dot(weights_i, phi) plus Gaussian noise with
// standard deviation noise_sigma * temperature_scale. Bit i is 1 iff the
// difference is strictly positive; an exact zero resolves to 0.
//
// Weights are W x (W + 1) standard normals drawn row-major (chain 0 stages
// 0..W, then chain 1, ...) from rng::NormalStream over mt19937_64 seeded with
// the instance seed. Evaluation noise for one call is drawn, chain 0 first,
// from a stream seeded with derive_seed({instance_seed, challenge, eval_seed}).

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "easysec/error.hpp"
#include "easysec/rng.hpp"
#include "easysec/types.hpp"

namespace easysec::puf {

struct EvalContext {
  std::uint64_t eval_seed = 0;
  double temperature_scale = 1.0;
};

template <unsigned Width>
class BasicArbiterPuf {
  static_assert(Width >= 1 && Width <= 64, "arbiter PUF width must be 1..64");

 public:
  static constexpr unsigned kWidth = Width;
  static constexpr unsigned kStages = Width + 1;

  static BasicArbiterPuf create(std::uint64_t instance_seed, double noise_sigma) {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
      throw Error(ErrorCode::Parameter, "noise_sigma must be a finite value >= 0");
    BasicArbiterPuf puf;
    puf.seed_ = instance_seed;
    puf.noise_sigma_ = noise_sigma;
    puf.weights_.resize(std::size_t{Width} * kStages);
    rng::Engine eng(instance_seed);
    rng::NormalStream normal(eng);
    for (double& w : puf.weights_) w = normal.next();
    return puf;
  }

  /// Builds an instance from explicit weights (row-major, Width x (Width+1)).
  static BasicArbiterPuf from_weights(std::vector<double> weights, double noise_sigma, std::uint64_t instance_seed = 0) {
    if (weights.size() != std::size_t{Width} * kStages)
      throw Error(ErrorCode::Parameter, "weight table has the wrong size");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::Parameter, "noise_sigma must be >= 0");
    for (double w : weights)
      if (!std::isfinite(w)) throw Error(ErrorCode::Parameter, "weights must be finite");
    BasicArbiterPuf puf;
    puf.seed_ = instance_seed;
    puf.noise_sigma_ = noise_sigma;
    puf.weights_ = std::move(weights);
    return puf;
  }

  Response evaluate(Challenge c, const EvalContext& ctx = {}) const {
    const auto phi = features(c);
    const double sigma = noise_sigma_ * ctx.temperature_scale;

    std::uint64_t out = 0;
    if (sigma > 0.0) {
      rng::Engine eng(rng::derive_seed({seed_, c.bits, ctx.eval_seed}));
      rng::NormalStream normal(eng);
      for (unsigned i = 0; i < Width; ++i) {
        const double delta = chain_delay(i, phi) + sigma * normal.next();
        if (delta > 0.0) out |= std::uint64_t{1} << i;
      }
    } else {
      for (unsigned i = 0; i < Width; ++i)
        if (chain_delay(i, phi) > 0.0) out |= std::uint64_t{1} << i;
    }
    return Response{out};
  }

  static std::array<double, kStages> features(Challenge c) noexcept {
    std::array<double, kStages> phi{};
    phi[Width] = 1.0;
    double acc = 1.0;
    for (unsigned j = Width; j-- > 0;) {
      acc *= ((c.bits >> j) & 1U) ? -1.0 : 1.0;
      phi[j] = acc;
    }
    return phi;
  }

  std::span<const double> chain_weights(unsigned chain) const {
    return std::span<const double>(weights_).subspan(std::size_t{chain} * kStages, kStages);
  }
  std::span<const double> weights() const noexcept { return weights_; }
  double noise_sigma() const noexcept { return noise_sigma_; }
  std::uint64_t instance_seed() const noexcept { return seed_; }

 private:
  BasicArbiterPuf() = default;

  double chain_delay(unsigned chain, const std::array<double, kStages>& phi) const noexcept {
    const double* w = weights_.data() + std::size_t{chain} * kStages;
    double acc = 0.0;
    for (unsigned j = 0; j < kStages; ++j) acc += w[j] * phi[j];
    return acc;
  }

  std::vector<double> weights_;
  double noise_sigma_ = 0.0;
  std::uint64_t seed_ = 0;
};

using ArbiterPuf = BasicArbiterPuf<64>;

/// The n most significant bits of a 64-bit response, MSB first.
inline BitString take_msb_bits(Response r, unsigned n) {
  if (n < 1 || n > 64) throw Error(ErrorCode::Parameter, "take_msb_bits: n must be in 1..64");
  return BitString(n == 64 ? r.bits : r.bits >> (64 - n), n);
}

struct Crp {
  Challenge challenge;
  Response response;
  friend bool operator==(const Crp&, const Crp&) = default;
};

struct CrpCorpus {
  std::vector<Crp> entries;
  std::string source_id;
  unsigned width = 64;
};

template <unsigned Width>
CrpCorpus collect_corpus(const BasicArbiterPuf<Width>& puf, std::span<const Challenge> challenges,
                         const EvalContext& ctx = {}, std::string source_id = {}) {
  CrpCorpus corpus{{}, std::move(source_id), Width};
  corpus.entries.reserve(challenges.size());
  for (Challenge c : challenges) corpus.entries.push_back({c, puf.evaluate(c, ctx)});
  return corpus;
}

inline std::vector<Challenge> random_challenges(std::uint64_t seed, std::size_t count, unsigned width = 64) {
  rng::Engine eng(seed);
  std::vector<Challenge> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.emplace_back(eng() & low_mask(width));
  return out;
}

/// One `challenge_hex,response_hex` line per CRP, 16 lowercase digits each.
inline void write_corpus(std::ostream& os, const CrpCorpus& corpus) {
  for (const Crp& crp : corpus.entries)
    os << to_hex(crp.challenge.bits) << ',' << to_hex(crp.response.bits) << '\n';
}

inline CrpCorpus read_corpus(std::istream& is, std::string source_id = {}) {
  const auto parse_word = [](const std::string& text, std::size_t line_no) {
    if (text.size() != 16) throw Error(ErrorCode::Input, "corpus line " + std::to_string(line_no) + ": expected 16 hex digits");
    std::uint64_t v = 0;
    for (char ch : text) {
      int d;
      if (ch >= '0' && ch <= '9') d = ch - '0';
      else if (ch >= 'a' && ch <= 'f') d = ch - 'a' + 10;
      else throw Error(ErrorCode::Input, "corpus line " + std::to_string(line_no) + ": not lowercase hex");
      v = (v << 4) | static_cast<std::uint64_t>(d);
    }
    return v;
  };

  CrpCorpus corpus{{}, std::move(source_id), 64};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorCode::Input, "corpus line " + std::to_string(line_no) + ": missing comma");
    corpus.entries.push_back({Challenge{parse_word(line.substr(0, comma), line_no)},
                              Response{parse_word(line.substr(comma + 1), line_no)}});
  }
  return corpus;
}

}  // namespace easysec::puf
