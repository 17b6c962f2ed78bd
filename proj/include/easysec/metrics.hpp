#pragma once

// Figures of merit over CRP corpora. All sums run in index order before the
// final division so results do not depend on evaluation order.

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "easysec/error.hpp"
#include "easysec/puf.hpp"
#include "easysec/types.hpp"

namespace easysec::metrics {

struct MetricsReport {
  double uniqueness_pct = 0.0;
  double randomness_pct = 0.0;
  double inter_hd_pct = 0.0;
  double reliability_pct = 0.0;
  std::size_t instances = 0;
  std::size_t challenges = 0;
  std::size_t repeats = 0;
};

namespace detail {

inline void require_same_challenges(const puf::CrpCorpus& a, const puf::CrpCorpus& b) {
  if (a.entries.size() != b.entries.size())
    throw Error(ErrorCode::Input, "corpora have different lengths");
  if (a.width != b.width) throw Error(ErrorCode::Input, "corpora have different response widths");
  for (std::size_t i = 0; i < a.entries.size(); ++i)
    if (a.entries[i].challenge != b.entries[i].challenge)
      throw Error(ErrorCode::Input, "corpora use different challenge sequences");
}

inline double pair_hd_sum(const puf::CrpCorpus& a, const puf::CrpCorpus& b) {
  const std::uint64_t mask = low_mask(a.width);
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < a.entries.size(); ++i)
    bits += hamming(a.entries[i].response.bits & mask, b.entries[i].response.bits & mask);
  return static_cast<double>(bits);
}

}  // namespace detail

/// Mean fractional Hamming distance between paired responses, in percent.
inline double inter_hd(const puf::CrpCorpus& a, const puf::CrpCorpus& b) {
  detail::require_same_challenges(a, b);
  if (a.entries.empty()) throw Error(ErrorCode::Input, "empty corpus");
  return detail::pair_hd_sum(a, b) / (static_cast<double>(a.entries.size()) * a.width) * 100.0;
}

/// Mean inter_hd over all unordered instance pairs, in percent.
inline double uniqueness(std::span<const puf::CrpCorpus> corpora) {
  if (corpora.size() < 2) throw Error(ErrorCode::Input, "uniqueness needs at least two corpora");
  if (corpora.front().entries.empty()) throw Error(ErrorCode::Input, "empty corpus");
  for (std::size_t i = 1; i < corpora.size(); ++i) detail::require_same_challenges(corpora[0], corpora[i]);

  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < corpora.size(); ++i)
    for (std::size_t j = i + 1; j < corpora.size(); ++j, ++pairs)
      total += detail::pair_hd_sum(corpora[i], corpora[j]);
  const double denom = static_cast<double>(pairs) * static_cast<double>(corpora[0].entries.size()) * corpora[0].width;
  return total / denom * 100.0;
}

/// Bit-balance score 2 * min(p, 1 - p) * 100, p the fraction of 1-bits.
inline double randomness(const puf::CrpCorpus& corpus) {
  if (corpus.entries.empty()) throw Error(ErrorCode::Input, "empty corpus");
  const std::uint64_t mask = low_mask(corpus.width);
  std::uint64_t ones = 0;
  for (const auto& crp : corpus.entries) ones += static_cast<std::uint64_t>(std::popcount(crp.response.bits & mask));
  const double p = static_cast<double>(ones) / (static_cast<double>(corpus.entries.size()) * corpus.width);
  return 2.0 * std::min(p, 1.0 - p) * 100.0;
}

/// 100 minus the mean fractional HD between each reference response and its
/// repeats. `repeats[r][c]` is repeat r of challenge c.
inline double reliability_from_responses(std::span<const Response> reference,
                                         std::span<const std::vector<Response>> repeats, unsigned width = 64) {
  if (reference.empty()) throw Error(ErrorCode::Input, "empty challenge list");
  if (repeats.empty()) throw Error(ErrorCode::Parameter, "at least one repeat is required");
  const std::uint64_t mask = low_mask(width);
  std::uint64_t bits = 0;
  for (const auto& row : repeats) {
    if (row.size() != reference.size()) throw Error(ErrorCode::Input, "repeat row length mismatch");
    for (std::size_t c = 0; c < reference.size(); ++c) bits += hamming(reference[c].bits & mask, row[c].bits & mask);
  }
  const double denom = static_cast<double>(reference.size()) * static_cast<double>(repeats.size()) * width;
  return 100.0 - static_cast<double>(bits) / denom * 100.0;
}

/// Evaluates each challenge once with ctx_seeds[0] as the reference and then
/// `repeats` more times with ctx_seeds[1..repeats].
template <unsigned Width>
double reliability(const puf::BasicArbiterPuf<Width>& instance, std::span<const Challenge> challenges,
                   std::size_t repeats, std::span<const std::uint64_t> ctx_seeds, double temperature_scale = 1.0) {
  if (repeats < 2) throw Error(ErrorCode::Parameter, "reliability needs repeats >= 2");
  if (challenges.empty()) throw Error(ErrorCode::Input, "empty challenge list");
  if (ctx_seeds.size() != repeats + 1)
    throw Error(ErrorCode::Parameter, "reliability needs repeats + 1 evaluation seeds");

  std::vector<Response> reference;
  reference.reserve(challenges.size());
  for (Challenge c : challenges) reference.push_back(instance.evaluate(c, {ctx_seeds[0], temperature_scale}));

  std::vector<std::vector<Response>> rows(repeats);
  for (std::size_t r = 0; r < repeats; ++r) {
    rows[r].reserve(challenges.size());
    for (Challenge c : challenges) rows[r].push_back(instance.evaluate(c, {ctx_seeds[r + 1], temperature_scale}));
  }
  return reliability_from_responses(reference, rows, Width);
}

}  // namespace easysec::metrics
