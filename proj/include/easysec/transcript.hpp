#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "easysec/wire.hpp"

namespace easysec {

using SimTime = std::int64_t;  // microseconds
inline constexpr SimTime kSecond = 1'000'000;
inline constexpr SimTime kMillisecond = 1'000;

enum class MsgKind : std::uint8_t {
  Phase1,
  Phase2,
  Phase3,
  PidForward,
  NewKeyGrant,
  KeyRequest,
  KeyDelivery,
};

constexpr std::string_view label(MsgKind kind) {
  switch (kind) {
    case MsgKind::Phase1: return "phase1";
    case MsgKind::Phase2: return "phase2";
    case MsgKind::Phase3: return "phase3";
    case MsgKind::PidForward: return "pid_forward";
    case MsgKind::NewKeyGrant: return "new_key_grant";
    case MsgKind::KeyRequest: return "key_request";
    case MsgKind::KeyDelivery: return "key_delivery";
  }
  return "unknown";
}

constexpr bool is_auth_phase(MsgKind kind) {
  return kind == MsgKind::Phase1 || kind == MsgKind::Phase2 || kind == MsgKind::Phase3;
}

struct TranscriptRecord {
  SimTime t = 0;
  std::string from;
  std::string to;
  MsgKind kind = MsgKind::Phase1;
  wire::Bytes bytes;
  std::uint64_t flow = 0;
  /// 0 for the hop leaving the originator, incremented by each relay.
  unsigned hop = 0;
};

/// Append-only message log.
class Transcript {
 public:
  void append(TranscriptRecord record) { records_.push_back(std::move(record)); }

  const std::vector<TranscriptRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  /// Originating sends only (relay hops excluded).
  std::vector<const TranscriptRecord*> originals() const {
    std::vector<const TranscriptRecord*> out;
    for (const auto& r : records_)
      if (r.hop == 0) out.push_back(&r);
    return out;
  }

  void write_jsonl(std::ostream& os) const {
    for (const auto& r : records_) {
      nlohmann::ordered_json line;
      line["t"] = r.t;
      line["from"] = r.from;
      line["to"] = r.to;
      line["phase"] = std::string(label(r.kind));
      line["bytes_hex"] = wire::hex(r.bytes);
      os << line.dump() << '\n';
    }
  }

 private:
  std::vector<TranscriptRecord> records_;
};

}  // namespace easysec

namespace easysec::wire {

struct OverheadReport {
  std::size_t phase1 = 0;
  std::size_t phase2 = 0;
  std::size_t phase3 = 0;
  std::size_t total = 0;
  std::size_t runs = 0;
};

/// Payload bytes per authentication phase, counting each message once at its
/// originator. Every run must contribute one message of each phase.
inline OverheadReport overhead_report(const Transcript& transcript) {
  OverheadReport report;
  std::size_t counts[3] = {0, 0, 0};
  for (const TranscriptRecord* r : transcript.originals()) {
    switch (r->kind) {
      case MsgKind::Phase1: report.phase1 += r->bytes.size(); ++counts[0]; break;
      case MsgKind::Phase2: report.phase2 += r->bytes.size(); ++counts[1]; break;
      case MsgKind::Phase3: report.phase3 += r->bytes.size(); ++counts[2]; break;
      default: break;
    }
  }
  if (counts[0] != counts[1] || counts[1] != counts[2])
    throw Error(ErrorCode::Accounting, "transcript holds an incomplete authentication (phase counts " +
                                           std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" +
                                           std::to_string(counts[2]) + ")");
  report.runs = counts[0];
  report.total = report.phase1 + report.phase2 + report.phase3;
  return report;
}

}  // namespace easysec::wire
