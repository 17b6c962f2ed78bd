#pragma once

// Scripted Dolev-Yao attackers. The adversary sits on the radio side of the
// RSUs and on every non-secure link: it reads, rewrites, drops and injects
// messages through the simulator hooks, but never touches a PUF or the
// CS-SDB link. Each scenario carries its own pass predicate.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "easysec/error.hpp"
#include "easysec/rng.hpp"
#include "easysec/scenario.hpp"
#include "easysec/sim.hpp"
#include "easysec/transcript.hpp"
#include "easysec/wire.hpp"

namespace easysec::adversary {

enum class AttackKind { ServerImpersonation, ClientImpersonation, ReplayPhase1, ReplayPhase3, DoSFlood, Eavesdrop, Mitm };

inline constexpr std::array<AttackKind, 7> kAllAttacks = {
    AttackKind::ServerImpersonation, AttackKind::ClientImpersonation, AttackKind::ReplayPhase1,
    AttackKind::ReplayPhase3,        AttackKind::DoSFlood,            AttackKind::Eavesdrop,
    AttackKind::Mitm};

constexpr std::string_view name(AttackKind k) {
  switch (k) {
    case AttackKind::ServerImpersonation: return "server-impersonation";
    case AttackKind::ClientImpersonation: return "client-impersonation";
    case AttackKind::ReplayPhase1: return "replay-phase1";
    case AttackKind::ReplayPhase3: return "replay-phase3";
    case AttackKind::DoSFlood: return "dos-flood";
    case AttackKind::Eavesdrop: return "eavesdrop";
    case AttackKind::Mitm: return "mitm";
  }
  return "unknown";
}

inline AttackKind parse_attack_kind(std::string_view text) {
  for (AttackKind k : kAllAttacks)
    if (name(k) == text) return k;
  throw Error(ErrorCode::Configuration, "unknown attack scenario '" + std::string(text) + "'");
}

constexpr std::size_t default_attempts(AttackKind k) {
  switch (k) {
    case AttackKind::ServerImpersonation: return 10'000;
    case AttackKind::ClientImpersonation: return 100'000;
    case AttackKind::ReplayPhase1:
    case AttackKind::ReplayPhase3:
    case AttackKind::Eavesdrop: return 100;
    case AttackKind::DoSFlood: return 10;
    case AttackKind::Mitm: return 200;
  }
  return 1;
}

struct AttackScenario {
  AttackKind kind = AttackKind::ClientImpersonation;
  std::size_t attempts = 0;  // 0 = default_attempts(kind)
  std::uint64_t seed = 1;
  Scenario base;             // topology, latencies and protocol parameters
};

struct AttackReport {
  std::string scenario;
  std::size_t attempts = 0;
  std::size_t successes = 0;
  std::size_t rejections = 0;
  std::string expectation;
  bool passed = false;
  std::vector<std::string> notes;
  Transcript transcript;  // last world's transcript (empty when recording is off)

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["scenario"] = scenario;
    j["attempts"] = attempts;
    j["successes"] = successes;
    j["rejections"] = rejections;
    j["expectation"] = expectation;
    j["passed"] = passed;
    j["notes"] = notes;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Leak scan

struct OracleSecret {
  Response response;
  unsigned key_bits = 64;  // length of the prefix to look for, 16..64
  std::string label;
};

struct LeakFinding {
  std::size_t record = 0;
  std::size_t secret = 0;
  unsigned bit_offset = 0;
  unsigned bits = 0;
};

/// Looks for each secret's leading `key_bits` bits at every bit offset of
/// every transmitted payload (MSB-first bit order). Identical payloads
/// (relay hops) are scanned once, reported at their first record.
inline std::vector<LeakFinding> eavesdrop_leak_scan(const Transcript& transcript, std::span<const OracleSecret> secrets) {
  for (const auto& s : secrets)
    if (s.key_bits < 16 || s.key_bits > 64) throw Error(ErrorCode::Parameter, "leak-scan prefix must be 16..64 bits");

  std::vector<LeakFinding> findings;
  std::set<wire::Bytes> seen;
  const auto& records = transcript.records();
  for (std::size_t r = 0; r < records.size(); ++r) {
    const wire::Bytes& bytes = records[r].bytes;
    if (!seen.insert(bytes).second) continue;
    const unsigned total = static_cast<unsigned>(bytes.size() * 8);

    // 64-bit window starting at bit `off`, zero padded past the end.
    const auto window = [&](unsigned off) {
      std::uint64_t w = 0;
      for (unsigned b = 0; b < 64; ++b) {
        const unsigned pos = off + b;
        const unsigned bit = pos < total ? (bytes[pos / 8] >> (7 - pos % 8)) & 1U : 0U;
        w = (w << 1) | bit;
      }
      return w;
    };

    for (unsigned off = 0; off + 16 <= total; ++off) {
      const std::uint64_t w = window(off);
      for (std::size_t s = 0; s < secrets.size(); ++s) {
        const unsigned kb = secrets[s].key_bits;
        if (off + kb > total) continue;
        const unsigned shift = 64 - kb;
        if ((w >> shift) == (secrets[s].response.bits >> shift)) findings.push_back({r, s, off, kb});
      }
    }
  }
  return findings;
}

/// Ground-truth secrets for `vehicle` as known to the CS: every enrolled
/// response at full width, plus the K+1-bit key prefix for each Phase-2
/// challenge seen in the transcript.
inline std::vector<OracleSecret> oracle_secrets(const sim::Simulator& world, std::size_t vehicle, const Transcript& t) {
  std::vector<OracleSecret> out;
  auto& sim = const_cast<sim::Simulator&>(world);
  const auto& av = sim.vehicle(vehicle);
  if (!av.v_pid()) return out;
  const auto* rec = sim.server().sdb().find(*av.v_pid());
  if (!rec) return out;
  for (const auto& e : rec->enrollments)
    for (std::size_t o = 0; o < e.responses.size(); ++o)
      out.push_back({e.responses[o], 64, "R(C+" + std::to_string(o) + ")"});
  for (const auto& r : t.records()) {
    if (r.kind != MsgKind::Phase2 || r.hop != 0) continue;
    const auto msg = wire::decode_phase2(r.bytes);
    for (const auto& e : rec->enrollments)
      if (e.base_c == msg.c) out.push_back({e.responses[0], msg.k + 1U, "R^{K+1}"});
  }
  return out;
}

/// Scans a JSON state dump for the hex form of any secret.
inline std::size_t state_leaks(const nlohmann::json& state, std::span<const OracleSecret> secrets) {
  const std::string dump = state.dump();
  std::size_t hits = 0;
  for (const auto& s : secrets)
    if (dump.find(to_hex(s.response.bits)) != std::string::npos) ++hits;
  return hits;
}

// ---------------------------------------------------------------------------

namespace detail {

inline Scenario world_scenario(const AttackScenario& a, std::uint64_t seed) {
  Scenario s = a.base;
  s.seed = seed;
  s.vehicles = 1;
  s.auths_per_vehicle = 0;
  s.boundary_at_us.clear();
  return s;
}

inline std::size_t count_verdicts(const sim::RunResult& r, MsgKind kind, bool accepted, NodeId min_source = 0) {
  std::size_t n = 0;
  for (const auto& v : r.verdicts)
    if (v.kind == kind && v.accepted == accepted && v.source >= min_source) ++n;
  return n;
}

inline constexpr NodeId kSpoofBase = 1'000'000;

inline AttackReport server_impersonation(const AttackScenario& a, std::size_t attempts) {
  AttackReport rep;
  Scenario s = detail::world_scenario(a, a.seed);
  s.record_transcript = attempts <= 1000;
  sim::Simulator world(sim::Topology::build(s), s, a.seed);
  const NodeId adv = world.add_adversary();
  const NodeId victim = world.vehicle_node(0);
  rng::Engine eng(rng::derive_seed({a.seed, 0x5E}));
  std::size_t forged = 0;

  // Every vehicle Phase-1 is swallowed and answered with a Phase-2 encrypted
  // under random key bits. Each forgery claims a fresh link identity so the
  // vehicle's server grey list never short-circuits the cryptographic check.
  world.set_interceptor([&](sim::Envelope& env, NodeId from, NodeId, sim::Simulator& sim) {
    if (env.kind == MsgKind::Phase3 && from == victim) return sim::HopVerdict::Drop;
    if (env.kind != MsgKind::Phase1 || from != victim) return sim::HopVerdict::Pass;
    wire::Phase2Msg fake;
    fake.c = Challenge{eng()};
    fake.k = static_cast<std::uint8_t>(rng::uniform_in(eng, wire::kMinK, wire::kMaxK));
    fake.ct = eng() & low_mask(wire::kPhase2PlainBits);
    sim.send(adv, victim, MsgKind::Phase2, wire::to_bytes(wire::encode(fake)), env.flow,
             kSpoofBase + static_cast<NodeId>(forged++));
    return sim::HopVerdict::Drop;
  });
  for (std::size_t i = 0; i < attempts; ++i) world.start_auth(0, static_cast<SimTime>(i) * 100 * kMillisecond);
  auto result = world.run();

  rep.attempts = count_verdicts(result, MsgKind::Phase2, true) + count_verdicts(result, MsgKind::Phase2, false);
  rep.successes = count_verdicts(result, MsgKind::Phase2, true);
  rep.rejections = count_verdicts(result, MsgKind::Phase2, false);
  const double bound = 2.0 / 65536.0;
  rep.expectation = "vehicle acceptance rate <= 2 * 2^-16";
  rep.passed = rep.attempts == attempts && static_cast<double>(rep.successes) <= bound * static_cast<double>(rep.attempts);
  rep.transcript = std::move(result.transcript);
  return rep;
}

inline AttackReport client_impersonation(const AttackScenario& a, std::size_t attempts) {
  AttackReport rep;
  Scenario s = detail::world_scenario(a, a.seed);
  s.protocol.reuse_enrollments = true;
  s.record_transcript = attempts <= 1000;
  s.time_limit_us = std::max<SimTime>(s.time_limit_us, kSecond + static_cast<SimTime>(attempts) * kMillisecond + 60 * kSecond);
  sim::Simulator world(sim::Topology::build(s), s, a.seed);
  const NodeId adv = world.add_adversary();
  const NodeId victim = world.vehicle_node(0);
  rng::Engine eng(rng::derive_seed({a.seed, 0xC1}));

  std::optional<PseudoId> victim_pid;
  world.set_interceptor([&](sim::Envelope& env, NodeId from, NodeId, sim::Simulator&) {
    if (env.kind == MsgKind::Phase1 && from == victim && !victim_pid) victim_pid = wire::decode_phase1(env.bytes).v_pid;
    return sim::HopVerdict::Pass;
  });
  std::unordered_map<FlowId, NodeId> spoofed;
  world.set_adversary_handler([&](const sim::Envelope& env, sim::Simulator& sim) {
    if (env.kind != MsgKind::Phase2) return;
    auto it = spoofed.find(env.flow);
    if (it == spoofed.end()) return;
    const wire::Phase3Msg guess{eng()};
    sim.send(adv, sim.topology().server(), MsgKind::Phase3, wire::to_bytes(wire::encode(guess)), env.flow, it->second);
  });

  world.start_auth(0, 0);
  for (std::size_t i = 0; i < attempts; ++i) {
    world.schedule(kSecond + static_cast<SimTime>(i) * kMillisecond, sim::EventKind::Inject, [&, i] {
      if (!victim_pid) return;
      const FlowId flow = world.new_flow();
      const NodeId source = kSpoofBase + static_cast<NodeId>(i);
      spoofed[flow] = source;
      const wire::Phase1Msg m{*victim_pid, Nonce16{static_cast<std::uint16_t>(i)}};
      world.send(adv, world.topology().server(), MsgKind::Phase1, wire::to_bytes(wire::encode(m)), flow, source);
    });
  }
  auto result = world.run();

  rep.successes = count_verdicts(result, MsgKind::Phase3, true, kSpoofBase);
  rep.rejections = count_verdicts(result, MsgKind::Phase3, false, kSpoofBase);
  rep.attempts = rep.successes + rep.rejections;
  rep.expectation = "zero server acceptances of guessed Phase-3 tags";
  rep.passed = rep.successes == 0 && rep.attempts == attempts;
  if (rep.attempts != attempts)
    rep.notes.push_back(std::to_string(attempts - rep.attempts) + " guesses never reached Phase-3 verification");
  rep.transcript = std::move(result.transcript);
  return rep;
}

inline AttackReport replay(const AttackScenario& a, std::size_t trials, MsgKind phase) {
  AttackReport rep;
  rng::Engine seeds(rng::derive_seed({a.seed, phase == MsgKind::Phase1 ? 0x1Fu : 0x3Fu}));
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t seed = seeds();
    Scenario s = detail::world_scenario(a, seed);
    sim::Simulator world(sim::Topology::build(s), s, seed);
    const NodeId adv = world.add_adversary();
    const NodeId victim = world.vehicle_node(0);

    std::optional<sim::Envelope> captured;
    world.set_interceptor([&](sim::Envelope& env, NodeId from, NodeId, sim::Simulator&) {
      if (env.kind == phase && from == victim && !captured) captured = env;
      return sim::HopVerdict::Pass;
    });
    world.start_auth(0, 0);

    std::vector<FlowId> replay_flows;
    world.schedule(kSecond, sim::EventKind::Inject, [&] {
      if (!captured) return;
      const NodeId cs = world.topology().server();
      if (phase == MsgKind::Phase3) {
        // Same flow and claimed identity as the original session...
        replay_flows.push_back(captured->flow);
        world.send(adv, cs, phase, captured->bytes, captured->flow, victim);
      }
      // ...and as a new flow from the adversary.
      const FlowId flow = world.new_flow();
      replay_flows.push_back(flow);
      world.send(adv, cs, phase, captured->bytes, flow);
    });
    auto result = world.run();

    bool accepted = false;
    bool rejected_all = !replay_flows.empty();
    for (FlowId f : replay_flows) {
      bool seen = false;
      for (const auto& v : result.verdicts) {
        if (v.flow != f || v.kind != phase || v.t < kSecond) continue;
        seen = true;
        accepted = accepted || v.accepted;
        rejected_all = rejected_all && !v.accepted;
      }
      rejected_all = rejected_all && seen;
    }
    ++rep.attempts;
    if (accepted) ++rep.successes;
    if (rejected_all) ++rep.rejections;
    if (t + 1 == trials) rep.transcript = std::move(result.transcript);
  }
  rep.expectation = "every byte-identical replay rejected";
  rep.passed = rep.successes == 0 && rep.rejections == rep.attempts && rep.attempts == trials;
  return rep;
}

inline AttackReport dos_flood(const AttackScenario& a, std::size_t requests) {
  AttackReport rep;
  Scenario s = detail::world_scenario(a, a.seed);
  sim::Simulator world(sim::Topology::build(s), s, a.seed);
  const NodeId adv = world.add_adversary();
  rng::Engine eng(rng::derive_seed({a.seed, 0xD0}));
  for (std::size_t i = 0; i < requests; ++i) {
    world.schedule(static_cast<SimTime>(i) * 10 * kMillisecond, sim::EventKind::Inject, [&] {
      PseudoId bogus{eng()};
      while (world.server().sdb().find(bogus)) bogus = PseudoId{eng()};
      const wire::Phase1Msg m{bogus, crypto::gen_nonce(eng)};
      world.send(adv, world.topology().server(), MsgKind::Phase1, wire::to_bytes(wire::encode(m)), world.new_flow());
    });
  }
  auto result = world.run();

  const unsigned threshold = s.protocol.grey_threshold;
  std::size_t counted = 0, listed = 0;
  bool ordered = true;
  std::size_t index = 0;
  for (const auto& o : result.outcomes) {
    if (o.vehicle) continue;
    const bool expect_listed = index >= threshold;
    if (o.outcome.status == protocol::AuthStatus::InvalidClient) ++counted;
    if (o.outcome.status == protocol::AuthStatus::GreyListed) ++listed;
    if ((o.outcome.status == protocol::AuthStatus::GreyListed) != expect_listed) ordered = false;
    if (o.outcome.authenticated()) ++rep.successes;
    ++index;
  }
  rep.attempts = index;
  rep.rejections = counted + listed;
  rep.notes.push_back("counted as invalid: " + std::to_string(counted));
  rep.notes.push_back("refused as grey-listed: " + std::to_string(listed));
  rep.expectation = "requests 1.." + std::to_string(threshold) + " counted, later requests grey-listed";
  rep.passed = ordered && rep.successes == 0 && rep.attempts == requests &&
               counted == std::min<std::size_t>(requests, threshold);
  rep.transcript = std::move(result.transcript);
  return rep;
}

inline AttackReport eavesdrop(const AttackScenario& a, std::size_t runs) {
  AttackReport rep;
  rng::Engine seeds(rng::derive_seed({a.seed, 0xEA}));
  std::size_t state_hits = 0;
  for (std::size_t t = 0; t < runs; ++t) {
    const std::uint64_t seed = seeds();
    Scenario s = detail::world_scenario(a, seed);
    sim::Simulator world(sim::Topology::build(s), s, seed);
    world.start_auth(0, 0);
    auto result = world.run();
    const auto secrets = oracle_secrets(world, 0, result.transcript);
    const auto findings = eavesdrop_leak_scan(result.transcript, secrets);
    const std::size_t at_rest = state_leaks(world.vehicle(0).state_json(), secrets);
    state_hits += at_rest;
    ++rep.attempts;
    rep.successes += findings.size() + at_rest;
    if (findings.empty() && at_rest == 0) ++rep.rejections;
    if (t + 1 == runs) rep.transcript = std::move(result.transcript);
  }
  rep.notes.push_back("response values found in vehicle state: " + std::to_string(state_hits));
  rep.expectation = "no response bits in any transmitted message or in vehicle state";
  rep.passed = rep.successes == 0;
  return rep;
}

inline AttackReport mitm(const AttackScenario& a, std::size_t trials) {
  AttackReport rep;
  rng::Engine seeds(rng::derive_seed({a.seed, 0x33}));
  std::size_t neutral = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t seed = seeds();
    rng::Engine eng(rng::derive_seed({seed, 0x44}));
    Scenario s = detail::world_scenario(a, seed);
    sim::Simulator world(sim::Topology::build(s), s, seed);
    const NodeId victim = world.vehicle_node(0);
    const MsgKind target = t % 2 == 0 ? MsgKind::Phase2 : MsgKind::Phase3;
    bool tampered = false;
    bool k_flip_neutral = false;
    world.set_interceptor([&](sim::Envelope& env, NodeId from, NodeId to, sim::Simulator&) {
      if (tampered || env.kind != target) return sim::HopVerdict::Pass;
      if ((target == MsgKind::Phase2 && to != victim) || (target == MsgKind::Phase3 && from != victim))
        return sim::HopVerdict::Pass;
      const auto bit = rng::uniform_below(eng, env.bytes.size() * 8);
      if (target == MsgKind::Phase2 && bit / 8 == 8) {
        // K is not covered by any check: once K+1 and K'+1 both reach the
        // plaintext length, the keystream over the plaintext is unchanged.
        const unsigned k = env.bytes[8];
        const unsigned k2 = k ^ (0x80u >> (bit % 8));
        k_flip_neutral = k + 1 >= wire::kPhase2PlainBits && k2 + 1 >= wire::kPhase2PlainBits && k2 <= wire::kMaxK;
      }
      env.bytes[bit / 8] ^= static_cast<std::uint8_t>(0x80u >> (bit % 8));
      tampered = true;
      return sim::HopVerdict::Pass;
    });
    world.start_auth(0, 0);
    auto result = world.run();
    ++rep.attempts;
    bool success = false;
    for (const auto& o : result.outcomes) success = success || o.outcome.authenticated();
    if (success) ++rep.successes;
    else ++rep.rejections;
    if (success && k_flip_neutral) ++neutral;
    if (t + 1 == trials) rep.transcript = std::move(result.transcript);
  }
  rep.notes.push_back("accepted after a K-field flip that leaves the decryption unchanged: " + std::to_string(neutral));
  rep.expectation = "every tampered flow ends InvalidServer or AuthFailed";
  rep.passed = rep.successes == 0 && rep.attempts == trials;
  return rep;
}

}  // namespace detail

inline AttackReport run_attack(const AttackScenario& scenario) {
  scenario.base.validate();
  const std::size_t n = scenario.attempts ? scenario.attempts : default_attempts(scenario.kind);
  AttackReport rep;
  switch (scenario.kind) {
    case AttackKind::ServerImpersonation: rep = detail::server_impersonation(scenario, n); break;
    case AttackKind::ClientImpersonation: rep = detail::client_impersonation(scenario, n); break;
    case AttackKind::ReplayPhase1: rep = detail::replay(scenario, n, MsgKind::Phase1); break;
    case AttackKind::ReplayPhase3: rep = detail::replay(scenario, n, MsgKind::Phase3); break;
    case AttackKind::DoSFlood: rep = detail::dos_flood(scenario, n); break;
    case AttackKind::Eavesdrop: rep = detail::eavesdrop(scenario, n); break;
    case AttackKind::Mitm: rep = detail::mitm(scenario, n); break;
  }
  rep.scenario = std::string(name(scenario.kind));
  return rep;
}

}  // namespace easysec::adversary
