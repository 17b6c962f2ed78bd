#include <gtest/gtest.h>

#include <sstream>

#include "easysec/scenario.hpp"
#include "easysec/sim.hpp"

using namespace easysec;

namespace {

Scenario basic(std::size_t vehicles = 1) {
  Scenario s;
  s.vehicles = vehicles;
  return s;
}

std::string jsonl(const Transcript& t) {
  std::ostringstream os;
  t.write_jsonl(os);
  return os.str();
}

}  // namespace

TEST(Sim, OneRunCarriesThirtyTwoBytes) {
  const auto r = sim::run(basic(), 42);
  const auto ov = wire::overhead_report(r.transcript);
  EXPECT_EQ(ov.phase1, 10u);
  EXPECT_EQ(ov.phase2, 14u);
  EXPECT_EQ(ov.phase3, 8u);
  EXPECT_EQ(ov.total, 32u);
  ASSERT_EQ(r.outcomes.size(), 1u);
  EXPECT_TRUE(r.outcomes[0].outcome.authenticated());
}

TEST(Sim, RelayHopsAreByteIdentical) {
  const auto r = sim::run(basic(), 1);
  std::map<std::pair<FlowId, MsgKind>, wire::Bytes> first;
  for (const auto& rec : r.transcript.records()) {
    auto [it, fresh] = first.try_emplace({rec.flow, rec.kind}, rec.bytes);
    if (!fresh) { EXPECT_EQ(it->second, rec.bytes); }
  }
  // AV -> RSU -> RG -> CS and back: three hops per phase.
  EXPECT_EQ(r.transcript.records().size(), 9u);
}

TEST(Sim, RouteClimbsTheHierarchy) {
  auto topo = sim::Topology::build(basic(2));
  const NodeId av = topo.vehicles()[0];
  const auto path = topo.route(av, topo.server());
  ASSERT_EQ(path.size(), 4u);
  EXPECT_EQ(topo.kind(path[1]), sim::NodeKind::Rsu);
  EXPECT_EQ(topo.kind(path[2]), sim::NodeKind::Gateway);
  EXPECT_EQ(path[3], topo.server());
}

TEST(Sim, SameSeedSameTranscript) {
  Scenario s = basic(3);
  s.jitter_us = 500;
  const auto a = sim::run(s, 9);
  const auto b = sim::run(s, 9);
  const auto c = sim::run(s, 10);
  EXPECT_EQ(jsonl(a.transcript), jsonl(b.transcript));
  EXPECT_NE(jsonl(a.transcript), jsonl(c.transcript));
}

TEST(Sim, TranscriptTimesNeverDecrease) {
  Scenario s = basic(5);
  s.jitter_us = 2000;
  const auto r = sim::run(s, 3);
  SimTime last = 0;
  for (const auto& rec : r.transcript.records()) {
    EXPECT_GE(rec.t, last);
    last = rec.t;
  }
  for (const auto& o : r.outcomes) EXPECT_TRUE(o.outcome.authenticated());
}

TEST(Sim, ManyHonestRunsAgreeOnKeys) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = sim::run(basic(2), seed);
    ASSERT_EQ(r.outcomes.size(), 2u);
    for (const auto& o : r.outcomes) {
      ASSERT_TRUE(o.outcome.authenticated()) << seed << ": " << o.outcome.reason;
      ASSERT_EQ(o.outcome.sk, o.av_sk);
    }
  }
}

TEST(Sim, FixedLatencyGivesThreeHopsPerPhase) {
  const auto r = sim::run(basic(), 5);
  const auto t = sim::timing_report(r);
  ASSERT_EQ(t.flows, 1u);
  for (const auto& p : t.phases) EXPECT_DOUBLE_EQ(p.latency_us, 3000.0);
  EXPECT_DOUBLE_EQ(t.latency_us_total, 9000.0);
  EXPECT_GE(t.compute_us_total, 0.0);
}

TEST(Sim, EnrollmentsRunOutAfterRepeatedAuthentications) {
  Scenario s = basic();
  s.enrollments = 2;
  s.auths_per_vehicle = 3;
  const auto r = sim::run(s, 1);
  ASSERT_EQ(r.outcomes.size(), 3u);
  EXPECT_TRUE(r.outcomes[0].outcome.authenticated());
  EXPECT_TRUE(r.outcomes[1].outcome.authenticated());
  EXPECT_EQ(r.outcomes[2].outcome.status, protocol::AuthStatus::InvalidClient);
}

TEST(Sim, HandoverRotatesPidAndKey) {
  Scenario s = basic(2);
  s.boundary_at_us = {kSecond};
  const auto r = sim::run(s, 4);
  ASSERT_EQ(r.handovers.size(), 2u);
  for (const auto& h : r.handovers) {
    EXPECT_TRUE(h.completed) << h.refusal;
    EXPECT_TRUE(h.keys_match);
    ASSERT_TRUE(h.pid_new);
    EXPECT_NE(*h.pid_new, h.old_pid);
  }
  std::vector<MsgKind> kinds;
  for (const auto* rec : r.transcript.originals())
    if (!is_auth_phase(rec->kind)) kinds.push_back(rec->kind);
  EXPECT_NE(std::find(kinds.begin(), kinds.end(), MsgKind::KeyRequest), kinds.end());
  EXPECT_NE(std::find(kinds.begin(), kinds.end(), MsgKind::KeyDelivery), kinds.end());
}

TEST(Sim, LateKeyRequestIsRefused) {
  Scenario s = basic();
  s.boundary_at_us = {kSecond};
  s.key_request_delay_us = 61 * kSecond;
  const auto r = sim::run(s, 4);
  ASSERT_EQ(r.handovers.size(), 1u);
  EXPECT_FALSE(r.handovers[0].completed);
  EXPECT_NE(r.handovers[0].refusal.find("expired"), std::string::npos);
}

TEST(Sim, CrossingBeforeAuthenticationIsIgnored) {
  Scenario s = basic();
  s.auth_start_us = 5 * kSecond;
  s.boundary_at_us = {kSecond};
  const auto r = sim::run(s, 4);
  EXPECT_TRUE(r.handovers.empty());
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("not authenticated"), std::string::npos);
}

TEST(Sim, CrossingDuringAuthenticationIsDeferred) {
  Scenario s = basic();
  s.auth_start_us = kSecond;
  s.boundary_at_us = {kSecond + 2 * kMillisecond};
  const auto r = sim::run(s, 4);
  ASSERT_EQ(r.handovers.size(), 1u);
  EXPECT_TRUE(r.handovers[0].completed);
  EXPECT_GE(r.handovers[0].requested_at, r.outcomes[0].finished);
}

TEST(Sim, TwoCrossingsRotateTwice) {
  Scenario s = basic();
  s.rgs = 3;
  s.rsus = 3;
  s.boundary_at_us = {kSecond, 2 * kSecond};
  const auto r = sim::run(s, 4);
  ASSERT_EQ(r.handovers.size(), 2u);
  EXPECT_TRUE(r.handovers[0].completed && r.handovers[1].completed);
  EXPECT_EQ(*r.handovers[0].pid_new, r.handovers[1].old_pid);
}

TEST(Sim, TimeLimitStopsTheRun) {
  Scenario s = basic();
  s.auth_start_us = 10 * kSecond;
  s.time_limit_us = kSecond;
  const auto r = sim::run(s, 1);
  EXPECT_TRUE(r.outcomes.empty());
  ASSERT_FALSE(r.warnings.empty());
}

TEST(Sim, InsecureRegistrationIsRefused) {
  Scenario s = basic();
  s.registration_secure = false;
  EXPECT_THROW(sim::run(s, 1), Error);
}

TEST(Scenario, ParsesKeyValueFile) {
  std::istringstream in(
      "# demo\n"
      "seed = 9\n"
      "vehicles = 3   # trailing comment\n"
      "noise_sigma = 0.01\n"
      "boundary_at_us = 1000000, 2000000\n"
      "grey_cooldown_s = 10\n"
      "reuse_enrollments = true\n");
  const Scenario s = parse_scenario(in);
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(s.vehicles, 3u);
  EXPECT_DOUBLE_EQ(s.noise_sigma, 0.01);
  EXPECT_EQ(s.boundary_at_us, (std::vector<SimTime>{kSecond, 2 * kSecond}));
  EXPECT_EQ(s.protocol.grey_cooldown, 10 * kSecond);
  EXPECT_TRUE(s.protocol.reuse_enrollments);
}

TEST(Scenario, RejectsBadInput) {
  const auto code = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_scenario(in).validate();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Accounting;
  };
  EXPECT_EQ(code("colour = red\n"), ErrorCode::Configuration);
  EXPECT_EQ(code("vehicles = many\n"), ErrorCode::Configuration);
  EXPECT_EQ(code("vehicles\n"), ErrorCode::Configuration);
  EXPECT_EQ(code("vehicles = 0\n"), ErrorCode::Configuration);
  EXPECT_EQ(code("rgs = 3\nrsus = 2\n"), ErrorCode::Configuration);
  EXPECT_EQ(code("reuse_enrollments = maybe\n"), ErrorCode::Configuration);
}
