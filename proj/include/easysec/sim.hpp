#pragma once

// Deterministic discrete-event simulator for the AV - RSU - RG - CS - SDB
// topology.
//
// Time is integer microseconds. Events run in (time, insertion order). Every
// hop takes the link's base latency plus jitter drawn uniformly from
// [0, jitter] out of a stream seeded from the master seed. Host compute time
// is measured around each entity handler and reported next to the simulated
// latency, but it never moves simulated time, so transcripts depend only on
// (topology, scenario, master seed).

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "easysec/crypto.hpp"
#include "easysec/error.hpp"
#include "easysec/protocol.hpp"
#include "easysec/puf.hpp"
#include "easysec/rng.hpp"
#include "easysec/scenario.hpp"
#include "easysec/transcript.hpp"
#include "easysec/wire.hpp"

namespace easysec::sim {

enum class NodeKind { Vehicle, Rsu, Gateway, Server, Database, Adversary };

struct Node {
  NodeKind kind;
  std::string name;
};

struct Link {
  SimTime base_latency = 0;
  SimTime jitter = 0;
  bool secure = false;
};

class Topology {
 public:
  /// Standard layout: one CS and SDB, `rgs` gateways meshed with each other
  /// and linked to the CS, RSU i covered by RG (i mod rgs), vehicles attached
  /// round-robin to RSUs and able to reach every RSU by radio.
  static Topology build(const Scenario& s) {
    Topology t;
    const Link pub{s.latency_us, s.jitter_us, false};
    t.server_ = t.add_node(NodeKind::Server, "CS");
    t.database_ = t.add_node(NodeKind::Database, "SDB");
    t.add_link(t.server_, t.database_, {s.latency_us, s.jitter_us, true});
    for (std::size_t g = 0; g < s.rgs; ++g) {
      const NodeId rg = t.add_node(NodeKind::Gateway, "RG" + std::to_string(g));
      t.add_link(rg, t.server_, pub);
      for (NodeId other : t.gateways_)
        if (other != rg) t.add_link(rg, other, pub);
    }
    for (std::size_t r = 0; r < s.rsus; ++r) {
      const NodeId rsu = t.add_node(NodeKind::Rsu, "RSU" + std::to_string(r));
      const NodeId rg = t.gateways_[r % s.rgs];
      t.add_link(rsu, rg, pub);
      t.set_coverage(rsu, rg);
    }
    for (std::size_t v = 0; v < s.vehicles; ++v) {
      const NodeId av = t.add_node(NodeKind::Vehicle, "AV" + std::to_string(v));
      for (NodeId rsu : t.rsus_) t.add_link(av, rsu, pub);
      t.attach(av, t.rsus_[v % t.rsus_.size()]);
    }
    t.registration_secure = s.registration_secure;
    return t;
  }

  NodeId add_node(NodeKind kind, std::string name) {
    const auto id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back({kind, std::move(name)});
    switch (kind) {
      case NodeKind::Vehicle: vehicles_.push_back(id); break;
      case NodeKind::Rsu: rsus_.push_back(id); break;
      case NodeKind::Gateway: gateways_.push_back(id); break;
      case NodeKind::Server: server_ = id; break;
      case NodeKind::Database: database_ = id; break;
      case NodeKind::Adversary: break;
    }
    return id;
  }

  void add_link(NodeId a, NodeId b, Link link) { links_[key(a, b)] = link; }
  void set_coverage(NodeId rsu, NodeId rg) { coverage_[rsu] = rg; }
  void attach(NodeId node, NodeId rsu) { attachment_[node] = rsu; }

  const Link* link(NodeId a, NodeId b) const {
    auto it = links_.find(key(a, b));
    return it == links_.end() ? nullptr : &it->second;
  }

  void validate() const {
    const auto count = [&](NodeKind k) {
      return std::count_if(nodes_.begin(), nodes_.end(), [k](const Node& n) { return n.kind == k; });
    };
    if (count(NodeKind::Server) != 1) throw Error(ErrorCode::Configuration, "topology needs exactly one CS");
    if (count(NodeKind::Database) != 1) throw Error(ErrorCode::Configuration, "topology needs exactly one SDB");
    const Link* db = link(server_, database_);
    if (!db || !db->secure) throw Error(ErrorCode::Configuration, "CS-SDB link must exist and be secure");
    if (gateways_.empty() || rsus_.empty()) throw Error(ErrorCode::Configuration, "topology needs RSUs and RGs");
    for (NodeId rg : gateways_)
      if (!link(rg, server_)) throw Error(ErrorCode::Configuration, name(rg) + " has no link to the CS");
    for (NodeId rsu : rsus_) {
      auto it = coverage_.find(rsu);
      if (it == coverage_.end() || nodes_.at(it->second).kind != NodeKind::Gateway)
        throw Error(ErrorCode::Configuration, name(rsu) + " is not covered by an RG");
      if (!link(rsu, it->second)) throw Error(ErrorCode::Configuration, name(rsu) + " has no link to its RG");
    }
    for (NodeId av : vehicles_) {
      auto it = attachment_.find(av);
      if (it == attachment_.end() || nodes_.at(it->second).kind != NodeKind::Rsu)
        throw Error(ErrorCode::Configuration, name(av) + " is not attached to an RSU");
      if (!link(av, it->second)) throw Error(ErrorCode::Configuration, name(av) + " has no link to its RSU");
    }
  }

  const std::string& name(NodeId id) const { return nodes_.at(id).name; }
  NodeKind kind(NodeId id) const { return nodes_.at(id).kind; }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  const std::vector<NodeId>& vehicles() const noexcept { return vehicles_; }
  const std::vector<NodeId>& rsus() const noexcept { return rsus_; }
  const std::vector<NodeId>& gateways() const noexcept { return gateways_; }
  NodeId server() const noexcept { return server_; }
  NodeId database() const noexcept { return database_; }
  NodeId rsu_of(NodeId node) const { return attachment_.at(node); }
  NodeId rg_of_rsu(NodeId rsu) const { return coverage_.at(rsu); }

  /// First RSU covered by `rg`.
  NodeId rsu_under(NodeId rg) const {
    for (NodeId rsu : rsus_)
      if (coverage_.at(rsu) == rg) return rsu;
    throw Error(ErrorCode::Configuration, name(rg) + " covers no RSU");
  }

  /// Hop sequence from `from` to `to`: a direct link if one exists, else up
  /// the attachment tree (node -> RSU -> RG -> CS) to the first common node.
  std::vector<NodeId> route(NodeId from, NodeId to) const {
    if (from == to) return {from};
    if (link(from, to)) return {from, to};
    const auto up = climb(from);
    const auto down = climb(to);
    for (std::size_t i = 0; i < up.size(); ++i) {
      auto it = std::find(down.begin(), down.end(), up[i]);
      if (it == down.end()) continue;
      std::vector<NodeId> path(up.begin(), up.begin() + static_cast<std::ptrdiff_t>(i) + 1);
      for (auto r = std::make_reverse_iterator(it); r != down.rend(); ++r) path.push_back(*r);
      return path;
    }
    throw Error(ErrorCode::Configuration, "no route from " + name(from) + " to " + name(to));
  }

  bool registration_secure = true;

 private:
  static std::uint64_t key(NodeId a, NodeId b) {
    if (a > b) std::swap(a, b);
    return (std::uint64_t{a} << 32) | b;
  }

  std::vector<NodeId> climb(NodeId n) const {
    std::vector<NodeId> chain{n};
    for (int guard = 0; guard < 8; ++guard) {
      const NodeKind k = kind(n);
      if (k == NodeKind::Server) return chain;
      if (k == NodeKind::Database) n = server_;
      else if (k == NodeKind::Gateway) n = server_;
      else if (k == NodeKind::Rsu) n = coverage_.at(n);
      else n = attachment_.at(n);
      chain.push_back(n);
    }
    return chain;
  }

  std::vector<Node> nodes_;
  std::vector<NodeId> vehicles_, rsus_, gateways_;
  NodeId server_ = 0, database_ = 0;
  std::map<std::uint64_t, Link> links_;
  std::unordered_map<NodeId, NodeId> coverage_;
  std::unordered_map<NodeId, NodeId> attachment_;
};

// ---------------------------------------------------------------------------

struct Envelope {
  FlowId flow = 0;
  MsgKind kind = MsgKind::Phase1;
  wire::Bytes bytes;
  NodeId source = 0;          // link-layer identity claimed by the originator
  std::vector<NodeId> path;   // path.front() originator, path.back() destination
  std::size_t hop = 0;        // index into path of the current holder
  SimTime sent_at = 0;
};

enum class EventKind { Deliver, TimerFire, BoundaryCross, Inject };
enum class HopVerdict { Pass, Drop };

class Simulator;

/// Sees every hop on a non-secure link before it is scheduled; may rewrite
/// env.bytes or drop the message.
using Interceptor = std::function<HopVerdict(Envelope& env, NodeId from, NodeId to, Simulator& sim)>;
/// Receives messages whose destination is an adversary node.
using AdversaryHandler = std::function<void(const Envelope& env, Simulator& sim)>;

struct FlowOutcome {
  FlowId flow = 0;
  std::optional<std::size_t> vehicle;  // empty for adversary flows
  std::string initiator;
  protocol::AuthOutcome outcome;
  std::optional<SessionKey> av_sk;
  SimTime started = 0;
  SimTime finished = 0;
};

struct HandoverOutcome {
  std::size_t vehicle = 0;
  bool completed = false;
  PseudoId old_pid;
  std::optional<PseudoId> pid_new;
  bool keys_match = false;
  std::string refusal;
  SimTime requested_at = 0;
  SimTime finished_at = 0;
};

struct PhaseTiming {
  double av_compute_us = 0.0;  // measured host time
  double cs_compute_us = 0.0;  // measured host time
  double latency_us = 0.0;     // simulated network time
};

struct TimingReport {
  std::array<PhaseTiming, 3> phases{};  // mean per completed authentication
  std::size_t flows = 0;
  double end_to_end_us = 0.0;           // latency + compute, mean per flow
  double compute_us_total = 0.0;
  double latency_us_total = 0.0;
};

struct DeliveryStats {
  std::size_t hops_sent = 0;
  std::size_t hops_delivered = 0;
  std::size_t hops_dropped = 0;
  std::size_t injected = 0;
};

struct FlowTiming {
  std::array<double, 3> av_ns{};
  std::array<double, 3> cs_ns{};
  std::array<SimTime, 3> latency{};
  std::size_t vehicle = 0;
  bool has_vehicle = false;
  bool complete = false;
};

/// One accept/reject decision taken by an endpoint.
struct Verdict {
  SimTime t = 0;
  FlowId flow = 0;
  std::string node;
  MsgKind kind = MsgKind::Phase1;  // message the decision was about
  NodeId source = 0;               // claimed sender of that message
  bool accepted = false;
  std::string detail;
};

struct RunResult {
  Transcript transcript;
  std::vector<Verdict> verdicts;
  std::vector<FlowOutcome> outcomes;
  std::vector<HandoverOutcome> handovers;
  std::vector<std::string> warnings;
  std::vector<std::string> rejections;
  std::map<FlowId, FlowTiming> flow_timing;
  DeliveryStats stats;
  SimTime end_time = 0;
};

/// Per-phase means over flows that completed all three phases. Compute time
/// is charged to the phase whose message the handler emits (CS Phase-1
/// handling builds the Phase-2 message), except CS Phase-3 verification.
inline TimingReport timing_report(const RunResult& run) {
  TimingReport report;
  for (const auto& [flow, ft] : run.flow_timing) {
    if (!ft.complete) continue;
    ++report.flows;
    for (std::size_t p = 0; p < 3; ++p) {
      report.phases[p].av_compute_us += ft.av_ns[p] / 1000.0;
      report.phases[p].cs_compute_us += ft.cs_ns[p] / 1000.0;
      report.phases[p].latency_us += static_cast<double>(ft.latency[p]);
    }
  }
  if (report.flows == 0) return report;
  const double n = static_cast<double>(report.flows);
  for (auto& p : report.phases) {
    p.av_compute_us /= n;
    p.cs_compute_us /= n;
    p.latency_us /= n;
    report.compute_us_total += p.av_compute_us + p.cs_compute_us;
    report.latency_us_total += p.latency_us;
  }
  report.end_to_end_us = report.compute_us_total + report.latency_us_total;
  return report;
}

/// Mean measured compute (AV + CS, all phases) per vehicle.
inline double per_vehicle_compute_us(const RunResult& run, std::size_t vehicles) {
  double total_ns = 0.0;
  for (const auto& [flow, ft] : run.flow_timing) {
    if (!ft.has_vehicle) continue;
    for (std::size_t p = 0; p < 3; ++p) total_ns += ft.av_ns[p] + ft.cs_ns[p];
  }
  return vehicles == 0 ? 0.0 : total_ns / 1000.0 / static_cast<double>(vehicles);
}

class Simulator {
 public:
  Simulator(Topology topology, Scenario scenario, std::uint64_t master_seed)
      : topo_(std::move(topology)), scenario_(std::move(scenario)), seed_(master_seed),
        latency_rng_(rng::derive_seed({master_seed, 0x1A7})),
        cs_(puf::ArbiterPuf::create(rng::derive_seed({master_seed, 0xC5}), scenario_.noise_sigma), scenario_.protocol,
            rng::derive_seed({master_seed, 0xC5, 1})),
        av_rng_(rng::derive_seed({master_seed, 0xA7})) {
    scenario_.validate();
    topo_.validate();
    for (std::size_t i = 0; i < topo_.vehicles().size(); ++i) {
      vehicles_.emplace_back(puf::ArbiterPuf::create(rng::derive_seed({master_seed, 0xAB, i}), scenario_.noise_sigma),
                             rng::derive_seed({master_seed, 0xAE, i}), scenario_.protocol);
    }
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      protocol::register_av(vehicles_[i], cs_,
                            {rng::derive_seed({master_seed, 0x1D, i}), scenario_.enrollments, topo_.registration_secure});
      vehicle_index_[topo_.vehicles()[i]] = i;
    }
  }

  const Topology& topology() const noexcept { return topo_; }
  const Scenario& scenario() const noexcept { return scenario_; }
  protocol::CloudServer& server() noexcept { return cs_; }
  protocol::AvDevice& vehicle(std::size_t i) { return vehicles_.at(i); }
  std::size_t vehicle_count() const noexcept { return vehicles_.size(); }
  NodeId vehicle_node(std::size_t i) const { return topo_.vehicles().at(i); }
  SimTime now() const noexcept { return now_; }
  const RunResult& result() const noexcept { return result_; }

  void set_interceptor(Interceptor f) { interceptor_ = std::move(f); }
  void set_adversary_handler(AdversaryHandler f) { adversary_handler_ = std::move(f); }

  /// Adds an adversary node on the radio side of every RSU, attached to RSU 0.
  NodeId add_adversary(const std::string& name = "ADV") {
    const NodeId id = topo_.add_node(NodeKind::Adversary, name);
    for (NodeId rsu : topo_.rsus()) topo_.add_link(id, rsu, {scenario_.latency_us, scenario_.jitter_us, false});
    topo_.attach(id, topo_.rsus().front());
    return id;
  }

  FlowId new_flow() { return next_flow_++; }

  void schedule(SimTime at, EventKind kind, std::function<void()> action) {
    queue_.push(Event{std::max(at, now_), seq_++, kind, std::move(action)});
  }

  /// Vehicle `i` starts an authentication at `at`.
  FlowId start_auth(std::size_t i, SimTime at) {
    const FlowId flow = new_flow();
    schedule(at, EventKind::TimerFire, [this, i, flow] {
      auto& av = vehicles_.at(i);
      const auto t0 = Clock::now();
      const wire::Phase1Msg msg = av.initiate(av_rng_);
      const double ns = elapsed_ns(t0);
      flows_[flow] = FlowState{i, true, vehicle_node(i), now_, false, std::nullopt};
      auto& ft = result_.flow_timing[flow];
      ft.vehicle = i;
      ft.has_vehicle = true;
      ft.av_ns[0] += ns;
      in_flight_[i] = flow;
      send(vehicle_node(i), topo_.server(), MsgKind::Phase1, wire::to_bytes(wire::encode(msg)), flow);
    });
    return flow;
  }

  /// Vehicle `i` leaves its RG for `to_rg` (default: the next RG) at `at`.
  void cross_boundary(std::size_t i, SimTime at, std::optional<NodeId> to_rg = std::nullopt) {
    schedule(at, EventKind::BoundaryCross, [this, i, to_rg] { begin_handover(i, to_rg); });
  }

  /// Sends a message from `origin` to `dest` along the routed path. The
  /// adversary uses this with a spoofed `source` to inject traffic.
  void send(NodeId origin, NodeId dest, MsgKind kind, wire::Bytes bytes, FlowId flow,
            std::optional<NodeId> source = std::nullopt) {
    Envelope env;
    env.flow = flow;
    env.kind = kind;
    env.bytes = std::move(bytes);
    env.source = source.value_or(origin);
    env.path = topo_.route(origin, dest);
    env.sent_at = now_;
    if (topo_.kind(origin) == NodeKind::Adversary) ++result_.stats.injected;
    transmit(std::move(env));
  }

  RunResult run() {
    while (!queue_.empty()) {
      Event ev = queue_.top();
      if (ev.at > scenario_.time_limit_us) {
        result_.warnings.push_back("time limit reached at " + std::to_string(ev.at) + " us");
        break;
      }
      queue_.pop();
      now_ = ev.at;
      ev.action();
    }
    result_.end_time = now_;
    return result_;
  }

 private:
  using Clock = std::chrono::steady_clock;

  struct Event {
    SimTime at;
    std::uint64_t seq;
    EventKind kind;
    std::function<void()> action;
    bool operator>(const Event& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  struct FlowState {
    std::size_t vehicle = 0;
    bool has_vehicle = false;
    NodeId initiator = 0;
    SimTime started = 0;
    bool finished = false;
    std::optional<SessionKey> av_sk;
  };

  struct HandoverCtx {
    std::size_t vehicle = 0;
    NodeId from_rg = 0;
    NodeId to_rg = 0;
    NodeId old_rsu = 0;
    NodeId new_rsu = 0;
    PseudoId old_pid;
    std::size_t outcome_index = 0;
  };

  static double elapsed_ns(Clock::time_point t0) {
    return static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
  }

  static std::size_t phase_index(MsgKind k) {
    return k == MsgKind::Phase1 ? 0 : k == MsgKind::Phase2 ? 1 : 2;
  }

  SimTime hop_latency(const Link& l) {
    return l.base_latency + static_cast<SimTime>(rng::uniform_in(latency_rng_, 0, static_cast<std::uint64_t>(l.jitter)));
  }

  void transmit(Envelope env) {
    const NodeId from = env.path[env.hop];
    const NodeId to = env.path[env.hop + 1];
    const Link* l = topo_.link(from, to);
    if (!l) throw Error(ErrorCode::Configuration, "no link " + topo_.name(from) + " - " + topo_.name(to));

    if (scenario_.record_transcript)
      result_.transcript.append({now_, topo_.name(from), topo_.name(to), env.kind, env.bytes, env.flow,
                                 static_cast<unsigned>(env.hop)});
    ++result_.stats.hops_sent;

    if (!l->secure && interceptor_ && interceptor_(env, from, to, *this) == HopVerdict::Drop) {
      ++result_.stats.hops_dropped;
      return;
    }
    const SimTime at = now_ + hop_latency(*l);
    schedule(at, EventKind::Deliver, [this, env = std::move(env)]() mutable { deliver(std::move(env)); });
  }

  void deliver(Envelope env) {
    ++result_.stats.hops_delivered;
    ++env.hop;
    if (env.hop + 1 < env.path.size()) {
      transmit(std::move(env));  // RSU / RG relay: byte-identical forward
      return;
    }
    if (is_auth_phase(env.kind)) {
      auto it = result_.flow_timing.find(env.flow);
      if (it != result_.flow_timing.end()) it->second.latency[phase_index(env.kind)] += now_ - env.sent_at;
    }
    const NodeId at = env.path.back();
    try {
      switch (topo_.kind(at)) {
        case NodeKind::Server: on_server(env); break;
        case NodeKind::Vehicle: on_vehicle(vehicle_index_.at(at), env); break;
        case NodeKind::Gateway: on_gateway(at, env); break;
        case NodeKind::Rsu: on_rsu(at, env); break;
        case NodeKind::Adversary:
          if (adversary_handler_) adversary_handler_(env, *this);
          break;
        case NodeKind::Database: break;
      }
    } catch (const Error& e) {
      verdict(env, false, e.what());
      result_.rejections.push_back(topo_.name(at) + " rejected " + std::string(label(env.kind)) + " (flow " +
                                   std::to_string(env.flow) + "): " + e.what());
      if (is_auth_phase(env.kind))
        finish_flow(env.flow, protocol::AuthOutcome::reject(
                                  env.kind == MsgKind::Phase2 ? protocol::AuthStatus::InvalidServer
                                                              : protocol::AuthStatus::AuthFailed,
                                  e.what()));
      handover_failed(env.flow, e.what());
    }
  }

  void finish_flow(FlowId flow, protocol::AuthOutcome outcome) {
    auto it = flows_.find(flow);
    if (it == flows_.end()) {
      // Flow opened by an adversary injection; track it from here.
      it = flows_.emplace(flow, FlowState{}).first;
      it->second.started = now_;
    }
    FlowState& fs = it->second;
    if (fs.finished) return;
    fs.finished = true;
    FlowOutcome out;
    out.flow = flow;
    if (fs.has_vehicle) out.vehicle = fs.vehicle;
    out.initiator = fs.has_vehicle ? topo_.name(vehicle_node(fs.vehicle)) : "adversary";
    out.outcome = std::move(outcome);
    out.av_sk = fs.av_sk;
    out.started = fs.started;
    out.finished = now_;
    if (auto ft = result_.flow_timing.find(flow); ft != result_.flow_timing.end())
      ft->second.complete = out.outcome.authenticated();
    result_.outcomes.push_back(std::move(out));

    if (fs.has_vehicle) {
      if (auto inf = in_flight_.find(fs.vehicle); inf != in_flight_.end() && inf->second == flow) {
        in_flight_.erase(inf);
        if (auto d = deferred_crossings_.find(fs.vehicle); d != deferred_crossings_.end()) {
          const auto targets = std::move(d->second);
          deferred_crossings_.erase(d);
          for (auto target : targets) begin_handover(fs.vehicle, target);
        }
      }
    }
  }

  void verdict(const Envelope& env, bool accepted, std::string detail) {
    result_.verdicts.push_back({now_, env.flow, topo_.name(env.path.back()), env.kind, env.source, accepted, std::move(detail)});
  }

  void reply_to_origin(const Envelope& env, MsgKind kind, wire::Bytes bytes) {
    send(env.path.back(), env.path.front(), kind, std::move(bytes), env.flow);
  }

  // --- CS -----------------------------------------------------------------

  void on_server(const Envelope& env) {
    switch (env.kind) {
      case MsgKind::Phase1: {
        const auto msg = wire::decode_phase1(env.bytes);
        const auto t0 = Clock::now();
        auto result = cs_.on_phase1(msg, env.source, env.flow, now_);
        charge_cs(env.flow, 1, elapsed_ns(t0));
        if (auto* reply = std::get_if<wire::Phase2Msg>(&result)) {
          verdict(env, true, "challenge issued");
          reply_to_origin(env, MsgKind::Phase2, wire::to_bytes(wire::encode(*reply)));
        } else {
          auto& outcome = std::get<protocol::AuthOutcome>(result);
          verdict(env, false, std::string(protocol::to_string(outcome.status)) + ": " + outcome.reason);
          finish_flow(env.flow, std::move(outcome));
        }
        break;
      }
      case MsgKind::Phase3: {
        const auto msg = wire::decode_phase3(env.bytes);
        const auto t0 = Clock::now();
        auto outcome = cs_.on_phase3(msg, env.source, env.flow, now_);
        charge_cs(env.flow, 2, elapsed_ns(t0));
        verdict(env, outcome.authenticated(),
                std::string(protocol::to_string(outcome.status)) + (outcome.reason.empty() ? "" : ": " + outcome.reason));
        finish_flow(env.flow, std::move(outcome));
        break;
      }
      case MsgKind::PidForward: {
        const auto msg = wire::decode_pid_forward(env.bytes);
        const auto grant = cs_.issue_update(msg.pid, now_);
        reply_to_origin(env, MsgKind::NewKeyGrant, wire::to_bytes(wire::encode(grant)));
        break;
      }
      case MsgKind::KeyRequest: {
        const auto msg = wire::decode_key_request(env.bytes);
        const auto delivery = cs_.on_key_request(msg, env.source, now_);
        verdict(env, true, "key released");
        reply_to_origin(env, MsgKind::KeyDelivery, wire::to_bytes(wire::encode(delivery)));
        break;
      }
      default: throw Error(ErrorCode::ProtocolOrder, "CS cannot handle " + std::string(label(env.kind)));
    }
  }

  void charge_cs(FlowId flow, std::size_t phase, double ns) {
    if (auto it = result_.flow_timing.find(flow); it != result_.flow_timing.end()) it->second.cs_ns[phase] += ns;
  }

  // --- AV -----------------------------------------------------------------

  void on_vehicle(std::size_t i, const Envelope& env) {
    auto& av = vehicles_[i];
    switch (env.kind) {
      case MsgKind::Phase2: {
        const auto msg = wire::decode_phase2(env.bytes);
        const auto t0 = Clock::now();
        auto result = av.verify_server(msg, env.source, now_);
        const double ns = elapsed_ns(t0);
        if (auto it = result_.flow_timing.find(env.flow); it != result_.flow_timing.end()) it->second.av_ns[2] += ns;
        if (auto* reply = std::get_if<wire::Phase3Msg>(&result)) {
          verdict(env, true, "server verified");
          if (auto fs = flows_.find(env.flow); fs != flows_.end()) fs->second.av_sk = av.session_key();
          send(vehicle_node(i), topo_.server(), MsgKind::Phase3, wire::to_bytes(wire::encode(*reply)), env.flow);
        } else {
          auto& outcome = std::get<protocol::AuthOutcome>(result);
          verdict(env, false, std::string(protocol::to_string(outcome.status)) + ": " + outcome.reason);
          finish_flow(env.flow, std::move(outcome));
        }
        break;
      }
      case MsgKind::PidForward: {
        const auto msg = wire::decode_pid_forward(env.bytes);
        auto h = handovers_.find(env.flow);
        if (h == handovers_.end()) throw Error(ErrorCode::ProtocolOrder, "unexpected PID_New");
        av.receive_pid_new(msg.pid);
        result_.handovers[h->second.outcome_index].pid_new = msg.pid;
        topo_.attach(vehicle_node(i), h->second.new_rsu);
        const FlowId flow = env.flow;
        schedule(now_ + scenario_.key_request_delay_us, EventKind::TimerFire, [this, i, flow] {
          try {
            const auto req = vehicles_[i].request_key();
            send(vehicle_node(i), topo_.server(), MsgKind::KeyRequest, wire::to_bytes(wire::encode(req)), flow);
          } catch (const Error& e) {
            handover_failed(flow, e.what());
          }
        });
        break;
      }
      case MsgKind::KeyDelivery: {
        const auto msg = wire::decode_key_delivery(env.bytes);
        av.receive_key_delivery(msg);
        if (auto h = handovers_.find(env.flow); h != handovers_.end()) {
          auto& out = result_.handovers[h->second.outcome_index];
          const auto* rec = av.v_pid() ? cs_.sdb().find(*av.v_pid()) : nullptr;
          out.completed = true;
          out.finished_at = now_;
          out.keys_match = rec && rec->current_sk && av.session_key() && *rec->current_sk == *av.session_key() &&
                           out.pid_new && *av.v_pid() == *out.pid_new;
          handovers_.erase(h);
        }
        break;
      }
      default: throw Error(ErrorCode::ProtocolOrder, "AV cannot handle " + std::string(label(env.kind)));
    }
  }

  // --- RG / RSU -----------------------------------------------------------

  void on_gateway(NodeId rg, const Envelope& env) {
    auto h = handovers_.find(env.flow);
    if (h == handovers_.end()) throw Error(ErrorCode::ProtocolOrder, "RG has no handover context");
    const HandoverCtx ctx = h->second;
    switch (env.kind) {
      case MsgKind::PidForward:
        if (rg == ctx.to_rg) {
          // RG1 -> RG2 {V_PID}; RG2 asks the CS.
          send(rg, topo_.server(), MsgKind::PidForward, env.bytes, env.flow);
        } else {
          // RG2 -> RG1 {PID_New}; RG1 passes it to the AV through the old RSU.
          send(rg, vehicle_node(ctx.vehicle), MsgKind::PidForward, env.bytes, env.flow);
        }
        break;
      case MsgKind::NewKeyGrant: {
        const auto grant = wire::decode_new_key_grant(env.bytes);
        send(rg, ctx.from_rg, MsgKind::PidForward, wire::to_bytes(wire::encode(wire::PidForward{grant.pid_new})),
             env.flow);
        send(rg, ctx.new_rsu, MsgKind::NewKeyGrant, env.bytes, env.flow);
        break;
      }
      default: throw Error(ErrorCode::ProtocolOrder, "RG cannot handle " + std::string(label(env.kind)));
    }
  }

  void on_rsu(NodeId rsu, const Envelope& env) {
    if (env.kind != MsgKind::NewKeyGrant) throw Error(ErrorCode::ProtocolOrder, "RSU cannot handle " + std::string(label(env.kind)));
    rsu_grants_[rsu].push_back(wire::decode_new_key_grant(env.bytes));
  }

  // --- handover -----------------------------------------------------------

  void begin_handover(std::size_t i, std::optional<NodeId> to_rg) {
    if (in_flight_.contains(i)) {
      deferred_crossings_[i].push_back(to_rg);
      return;
    }
    auto& av = vehicles_.at(i);
    const auto* rec = av.v_pid() ? cs_.sdb().find(*av.v_pid()) : nullptr;
    if (!rec || !rec->current_sk || !av.session_key()) {
      result_.warnings.push_back("boundary crossing of " + topo_.name(vehicle_node(i)) + " at " + std::to_string(now_) +
                                 " us ignored: vehicle not authenticated");
      return;
    }
    HandoverCtx ctx;
    ctx.vehicle = i;
    ctx.old_rsu = topo_.rsu_of(vehicle_node(i));
    ctx.from_rg = topo_.rg_of_rsu(ctx.old_rsu);
    if (to_rg) {
      ctx.to_rg = *to_rg;
    } else {
      const auto& g = topo_.gateways();
      const auto pos = std::find(g.begin(), g.end(), ctx.from_rg) - g.begin();
      ctx.to_rg = g[static_cast<std::size_t>(pos + 1) % g.size()];
    }
    if (ctx.to_rg == ctx.from_rg) throw Error(ErrorCode::Configuration, "boundary crossing needs two distinct RGs");
    ctx.new_rsu = topo_.rsu_under(ctx.to_rg);
    ctx.old_pid = *av.v_pid();

    HandoverOutcome out;
    out.vehicle = i;
    out.old_pid = ctx.old_pid;
    out.requested_at = now_;
    ctx.outcome_index = result_.handovers.size();
    result_.handovers.push_back(out);

    const FlowId flow = new_flow();
    handovers_[flow] = ctx;
    send(ctx.from_rg, ctx.to_rg, MsgKind::PidForward, wire::to_bytes(wire::encode(wire::PidForward{ctx.old_pid})), flow);
  }

  void handover_failed(FlowId flow, const std::string& why) {
    auto h = handovers_.find(flow);
    if (h == handovers_.end()) return;
    auto& out = result_.handovers[h->second.outcome_index];
    out.refusal = why;
    out.finished_at = now_;
    handovers_.erase(h);
  }

  Topology topo_;
  Scenario scenario_;
  std::uint64_t seed_;
  rng::Engine latency_rng_;
  protocol::CloudServer cs_;
  rng::Engine av_rng_;
  std::vector<protocol::AvDevice> vehicles_;
  std::unordered_map<NodeId, std::size_t> vehicle_index_;

  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  SimTime now_ = 0;
  FlowId next_flow_ = 1;

  std::map<FlowId, FlowState> flows_;
  std::unordered_map<std::size_t, FlowId> in_flight_;
  std::unordered_map<std::size_t, std::vector<std::optional<NodeId>>> deferred_crossings_;
  std::map<FlowId, HandoverCtx> handovers_;
  std::unordered_map<NodeId, std::vector<wire::NewKeyGrant>> rsu_grants_;

  Interceptor interceptor_;
  AdversaryHandler adversary_handler_;
  RunResult result_;
};

/// Schedules the scenario's authentications and boundary crossings on
/// `topology` and runs to quiescence.
inline RunResult run(const Topology& topology, const Scenario& scenario, std::uint64_t master_seed) {
  Simulator sim(topology, scenario, master_seed);
  for (std::size_t i = 0; i < sim.vehicle_count(); ++i) {
    for (std::size_t k = 0; k < scenario.auths_per_vehicle; ++k)
      sim.start_auth(i, scenario.auth_start_us + static_cast<SimTime>(i) * scenario.auth_stagger_us +
                            static_cast<SimTime>(k) * scenario.auth_interval_us);
    for (SimTime t : scenario.boundary_at_us) sim.cross_boundary(i, t);
  }
  return sim.run();
}

inline RunResult run(const Scenario& scenario, std::uint64_t master_seed) {
  return run(Topology::build(scenario), scenario, master_seed);
}

}  // namespace easysec::sim
