#pragma once

// Entity state machines: vehicle (AV), cloud server (CS) with its secure
// database (SDB), and the grey list both sides use against repeated failures.
// RSUs and RGs are pure relays and live in the simulator.
//
// Authentication, as implemented here:
//   1. AV -> CS   v_pid || N_v
//   2. CS -> AV   C || K || (N_v || N_s || I) xor keystream(msb_{K+1}(R_C))
//   3. AV -> CS   F_nl(R_{C+I} xor ext(N_s))
// after which both sides hold SK = F_nl(R_{C+I} xor ext(N_v)).
//
// The SDB keeps, per enrollment, the base challenge C and responses for
// C + 0 .. C + i_max so the CS can build the Phase-2 key and check the
// Phase-3 tag from stored CRPs alone. The AV never stores responses.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "easysec/crypto.hpp"
#include "easysec/error.hpp"
#include "easysec/puf.hpp"
#include "easysec/rng.hpp"
#include "easysec/transcript.hpp"
#include "easysec/types.hpp"
#include "easysec/wire.hpp"

namespace easysec::protocol {

struct ProtocolConfig {
  unsigned i_max = 15;
  bool reuse_enrollments = false;
  unsigned grey_threshold = 5;
  SimTime grey_cooldown = 300 * kSecond;
  SimTime pid_ttl = 60 * kSecond;
  std::size_t replay_window = 64;
  /// Evaluations per response during registration, combined by bitwise majority.
  unsigned enroll_votes = 1;

  void validate() const {
    if (i_max < 1 || i_max > 255) throw Error(ErrorCode::Configuration, "i_max must be in 1..255");
    if (grey_threshold < 1) throw Error(ErrorCode::Configuration, "grey threshold must be >= 1");
    if (grey_cooldown < 0) throw Error(ErrorCode::Configuration, "grey cooldown must be >= 0");
    if (pid_ttl < 0) throw Error(ErrorCode::Configuration, "pid ttl must be >= 0");
    if (enroll_votes < 1 || enroll_votes % 2 == 0)
      throw Error(ErrorCode::Configuration, "enroll_votes must be odd and >= 1");
  }
};

enum class AuthStatus { Authenticated, InvalidClient, InvalidServer, AuthFailed, GreyListed };

constexpr std::string_view to_string(AuthStatus s) {
  switch (s) {
    case AuthStatus::Authenticated: return "Authenticated";
    case AuthStatus::InvalidClient: return "InvalidClient";
    case AuthStatus::InvalidServer: return "InvalidServer";
    case AuthStatus::AuthFailed: return "AuthFailed";
    case AuthStatus::GreyListed: return "GreyListed";
  }
  return "Unknown";
}

struct AuthOutcome {
  AuthStatus status = AuthStatus::AuthFailed;
  std::optional<SessionKey> sk;  // set iff Authenticated
  std::optional<std::uint64_t> z;
  std::string reason;

  static AuthOutcome reject(AuthStatus status, std::string reason) { return {status, std::nullopt, std::nullopt, std::move(reason)}; }
  bool authenticated() const noexcept { return status == AuthStatus::Authenticated; }
};

/// Per-source failure counter. A source is listed once its consecutive
/// failures reach the threshold and stays listed for `cooldown`.
class GreyList {
 public:
  GreyList(unsigned threshold = 5, SimTime cooldown = 300 * kSecond) : threshold_(threshold), cooldown_(cooldown) {}

  bool is_listed(NodeId source, SimTime now) {
    auto it = entries_.find(source);
    if (it == entries_.end() || !it->second.listed_at) return false;
    if (now >= *it->second.listed_at + cooldown_) {
      entries_.erase(it);
      return false;
    }
    return true;
  }

  void record_failure(NodeId source, SimTime now) {
    Entry& e = entries_[source];
    if (e.listed_at) return;
    if (++e.fail_count >= threshold_) e.listed_at = now;
  }

  void record_success(NodeId source) {
    auto it = entries_.find(source);
    if (it != entries_.end() && !it->second.listed_at) entries_.erase(it);
  }

  unsigned failures(NodeId source) const {
    auto it = entries_.find(source);
    return it == entries_.end() ? 0 : it->second.fail_count;
  }

  unsigned threshold() const noexcept { return threshold_; }
  SimTime cooldown() const noexcept { return cooldown_; }

  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [source, e] : entries_) {
      nlohmann::json j{{"fail_count", e.fail_count}};
      j["listed_at"] = e.listed_at ? nlohmann::json(*e.listed_at) : nlohmann::json(nullptr);
      out[std::to_string(source)] = std::move(j);
    }
    return out;
  }

 private:
  struct Entry {
    unsigned fail_count = 0;
    std::optional<SimTime> listed_at;
  };
  unsigned threshold_;
  SimTime cooldown_;
  std::unordered_map<NodeId, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Secure database

struct Enrollment {
  Challenge base_c;
  std::vector<Response> responses;  // index = offset, 0..=i_max
  Challenge reg_c1;
  Response reg_r2;
  bool used = false;
};

struct PendingPid {
  PseudoId pid;
  SimTime issued_at = 0;
  SimTime ttl = 60 * kSecond;
  SessionKey sk_new;
};

struct SdbRecord {
  PseudoId v_pid;
  std::uint64_t real_id = 0;
  std::vector<Enrollment> enrollments;
  std::optional<SessionKey> current_sk;
  std::optional<PendingPid> pid_new_pending;
};

inline nlohmann::json to_json(const SdbRecord& r) {
  nlohmann::json j;
  j["v_pid"] = to_hex(r.v_pid.bits);
  j["real_id"] = to_hex(r.real_id);
  j["enrollments"] = nlohmann::json::array();
  for (const auto& e : r.enrollments) {
    nlohmann::json je;
    je["base_c"] = to_hex(e.base_c.bits);
    je["reg_c1"] = to_hex(e.reg_c1.bits);
    je["reg_r2"] = to_hex(e.reg_r2.bits);
    je["used"] = e.used;
    je["responses"] = nlohmann::json::array();
    for (Response resp : e.responses) je["responses"].push_back(to_hex(resp.bits));
    j["enrollments"].push_back(std::move(je));
  }
  j["current_sk"] = r.current_sk ? nlohmann::json(to_hex(r.current_sk->bits)) : nlohmann::json(nullptr);
  if (r.pid_new_pending) {
    j["pid_new_pending"] = {{"pid", to_hex(r.pid_new_pending->pid.bits)},
                            {"issued_at", r.pid_new_pending->issued_at},
                            {"ttl", r.pid_new_pending->ttl}};
  } else {
    j["pid_new_pending"] = nullptr;
  }
  return j;
}

class SecureDatabase {
 public:
  SdbRecord* find(PseudoId pid) {
    auto it = records_.find(pid);
    return it == records_.end() ? nullptr : &it->second;
  }
  const SdbRecord* find(PseudoId pid) const {
    auto it = records_.find(pid);
    return it == records_.end() ? nullptr : &it->second;
  }

  /// PIDs in use, either as a live v_pid or as a pending replacement.
  bool pid_taken(PseudoId pid) const { return records_.contains(pid) || pending_.contains(pid); }

  SdbRecord& insert(SdbRecord record) {
    if (pid_taken(record.v_pid)) throw Error(ErrorCode::Input, "duplicate v_pid in SDB");
    const PseudoId pid = record.v_pid;
    return records_.emplace(pid, std::move(record)).first->second;
  }

  void set_pending(SdbRecord& record, PendingPid pending) {
    clear_pending(record);
    pending_.emplace(pending.pid, record.v_pid);
    record.pid_new_pending = pending;
  }

  void clear_pending(SdbRecord& record) {
    if (record.pid_new_pending) pending_.erase(record.pid_new_pending->pid);
    record.pid_new_pending.reset();
  }

  /// Record whose pending replacement PID is `pid_new`.
  SdbRecord* find_by_pending(PseudoId pid_new) {
    auto it = pending_.find(pid_new);
    return it == pending_.end() ? nullptr : find(it->second);
  }

  /// Moves a record to its new PID; the old PID stops resolving.
  SdbRecord& rekey(PseudoId old_pid, PseudoId new_pid) {
    auto node = records_.extract(old_pid);
    if (node.empty()) throw Error(ErrorCode::Input, "rekey of unknown v_pid");
    pending_.erase(new_pid);
    node.key() = new_pid;
    node.mapped().v_pid = new_pid;
    return records_.insert(std::move(node)).position->second;
  }

  std::size_t size() const noexcept { return records_.size(); }

  nlohmann::json to_json() const {
    std::vector<const SdbRecord*> sorted;
    for (const auto& [pid, rec] : records_) sorted.push_back(&rec);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->v_pid < b->v_pid; });
    nlohmann::json out = nlohmann::json::array();
    for (const auto* rec : sorted) out.push_back(protocol::to_json(*rec));
    return out;
  }

 private:
  std::unordered_map<PseudoId, SdbRecord> records_;
  std::unordered_map<PseudoId, PseudoId> pending_;  // pid_new -> current v_pid
};

// ---------------------------------------------------------------------------
// Vehicle

/// Vehicle state: its PUF, PID(s), at most one session key, and the nonce of
/// the authentication in flight. Responses exist only inside member calls.
class AvDevice {
 public:
  AvDevice(puf::ArbiterPuf puf, std::uint64_t noise_seed, ProtocolConfig config = {})
      : puf_(std::move(puf)), noise_seed_(noise_seed), config_(config),
        server_grey_(config.grey_threshold, config.grey_cooldown) {}

  const std::optional<PseudoId>& v_pid() const noexcept { return v_pid_; }
  const std::optional<SessionKey>& session_key() const noexcept { return sk_; }
  const std::optional<PseudoId>& pid_new() const noexcept { return pid_new_; }
  bool has_pending() const noexcept { return pending_.has_value(); }
  const puf::ArbiterPuf& puf() const noexcept { return puf_; }

  void assign_pid(PseudoId pid) { v_pid_ = pid; }

  /// Environmental stress on the PUF (scales its noise).
  void set_temperature_scale(double scale) { temperature_scale_ = scale; }

  /// Registration only: answer a challenge over the secure enrollment link.
  Response enroll_response(Challenge c) {
    if (config_.enroll_votes == 1) return eval(c);
    std::vector<unsigned> ones(64, 0);
    for (unsigned v = 0; v < config_.enroll_votes; ++v) {
      const Response r = eval(c);
      for (unsigned b = 0; b < 64; ++b) ones[b] += (r.bits >> b) & 1U;
    }
    std::uint64_t out = 0;
    for (unsigned b = 0; b < 64; ++b)
      if (2 * ones[b] > config_.enroll_votes) out |= std::uint64_t{1} << b;
    return Response{out};
  }

  wire::Phase1Msg initiate(rng::Engine& rng) {
    if (!v_pid_) throw Error(ErrorCode::ProtocolOrder, "AV has no v_pid; register first");
    const Nonce16 n_v = crypto::gen_nonce(rng);
    pending_ = Pending{n_v};
    return {*v_pid_, n_v};
  }

  /// Checks the server by decrypting N_v from the Phase-2 ciphertext. On
  /// success returns the Phase-3 tag and adopts the new session key.
  std::variant<wire::Phase3Msg, AuthOutcome> verify_server(const wire::Phase2Msg& msg, NodeId server, SimTime now) {
    if (server_grey_.is_listed(server, now)) return AuthOutcome::reject(AuthStatus::GreyListed, "server grey-listed");
    if (!pending_) throw Error(ErrorCode::ProtocolOrder, "phase-2 without a pending authentication");
    if (msg.k < wire::kMinK || msg.k > wire::kMaxK) throw Error(ErrorCode::MalformedField, "phase-2 K outside [15,63]");

    const Nonce16 expected = pending_->n_v;
    const BitString plain = [&] {
      const BitString key = puf::take_msb_bits(eval(msg.c), msg.k + 1U);
      return crypto::keystream_xor(key, BitString(msg.ct, wire::kPhase2PlainBits));
    }();
    const wire::Phase2Plaintext fields = wire::unpack_phase2_plaintext(plain.value());

    if (fields.n_v != expected || fields.i < 1 || fields.i > config_.i_max) {
      server_grey_.record_failure(server, now);
      pending_.reset();
      return AuthOutcome::reject(AuthStatus::InvalidServer, fields.n_v != expected ? "nonce mismatch" : "offset out of range");
    }
    server_grey_.record_success(server);

    const Response r_ci = eval(offset(msg.c, fields.i));
    const wire::Phase3Msg reply{crypto::phase3_tag(r_ci, fields.n_s)};
    sk_ = crypto::derive_session_key(r_ci, fields.n_v);
    pending_.reset();
    return reply;
  }

  void receive_pid_new(PseudoId pid) { pid_new_ = pid; }

  wire::KeyRequest request_key() const {
    if (!pid_new_) throw Error(ErrorCode::ProtocolOrder, "no PID_New to request a key for");
    return {PseudoId{pid_new_->bits + 1}};
  }

  /// SK_New = ct_sk xor SK; the AV switches to PID_New.
  void receive_key_delivery(const wire::KeyDelivery& msg) {
    if (!sk_ || !pid_new_) throw Error(ErrorCode::ProtocolOrder, "key delivery without session key or PID_New");
    sk_ = SessionKey{msg.ct_sk ^ sk_->bits};
    v_pid_ = pid_new_;
    pid_new_.reset();
  }

  /// Everything the vehicle retains between operations (the PUF circuit
  /// itself excluded).
  nlohmann::json state_json() const {
    nlohmann::json j;
    j["v_pid"] = v_pid_ ? nlohmann::json(to_hex(v_pid_->bits)) : nlohmann::json(nullptr);
    j["pending_n_v"] = pending_ ? nlohmann::json(to_hex(pending_->n_v.bits, 4)) : nlohmann::json(nullptr);
    j["sk"] = sk_ ? nlohmann::json(to_hex(sk_->bits)) : nlohmann::json(nullptr);
    j["pid_new"] = pid_new_ ? nlohmann::json(to_hex(pid_new_->bits)) : nlohmann::json(nullptr);
    j["eval_counter"] = eval_counter_;
    j["server_grey_list"] = server_grey_.to_json();
    return j;
  }

 private:
  struct Pending {
    Nonce16 n_v;
  };

  Response eval(Challenge c) {
    return puf_.evaluate(c, {rng::derive_seed({noise_seed_, eval_counter_++}), temperature_scale_});
  }

  puf::ArbiterPuf puf_;
  std::uint64_t noise_seed_;
  std::uint64_t eval_counter_ = 0;
  double temperature_scale_ = 1.0;
  ProtocolConfig config_;
  GreyList server_grey_;

  std::optional<PseudoId> v_pid_;
  std::optional<Pending> pending_;
  std::optional<SessionKey> sk_;
  std::optional<PseudoId> pid_new_;
};

// ---------------------------------------------------------------------------
// Cloud server

class CloudServer {
 public:
  CloudServer(puf::ArbiterPuf puf, ProtocolConfig config, std::uint64_t seed)
      : puf_(std::move(puf)), config_(config), rng_(seed), noise_seed_(rng::derive_seed({seed, 0xC5})),
        grey_(config.grey_threshold, config.grey_cooldown) {
    config_.validate();
  }

  const ProtocolConfig& config() const noexcept { return config_; }
  SecureDatabase& sdb() noexcept { return sdb_; }
  const SecureDatabase& sdb() const noexcept { return sdb_; }
  GreyList& grey_list() noexcept { return grey_; }
  rng::Engine& rng() noexcept { return rng_; }
  std::size_t open_sessions() const noexcept { return sessions_.size(); }

  Response eval(Challenge c) {
    return puf_.evaluate(c, {rng::derive_seed({noise_seed_, eval_counter_++}), 1.0});
  }

  PseudoId fresh_pid() {
    PseudoId pid{rng_()};
    while (sdb_.pid_taken(pid)) pid = PseudoId{rng_()};
    return pid;
  }

  /// Phase 1 -> Phase 2. Checks, in order: grey list, known PID, nonce
  /// freshness, then picks an enrollment and encrypts N_v || N_s || I.
  std::variant<wire::Phase2Msg, AuthOutcome> on_phase1(const wire::Phase1Msg& msg, NodeId source, FlowId flow,
                                                       SimTime now) {
    if (grey_.is_listed(source, now)) return AuthOutcome::reject(AuthStatus::GreyListed, "source grey-listed");

    SdbRecord* record = sdb_.find(msg.v_pid);
    if (!record) {
      grey_.record_failure(source, now);
      return AuthOutcome::reject(AuthStatus::InvalidClient, "unknown v_pid");
    }

    auto& seen = replay_cache_[msg.v_pid];
    if (std::find(seen.begin(), seen.end(), msg.n_v) != seen.end()) {
      grey_.record_failure(source, now);
      return AuthOutcome::reject(AuthStatus::InvalidClient, "replayed nonce");
    }

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < record->enrollments.size(); ++i)
      if (config_.reuse_enrollments || !record->enrollments[i].used) candidates.push_back(i);
    if (candidates.empty()) return AuthOutcome::reject(AuthStatus::InvalidClient, "no fresh enrollment");

    seen.push_back(msg.n_v);
    if (seen.size() > config_.replay_window) seen.pop_front();

    const std::size_t index = candidates[rng::uniform_below(rng_, candidates.size())];
    Enrollment& e = record->enrollments[index];
    e.used = true;

    Session s;
    s.v_pid = msg.v_pid;
    s.enrollment = index;
    s.k = static_cast<std::uint8_t>(rng::uniform_in(rng_, wire::kMinK, wire::kMaxK));
    s.i = static_cast<std::uint8_t>(rng::uniform_in(rng_, 1, config_.i_max));
    s.n_v = msg.n_v;
    s.n_s = crypto::gen_nonce(rng_);
    s.source = source;

    const BitString key = puf::take_msb_bits(e.responses[0], s.k + 1U);
    const BitString plain(wire::pack({s.n_v, s.n_s, s.i}), wire::kPhase2PlainBits);
    const wire::Phase2Msg reply{e.base_c, s.k, crypto::keystream_xor(key, plain).value()};
    sessions_[flow] = s;
    return reply;
  }

  /// Phase 3: recompute the expected tag from the stored R_{C+I} and compare.
  AuthOutcome on_phase3(const wire::Phase3Msg& msg, NodeId source, FlowId flow, SimTime now) {
    if (grey_.is_listed(source, now)) return AuthOutcome::reject(AuthStatus::GreyListed, "source grey-listed");

    auto it = sessions_.find(flow);
    if (it == sessions_.end()) {
      grey_.record_failure(source, now);
      throw Error(ErrorCode::ProtocolOrder, "phase-3 without session state");
    }
    const Session s = it->second;
    sessions_.erase(it);

    SdbRecord* record = sdb_.find(s.v_pid);
    if (!record) {
      grey_.record_failure(source, now);
      return AuthOutcome::reject(AuthStatus::AuthFailed, "v_pid retired during authentication");
    }
    const Response r_ci = record->enrollments[s.enrollment].responses[s.i];
    const std::uint64_t z = r_ci.bits ^ crypto::extend_nonce(s.n_s);
    if (crypto::f_nl(z) != msg.f3) {
      grey_.record_failure(source, now);
      AuthOutcome out = AuthOutcome::reject(AuthStatus::AuthFailed, "tag mismatch");
      out.z = z;
      return out;
    }
    grey_.record_success(source);
    const SessionKey sk = crypto::derive_session_key(r_ci, s.n_v);
    record->current_sk = sk;
    return {AuthStatus::Authenticated, sk, z, {}};
  }

  /// Handover step 1 (RG2 -> CS with the current PID): issue PID_New and
  /// SK_New encrypted under the current session key.
  wire::NewKeyGrant issue_update(PseudoId v_pid, SimTime now) {
    SdbRecord* record = sdb_.find(v_pid);
    if (!record) throw Error(ErrorCode::Refused, "session update for unknown v_pid");
    if (!record->current_sk) throw Error(ErrorCode::Refused, "session update before authentication");
    const PseudoId pid_new = fresh_pid();
    const SessionKey sk_new{rng_()};
    sdb_.set_pending(*record, {pid_new, now, config_.pid_ttl, sk_new});
    return {pid_new, sk_new.bits ^ record->current_sk->bits};
  }

  /// Handover step 2 (AV -> RSU2 -> CS with PID_New + 1): validate the +1
  /// rule and the TTL, then commit the new PID and key.
  wire::KeyDelivery on_key_request(const wire::KeyRequest& msg, NodeId source, SimTime now) {
    if (grey_.is_listed(source, now)) throw Error(ErrorCode::Refused, "source grey-listed");
    SdbRecord* record = sdb_.find_by_pending(PseudoId{msg.pid_plus_one.bits - 1});
    if (!record) {
      grey_.record_failure(source, now);
      throw Error(ErrorCode::Refused, "key request does not match any pending PID_New + 1");
    }
    const PendingPid pending = *record->pid_new_pending;
    if (now - pending.issued_at > pending.ttl) {
      sdb_.clear_pending(*record);
      throw Error(ErrorCode::Refused, "PID_New expired; re-authentication required");
    }
    const std::uint64_t ct_sk = pending.sk_new.bits ^ record->current_sk->bits;
    const PseudoId old_pid = record->v_pid;
    SdbRecord& moved = sdb_.rekey(old_pid, pending.pid);
    moved.current_sk = pending.sk_new;
    moved.pid_new_pending.reset();
    replay_cache_.erase(old_pid);
    grey_.record_success(source);
    return {ct_sk};
  }

 private:
  struct Session {
    PseudoId v_pid;
    std::size_t enrollment = 0;
    std::uint8_t k = 0;
    std::uint8_t i = 0;
    Nonce16 n_v;
    Nonce16 n_s;
    NodeId source = 0;
  };

  puf::ArbiterPuf puf_;
  ProtocolConfig config_;
  rng::Engine rng_;
  std::uint64_t noise_seed_;
  std::uint64_t eval_counter_ = 0;
  SecureDatabase sdb_;
  GreyList grey_;
  std::unordered_map<FlowId, Session> sessions_;
  std::unordered_map<PseudoId, std::deque<Nonce16>> replay_cache_;
};

// ---------------------------------------------------------------------------
// Registration

struct RegistrationRequest {
  std::uint64_t real_id = 0;
  std::size_t n_enrollments = 1;
  bool secure_link = true;
};

/// Enrolls `n_enrollments` CRP chains for the vehicle. Re-registering a
/// vehicle that already has a PID appends enrollments to its record.
inline const SdbRecord& register_av(AvDevice& av, CloudServer& cs, const RegistrationRequest& req) {
  if (!req.secure_link) throw Error(ErrorCode::Refused, "registration requires a secure link");
  if (req.n_enrollments == 0) throw Error(ErrorCode::Parameter, "n_enrollments must be >= 1");

  const unsigned i_max = cs.config().i_max;
  std::vector<Enrollment> fresh;
  fresh.reserve(req.n_enrollments);
  for (std::size_t n = 0; n < req.n_enrollments; ++n) {
    Enrollment e;
    e.reg_c1 = Challenge{cs.rng()()};
    const Response r1 = cs.eval(e.reg_c1);
    e.base_c = Challenge{r1.bits};
    e.responses.reserve(i_max + 1);
    for (unsigned o = 0; o <= i_max; ++o) e.responses.push_back(av.enroll_response(offset(e.base_c, o)));
    e.reg_r2 = cs.eval(Challenge{e.responses[0].bits});
    fresh.push_back(std::move(e));
  }

  SdbRecord* record = av.v_pid() ? cs.sdb().find(*av.v_pid()) : nullptr;
  if (!record) {
    SdbRecord rec;
    rec.v_pid = cs.fresh_pid();
    rec.real_id = req.real_id;
    record = &cs.sdb().insert(std::move(rec));
    av.assign_pid(record->v_pid);
  }
  for (auto& e : fresh) record->enrollments.push_back(std::move(e));
  return *record;
}

}  // namespace easysec::protocol
