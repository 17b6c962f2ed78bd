#pragma once

// Scenario description shared by the simulator, the attack harness and the
// CLI. File format: one `key = value` per line, `#` starts a comment, blank
// lines ignored, unknown keys rejected. See docs/scenario.md for the schema.

#include <charconv>
#include <cstdint>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "easysec/error.hpp"
#include "easysec/protocol.hpp"
#include "easysec/transcript.hpp"

namespace easysec {

struct Scenario {
  std::uint64_t seed = 1;
  std::size_t vehicles = 1;
  std::size_t rsus = 2;
  std::size_t rgs = 2;
  double noise_sigma = 0.0;

  SimTime latency_us = 1 * kMillisecond;  // per hop, fixed part
  SimTime jitter_us = 0;                  // per hop, uniform in [0, jitter]

  std::size_t enrollments = 4;
  bool registration_secure = true;

  SimTime auth_start_us = 0;
  SimTime auth_stagger_us = 0;  // offset between consecutive vehicles
  std::size_t auths_per_vehicle = 1;
  SimTime auth_interval_us = 1 * kSecond;

  std::vector<SimTime> boundary_at_us;  // every vehicle crosses to the next RG at each time
  SimTime key_request_delay_us = 10 * kMillisecond;

  std::string attack = "none";
  std::size_t attack_attempts = 0;  // 0 = scenario default

  SimTime time_limit_us = 3600 * kSecond;
  bool record_transcript = true;

  protocol::ProtocolConfig protocol;

  void validate() const {
    if (vehicles < 1) throw Error(ErrorCode::Configuration, "vehicles must be >= 1");
    if (rsus < 1) throw Error(ErrorCode::Configuration, "rsus must be >= 1");
    if (rgs < 1) throw Error(ErrorCode::Configuration, "rgs must be >= 1");
    if (rsus < rgs) throw Error(ErrorCode::Configuration, "every RG needs at least one RSU (rsus >= rgs)");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::Configuration, "noise_sigma must be >= 0");
    if (latency_us < 0 || jitter_us < 0) throw Error(ErrorCode::Configuration, "latencies must be >= 0");
    if (enrollments < 1) throw Error(ErrorCode::Configuration, "enrollments must be >= 1");
    if (!boundary_at_us.empty() && rgs < 2) throw Error(ErrorCode::Configuration, "boundary crossings need rgs >= 2");
    protocol.validate();
  }
};

namespace scenario_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_int(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) throw Error(ErrorCode::Configuration, key + ": not an integer: '" + text + "'");
  return value;
}

inline double parse_real(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  double v = 0.0;
  if (!(is >> v) || !is.eof()) throw Error(ErrorCode::Configuration, key + ": not a number: '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error(ErrorCode::Configuration, key + ": not a boolean: '" + text + "'");
}

}  // namespace scenario_detail

/// Applies one `key = value` setting.
inline void apply_setting(Scenario& s, const std::string& key, const std::string& value) {
  using namespace scenario_detail;
  if (key == "seed") s.seed = parse_int<std::uint64_t>(key, value);
  else if (key == "vehicles") s.vehicles = parse_int<std::size_t>(key, value);
  else if (key == "rsus") s.rsus = parse_int<std::size_t>(key, value);
  else if (key == "rgs") s.rgs = parse_int<std::size_t>(key, value);
  else if (key == "noise_sigma") s.noise_sigma = parse_real(key, value);
  else if (key == "latency_us") s.latency_us = parse_int<SimTime>(key, value);
  else if (key == "jitter_us") s.jitter_us = parse_int<SimTime>(key, value);
  else if (key == "enrollments") s.enrollments = parse_int<std::size_t>(key, value);
  else if (key == "registration_secure") s.registration_secure = parse_bool(key, value);
  else if (key == "auth_start_us") s.auth_start_us = parse_int<SimTime>(key, value);
  else if (key == "auth_stagger_us") s.auth_stagger_us = parse_int<SimTime>(key, value);
  else if (key == "auths_per_vehicle") s.auths_per_vehicle = parse_int<std::size_t>(key, value);
  else if (key == "auth_interval_us") s.auth_interval_us = parse_int<SimTime>(key, value);
  else if (key == "boundary_at_us") {
    s.boundary_at_us.clear();
    std::istringstream is(value);
    std::string item;
    while (std::getline(is, item, ','))
      if (!trim(item).empty()) s.boundary_at_us.push_back(parse_int<SimTime>(key, trim(item)));
  } else if (key == "key_request_delay_us") s.key_request_delay_us = parse_int<SimTime>(key, value);
  else if (key == "attack") s.attack = value;
  else if (key == "attack_attempts") s.attack_attempts = parse_int<std::size_t>(key, value);
  else if (key == "time_limit_us") s.time_limit_us = parse_int<SimTime>(key, value);
  else if (key == "record_transcript") s.record_transcript = parse_bool(key, value);
  else if (key == "i_max") s.protocol.i_max = parse_int<unsigned>(key, value);
  else if (key == "reuse_enrollments") s.protocol.reuse_enrollments = parse_bool(key, value);
  else if (key == "grey_threshold") s.protocol.grey_threshold = parse_int<unsigned>(key, value);
  else if (key == "grey_cooldown_s") s.protocol.grey_cooldown = parse_int<SimTime>(key, value) * kSecond;
  else if (key == "pid_ttl_s") s.protocol.pid_ttl = parse_int<SimTime>(key, value) * kSecond;
  else if (key == "replay_window") s.protocol.replay_window = parse_int<std::size_t>(key, value);
  else if (key == "enroll_votes") s.protocol.enroll_votes = parse_int<unsigned>(key, value);
  else throw Error(ErrorCode::Configuration, "unknown scenario key '" + key + "'");
}

inline Scenario parse_scenario(std::istream& is, Scenario base = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = scenario_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::Configuration, "scenario line " + std::to_string(line_no) + ": expected key = value");
    apply_setting(base, scenario_detail::trim(line.substr(0, eq)), scenario_detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline nlohmann::ordered_json to_json(const Scenario& s) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["vehicles"] = s.vehicles;
  j["rsus"] = s.rsus;
  j["rgs"] = s.rgs;
  j["noise_sigma"] = s.noise_sigma;
  j["latency_us"] = s.latency_us;
  j["jitter_us"] = s.jitter_us;
  j["enrollments"] = s.enrollments;
  j["i_max"] = s.protocol.i_max;
  j["grey_threshold"] = s.protocol.grey_threshold;
  j["grey_cooldown_s"] = s.protocol.grey_cooldown / kSecond;
  j["attack"] = s.attack;
  return j;
}

}  // namespace easysec
