// easysec: command-line harness for registration, authentication, handover,
// the attack suite, PUF evaluation and overhead benchmarks.
//
// Exit codes: 0 ok, 1 protocol or assertion failure, 2 configuration error.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "easysec/adversary.hpp"
#include "easysec/metrics.hpp"
#include "easysec/puf.hpp"
#include "easysec/scenario.hpp"
#include "easysec/sim.hpp"

namespace {

using namespace easysec;
using Json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

// Rows share one column list; table and csv print the scalar cells, json
// keeps types and adds the summary object.
struct Report {
  std::string command;
  std::vector<std::string> columns;
  std::vector<std::vector<Json>> rows;
  Json summary = Json::object();

  void add(std::vector<Json> row) { rows.push_back(std::move(row)); }
};

std::string cell_text(const Json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return "";
  return v.dump();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

void render(const Report& r, const std::string& format, std::ostream& os) {
  if (format == "json") {
    Json j;
    j["command"] = r.command;
    Json rows = Json::array();
    for (const auto& row : r.rows) {
      Json obj;
      for (std::size_t c = 0; c < r.columns.size(); ++c) obj[r.columns[c]] = row[c];
      rows.push_back(std::move(obj));
    }
    j["rows"] = std::move(rows);
    j["summary"] = r.summary;
    os << j.dump(2) << '\n';
    return;
  }
  if (format == "csv") {
    for (std::size_t c = 0; c < r.columns.size(); ++c) os << (c ? "," : "") << r.columns[c];
    os << '\n';
    for (const auto& row : r.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << csv_escape(cell_text(row[c]));
      os << '\n';
    }
    return;
  }
  std::vector<std::size_t> width(r.columns.size());
  for (std::size_t c = 0; c < r.columns.size(); ++c) width[c] = r.columns[c].size();
  for (const auto& row : r.rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], cell_text(row[c]).size());
  const auto line = [&](const auto& cells, auto text) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string s = text(cells[c]);
      os << s;
      if (c + 1 < cells.size()) os << std::string(width[c] - s.size() + 2, ' ');
    }
    os << '\n';
  };
  line(r.columns, [](const std::string& s) { return s; });
  for (const auto& row : r.rows) line(row, cell_text);
  if (!r.summary.empty()) {
    os << '\n';
    for (const auto& [k, v] : r.summary.items()) os << k << ": " << cell_text(v) << '\n';
  }
}

// Options common to every subcommand.
struct Common {
  std::uint64_t seed = 0;
  std::size_t vehicles = 1;
  double noise_sigma = 0.0;
  std::string scenario;
  std::string config;
  std::string format = "table";
  std::string out;
  unsigned i_max = 15;
  unsigned grey_threshold = 5;
  std::int64_t grey_cooldown = 300;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* vehicles_opt = nullptr;
  CLI::Option* sigma_opt = nullptr;
  CLI::Option* i_max_opt = nullptr;
  CLI::Option* grey_threshold_opt = nullptr;
  CLI::Option* grey_cooldown_opt = nullptr;

  void attach(CLI::App* sub, bool scenario_is_file = true) {
    seed_opt = sub->add_option("--seed", seed, "Master seed for every random choice (env EASYSEC_SEED)")
                   ->envname("EASYSEC_SEED");
    vehicles_opt = sub->add_option("--vehicles", vehicles, "Number of vehicles")->check(CLI::PositiveNumber);
    sigma_opt = sub->add_option("--noise-sigma", noise_sigma, "PUF evaluation noise, in units of the delay weight sd")
                    ->check(CLI::NonNegativeNumber);
    if (scenario_is_file)
      sub->add_option("--scenario", scenario, "Scenario file (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("--config", config, "Base config file, same format as a scenario; flags override it")
        ->check(CLI::ExistingFile);
    sub->add_option("--output-format", format, "Output format")
        ->check(CLI::IsMember({"table", "json", "csv"}))
        ->capture_default_str();
    sub->add_option("--out", out, "Write output to this file instead of stdout");
    i_max_opt = sub->add_option("--i-max", i_max, "Largest challenge offset I")->capture_default_str();
    grey_threshold_opt =
        sub->add_option("--grey-threshold", grey_threshold, "Consecutive failures before grey-listing")
            ->capture_default_str();
    grey_cooldown_opt =
        sub->add_option("--grey-cooldown", grey_cooldown, "Grey-list cooldown in seconds")->capture_default_str();
  }

  // Config file, then scenario file, then explicit flags.
  Scenario build(bool scenario_is_file = true) const {
    Scenario s;
    bool seed_known = false;
    const auto load = [&](const std::string& path) {
      std::ifstream in(path);
      if (!in) throw Error(ErrorCode::Configuration, "cannot read " + path);
      std::stringstream text;
      text << in.rdbuf();
      static const std::regex seed_line(R"((^|\n)[ \t]*seed[ \t]*=)");
      seed_known = seed_known || std::regex_search(text.str(), seed_line);
      s = parse_scenario(text, s);
    };
    if (!config.empty()) load(config);
    if (scenario_is_file && !scenario.empty()) load(scenario);
    if (seed_opt->count()) s.seed = seed;
    else if (!seed_known) throw Error(ErrorCode::Configuration, "a seed is required (--seed or EASYSEC_SEED)");
    if (vehicles_opt->count()) s.vehicles = vehicles;
    if (sigma_opt->count()) s.noise_sigma = noise_sigma;
    if (i_max_opt->count()) s.protocol.i_max = i_max;
    if (grey_threshold_opt->count()) s.protocol.grey_threshold = grey_threshold;
    if (grey_cooldown_opt->count()) s.protocol.grey_cooldown = grey_cooldown * kSecond;
    s.validate();
    return s;
  }

  std::uint64_t seed_only() const {
    if (!seed_opt->count()) throw Error(ErrorCode::Configuration, "a seed is required (--seed or EASYSEC_SEED)");
    return seed;
  }
};

void emit(const Common& c, const Report& r) {
  if (c.out.empty()) {
    render(r, c.format, std::cout);
    return;
  }
  std::ofstream f(c.out);
  if (!f) throw Error(ErrorCode::Configuration, "cannot write " + c.out);
  render(r, c.format, f);
}

void write_transcript(const std::string& path, const Transcript& t) {
  if (path.empty()) return;
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::Configuration, "cannot write " + path);
  t.write_jsonl(f);
}

std::string opt_hex(const std::optional<PseudoId>& p) { return p ? to_hex(p->bits) : ""; }

// --- register ---------------------------------------------------------------

int cmd_register(const Common& c, bool insecure) {
  Scenario s = c.build();
  if (insecure) s.registration_secure = false;
  s.auths_per_vehicle = 0;
  sim::Simulator world(sim::Topology::build(s), s, s.seed);

  Report r{"register", {"vehicle", "v_pid", "enrollments", "crps_per_enrollment"}, {}, {}};
  for (std::size_t i = 0; i < world.vehicle_count(); ++i) {
    const auto& av = world.vehicle(i);
    const auto* rec = world.server().sdb().find(*av.v_pid());
    r.add({world.topology().name(world.vehicle_node(i)), opt_hex(av.v_pid()), rec->enrollments.size(),
           rec->enrollments.front().responses.size()});
  }
  r.summary["registered"] = world.vehicle_count();
  r.summary["sdb_records"] = world.server().sdb().size();
  emit(c, r);
  return kExitOk;
}

// --- auth -------------------------------------------------------------------

std::size_t phase_slot(MsgKind k) { return k == MsgKind::Phase1 ? 0 : k == MsgKind::Phase2 ? 1 : 2; }

bool keys_match(const sim::FlowOutcome& o) { return o.outcome.sk && o.av_sk && *o.outcome.sk == *o.av_sk; }

int cmd_auth(const Common& c, const std::string& transcript_path) {
  const Scenario s = c.build();
  const auto result = sim::run(s, s.seed);
  write_transcript(transcript_path, result.transcript);

  std::map<FlowId, std::array<std::size_t, 3>> bytes;
  for (const auto* rec : result.transcript.originals())
    if (is_auth_phase(rec->kind)) bytes[rec->flow][phase_slot(rec->kind)] += rec->bytes.size();

  Report r{"auth",
           {"flow", "vehicle", "status", "keys_match", "phase1_bytes", "phase2_bytes", "phase3_bytes", "total_bytes",
            "latency_us"},
           {},
           {}};
  std::size_t authenticated = 0, vehicle_flows = 0;
  for (const auto& o : result.outcomes) {
    if (!o.vehicle) continue;
    ++vehicle_flows;
    const auto b = bytes[o.flow];
    const bool ok = o.outcome.authenticated() && keys_match(o);
    if (ok) ++authenticated;
    r.add({o.flow, o.initiator, std::string(protocol::to_string(o.outcome.status)), keys_match(o), b[0], b[1], b[2],
           b[0] + b[1] + b[2], o.finished - o.started});
  }
  r.summary["flows"] = vehicle_flows;
  r.summary["authenticated"] = authenticated;
  if (result.transcript.records().empty()) {
    r.summary["overhead"] = "transcript recording disabled";
  } else {
    const auto ov = wire::overhead_report(result.transcript);
    const auto per_run = [&](std::size_t v) { return ov.runs ? v / ov.runs : 0; };
    r.summary["runs"] = ov.runs;
    r.summary["bytes_per_run"] = Json{{"phase1", per_run(ov.phase1)}, {"phase2", per_run(ov.phase2)},
                                      {"phase3", per_run(ov.phase3)}, {"total", per_run(ov.total)}};
  }
  for (const auto& w : result.warnings) r.summary["warnings"].push_back(w);
  emit(c, r);
  return authenticated == vehicle_flows && vehicle_flows > 0 ? kExitOk : kExitFailure;
}

// --- handover ---------------------------------------------------------------

int cmd_handover(const Common& c, double cross_at_ms, double key_request_delay_ms, const std::string& transcript_path,
                 bool delay_given) {
  Scenario s = c.build();
  if (s.boundary_at_us.empty()) s.boundary_at_us.push_back(static_cast<SimTime>(cross_at_ms * kMillisecond));
  if (delay_given) s.key_request_delay_us = static_cast<SimTime>(key_request_delay_ms * kMillisecond);
  s.time_limit_us = std::max(s.time_limit_us, s.boundary_at_us.back() + s.key_request_delay_us + 60 * kSecond);
  s.validate();
  const auto result = sim::run(s, s.seed);
  write_transcript(transcript_path, result.transcript);

  Report r{"handover", {"vehicle", "old_pid", "pid_new", "completed", "keys_match", "requested_at_us", "finished_at_us", "refusal"}, {}, {}};
  std::size_t ok = 0;
  for (const auto& h : result.handovers) {
    if (h.completed && h.keys_match) ++ok;
    r.add({"AV" + std::to_string(h.vehicle), to_hex(h.old_pid.bits), opt_hex(h.pid_new), h.completed, h.keys_match,
           h.requested_at, h.finished_at, h.refusal});
  }
  r.summary["handovers"] = result.handovers.size();
  r.summary["completed"] = ok;
  for (const auto& w : result.warnings) r.summary["warnings"].push_back(w);
  emit(c, r);
  return ok == result.handovers.size() && ok > 0 ? kExitOk : kExitFailure;
}

// --- attack -----------------------------------------------------------------

int cmd_attack(const Common& c, const std::string& name, std::size_t attempts, const std::string& transcript_path) {
  const Scenario base = c.build(false);
  const std::string chosen = name.empty() ? base.attack : name;
  if (chosen == "none") throw Error(ErrorCode::Configuration, "no attack given (--scenario or attack = in --config)");
  if (attempts == 0) attempts = base.attack_attempts;
  std::vector<adversary::AttackKind> kinds;
  if (chosen == "all") kinds.assign(adversary::kAllAttacks.begin(), adversary::kAllAttacks.end());
  else kinds.push_back(adversary::parse_attack_kind(chosen));

  Report r{"attack", {"scenario", "attempts", "successes", "rejections", "passed", "expectation", "notes"}, {}, {}};
  bool all_passed = true;
  for (auto k : kinds) {
    const auto rep = adversary::run_attack({k, attempts, base.seed, base});
    all_passed = all_passed && rep.passed;
    std::string notes;
    for (const auto& n : rep.notes) notes += (notes.empty() ? "" : "; ") + n;
    r.add({rep.scenario, rep.attempts, rep.successes, rep.rejections, rep.passed, rep.expectation, notes});
    if (kinds.size() == 1) write_transcript(transcript_path, rep.transcript);
  }
  r.summary["all_passed"] = all_passed;
  emit(c, r);
  return all_passed ? kExitOk : kExitFailure;
}

// --- puf-eval ---------------------------------------------------------------

struct PufEvalArgs {
  std::size_t instances = 10;
  std::size_t challenges = 1000;
  std::size_t repeats = 10;
  double temperature = 1.0;
  std::string corpus_out;
  std::vector<std::string> corpus_in;
};

int cmd_puf_eval(const Common& c, const PufEvalArgs& a) {
  Report r{"puf-eval", {"metric", "value_pct"}, {}, {}};

  if (!a.corpus_in.empty()) {
    std::vector<puf::CrpCorpus> corpora;
    for (const auto& path : a.corpus_in) {
      std::ifstream in(path);
      if (!in) throw Error(ErrorCode::Configuration, "cannot read " + path);
      corpora.push_back(puf::read_corpus(in, path));
    }
    double rnd = 0.0;
    for (const auto& corpus : corpora) rnd += metrics::randomness(corpus);
    r.add({"randomness", rnd / static_cast<double>(corpora.size())});
    if (corpora.size() >= 2) {
      r.add({"uniqueness", metrics::uniqueness(corpora)});
      r.add({"inter_hd", metrics::inter_hd(corpora[0], corpora[1])});
    }
    r.summary["corpora"] = corpora.size();
    r.summary["challenges"] = corpora.front().entries.size();
    emit(c, r);
    return kExitOk;
  }

  const std::uint64_t seed = c.seed_only();
  const double sigma = c.sigma_opt->count() ? c.noise_sigma : 0.0;
  if (a.instances < 1 || a.challenges < 1) throw Error(ErrorCode::Configuration, "instances and challenges must be >= 1");
  const auto challenges = puf::random_challenges(rng::derive_seed({seed, 0xCC}), a.challenges);

  std::vector<puf::ArbiterPuf> pufs;
  std::vector<puf::CrpCorpus> corpora;
  for (std::size_t i = 0; i < a.instances; ++i) {
    pufs.push_back(puf::ArbiterPuf::create(rng::derive_seed({seed, 0xA0, i}), sigma));
    corpora.push_back(puf::collect_corpus(pufs.back(), challenges, {rng::derive_seed({seed, 0xE0, i}), a.temperature},
                                          "puf" + std::to_string(i)));
  }
  if (!a.corpus_out.empty()) {
    std::ofstream f(a.corpus_out);
    if (!f) throw Error(ErrorCode::Configuration, "cannot write " + a.corpus_out);
    puf::write_corpus(f, corpora.front());
  }

  double rnd = 0.0;
  for (const auto& corpus : corpora) rnd += metrics::randomness(corpus);
  double rel = 0.0;
  for (std::size_t i = 0; i < pufs.size(); ++i) {
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k <= a.repeats; ++k) seeds.push_back(rng::derive_seed({seed, 0xF0, i, k}));
    rel += metrics::reliability(pufs[i], challenges, a.repeats, seeds, a.temperature);
  }
  const double n = static_cast<double>(pufs.size());
  if (pufs.size() >= 2) {
    r.add({"uniqueness", metrics::uniqueness(corpora)});
    r.add({"inter_hd", metrics::inter_hd(corpora[0], corpora[1])});
  }
  r.add({"randomness", rnd / n});
  r.add({"reliability", rel / n});
  r.summary["instances"] = a.instances;
  r.summary["challenges"] = a.challenges;
  r.summary["repeats"] = a.repeats;
  r.summary["noise_sigma"] = sigma;
  r.summary["temperature"] = a.temperature;
  emit(c, r);
  return kExitOk;
}

// --- bench ------------------------------------------------------------------

int cmd_bench(const Common& c, std::size_t runs, bool timing) {
  const Scenario s = c.build();
  if (runs < 1) throw Error(ErrorCode::Configuration, "runs must be >= 1");

  Report r{"bench", {"run", "vehicle", "status", "phase1_bytes", "phase2_bytes", "phase3_bytes", "total_bytes", "latency_us"}, {}, {}};
  if (timing) {
    r.columns.push_back("av_compute_us");
    r.columns.push_back("cs_compute_us");
  }
  bool ok = true;
  double compute_sum = 0.0;
  for (std::size_t run = 0; run < runs; ++run) {
    Scenario rs = s;
    rs.seed = rng::derive_seed({s.seed, run});
    if (runs == 1) rs.seed = s.seed;
    const auto result = sim::run(rs, rs.seed);
    std::map<FlowId, std::array<std::size_t, 3>> bytes;
    for (const auto* rec : result.transcript.originals())
      if (is_auth_phase(rec->kind)) bytes[rec->flow][phase_slot(rec->kind)] += rec->bytes.size();
    for (const auto& o : result.outcomes) {
      if (!o.vehicle) continue;
      const bool good = o.outcome.authenticated() && keys_match(o);
      ok = ok && good;
      const auto b = bytes[o.flow];
      std::vector<Json> row{run, o.initiator, std::string(protocol::to_string(o.outcome.status)), b[0], b[1], b[2],
                            b[0] + b[1] + b[2], o.finished - o.started};
      if (timing) {
        const auto ft = result.flow_timing.at(o.flow);
        row.push_back((ft.av_ns[0] + ft.av_ns[1] + ft.av_ns[2]) / 1000.0);
        row.push_back((ft.cs_ns[0] + ft.cs_ns[1] + ft.cs_ns[2]) / 1000.0);
      }
      r.add(std::move(row));
    }
    if (timing) compute_sum += sim::per_vehicle_compute_us(result, rs.vehicles);
  }
  r.summary["runs"] = runs;
  r.summary["vehicles"] = s.vehicles;
  r.summary["all_authenticated"] = ok;
  if (timing) r.summary["mean_compute_us_per_vehicle"] = compute_sum / static_cast<double>(runs);
  emit(c, r);
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PUF-based vehicle-to-cloud mutual authentication: simulator, attack suite and PUF metrics", "easysec"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "easysec 0.1.0");

  auto* reg = app.add_subcommand("register", "Register vehicles with the cloud server and list SDB records");
  Common c_reg;
  c_reg.attach(reg);
  bool insecure = false;
  reg->add_flag("--insecure", insecure, "Attempt registration over an insecure link (refused)");

  auto* auth = app.add_subcommand("auth", "Run mutual authentication for every vehicle");
  Common c_auth;
  c_auth.attach(auth);
  std::string transcript;
  auth->add_option("--transcript", transcript, "Write the message transcript as JSON lines");

  auto* hand = app.add_subcommand("handover", "Authenticate, then cross an RG boundary and rotate PID and session key");
  Common c_hand;
  c_hand.attach(hand);
  double cross_at_ms = 1000.0;
  double key_delay_ms = 10.0;
  hand->add_option("--cross-at-ms", cross_at_ms, "Boundary crossing time in ms (when the scenario sets none)")
      ->capture_default_str();
  auto* key_delay_opt = hand->add_option("--key-request-delay-ms", key_delay_ms,
                                         "Delay between receiving PID_New and sending PID_New+1, in ms")
                            ->capture_default_str();
  hand->add_option("--transcript", transcript, "Write the message transcript as JSON lines");

  auto* atk = app.add_subcommand("attack", "Run an adversary scenario and check its pass predicate");
  Common c_atk;
  c_atk.attach(atk, false);
  std::string attack_name;
  std::size_t attempts = 0;
  std::vector<std::string> attack_names{"all"};
  for (auto k : adversary::kAllAttacks) attack_names.emplace_back(adversary::name(k));
  atk->add_option("--scenario", attack_name, "Attack scenario name, or 'all' (default: the config's attack key)")
      ->check(CLI::IsMember(attack_names));
  atk->add_option("--attempts", attempts, "Attempts or trials (0 = scenario default)")->capture_default_str();
  atk->add_option("--transcript", transcript, "Write the last world's transcript as JSON lines");

  auto* pe = app.add_subcommand("puf-eval", "Evaluate simulated arbiter PUFs or CRP corpora");
  Common c_pe;
  c_pe.attach(pe);
  PufEvalArgs pargs;
  pe->add_option("--instances", pargs.instances, "Number of PUF instances")->capture_default_str();
  pe->add_option("--challenges", pargs.challenges, "Challenges per instance")->capture_default_str();
  pe->add_option("--repeats", pargs.repeats, "Repeated evaluations for reliability")->capture_default_str();
  pe->add_option("--temperature", pargs.temperature, "Noise scale factor standing in for temperature")
      ->capture_default_str();
  pe->add_option("--corpus-out", pargs.corpus_out, "Write instance 0's CRPs (challenge_hex,response_hex)");
  pe->add_option("--corpus-in", pargs.corpus_in, "Read CRP corpora instead of simulating (repeatable)")
      ->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("bench", "Authenticate N vehicles and report bytes and latency per vehicle");
  Common c_bench;
  c_bench.attach(bench);
  std::size_t runs = 1;
  bool timing = false;
  bench->add_option("--runs", runs, "Independent seeded runs")->capture_default_str();
  bench->add_flag("--timing", timing, "Add measured host compute time (not reproducible)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*reg) return cmd_register(c_reg, insecure);
    if (*auth) return cmd_auth(c_auth, transcript);
    if (*hand) return cmd_handover(c_hand, cross_at_ms, key_delay_ms, transcript, key_delay_opt->count() > 0);
    if (*atk) return cmd_attack(c_atk, attack_name, attempts, transcript);
    if (*pe) return cmd_puf_eval(c_pe, pargs);
    if (*bench) return cmd_bench(c_bench, runs, timing);
  } catch (const Error& e) {
    std::cerr << "easysec: " << e.what() << '\n';
    switch (e.code()) {
      case ErrorCode::Configuration:
      case ErrorCode::Parameter:
      case ErrorCode::Input: return kExitConfig;
      default: return kExitFailure;
    }
  }
  return kExitConfig;
}
