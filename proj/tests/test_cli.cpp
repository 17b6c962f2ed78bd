#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + EASYSEC_CLI_PATH + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  Run r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::set<std::string> help_flags(const std::string& sub) {
  const auto r = cli(sub + " --help");
  std::set<std::string> flags;
  const std::regex re(R"((--[a-z][a-z0-9-]*))");
  for (auto it = std::sregex_iterator(r.out.begin(), r.out.end(), re); it != std::sregex_iterator(); ++it)
    flags.insert((*it)[1]);
  return flags;
}

std::string write_temp(const std::string& name, const std::string& text) {
  const std::string path = std::string(::testing::TempDir()) + name;
  std::ofstream(path) << text;
  return path;
}

}  // namespace

TEST(Cli, EveryUsedFlagIsDocumented) {
  const std::vector<std::string> common{"--seed", "--vehicles", "--noise-sigma", "--config", "--output-format",
                                        "--out",  "--i-max",    "--grey-threshold", "--grey-cooldown", "--help"};
  const std::map<std::string, std::vector<std::string>> extra{
      {"register", {"--scenario", "--insecure"}},
      {"auth", {"--scenario", "--transcript"}},
      {"handover", {"--scenario", "--cross-at-ms", "--key-request-delay-ms", "--transcript"}},
      {"attack", {"--scenario", "--attempts", "--transcript"}},
      {"puf-eval", {"--scenario", "--instances", "--challenges", "--repeats", "--temperature", "--corpus-out", "--corpus-in"}},
      {"bench", {"--scenario", "--runs", "--timing"}},
  };
  for (const auto& [sub, flags] : extra) {
    const auto documented = help_flags(sub);
    for (const auto& f : common) EXPECT_TRUE(documented.contains(f)) << sub << " " << f;
    for (const auto& f : flags) EXPECT_TRUE(documented.contains(f)) << sub << " " << f;
    std::set<std::string> known(common.begin(), common.end());
    known.insert(flags.begin(), flags.end());
    for (const auto& f : documented) EXPECT_TRUE(known.contains(f)) << sub << " documents untested flag " << f;
  }
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, AuthReportsThirtyTwoBytes) {
  const auto r = cli("auth --seed 42 --vehicles 1 --output-format json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["rows"][0]["status"], "Authenticated");
  EXPECT_EQ(j["rows"][0]["phase1_bytes"], 10);
  EXPECT_EQ(j["rows"][0]["phase2_bytes"], 14);
  EXPECT_EQ(j["rows"][0]["phase3_bytes"], 8);
  EXPECT_EQ(j["rows"][0]["total_bytes"], 32);
  EXPECT_EQ(j["summary"]["bytes_per_run"]["total"], 32);
}

TEST(Cli, AuthSummaryIsPerRun) {
  const auto r = cli("auth --seed 42 --vehicles 5 --output-format json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["summary"]["runs"], 5);
  EXPECT_EQ(j["summary"]["bytes_per_run"]["total"], 32);
}

TEST(Cli, BenchCsvHasOneRowPerVehicle) {
  const auto r = cli("bench --vehicles 10 --seed 7 --output-format csv");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "run,vehicle,status,phase1_bytes,phase2_bytes,phase3_bytes,total_bytes,latency_us");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_NE(line.find(",Authenticated,10,14,8,32,"), std::string::npos) << line;
  }
  EXPECT_EQ(rows, 10);
}

TEST(Cli, ClientImpersonationAttackExitsCleanly) {
  const auto r = cli("attack --scenario client-impersonation --seed 1 --attempts 2000 --output-format json");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(nlohmann::json::parse(r.out)["rows"][0]["successes"], 0);
}

TEST(Cli, FailedPredicateExitsOne) {
  // Key request after the PID lifetime: the handover is refused.
  EXPECT_EQ(cli("handover --seed 3 --key-request-delay-ms 61000").code, 1);
  EXPECT_EQ(cli("register --seed 3 --insecure").code, 1);
}

TEST(Cli, MachineOutputIsReproducible) {
  for (const std::string args : {"auth --seed 5 --vehicles 3 --output-format json",
                                 "bench --seed 5 --vehicles 4 --runs 2 --output-format csv",
                                 "handover --seed 5 --vehicles 2 --output-format json",
                                 "puf-eval --seed 5 --instances 3 --challenges 50 --noise-sigma 0.05 --output-format json",
                                 "attack --scenario mitm --seed 5 --attempts 20 --output-format csv"}) {
    const auto a = cli(args), b = cli(args);
    EXPECT_EQ(a.out, b.out) << args;
    EXPECT_FALSE(a.out.empty());
  }
}

TEST(Cli, SeedFallsBackToEnvironment) {
  const auto flag = cli("auth --seed 11 --output-format csv");
  const auto env = cli("auth --output-format csv", "EASYSEC_SEED=11");
  EXPECT_EQ(flag.code, 0);
  EXPECT_EQ(flag.out, env.out);
  EXPECT_EQ(cli("auth").code, 2);
}

TEST(Cli, ConfigurationErrorsExitTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("fly --seed 1").code, 2);
  EXPECT_EQ(cli("auth --seed 1 --bogus").code, 2);
  EXPECT_EQ(cli("auth --seed 1 --output-format xml").code, 2);
  EXPECT_EQ(cli("attack --seed 1 --scenario ddos").code, 2);
  EXPECT_EQ(cli("auth --seed 1 --i-max 0").code, 2);
  const auto bad = write_temp("bad_scenario.txt", "colour = red\n");
  const auto r = cli("auth --seed 1 --scenario " + bad);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("unknown scenario key"), std::string::npos);
}

TEST(Cli, FlagsOverrideFiles) {
  const auto cfg = write_temp("cfg.txt", "seed = 4\nvehicles = 3\n");
  const auto from_file = cli("auth --config " + cfg + " --output-format json");
  ASSERT_EQ(from_file.code, 0) << from_file.out;
  EXPECT_EQ(nlohmann::json::parse(from_file.out)["rows"].size(), 3u);
  const auto overridden = cli("auth --config " + cfg + " --vehicles 2 --output-format json");
  EXPECT_EQ(nlohmann::json::parse(overridden.out)["rows"].size(), 2u);
}

TEST(Cli, AttackFromConfig) {
  const auto cfg = write_temp("atk.txt", "seed = 3\nattack = replay-phase1\nattack_attempts = 5\n");
  const auto r = cli("attack --config " + cfg + " --output-format json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["rows"][0]["scenario"], "replay-phase1");
  EXPECT_EQ(j["rows"][0]["attempts"], 5);
  EXPECT_EQ(cli("attack --seed 1").code, 2);
}

TEST(Cli, OutAndTranscriptFiles) {
  const std::string out = std::string(::testing::TempDir()) + "auth.csv";
  const std::string tr = std::string(::testing::TempDir()) + "auth.jsonl";
  ASSERT_EQ(cli("auth --seed 2 --output-format csv --out " + out + " --transcript " + tr).code, 0);
  std::ifstream f(out), t(tr);
  std::string header, line;
  std::getline(f, header);
  EXPECT_EQ(header.rfind("flow,vehicle,status", 0), 0u);
  int n = 0;
  while (std::getline(t, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("bytes_hex"));
    ++n;
  }
  EXPECT_EQ(n, 9);
}

TEST(Cli, PufEvalCorpusRoundTrip) {
  const std::string a = std::string(::testing::TempDir()) + "c_a.csv";
  const std::string b = std::string(::testing::TempDir()) + "c_b.csv";
  ASSERT_EQ(cli("puf-eval --seed 1 --instances 2 --challenges 64 --corpus-out " + a).code, 0);
  ASSERT_EQ(cli("puf-eval --seed 2 --instances 2 --challenges 64 --corpus-out " + b).code, 0);
  // Different seeds draw different challenge sets: rejected as input error.
  EXPECT_EQ(cli("puf-eval --corpus-in " + a + " --corpus-in " + b).code, 2);
  const auto r = cli("puf-eval --corpus-in " + a + " --output-format json");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(nlohmann::json::parse(r.out)["rows"][0]["metric"], "randomness");
}
