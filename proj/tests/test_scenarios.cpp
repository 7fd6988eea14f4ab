#include "splitsim/scenario.hpp"

#include "doctest.h"

using namespace splitsim;

namespace {
std::string failing_checks(const ScenarioResult& r) {
  std::string out;
  for (const CheckResult& c : r.checks)
    if (!c.pass) out += c.name + "(" + c.detail + ") ";
  return out;
}
}  // namespace

TEST_CASE("boot scenario passes") {
  ScenarioResult r = run_boot();
  INFO(failing_checks(r));
  CHECK(r.pass);
  CHECK(r.metric("boot_ticks").has_value());
}

TEST_CASE("banking scenario passes with all attacks failing") {
  ScenarioResult r = run_banking();
  INFO(failing_checks(r));
  CHECK(r.pass);
  CHECK(r.find("secret-once")->pass);
  CHECK(r.find("hijack-write-denied")->pass);
  CHECK(r.find("stale-reuse-denied")->pass);
  CHECK(r.metric("launch_ticks").has_value());
}

TEST_CASE("banking detects an undercut delegation") {
  ScenarioOptions opts;
  opts.inject = {"undercut"};
  ScenarioResult r = run_banking(opts);
  INFO(failing_checks(r));
  CHECK(r.pass);
}

TEST_CASE("banking rejects a tampered program image") {
  ScenarioOptions opts;
  opts.inject = {"tamper-image"};
  ScenarioResult r = run_banking(opts);
  INFO(failing_checks(r));
  CHECK(r.pass);
}

TEST_CASE("banking flags a pre-used domain") {
  ScenarioOptions opts;
  opts.inject = {"stale-frame"};
  ScenarioResult r = run_banking(opts);
  INFO(failing_checks(r));
  CHECK(r.pass);
}

TEST_CASE("insulin scenario: five periods, history intact, hijacks fail") {
  ScenarioResult r = run_insulin();
  INFO(failing_checks(r));
  CHECK(r.pass);
  CHECK(r.find("doses-delivered")->pass);
  CHECK(r.find("history-persisted")->pass);
  CHECK(r.find("reset-attempt-blocked")->pass);
}

TEST_CASE("insulin dosing policy") {
  CHECK(insulin_dose(100) == 0);
  CHECK(insulin_dose(90) == 0);
  CHECK(insulin_dose(120) == 10);
  CHECK(insulin_dose(180) == 40);
  CHECK(insulin_dose(240) == 40);
  CHECK(insulin_dose(150) == 25);
}

TEST_CASE("contention gap tracks the session length") {
  ScenarioOptions opts;
  opts.contention_k = 50;
  ScenarioResult r = run_contention(opts);
  INFO(failing_checks(r));
  CHECK(r.pass);
  std::uint64_t gap = *r.metric("gap_ticks");
  CHECK(gap + 1 >= 50);
  CHECK(gap <= 51);
}

TEST_CASE("contention with no session reports no gap") {
  ScenarioOptions opts;
  opts.contention_k = 0;
  opts.max_ticks = 4000;
  ScenarioResult r = run_contention(opts);
  INFO(failing_checks(r));
  CHECK(r.pass);
  CHECK(*r.metric("gap_ticks") == 0);
}

TEST_CASE("tcb report: banking matches the strong set, insulin adds RM and SD") {
  ScenarioResult bank = run_banking();
  REQUIRE(bank.pass);
  auto bank_trace = TraceLog::parse_jsonl(bank.trace_jsonl);
  REQUIRE(bank_trace.ok());
  TcbReport bt = tcb_report(bank_trace.value());
  std::vector<std::string> expect = {"Prog", "mailbox", "reset-guard", "arbiter", "RoT"};
  CHECK(bt.find("C")->strong == expect);
  CHECK(bt.find("I")->strong == expect);
  CHECK(bt.find("As")->strong == expect);
  CHECK(bt.find("Ag")->strong.empty());  // no cross-session storage in banking
  CHECK(bt.find("C")->weak == std::vector<std::string>{"Proc", "Mem", "I/O", "interconnects"});

  ScenarioResult ins = run_insulin();
  REQUIRE(ins.pass);
  auto ins_trace = TraceLog::parse_jsonl(ins.trace_jsonl);
  REQUIRE(ins_trace.ok());
  TcbReport it = tcb_report(ins_trace.value());
  const TcbReport::Sets* ag = it.find("Ag");
  REQUIRE(ag != nullptr);
  auto has = [&](const std::string& c) {
    return std::find(ag->strong.begin(), ag->strong.end(), c) != ag->strong.end();
  };
  CHECK(has("RM"));
  CHECK(has("SD"));
  CHECK(has("Prog"));

  TcbReport empty = tcb_report({});
  CHECK(empty.find("C")->strong.empty());
  CHECK(empty.find("Ag")->strong.empty());
}

TEST_CASE("scenario determinism: identical runs produce identical traces") {
  ScenarioResult a = run_banking();
  ScenarioResult b = run_banking();
  CHECK(a.trace_jsonl == b.trace_jsonl);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("scenario file parsing") {
  auto parsed = parse_scenario_file(R"({"scenario":"contention","k":10,"seed":7})");
  REQUIRE(parsed.ok());
  CHECK(parsed.value().first == "contention");
  CHECK(parsed.value().second.contention_k == 10);
  CHECK(parsed.value().second.seed == 7);
  CHECK_FALSE(parse_scenario_file("not json").ok());
  CHECK_FALSE(run_scenario("unknown").ok());
}

TEST_CASE("two back-to-back holder sessions produce two gaps in turn") {
  ScenarioOptions opts;
  opts.contention_k = 20;
  opts.contention_sessions = 2;
  ScenarioResult r = run_contention(opts);
  INFO(failing_checks(r));
  CHECK(r.pass);
  std::uint64_t g1 = *r.metric("gap_ticks");
  std::uint64_t g2 = *r.metric("gap_ticks_2");
  CHECK(g1 + 1 >= 20);
  CHECK(g1 <= 21);
  CHECK(g2 + 1 >= 20);
  CHECK(g2 <= 21);
  CHECK(r.find("gaps-fifo-order")->pass);
}
