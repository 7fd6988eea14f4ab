// End-to-end acceptance suite. Each criterion prints exactly one PASS/FAIL
// line; the process exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <memory>
#include <random>
#include <sstream>

#include "splitsim/harness.hpp"
#include "splitsim/proto.hpp"
#include "splitsim/resource_manager.hpp"
#include "splitsim/scenario.hpp"
#include "splitsim/services.hpp"
#include "splitsim/tee_runtime.hpp"
#include "splitsim/workload.hpp"

using namespace splitsim;

#ifndef SPLITSIM_SOURCE_DIR
#define SPLITSIM_SOURCE_DIR "."
#endif

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// --------------------------------------------------------------------------
// 1. Table-1 conformance at the default bounds, within the time budget.

Outcome table1_conformance() {
  auto t0 = std::chrono::steady_clock::now();
  auto r = harness::explore(harness::Bounds{});
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!r.ok()) return {false, "explore failed"};
  std::ostringstream os;
  os << r.value().states_explored << " states, " << r.value().transitions << " transitions, "
     << r.value().violations.size() << " violations, " << secs << "s";
  return {r.value().clean() && secs < 60.0, os.str()};
}

// --------------------------------------------------------------------------
// 2. Every shipped mutant yields a replayable counterexample of length <= 8.

Outcome mutation_sensitivity() {
  int caught = 0;
  std::string detail;
  for (harness::Mutant m : harness::kAllMutants) {
    auto [mf, pf] = harness::mutant_faults(m);
    auto r = harness::explore(harness::Bounds{}, mf, pf);
    bool ok = r.ok() && !r.value().clean() && r.value().violations.front().actions.size() <= 8 &&
              harness::replay(r.value().violations.front());
    if (ok) {
      ++caught;
      detail += std::string(harness::mutant_name(m)) + "(" +
                std::to_string(r.value().violations.front().actions.size()) + ") ";
    } else {
      detail += std::string(harness::mutant_name(m)) + "(MISSED) ";
    }
  }
  return {caught == 6, detail};
}

// --------------------------------------------------------------------------
// 3. Boot order and measurements, cross-checked with the python oracle.

Outcome boot_choreography() {
  ScenarioResult r = run_boot();
  if (!r.pass) return {false, "boot scenario failed"};
  auto trace = TraceLog::parse_jsonl(r.trace_jsonl);
  if (!trace.ok()) return {false, "trace unreadable"};

  // gather each domain's recorded (image, pcr) and the image bytes
  auto built = Machine::build(default_manifest());
  if (!built.ok()) return {false, "build failed"};
  std::unique_ptr<Machine> m = built.take();

  std::string input;
  std::vector<std::pair<std::string, std::string>> recorded;  // image -> pcr hex
  for (const TraceEvent& e : trace.value()) {
    if (e.event != "bootload") continue;
    std::string image = *e.str("image");
    recorded.emplace_back(image, *e.str("pcr"));
    input += image + " " + hex_encode(m->image(image).bytes) + "\n";
  }
  if (recorded.size() != default_manifest().domains.size())
    return {false, "missing bootload events"};

  std::string cmd = std::string("python3 ") + SPLITSIM_SOURCE_DIR + "/tools/refhash.py";
  FILE* pipe = popen((cmd + " > /tmp/splitsim_refhash.out").c_str(), "w");
  if (!pipe) return {false, "cannot run the reference hash script"};
  fwrite(input.data(), 1, input.size(), pipe);
  if (pclose(pipe) != 0) return {false, "reference hash script failed"};

  std::map<std::string, std::string> reference;
  if (FILE* out = fopen("/tmp/splitsim_refhash.out", "r")) {
    char name[64], hex[80];
    while (fscanf(out, "%63s %79s", name, hex) == 2) reference[name] = hex;
    fclose(out);
  }
  for (auto& [image, pcr] : recorded) {
    auto it = reference.find(image);
    if (it == reference.end() || it->second != pcr)
      return {false, "measurement mismatch for " + image};
  }
  return {true, std::to_string(recorded.size()) + " measurements match the oracle"};
}

// --------------------------------------------------------------------------
// 4. Freshness detection: injected pre-session frames always flagged, clean
//    grants never flagged.

struct ProbeCounts {
  int stale = 0;
  int verified = 0;
  int other = 0;
};

Task<void> freshness_probe(DomainCtx ctx, TeeRtConfig cfg, int trials,
                           std::shared_ptr<ProbeCounts> counts, std::uint64_t seed) {
  TeeRuntime rt(ctx, cfg);
  for (int i = 0; i < trials; ++i) {
    ByteWriter w;
    w.u64(seed);
    w.u32(static_cast<std::uint32_t>(i));
    Digest d = sha256(w.view());
    Nonce n{};
    std::copy(d.begin(), d.begin() + kNonceLen, n.begin());
    Result<TeeSession> s = co_await rt.request_and_verify(dom::kSerialOut, {8, 600}, n);
    if (s.ok()) {
      ++counts->verified;
      co_await rt.end_session(s.value());
    } else if (s.error() == Err::StaleDomain) {
      ++counts->stale;
    } else {
      ++counts->other;
    }
  }
  ctx.note("probe_done");
}

Outcome freshness_detection() {
  const int kTrials = 100;
  auto run_probe = [&](bool inject, std::shared_ptr<ProbeCounts> counts) -> bool {
    MachineManifest man = default_manifest();
    man.domains[dom::kTee1].image = "app_probe";
    man.images.push_back({"app_probe", 900});
    auto built = Machine::build(man);
    if (!built.ok()) return false;
    std::unique_ptr<Machine> m = built.take();
    m->trace_muted = true;
    register_default_services(*m);
    RmConfig rm;
    rm.shell = false;
    rm.inject_stale_frame = inject;
    rm.inject_seed = 0xfeed;
    register_resource_manager(*m, rm);
    register_workload(*m);
    TeeRtConfig cfg;
    cfg.device_key = m->device_key();
    for (const DomainDecl& d : man.domains)
      cfg.service_image_digest[d.id] = m->image_digest(d.image);
    std::uint64_t probe_seed = inject ? 11 : 22;
    m->register_program("app_probe", [cfg, counts, probe_seed](DomainCtx ctx) {
      return freshness_probe(ctx, cfg, kTrials, counts, probe_seed);
    });
    return m->step_until_note("probe_done", 400000).has_value();
  };

  auto injected = std::make_shared<ProbeCounts>();
  auto clean = std::make_shared<ProbeCounts>();
  if (!run_probe(true, injected)) return {false, "injected probe did not finish"};
  if (!run_probe(false, clean)) return {false, "clean probe did not finish"};
  std::ostringstream os;
  os << "injected: " << injected->stale << "/" << kTrials << " flagged; clean: "
     << clean->verified << "/" << kTrials << " verified";
  bool pass = injected->stale == kTrials && injected->verified == 0 &&
              clean->verified == kTrials && clean->stale == 0;
  return {pass, os.str()};
}

// --------------------------------------------------------------------------
// 5. Contention: the exclusion gap tracks the session length within one tick.

Outcome contention_gaps() {
  std::string detail;
  bool pass = true;
  for (std::uint32_t k : {10u, 50u, 200u}) {
    ScenarioOptions opts;
    opts.contention_k = k;
    ScenarioResult r = run_contention(opts);
    std::uint64_t gap = r.metric("gap_ticks").value_or(0);
    bool ok = r.pass && gap + 1 >= k && gap <= static_cast<std::uint64_t>(k) + 1;
    detail += "K=" + std::to_string(k) + ":gap=" + std::to_string(gap) + " ";
    if (!ok) pass = false;
  }
  return {pass, detail};
}

// --------------------------------------------------------------------------
// 6. Scenario suite with embedded attack injections.

Outcome scenario_suite() {
  ScenarioResult bank = run_banking();
  ScenarioResult ins = run_insulin();
  std::string detail;
  for (const ScenarioResult* r : {&bank, &ins})
    for (const CheckResult& c : r->checks)
      if (!c.pass) detail += r->name + "." + c.name + " ";
  const std::vector<std::string> required_bank = {
      "hijack-write-denied", "rogue-read-denied", "status-snoop-dummy",
      "reset-attempt-blocked", "stale-reuse-denied"};
  for (const std::string& name : required_bank)
    if (!bank.find(name) || !bank.find(name)->pass) detail += "bank-missing:" + name + " ";
  const std::vector<std::string> required_ins = {
      "pump-hijack-denied", "rogue-read-denied", "status-snoop-dummy",
      "reset-attempt-blocked", "stale-reuse-denied", "history-persisted"};
  for (const std::string& name : required_ins)
    if (!ins.find(name) || !ins.find(name)->pass) detail += "insulin-missing:" + name + " ";
  bool pass = bank.pass && ins.pass && detail.empty();
  return {pass, pass ? "banking and insulin green, all injections denied" : detail};
}

// --------------------------------------------------------------------------
// 7. Trust report: banking matches the published strong set, insulin adds
//    the manager and the storage domain under general availability.

Outcome tcb_reports() {
  ScenarioResult bank = run_banking();
  ScenarioResult ins = run_insulin();
  if (!bank.pass || !ins.pass) return {false, "scenarios failed"};
  TcbReport bt = tcb_report(TraceLog::parse_jsonl(bank.trace_jsonl).take());
  TcbReport it = tcb_report(TraceLog::parse_jsonl(ins.trace_jsonl).take());

  std::vector<std::string> expect = {"Prog", "mailbox", "reset-guard", "arbiter", "RoT"};
  for (const char* g : {"C", "I", "As"})
    if (!bt.find(g) || bt.find(g)->strong != expect)
      return {false, std::string("banking strong set wrong under ") + g};
  if (!bt.find("Ag")->strong.empty()) return {false, "banking claims general availability"};

  const TcbReport::Sets* ag = it.find("Ag");
  auto has = [&](const char* c) {
    return ag && std::find(ag->strong.begin(), ag->strong.end(), c) != ag->strong.end();
  };
  if (!has("RM") || !has("SD")) return {false, "insulin Ag set misses RM/SD"};
  return {true, "banking C/I/As = {Prog, mailbox, reset-guard, arbiter, RoT}; insulin Ag adds RM, SD"};
}

// --------------------------------------------------------------------------
// 8. Determinism: byte-identical traces across repeated runs.

Outcome determinism() {
  auto same = [](auto&& fn) {
    auto a = fn();
    auto b = fn();
    return a.trace_jsonl == b.trace_jsonl && !a.trace_jsonl.empty();
  };
  bool ok = same([] { return run_boot(); }) && same([] { return run_banking(); }) &&
            same([] { return run_insulin(); }) && same([] {
              ScenarioOptions o;
              o.contention_k = 50;
              return run_contention(o);
            });
  return {ok, "boot, banking, insulin, contention traces byte-identical across reruns"};
}

// --------------------------------------------------------------------------
// 9. Codec and crypto properties.

Outcome codec_crypto() {
  for (std::size_t n = 0; n <= kMaxPayload512; ++n) {
    Frame f;
    f.opcode = static_cast<std::uint16_t>(n * 7 + 1);
    f.payload.assign(n, static_cast<std::uint8_t>(n));
    auto back = Frame::decode(f.encode());
    if (!back.ok() || back.value().opcode != f.opcode || back.value().payload != f.payload)
      return {false, "frame round trip failed at payload " + std::to_string(n)};
  }
  Key key = derive_key("acceptance");
  Nonce nonce{};
  Bytes msg = to_bytes("the record under seal");
  Bytes sealed = ae_seal(key, nonce, msg);
  std::mt19937_64 rng(99);
  int rejected = 0;
  for (int i = 0; i < 1000; ++i) {
    Bytes mutated = sealed;
    mutated[rng() % mutated.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    if (!ae_open(key, nonce, mutated).ok()) ++rejected;
  }
  std::ostringstream os;
  os << "frames 0..508 round trip; " << rejected << "/1000 mutations rejected";
  return {rejected == 1000, os.str()};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "table1-conformance", table1_conformance},
      {2, "mutation-sensitivity", mutation_sensitivity},
      {3, "boot-choreography", boot_choreography},
      {4, "freshness-detection", freshness_detection},
      {5, "contention-gap", contention_gaps},
      {6, "scenario-suite", scenario_suite},
      {7, "tcb-report", tcb_reports},
      {8, "determinism", determinism},
      {9, "codec-crypto", codec_crypto},
  };
  bool all = true;
  for (const Criterion& c : criteria) {
    Outcome o = c.run();
    std::printf("%s criterion-%d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) all = false;
  }
  std::printf("%s acceptance\n", all ? "PASS" : "FAIL");
  return all ? 0 : 1;
}
