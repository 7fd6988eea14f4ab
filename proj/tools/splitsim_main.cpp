#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "splitsim/harness.hpp"
#include "splitsim/scenario.hpp"

using namespace splitsim;

namespace {

int kUsageError = 2;

std::string read_file(const std::string& path, bool& ok) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    ok = false;
    return {};
  }
  ok = true;
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) return false;
  out << body;
  return out.good();
}

int finish_scenario(const ScenarioResult& r, const std::string& trace_out) {
  for (const CheckResult& c : r.checks)
    std::cout << (c.pass ? "PASS " : "FAIL ") << r.name << "." << c.name
              << (c.detail.empty() ? "" : "  (" + c.detail + ")") << "\n";
  for (const auto& [k, v] : r.metrics) std::cout << "  " << k << " = " << v << "\n";
  std::cout << (r.pass ? "PASS" : "FAIL") << " scenario " << r.name << "\n";
  if (!trace_out.empty() && !write_file(trace_out, r.trace_jsonl)) {
    std::cerr << "cannot write trace to " << trace_out << "\n";
    return kUsageError;
  }
  return r.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"splitsim: a deterministic split-trust machine emulator and checker"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string manifest_path, trace_out, scenario_file, inject_spec;
  std::uint64_t max_ticks = 60000, seed = 1;

  app.add_option("--manifest", manifest_path, "machine manifest json file");
  app.add_option("--trace-out", trace_out, "write the jsonl trace here");
  app.add_option("--max-ticks", max_ticks, "tick budget for the run");
  app.add_option("--seed", seed, "seed for randomized harness inputs");
  app.add_option("--inject", inject_spec,
                 "comma-separated fault injections (stale-frame, undercut, tamper-image, "
                 "link-down, no-attacks)");

  CLI::App* boot = app.add_subcommand("boot", "boot the machine and check the choreography");

  CLI::App* run = app.add_subcommand("run", "run a named scenario");
  std::string scenario_name;
  run->add_option("scenario", scenario_name, "boot | banking | insulin | contention")
      ->required();
  std::uint32_t contention_k = 50;
  run->add_option("--k", contention_k, "contention session length in ticks");
  run->add_option("--scenario-file", scenario_file, "scenario options json file");

  CLI::App* check = app.add_subcommand("check", "bounded exhaustive verification");
  std::string bounds_name = "default";
  check->add_option("--bounds", bounds_name, "small | default | wide");
  std::string mutant_name_opt;
  check->add_option("--mutant", mutant_name_opt,
                    "run against a shipped mutant (unmetered-quota, skip-wipe-on-yield, "
                    "leaky-status, any-delegator, ignore-reset-guard, arbiter-stuck-dma)");
  std::string cex_out;
  check->add_option("--cex-out", cex_out, "write the first counterexample here");
  std::string replay_path;
  check->add_option("--replay", replay_path, "replay a counterexample json file");

  CLI::App* tcb = app.add_subcommand("tcb", "derive the trust report from a trace");
  std::string tcb_trace;
  tcb->add_option("trace", tcb_trace, "jsonl trace file")->required();
  bool tcb_json = false;
  tcb->add_flag("--json", tcb_json, "emit json instead of text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  ScenarioOptions opts;
  opts.max_ticks = max_ticks;
  opts.seed = seed;
  opts.contention_k = contention_k;
  if (!inject_spec.empty()) {
    std::size_t pos = 0;
    while (pos <= inject_spec.size()) {
      std::size_t comma = inject_spec.find(',', pos);
      if (comma == std::string::npos) comma = inject_spec.size();
      if (comma > pos) opts.inject.insert(inject_spec.substr(pos, comma - pos));
      pos = comma + 1;
    }
  }
  if (!manifest_path.empty()) {
    bool ok = false;
    std::string body = read_file(manifest_path, ok);
    if (!ok) {
      std::cerr << "cannot read manifest " << manifest_path << "\n";
      return kUsageError;
    }
    Result<MachineManifest> m = MachineManifest::from_json(body);
    if (!m.ok()) {
      std::cerr << "invalid manifest: " << manifest_path << "\n";
      return kUsageError;
    }
    std::string violation = m.value().validate();
    if (!violation.empty()) {
      std::cerr << "invalid manifest: " << violation << "\n";
      return kUsageError;
    }
    opts.manifest = m.take();
  }

  if (*boot) return finish_scenario(run_boot(opts), trace_out);

  if (*run) {
    std::string name = scenario_name;
    if (!scenario_file.empty()) {
      bool ok = false;
      std::string body = read_file(scenario_file, ok);
      if (!ok) {
        std::cerr << "cannot read scenario file " << scenario_file << "\n";
        return kUsageError;
      }
      auto parsed = parse_scenario_file(body);
      if (!parsed.ok()) {
        std::cerr << "invalid scenario file\n";
        return kUsageError;
      }
      name = parsed.value().first;
      ScenarioOptions file_opts = parsed.value().second;
      file_opts.inject.insert(opts.inject.begin(), opts.inject.end());
      if (opts.manifest) file_opts.manifest = opts.manifest;
      file_opts.seed = seed;
      opts = file_opts;
    }
    Result<ScenarioResult> r = run_scenario(name, opts);
    if (!r.ok()) {
      std::cerr << "unknown scenario: " << name << "\n";
      return kUsageError;
    }
    return finish_scenario(r.value(), trace_out);
  }

  if (*check) {
    if (!replay_path.empty()) {
      bool ok = false;
      std::string body = read_file(replay_path, ok);
      if (!ok) {
        std::cerr << "cannot read " << replay_path << "\n";
        return kUsageError;
      }
      auto cex = harness::Counterexample::from_json(body);
      if (!cex.ok()) {
        std::cerr << "invalid counterexample file\n";
        return kUsageError;
      }
      bool confirmed = harness::replay(cex.value());
      std::cout << (confirmed ? "confirmed" : "not-reproduced") << "\n";
      return confirmed ? 1 : 0;
    }

    harness::Bounds bounds;
    if (bounds_name == "small") {
      bounds.horizon = 5;
      bounds.msg_quotas = {std::nullopt, 1u};
      bounds.time_quotas = {1, 2};
    } else if (bounds_name == "wide") {
      bounds.depth = 3;
      bounds.horizon = 10;
    } else if (bounds_name != "default") {
      std::cerr << "unknown bounds preset: " << bounds_name << "\n";
      return kUsageError;
    }
    MailboxFaults mf;
    PlatformFaults pf;
    if (!mutant_name_opt.empty()) {
      bool found = false;
      for (harness::Mutant m : harness::kAllMutants)
        if (harness::mutant_name(m) == mutant_name_opt) {
          std::tie(mf, pf) = harness::mutant_faults(m);
          found = true;
        }
      if (!found) {
        std::cerr << "unknown mutant: " << mutant_name_opt << "\n";
        return kUsageError;
      }
    }
    auto r = harness::explore(bounds, mf, pf);
    if (!r.ok()) {
      std::cerr << "explore failed: " << err_name(r.error()) << "\n";
      return kUsageError;
    }
    const harness::Report& rep = r.value();
    std::cout << "states explored: " << rep.states_explored << "\n";
    std::cout << "transitions:     " << rep.transitions << "\n";
    for (const auto& [prop, count] : rep.per_property)
      std::cout << "VIOLATED " << prop << " (" << count << " transitions)\n";
    if (!rep.violations.empty()) {
      const harness::Counterexample& cex = rep.violations.front();
      std::cout << "first counterexample (" << cex.actions.size() << " actions), "
                << cex.property << ": " << cex.detail << "\n";
      for (const harness::Action& a : cex.actions) std::cout << "  " << a.describe() << "\n";
      if (!cex_out.empty() && !write_file(cex_out, cex.to_json())) {
        std::cerr << "cannot write " << cex_out << "\n";
        return kUsageError;
      }
    } else {
      std::cout << "no violations\n";
    }
    return rep.clean() ? 0 : 1;
  }

  if (*tcb) {
    bool ok = false;
    std::string body = read_file(tcb_trace, ok);
    if (!ok) {
      std::cerr << "cannot read trace " << tcb_trace << "\n";
      return kUsageError;
    }
    auto events = TraceLog::parse_jsonl(body);
    if (!events.ok()) {
      std::cerr << "invalid trace file\n";
      return kUsageError;
    }
    TcbReport rep = tcb_report(events.value());
    std::cout << (tcb_json ? rep.to_json() + "\n" : rep.to_text());
    return 0;
  }

  return kUsageError;
}
