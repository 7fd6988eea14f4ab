#pragma once

#include <set>

#include "splitsim/machine.hpp"

namespace splitsim {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ScenarioResult {
  std::string name;
  bool pass = false;
  std::vector<CheckResult> checks;
  std::vector<std::pair<std::string, std::uint64_t>> metrics;  // phase ticks, gaps
  std::string trace_jsonl;

  std::string to_json() const;  // without the trace body
  const CheckResult* find(std::string_view check) const {
    for (const CheckResult& c : checks)
      if (c.name == check) return &c;
    return nullptr;
  }
  std::optional<std::uint64_t> metric(std::string_view key) const {
    for (const auto& [k, v] : metrics)
      if (k == key) return v;
    return std::nullopt;
  }
};

struct ScenarioOptions {
  std::uint64_t max_ticks = 60000;
  std::uint64_t seed = 1;
  std::set<std::string> inject;  // stale-frame undercut tamper-image link-down no-attacks
  std::string ui_secret = "TANGERINE-OWL";
  std::vector<std::uint32_t> glucose = {120, 180, 90, 240, 150};
  std::uint32_t periods = 5;
  std::uint32_t contention_k = 50;
  std::uint32_t contention_sessions = 1;
  std::optional<MachineManifest> manifest;
};

ScenarioResult run_boot(const ScenarioOptions& opts = {});
ScenarioResult run_banking(const ScenarioOptions& opts = {});
ScenarioResult run_insulin(const ScenarioOptions& opts = {});
ScenarioResult run_contention(const ScenarioOptions& opts = {});

/// Dispatch by name: boot, banking, insulin, contention.
Result<ScenarioResult> run_scenario(const std::string& name, const ScenarioOptions& opts = {});

/// Loads scenario options from a JSON file body (see docs/formats.md).
Result<std::pair<std::string, ScenarioOptions>> parse_scenario_file(const std::string& text);

// ---------------------------------------------------------------------------
// Trust accounting over a finished trace.

struct TcbReport {
  struct Sets {
    std::vector<std::string> strong;
    std::vector<std::string> weak;
  };
  // guarantee -> component sets; keys C, I, As, Ag
  std::vector<std::pair<std::string, Sets>> guarantees;

  const Sets* find(std::string_view guarantee) const {
    for (const auto& [g, s] : guarantees)
      if (g == guarantee) return &s;
    return nullptr;
  }
  std::string to_json() const;
  std::string to_text() const;
};

/// Derives, per guarantee, which components the program's owner had to trust
/// strongly or weakly, from the components the trace shows were touched.
TcbReport tcb_report(const std::vector<TraceEvent>& trace);

/// Fixed published dosing policy: clamp((glucose - 100) / 2, 0, 40) units.
std::uint32_t insulin_dose(std::uint32_t glucose);

}  // namespace splitsim
