#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "splitsim/harness.hpp"
#include "splitsim/scenario.hpp"

namespace py = pybind11;
using namespace splitsim;

namespace {

py::dict scenario_result_dict(const ScenarioResult& r) {
  py::dict out;
  out["scenario"] = r.name;
  out["pass"] = r.pass;
  py::list checks;
  for (const CheckResult& c : r.checks) {
    py::dict jc;
    jc["name"] = c.name;
    jc["pass"] = c.pass;
    jc["detail"] = c.detail;
    checks.append(jc);
  }
  out["checks"] = checks;
  py::dict metrics;
  for (const auto& [k, v] : r.metrics) metrics[py::str(k)] = v;
  out["metrics"] = metrics;
  out["trace_jsonl"] = r.trace_jsonl;
  return out;
}

ScenarioOptions options_from_kwargs(std::uint64_t max_ticks, std::uint64_t seed,
                                    const std::vector<std::string>& inject, std::uint32_t k,
                                    std::uint32_t periods) {
  ScenarioOptions opts;
  opts.max_ticks = max_ticks;
  opts.seed = seed;
  opts.inject.insert(inject.begin(), inject.end());
  opts.contention_k = k;
  opts.periods = periods;
  return opts;
}

}  // namespace

PYBIND11_MODULE(splitsim, m) {
  m.doc() = "deterministic split-trust machine emulator and checker";

  m.def(
      "run_scenario",
      [](const std::string& name, std::uint64_t max_ticks, std::uint64_t seed,
         const std::vector<std::string>& inject, std::uint32_t k, std::uint32_t periods) {
        Result<ScenarioResult> r =
            run_scenario(name, options_from_kwargs(max_ticks, seed, inject, k, periods));
        if (!r.ok()) throw py::value_error("unknown scenario: " + name);
        return scenario_result_dict(r.value());
      },
      py::arg("name"), py::arg("max_ticks") = 60000, py::arg("seed") = 1,
      py::arg("inject") = std::vector<std::string>{}, py::arg("k") = 50,
      py::arg("periods") = 5,
      "Run a named scenario (boot, banking, insulin, contention) and return its result.");

  m.def(
      "check",
      [](const std::string& mutant) {
        MailboxFaults mf;
        PlatformFaults pf;
        if (!mutant.empty()) {
          bool found = false;
          for (harness::Mutant mu : harness::kAllMutants)
            if (harness::mutant_name(mu) == mutant) {
              std::tie(mf, pf) = harness::mutant_faults(mu);
              found = true;
            }
          if (!found) throw py::value_error("unknown mutant: " + mutant);
        }
        auto r = harness::explore(harness::Bounds{}, mf, pf);
        if (!r.ok()) throw py::value_error("bounds rejected");
        py::dict out;
        out["states_explored"] = r.value().states_explored;
        out["transitions"] = r.value().transitions;
        out["clean"] = r.value().clean();
        py::list viols;
        for (const harness::Counterexample& cex : r.value().violations) {
          py::dict v;
          v["property"] = cex.property;
          v["detail"] = cex.detail;
          v["length"] = cex.actions.size();
          v["json"] = cex.to_json();
          viols.append(v);
          if (viols.size() >= 8) break;
        }
        out["violations"] = viols;
        return out;
      },
      py::arg("mutant") = "",
      "Bounded exhaustive verification at the default bounds; optionally against a mutant.");

  m.def(
      "replay",
      [](const std::string& cex_json) {
        auto cex = harness::Counterexample::from_json(cex_json);
        if (!cex.ok()) throw py::value_error("invalid counterexample json");
        return harness::replay(cex.value());
      },
      py::arg("cex_json"), "Replay a serialized counterexample; True when it reproduces.");

  m.def(
      "tcb_report",
      [](const std::string& trace_jsonl) {
        auto events = TraceLog::parse_jsonl(trace_jsonl);
        if (!events.ok()) throw py::value_error("invalid trace");
        TcbReport rep = tcb_report(events.value());
        py::dict out;
        for (const auto& [g, s] : rep.guarantees) {
          py::dict sets;
          sets["strong"] = s.strong;
          sets["weak"] = s.weak;
          out[py::str(g)] = sets;
        }
        return out;
      },
      py::arg("trace_jsonl"), "Derive the per-guarantee trust sets from a trace.");

  m.def("default_manifest_json", [] { return default_manifest().to_json(); },
        "The prototype machine manifest as json.");

  m.def("mutants", [] {
    std::vector<std::string> names;
    for (harness::Mutant mu : harness::kAllMutants)
      names.emplace_back(harness::mutant_name(mu));
    return names;
  });

  // the hardware mailbox itself, for interactive exploration
  py::class_<Mailbox>(m, "Mailbox")
      .def(py::init([](std::uint32_t depth, std::uint32_t msg_size, bool fixed_writer) {
             MailboxConfig c;
             c.id = 0;
             c.fixed_end = 1;
             c.fixed_role = fixed_writer ? FixedRole::FixedWriter : FixedRole::FixedReader;
             c.wired_delegates = {0, 2, 3};
             c.depth = depth;
             c.msg_size = msg_size;
             c.rm = 0;
             Result<Mailbox> r = Mailbox::create(std::move(c));
             if (!r.ok()) throw py::value_error("invalid mailbox config");
             return r.take();
           }),
           py::arg("depth") = 4, py::arg("msg_size") = 64, py::arg("fixed_writer") = false)
      .def("delegate",
           [](Mailbox& mb, int caller, int target, std::optional<std::uint32_t> msgs,
              std::uint64_t deadline, std::uint64_t now) {
             return std::string(err_name(mb.delegate_to(
                 static_cast<DomainId>(caller), static_cast<DomainId>(target),
                 Quota{msgs, deadline}, now)));
           },
           py::arg("caller"), py::arg("target"), py::arg("msgs"), py::arg("deadline"),
           py::arg("now") = 0)
      .def("yield_access",
           [](Mailbox& mb, int caller, std::uint64_t now) {
             return std::string(err_name(mb.yield_access(static_cast<DomainId>(caller), now)));
           },
           py::arg("caller"), py::arg("now") = 0)
      .def("write",
           [](Mailbox& mb, int caller, py::bytes msg, std::uint64_t now) {
             std::string raw = msg;
             Bytes payload(raw.begin(), raw.end());
             return std::string(err_name(mb.write(static_cast<DomainId>(caller), payload, now)));
           },
           py::arg("caller"), py::arg("msg"), py::arg("now") = 0)
      .def("read",
           [](Mailbox& mb, int caller, std::uint64_t now) -> py::object {
             Result<Bytes> r = mb.read(static_cast<DomainId>(caller), now);
             if (!r.ok()) return py::str(std::string(err_name(r.error())));
             return py::bytes(reinterpret_cast<const char*>(r.value().data()),
                              r.value().size());
           },
           py::arg("caller"), py::arg("now") = 0)
      .def("status",
           [](Mailbox& mb, int caller, std::uint64_t now) {
             MailboxStatus s = mb.read_status(static_cast<DomainId>(caller), now);
             py::dict out;
             out["is_dummy"] = s.is_dummy;
             if (s.owner) out["owner"] = *s.owner;
             if (s.msgs_left) out["msgs_left"] = *s.msgs_left;
             else out["msgs_left"] = py::none();
             out["time_left"] = s.time_left;
             return out;
           },
           py::arg("caller"), py::arg("now") = 0)
      .def("expire_check", &Mailbox::expire_check, py::arg("now"))
      .def("hw_reset", &Mailbox::hw_reset)
      .def_property_readonly("owner", &Mailbox::owner)
      .def_property_readonly("default_owned", &Mailbox::default_owned);
}
