#include "splitsim/harness.hpp"

#include <algorithm>
#include <deque>
#include <set>
#include <sstream>

#include "json.hpp"

namespace splitsim::harness {

namespace {

using Json = nlohmann::ordered_json;

constexpr DomainId kRm = 0;
constexpr DomainId kFixed = 1;
constexpr DomainId kUntrustedStandIn = 3;  // the highest delegate models it

// ---------------------------------------------------------------------------
// The oracle: an independent statement of the contract, written against the
// published behavior rather than the production sources.

struct OracleState {
  DomainId owner = kRm;
  bool is_default = true;
  std::optional<std::uint32_t> msgs;
  std::uint32_t time_left = 0;
  std::vector<std::uint8_t> fifo;
  bool slots_clean = true;  // no residue outside the queue

  bool operator==(const OracleState&) const = default;

  void revert() {
    owner = kRm;
    is_default = true;
    msgs.reset();
    time_left = 0;
    fifo.clear();
    slots_clean = true;
  }
};

struct Oracle {
  OracleState st;
  FixedRole role;
  std::uint32_t depth;

  DomainId writer() const { return role == FixedRole::FixedWriter ? kFixed : st.owner; }
  DomainId reader() const { return role == FixedRole::FixedReader ? kFixed : st.owner; }

  void meter(DomainId actor) {
    if (st.is_default || actor != st.owner || !st.msgs) return;
    if (--*st.msgs == 0) revert_now();
  }
  void revert_now() { st.revert(); }

  // expected outcome + state change per action
  Err tick() {
    if (!st.is_default && --st.time_left == 0) st.revert();
    return Err::Ok;
  }
  Err delegate(DomainId caller, DomainId target, std::optional<std::uint32_t> msgs,
               std::uint32_t dt) {
    if (caller != kRm) return Err::NotOwner;
    if (!st.is_default) return Err::NotOwner;
    if (target == kFixed || target == kRm) return Err::NotWired;
    if (dt == 0) return Err::BadDeadline;
    st.owner = target;
    st.is_default = false;
    st.msgs = msgs;
    st.time_left = dt;
    st.fifo.clear();
    st.slots_clean = true;
    return Err::Ok;
  }
  Err yield(DomainId caller) {
    if (st.is_default || caller != st.owner) return Err::NotOwner;
    st.revert();
    return Err::Ok;
  }
  Err write(DomainId caller, std::uint8_t sym) {
    if (caller != writer()) return Err::NoAccess;
    if (st.fifo.size() >= depth) return Err::QueueFull;
    st.fifo.push_back(sym);
    meter(caller);
    return Err::Ok;
  }
  Err read(DomainId caller, std::uint8_t& out) {
    if (caller != reader()) return Err::NoAccess;
    if (st.fifo.empty()) return Err::QueueEmpty;
    out = st.fifo.front();
    st.fifo.erase(st.fifo.begin());
    meter(caller);
    return Err::Ok;
  }
  MailboxStatus status(DomainId caller) const {
    if (caller != st.owner && caller != kFixed) return MailboxStatus::dummy();
    MailboxStatus s;
    s.owner = st.owner;
    if (st.is_default) {
      s.msgs_left = std::nullopt;
      s.time_left = kUnboundedTime;
    } else {
      s.msgs_left = st.msgs;
      s.time_left = st.time_left;
    }
    return s;
  }
  // balance of the reset flow: blocked while a live session involves target
  Err reset(DomainId caller, DomainId target) {
    if (caller != kRm) return Err::NotRm;
    if (!st.is_default && (target == st.owner || target == kFixed)) return Err::Blocked;
    if (target == kFixed || target == st.owner) {
      st.fifo.clear();
      st.slots_clean = true;
    }
    return Err::Ok;
  }
  Route route() const { return st.owner == kUntrustedStandIn ? Route::DmaPath : Route::FifoPath; }
};

// ---------------------------------------------------------------------------
// One walker: the oracle and the production mailbox stepped in lockstep.

struct Walker {
  Oracle oracle;
  std::vector<Mailbox> prod;  // exactly one mailbox; a vector for the guard fn
  Tick now = 0;
  PlatformFaults plat;

  Mailbox& mb() { return prod.front(); }
  const Mailbox& mb() const { return prod.front(); }
};

MailboxConfig harness_config(FixedRole role, const Bounds& b) {
  MailboxConfig c;
  c.id = 0;
  c.fixed_end = kFixed;
  c.fixed_role = role;
  for (std::uint8_t d = 0; d < b.n_domains; ++d)
    if (d != kFixed) c.wired_delegates.push_back(d);
  c.depth = b.depth;
  c.msg_size = 1;
  c.rm = kRm;
  return c;
}

// canonical projection of the production mailbox, for conformance compares
OracleState project(const Mailbox& mb, Tick now) {
  OracleState s;
  s.owner = mb.owner();
  s.is_default = mb.default_owned();
  if (mb.quota()) {
    s.msgs = mb.quota()->msgs;
    s.time_left =
        mb.quota()->deadline > now ? static_cast<std::uint32_t>(mb.quota()->deadline - now) : 0;
  }
  for (const Bytes& msg : mb.peek_queue()) s.fifo.push_back(msg.empty() ? 0 : msg[0]);
  s.slots_clean = mb.unused_slots_zero();
  return s;
}

struct StepOutcome {
  Err oracle_result = Err::Ok;
  Err prod_result = Err::Ok;
  std::vector<Violation> violations;
};

void check(StepOutcome& out, bool ok, std::string property, std::string detail) {
  if (!ok) out.violations.push_back({std::move(property), std::move(detail)});
}

// Applies one action to both sides and evaluates every property on the
// transition. This is shared by the explorer and by counterexample replay.
StepOutcome apply_action(Walker& w, const Action& a) {
  StepOutcome out;
  OracleState before = w.oracle.st;
  OracleState prod_before = project(w.mb(), w.now);
  bool metered_possible = !before.is_default && before.msgs.has_value();
  std::uint32_t msgs_before = metered_possible ? *before.msgs : 0;

  std::uint8_t oracle_read = 0;
  Bytes prod_read;
  MailboxStatus oracle_status, prod_status;

  switch (a.kind) {
    case Action::Kind::Tick: {
      out.oracle_result = w.oracle.tick();
      ++w.now;
      w.mb().expire_check(w.now);
      out.prod_result = Err::Ok;
      break;
    }
    case Action::Kind::Delegate: {
      out.oracle_result = w.oracle.delegate(a.caller, a.target, a.msgs, a.dt);
      out.prod_result =
          w.mb().delegate_to(a.caller, a.target, Quota{a.msgs, w.now + a.dt}, w.now);
      break;
    }
    case Action::Kind::Yield: {
      out.oracle_result = w.oracle.yield(a.caller);
      out.prod_result = w.mb().yield_access(a.caller, w.now);
      break;
    }
    case Action::Kind::Write: {
      out.oracle_result = w.oracle.write(a.caller, a.sym);
      out.prod_result = w.mb().write(a.caller, Bytes{a.sym}, w.now);
      break;
    }
    case Action::Kind::Read: {
      out.oracle_result = w.oracle.read(a.caller, oracle_read);
      Result<Bytes> r = w.mb().read(a.caller, w.now);
      out.prod_result = r.ok() ? Err::Ok : r.error();
      if (r.ok()) prod_read = r.take();
      break;
    }
    case Action::Kind::Status: {
      oracle_status = w.oracle.status(a.caller);
      prod_status = w.mb().read_status(a.caller, w.now);
      out.oracle_result = Err::Ok;
      out.prod_result = Err::Ok;
      break;
    }
    case Action::Kind::Reset: {
      out.oracle_result = w.oracle.reset(a.caller, a.target);
      if (a.caller != kRm) {
        out.prod_result = Err::NotRm;
      } else {
        std::optional<MailboxId> blocker = reset_guard_blocker(w.prod, a.target, w.now);
        if (blocker && !w.plat.ignore_reset_guard) {
          out.prod_result = Err::Blocked;
        } else {
          out.prod_result = Err::Ok;
          if (a.target == w.mb().config().fixed_end || a.target == w.mb().owner())
            w.mb().hw_reset();
        }
      }
      break;
    }
  }

  OracleState after = w.oracle.st;
  OracleState prod_after = project(w.mb(), w.now);

  // model-vs-implementation conformance
  check(out, out.oracle_result == out.prod_result, "conformance",
        "result mismatch on " + a.describe() + ": oracle " +
            std::string(err_name(out.oracle_result)) + ", production " +
            std::string(err_name(out.prod_result)));
  check(out, after == prod_after, "conformance", "state mismatch after " + a.describe());

  bool actor_authorized =
      a.kind == Action::Kind::Tick ||
      (before.is_default ? a.caller == kRm : a.caller == before.owner);

  // 1. outsiders never move the owner or the quota
  if (a.kind != Action::Kind::Tick && !actor_authorized) {
    check(out,
          prod_after.owner == prod_before.owner &&
              prod_after.is_default == prod_before.is_default &&
              prod_after.msgs == prod_before.msgs &&
              prod_after.time_left == prod_before.time_left,
          "inv-01", "outsider action changed ownership: " + a.describe());
  }
  // 2. guaranteed access while the quota holds and no yield was issued
  if (!before.is_default && before.owner != kRm &&
      !(a.kind == Action::Kind::Yield && a.caller == before.owner)) {
    std::uint32_t time_after = before.time_left - (a.kind == Action::Kind::Tick ? 1 : 0);
    bool metered_op = (a.kind == Action::Kind::Write || a.kind == Action::Kind::Read) &&
                      a.caller == before.owner && out.prod_result == Err::Ok;
    bool msgs_after_pos = !before.msgs || *before.msgs > (metered_op ? 1u : 0u);
    if (time_after > 0 && msgs_after_pos)
      check(out, prod_after.owner == before.owner && !prod_after.is_default, "inv-02",
            "session lost without yield or expiry: " + a.describe());
  }
  // 3. reads return what was written, in order
  if (a.kind == Action::Kind::Read && out.prod_result == Err::Ok) {
    check(out, prod_read.size() == 1 && prod_read[0] == oracle_read, "inv-03",
          "read returned the wrong bytes");
  }
  // 4. denied data operations leave the queue untouched
  if ((a.kind == Action::Kind::Read || a.kind == Action::Kind::Write) &&
      out.prod_result == Err::NoAccess) {
    check(out, prod_after.fifo == prod_before.fifo, "inv-04",
          "denied operation disturbed the queue");
  }
  // 5. metering: each successful metered op consumes exactly one message
  if ((a.kind == Action::Kind::Write || a.kind == Action::Kind::Read) &&
      out.prod_result == Err::Ok && a.caller == before.owner && metered_possible) {
    bool consumed = prod_after.is_default ? msgs_before == 1
                                          : prod_after.msgs && *prod_after.msgs == msgs_before - 1;
    check(out, msgs_before >= 1 && consumed, "inv-05",
          "quota not metered on " + a.describe());
  }
  // 6. at or past the deadline the manager owns the mailbox
  if (a.kind == Action::Kind::Tick && !before.is_default && before.time_left == 1)
    check(out, prod_after.is_default, "inv-06", "session survived its deadline");
  // 7/8/12. the status register: exact for owner and fixed end, dummy for rest
  if (a.kind == Action::Kind::Status) {
    if (a.caller == before.owner)
      check(out, prod_status == oracle_status && !prod_status.is_dummy, "inv-07",
            "owner saw a wrong status");
    else if (a.caller == kFixed)
      check(out, prod_status == oracle_status && !prod_status.is_dummy, "inv-08",
            "fixed end saw a wrong status");
    else
      check(out, prod_status == MailboxStatus::dummy(), "inv-12",
            "outsider status leaked information");
  }
  // 10/11. ownership moves only manager->delegate via delegate, or back
  if (prod_before.owner != prod_after.owner) {
    if (prod_before.is_default)
      check(out,
            a.kind == Action::Kind::Delegate && a.caller == kRm &&
                out.prod_result == Err::Ok,
            "inv-10", "ownership left the manager outside delegate: " + a.describe());
    check(out, prod_before.is_default != prod_after.is_default, "inv-11",
          "ownership moved between two delegates");
    if (!prod_before.is_default)
      check(out, prod_after.is_default, "inv-11", "session ended somewhere else than the manager");
  }
  // 9/13. every session boundary leaves a defaulted, zeroed mailbox
  bool boundary =
      (a.kind == Action::Kind::Delegate && out.prod_result == Err::Ok) ||
      (a.kind == Action::Kind::Yield && out.prod_result == Err::Ok) ||
      (a.kind == Action::Kind::Tick && !before.is_default && before.time_left == 1) ||
      (!before.is_default && prod_after.is_default);
  if (boundary) {
    bool zeroed = true;
    for (std::uint8_t byte : w.mb().raw_slots())
      if (byte != 0) zeroed = false;
    if (a.kind == Action::Kind::Delegate) {
      // the fresh session starts with an empty, zeroed queue
      check(out, w.mb().queue_len() == 0 && zeroed, "inv-13",
            "queue not wiped on delegation");
    } else {
      check(out, zeroed, "inv-13", "queue not wiped at session end: " + a.describe());
      check(out, w.mb().default_owned() && w.mb().owner() == kRm, "inv-09",
            "session boundary did not default to the manager");
    }
  }
  // reset guard: grant/deny must track live-session membership exactly
  if (a.kind == Action::Kind::Reset && a.caller == kRm) {
    bool party = !prod_before.is_default &&
                 (a.target == prod_before.owner || a.target == kFixed);
    if (party)
      check(out, out.prod_result == Err::Blocked, "reset-guard",
            "a session party was reset: " + a.describe());
    else
      check(out, out.prod_result == Err::Ok, "reset-guard",
            "reset refused with no live session: " + a.describe());
  }
  // arbiter: the dma path engages exactly while the stand-in untrusted owner
  {
    Route r = arbiter_route_of(w.mb(), kUntrustedStandIn, w.plat.arbiter_stuck_dma);
    check(out, (r == Route::DmaPath) == (w.mb().owner() == kUntrustedStandIn), "arbiter",
          "route disagrees with data-plane ownership");
  }
  return out;
}

std::string canonical_key(const Walker& w) {
  std::ostringstream os;
  const OracleState& s = w.oracle.st;
  os << int(s.owner) << '|' << s.is_default << '|' << (s.msgs ? int(*s.msgs) : -1) << '|'
     << s.time_left << '|' << s.slots_clean << '|';
  for (std::uint8_t b : s.fifo) os << int(b) << ',';
  // fold the production projection in so conformance bugs never alias states
  OracleState p = project(w.mb(), w.now);
  os << '#' << int(p.owner) << '|' << p.is_default << '|' << (p.msgs ? int(*p.msgs) : -1) << '|'
     << p.time_left << '|' << p.slots_clean << '|';
  for (std::uint8_t b : p.fifo) os << int(b) << ',';
  return os.str();
}

std::vector<Action> enumerate_actions(const Bounds& b) {
  std::vector<Action> out;
  out.push_back({Action::Kind::Tick, 0, 0, std::nullopt, 0, 0});
  for (std::uint8_t caller = 0; caller < b.n_domains; ++caller) {
    for (std::uint8_t target = 0; target < b.n_domains; ++target) {
      for (const std::optional<std::uint32_t>& m : b.msg_quotas)
        for (std::uint32_t dt : b.time_quotas)
          out.push_back({Action::Kind::Delegate, caller, target, m, dt, 0});
      out.push_back({Action::Kind::Reset, caller, target, std::nullopt, 0, 0});
    }
    out.push_back({Action::Kind::Yield, caller, 0, std::nullopt, 0, 0});
    for (std::uint8_t sym : b.symbols)
      out.push_back({Action::Kind::Write, caller, 0, std::nullopt, 0, sym});
    out.push_back({Action::Kind::Read, caller, 0, std::nullopt, 0, 0});
    out.push_back({Action::Kind::Status, caller, 0, std::nullopt, 0, 0});
  }
  return out;
}

}  // namespace

std::uint64_t Bounds::estimate_states() const {
  std::uint64_t queue_cfg = 1, pow = 1;
  for (std::uint32_t i = 0; i < depth; ++i) {
    pow *= symbols.size();
    queue_cfg += pow;
  }
  std::uint64_t owners = n_domains;  // delegates plus the default
  std::uint64_t quota = (msg_quotas.size() + 1) * (time_quotas.size() + 1);
  return owners * quota * queue_cfg * 4 * (both_roles ? 2 : 1);
}

std::string Action::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Tick: os << "tick"; break;
    case Kind::Delegate:
      os << "delegate(caller=" << int(caller) << ",target=" << int(target) << ",msgs="
         << (msgs ? std::to_string(*msgs) : "inf") << ",dt=" << dt << ")";
      break;
    case Kind::Yield: os << "yield(caller=" << int(caller) << ")"; break;
    case Kind::Write: os << "write(caller=" << int(caller) << ",sym=" << int(sym) << ")"; break;
    case Kind::Read: os << "read(caller=" << int(caller) << ")"; break;
    case Kind::Status: os << "status(caller=" << int(caller) << ")"; break;
    case Kind::Reset:
      os << "reset(caller=" << int(caller) << ",target=" << int(target) << ")";
      break;
  }
  return os.str();
}

Result<Report> explore(const Bounds& bounds, const MailboxFaults& mb_faults,
                       const PlatformFaults& plat_faults) {
  if (bounds.estimate_states() > bounds.state_ceiling) return Err::BoundsTooLarge;
  Report report;
  std::vector<Action> alphabet = enumerate_actions(bounds);
  std::vector<FixedRole> roles = {FixedRole::FixedReader};
  if (bounds.both_roles) roles.push_back(FixedRole::FixedWriter);

  for (FixedRole role : roles) {
    struct Node {
      Walker w;
      std::vector<Action> path;
    };
    Walker init;
    init.oracle.role = role;
    init.oracle.depth = bounds.depth;
    Result<Mailbox> mb = Mailbox::create(harness_config(role, bounds));
    if (!mb.ok()) return mb.error();
    init.prod.push_back(mb.take());
    init.prod.front().faults = mb_faults;
    init.plat = plat_faults;

    std::set<std::string> seen;
    std::deque<Node> frontier;
    seen.insert(canonical_key(init));
    frontier.push_back({std::move(init), {}});
    ++report.states_explored;

    while (!frontier.empty()) {
      Node node = std::move(frontier.front());
      frontier.pop_front();
      if (node.path.size() >= bounds.horizon) continue;
      for (const Action& a : alphabet) {
        Node next{node.w, node.path};
        next.path.push_back(a);
        StepOutcome out = apply_action(next.w, a);
        ++report.transitions;
        for (const Violation& v : out.violations) {
          ++report.per_property[v.property];
          if (report.violations.size() < 64) {
            Counterexample cex;
            cex.role = role;
            cex.mailbox_faults = mb_faults;
            cex.platform_faults = plat_faults;
            cex.actions = next.path;
            cex.property = v.property;
            cex.detail = v.detail;
            report.violations.push_back(std::move(cex));
          }
        }
        if (out.violations.empty()) {
          std::string key = canonical_key(next.w);
          if (seen.insert(std::move(key)).second) {
            ++report.states_explored;
            frontier.push_back(std::move(next));
          }
        }
      }
    }
  }
  return report;
}

bool replay(const Counterexample& cex, const Bounds& bounds) {
  Walker w;
  w.oracle.role = cex.role;
  w.oracle.depth = bounds.depth;
  Result<Mailbox> mb = Mailbox::create(harness_config(cex.role, bounds));
  if (!mb.ok()) return false;
  w.prod.push_back(mb.take());
  w.prod.front().faults = cex.mailbox_faults;
  w.plat = cex.platform_faults;

  for (const Action& a : cex.actions) {
    StepOutcome out = apply_action(w, a);
    for (const Violation& v : out.violations)
      if (v.property == cex.property) return true;
  }
  return false;
}

std::string_view mutant_name(Mutant m) {
  switch (m) {
    case Mutant::UnmeteredQuota: return "unmetered-quota";
    case Mutant::SkipWipeOnYield: return "skip-wipe-on-yield";
    case Mutant::LeakyStatus: return "leaky-status";
    case Mutant::AnyDelegator: return "any-delegator";
    case Mutant::IgnoreResetGuard: return "ignore-reset-guard";
    case Mutant::ArbiterStuckDma: return "arbiter-stuck-dma";
  }
  return "unknown";
}

std::pair<MailboxFaults, PlatformFaults> mutant_faults(Mutant m) {
  MailboxFaults mf;
  PlatformFaults pf;
  switch (m) {
    case Mutant::UnmeteredQuota: mf.unmetered_writes = true; break;
    case Mutant::SkipWipeOnYield: mf.skip_wipe_on_yield = true; break;
    case Mutant::LeakyStatus: mf.leaky_status = true; break;
    case Mutant::AnyDelegator: mf.any_delegator = true; break;
    case Mutant::IgnoreResetGuard: pf.ignore_reset_guard = true; break;
    case Mutant::ArbiterStuckDma: pf.arbiter_stuck_dma = true; break;
  }
  return {mf, pf};
}

// ---------------------------------------------------------------------------

std::string Counterexample::to_json() const {
  Json j;
  j["role"] = role == FixedRole::FixedReader ? "reader" : "writer";
  j["mailbox_faults"] = {{"unmetered_writes", mailbox_faults.unmetered_writes},
                         {"skip_wipe_on_yield", mailbox_faults.skip_wipe_on_yield},
                         {"leaky_status", mailbox_faults.leaky_status},
                         {"any_delegator", mailbox_faults.any_delegator}};
  j["platform_faults"] = {{"ignore_reset_guard", platform_faults.ignore_reset_guard},
                          {"arbiter_stuck_dma", platform_faults.arbiter_stuck_dma}};
  j["property"] = property;
  j["detail"] = detail;
  j["actions"] = Json::array();
  for (const Action& a : actions) {
    Json ja;
    ja["kind"] = static_cast<int>(a.kind);
    ja["caller"] = a.caller;
    ja["target"] = a.target;
    if (a.msgs) ja["msgs"] = *a.msgs;
    ja["dt"] = a.dt;
    ja["sym"] = a.sym;
    ja["text"] = a.describe();
    j["actions"].push_back(ja);
  }
  return j.dump(2);
}

Result<Counterexample> Counterexample::from_json(const std::string& text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return Err::BadFrame;
  Counterexample cex;
  try {
    cex.role = j.value("role", "reader") == "writer" ? FixedRole::FixedWriter
                                                     : FixedRole::FixedReader;
    const Json& mf = j.at("mailbox_faults");
    cex.mailbox_faults.unmetered_writes = mf.value("unmetered_writes", false);
    cex.mailbox_faults.skip_wipe_on_yield = mf.value("skip_wipe_on_yield", false);
    cex.mailbox_faults.leaky_status = mf.value("leaky_status", false);
    cex.mailbox_faults.any_delegator = mf.value("any_delegator", false);
    const Json& pf = j.at("platform_faults");
    cex.platform_faults.ignore_reset_guard = pf.value("ignore_reset_guard", false);
    cex.platform_faults.arbiter_stuck_dma = pf.value("arbiter_stuck_dma", false);
    cex.property = j.value("property", "");
    cex.detail = j.value("detail", "");
    for (const Json& ja : j.at("actions")) {
      Action a;
      a.kind = static_cast<Action::Kind>(ja.at("kind").get<int>());
      a.caller = ja.value("caller", 0);
      a.target = ja.value("target", 0);
      if (ja.contains("msgs")) a.msgs = ja["msgs"].get<std::uint32_t>();
      a.dt = ja.value("dt", 0u);
      a.sym = ja.value("sym", 0);
      cex.actions.push_back(a);
    }
  } catch (const Json::exception&) {
    return Err::BadFrame;
  }
  return cex;
}

}  // namespace splitsim::harness
