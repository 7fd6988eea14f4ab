#pragma once

#include <map>

#include "splitsim/machine.hpp"

namespace splitsim::harness {

/// Exploration bounds. The defaults finish in well under a minute: four
/// domains (manager, fixed end, two delegates — the higher one standing in
/// for the untrusted domain), queue depth 2, message quotas {1, 2, inf},
/// time quotas 1..4, both fixed roles, action horizon 8.
struct Bounds {
  std::uint8_t n_domains = 4;
  std::uint32_t depth = 2;
  std::vector<std::optional<std::uint32_t>> msg_quotas = {std::nullopt, 1u, 2u};
  std::vector<std::uint32_t> time_quotas = {1, 2, 3, 4};
  std::uint32_t horizon = 8;
  std::vector<std::uint8_t> symbols = {0xa1, 0xb2};
  std::uint64_t state_ceiling = 5'000'000;
  bool both_roles = true;

  std::uint64_t estimate_states() const;
};

struct Action {
  enum class Kind : std::uint8_t { Tick, Delegate, Yield, Write, Read, Status, Reset };
  Kind kind = Kind::Tick;
  std::uint8_t caller = 0;
  std::uint8_t target = 0;
  std::optional<std::uint32_t> msgs;
  std::uint32_t dt = 0;
  std::uint8_t sym = 0;

  std::string describe() const;
};

/// The mailbox/reset-guard/arbiter properties, stated over transitions.
/// inv-01..inv-13 mirror the mailbox contract's numbered invariants;
/// reset-guard and arbiter cover the platform pieces; conformance flags any
/// divergence between the abstract model and the production implementation.
struct Violation {
  std::string property;
  std::string detail;
};

struct Counterexample {
  FixedRole role = FixedRole::FixedReader;
  MailboxFaults mailbox_faults;
  PlatformFaults platform_faults;
  std::vector<Action> actions;
  std::string property;
  std::string detail;

  std::string to_json() const;
  static Result<Counterexample> from_json(const std::string& text);
};

struct Report {
  std::uint64_t states_explored = 0;
  std::uint64_t transitions = 0;
  std::vector<Counterexample> violations;
  std::map<std::string, std::uint64_t> per_property;  // violation counts

  bool clean() const { return violations.empty(); }
};

Result<Report> explore(const Bounds& bounds, const MailboxFaults& mb_faults = {},
                       const PlatformFaults& plat_faults = {});

/// Drives the production mailbox through the recorded actions and re-evaluates
/// the violated property. True when the violation reproduces.
bool replay(const Counterexample& cex, const Bounds& bounds = {});

/// The shipped known-bad implementations the harness must catch.
enum class Mutant : std::uint8_t {
  UnmeteredQuota,
  SkipWipeOnYield,
  LeakyStatus,
  AnyDelegator,
  IgnoreResetGuard,
  ArbiterStuckDma,
};
constexpr std::array<Mutant, 6> kAllMutants = {
    Mutant::UnmeteredQuota,  Mutant::SkipWipeOnYield,  Mutant::LeakyStatus,
    Mutant::AnyDelegator,    Mutant::IgnoreResetGuard, Mutant::ArbiterStuckDma,
};
std::string_view mutant_name(Mutant m);
std::pair<MailboxFaults, PlatformFaults> mutant_faults(Mutant m);

}  // namespace splitsim::harness
