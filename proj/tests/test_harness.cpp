#include "splitsim/harness.hpp"

#include <chrono>

#include "doctest.h"

using namespace splitsim;
namespace hn = splitsim::harness;

TEST_CASE("bounded exploration of the shipped implementation finds no violation") {
  auto t0 = std::chrono::steady_clock::now();
  auto r = hn::explore(hn::Bounds{});
  auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(r.ok());
  INFO("states=", r.value().states_explored, " transitions=", r.value().transitions);
  if (!r.value().violations.empty()) {
    INFO(r.value().violations.front().property, ": ", r.value().violations.front().detail);
  }
  CHECK(r.value().clean());
  CHECK(r.value().states_explored > 100);
  CHECK(r.value().transitions > 10000);
  CHECK(secs < 60.0);
}

TEST_CASE("oversized bounds are rejected up front") {
  hn::Bounds b;
  b.state_ceiling = 10;
  CHECK(hn::explore(b).error() == Err::BoundsTooLarge);
}

TEST_CASE("every shipped mutant is caught with a short, replayable counterexample") {
  for (hn::Mutant m : hn::kAllMutants) {
    CAPTURE(hn::mutant_name(m));
    auto [mf, pf] = hn::mutant_faults(m);
    auto r = hn::explore(hn::Bounds{}, mf, pf);
    REQUIRE(r.ok());
    REQUIRE_FALSE(r.value().clean());
    const hn::Counterexample& cex = r.value().violations.front();
    CHECK(cex.actions.size() <= 8);
    CHECK(hn::replay(cex));

    // serialized counterexamples survive the round trip and still reproduce
    auto back = hn::Counterexample::from_json(cex.to_json());
    REQUIRE(back.ok());
    CHECK(hn::replay(back.value()));
  }
}

TEST_CASE("each mutant trips the property it was built to break") {
  auto violates = [](hn::Mutant m, const std::string& property) {
    auto [mf, pf] = hn::mutant_faults(m);
    auto r = hn::explore(hn::Bounds{}, mf, pf);
    REQUIRE(r.ok());
    return r.value().per_property.count(property) > 0;
  };
  CHECK(violates(hn::Mutant::UnmeteredQuota, "inv-05"));
  CHECK(violates(hn::Mutant::SkipWipeOnYield, "inv-13"));
  CHECK(violates(hn::Mutant::LeakyStatus, "inv-12"));
  CHECK(violates(hn::Mutant::AnyDelegator, "inv-10"));
  CHECK(violates(hn::Mutant::IgnoreResetGuard, "reset-guard"));
  CHECK(violates(hn::Mutant::ArbiterStuckDma, "arbiter"));
}

TEST_CASE("replay against the fixed implementation does not reproduce") {
  auto [mf, pf] = hn::mutant_faults(hn::Mutant::SkipWipeOnYield);
  auto r = hn::explore(hn::Bounds{}, mf, pf);
  REQUIRE(r.ok());
  REQUIRE_FALSE(r.value().violations.empty());
  hn::Counterexample fixed = r.value().violations.front();
  fixed.mailbox_faults = MailboxFaults{};  // the repaired implementation
  CHECK_FALSE(hn::replay(fixed));
}

TEST_CASE("replaying an empty sequence holds on the initial state") {
  hn::Counterexample cex;
  cex.property = "inv-09";
  CHECK_FALSE(hn::replay(cex));  // nothing violated, nothing reproduced
}

TEST_CASE("exploration is deterministic") {
  auto a = hn::explore(hn::Bounds{});
  auto b = hn::explore(hn::Bounds{});
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(a.value().states_explored == b.value().states_explored);
  CHECK(a.value().transitions == b.value().transitions);
}
