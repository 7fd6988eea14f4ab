#pragma once

#include <set>

#include "splitsim/machine.hpp"

namespace splitsim {

/// Behavior switches for the manager program. The hostile_* entries model an
/// adversarial manager; scenarios use them as attack injections.
struct RmConfig {
  std::uint32_t boot_window = 512;  // staging deadline per domain, in ticks
  bool shell = true;

  bool inject_stale_frame = false;  // poke a freshly reset service pre-delegation
  std::uint64_t inject_seed = 1;
  bool undercut_msgs = false;       // delegate one message fewer than promised
  std::set<DomainId> skip_reset_for;  // requesters granted without the reset step
  std::vector<std::pair<std::string, DomainId>> hostile_resets;  // note tag -> target
};

Task<void> resource_manager_program(DomainCtx ctx, RmConfig cfg);

/// Registers the manager under the default manifest's image name.
void register_resource_manager(Machine& m, RmConfig cfg = {});

/// Deterministic partition assignment the manager uses for client domains.
std::uint32_t client_partition_base(DomainId requester);

}  // namespace splitsim
