#pragma once

#include "splitsim/machine.hpp"

namespace splitsim {

/// One scripted action of the untrusted-domain workload. Parsed from the JSON
/// array form used in scenario files; see docs/formats.md.
struct WorkloadAction {
  enum class Kind {
    Spin,          // ticks
    StorageRead,   // first, count (acquires a session per call)
    StorageWrite,  // first, count, fill byte
    StorageStream, // cycles of single-block reads at `first`
    NetSend,       // len bytes via dma
    NetRecv,       // len buffer via dma
    SnoopStatus,   // mailbox
    RogueWrite,    // mailbox
    RogueRead,     // mailbox
    StorageIntrude,// first, count: read inside a foreign partition
    DmaRaw,        // a=dir(0 in,1 out), b=addr, c=len: raw engine access
    DevicePoke,    // a=domain: acquire a session and send one device op
    Note,          // tag
  };
  Kind kind = Kind::Spin;
  std::uint32_t a = 0, b = 0, c = 0;
  std::string tag;

  std::string serialize() const;
  static std::optional<WorkloadAction> parse(const std::string& line);
};

/// The compatibility layer translates the script's file/network operations
/// into manager requests, mailbox frames, and domain-bound DMA. Strictly
/// sequential; blocked requests stall the script and are reported in notes.
Task<void> untrusted_workload(DomainCtx ctx, std::vector<WorkloadAction> script);

void register_workload(Machine& m, std::vector<WorkloadAction> script = {});

}  // namespace splitsim
