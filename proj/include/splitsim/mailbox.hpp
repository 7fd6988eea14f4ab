#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "splitsim/bytes.hpp"
#include "splitsim/error.hpp"

namespace splitsim {

using DomainId = std::uint8_t;
using MailboxId = std::uint8_t;
using Tick = std::uint64_t;

constexpr Tick kUnboundedTime = ~0ull;

enum class FixedRole : std::uint8_t { FixedReader, FixedWriter };

/// Delegation budget. The message count may be infinite; the deadline never is.
struct Quota {
  std::optional<std::uint32_t> msgs;  // nullopt = infinite
  Tick deadline = 0;

  static Quota limited(std::uint32_t m, Tick deadline) { return Quota{m, deadline}; }
  static Quota unlimited_msgs(Tick deadline) { return Quota{std::nullopt, deadline}; }
};

struct MailboxConfig {
  MailboxId id = 0;
  DomainId fixed_end = 0;
  FixedRole fixed_role = FixedRole::FixedReader;
  std::vector<DomainId> wired_delegates;  // must contain rm, must not contain fixed_end
  std::uint32_t depth = 4;
  std::uint32_t msg_size = 64;
  DomainId rm = 0;  // the resource-manager domain this mailbox defaults to

  bool valid() const;
  bool wired(DomainId d) const;
};

/// What the status register shows. Readers other than the owner and the fixed
/// end always see the constant dummy value.
struct MailboxStatus {
  std::optional<DomainId> owner;       // nullopt in the dummy
  std::optional<std::uint32_t> msgs_left;  // nullopt = infinite
  Tick time_left = 0;                  // kUnboundedTime under default ownership
  bool is_dummy = false;

  static MailboxStatus dummy() { return MailboxStatus{std::nullopt, 0, 0, true}; }
  bool operator==(const MailboxStatus&) const = default;
};

/// Fault-injection hooks consumed by the verification harness's shipped
/// mutants. All default to off; the machine never sets them outside `check`.
struct MailboxFaults {
  bool unmetered_writes = false;    // skip quota decrement on metered ops
  bool skip_wipe_on_yield = false;  // leave queue bytes behind on yield
  bool leaky_status = false;        // status register ignores the dummy rule
  bool any_delegator = false;       // accept delegate() from non-manager callers
};

/// The delegatable hardware mailbox: a bounded queue between a hard-wired end
/// and a multiplexed end that the resource manager can hand out under a quota.
/// Sessions are irrevocable; they end only by yield, deadline, or message
/// exhaustion, and every ownership change wipes the queue.
class Mailbox {
 public:
  static Result<Mailbox> create(MailboxConfig config);

  Err delegate_to(DomainId caller, DomainId target, Quota quota, Tick now);
  Err yield_access(DomainId caller, Tick now);
  Err write(DomainId caller, std::span<const std::uint8_t> msg, Tick now);
  Result<Bytes> read(DomainId caller, Tick now);
  MailboxStatus read_status(DomainId caller, Tick now);

  /// Deadline expiry, evaluated by the platform at the start of every tick
  /// (and lazily before any operation). Returns true when a session ended now.
  bool expire_check(Tick now);

  void hw_reset();

  const MailboxConfig& config() const { return config_; }
  DomainId owner() const { return owner_; }
  bool default_owned() const { return !quota_.has_value(); }
  const std::optional<Quota>& quota() const { return quota_; }
  std::uint32_t queue_len() const { return count_; }
  DomainId writer_side() const;
  DomainId reader_side() const;

  /// Raw slot storage (depth * msg_size bytes), for wipe-property checks.
  std::span<const std::uint8_t> raw_slots() const { return slots_; }
  std::span<const std::uint8_t> slot(std::uint32_t i) const;
  /// Queue contents oldest-first, without touching metering. Checker-only.
  std::vector<Bytes> peek_queue() const;
  /// True when every byte outside the live queue entries is zero.
  bool unused_slots_zero() const;

  MailboxFaults faults;

 private:
  explicit Mailbox(MailboxConfig config);

  void wipe();
  void end_session();  // revert to manager default + wipe
  bool session_live(Tick now) const { return quota_ && now < quota_->deadline; }
  bool meter_and_maybe_expire(DomainId actor);

  MailboxConfig config_;
  DomainId owner_;
  std::optional<Quota> quota_;  // nullopt = manager default (unmetered)
  Bytes slots_;
  std::uint32_t head_ = 0;  // index of oldest message
  std::uint32_t count_ = 0;
  std::vector<std::uint32_t> lengths_;  // per-slot payload length
};

}  // namespace splitsim
