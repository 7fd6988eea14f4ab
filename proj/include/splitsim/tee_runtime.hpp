#pragma once

#include <functional>
#include <map>

#include "splitsim/machine.hpp"
#include "splitsim/services.hpp"

namespace splitsim {

/// Verifier policy provisioned into a security-critical program: the expected
/// boot measurement per domain it may talk to, and the attestation key.
struct TeeRtConfig {
  Key device_key{};
  std::map<DomainId, Digest> service_image_digest;  // io/tee domain -> image digest
  std::uint32_t grant_poll_budget = 4096;           // ticks to wait for a grant
  std::uint32_t reply_poll_budget = 512;
  std::uint32_t reserve_msgs = 2;  // refuse metered ops that would dip below this
};

struct SessionQuota {
  std::optional<std::uint32_t> msgs;  // nullopt = infinite
  std::uint32_t ticks = 64;
};

struct TeeSession {
  DomainId resource = 0;
  std::vector<MailboxId> mailboxes;
  std::optional<std::uint32_t> promised_msgs;
  Tick deadline = 0;
  bool verified = false;
  bool active = false;
  bool restricted = false;
  std::map<MailboxId, std::optional<std::uint32_t>> msgs_left;  // per delegated mailbox
};

/// Invoked after every metered operation with the remaining budget.
using QuotaCallback =
    std::function<void(MailboxId, std::optional<std::uint32_t> msgs_left, Tick time_left)>;

/// Fragmentation for payloads beyond one frame: a 2-byte little-endian header
/// (bit 15 marks the final fragment, low bits the sequence number).
std::vector<Bytes> net_fragment(std::span<const std::uint8_t> payload, std::size_t frame_payload);
struct NetReassembly {
  Bytes data;
  bool complete = false;
  bool feed(std::span<const std::uint8_t> fragment);  // false on malformed input
};

/// The library a security-critical program links against: session
/// establishment with full verification, high-level I/O, attestation helpers,
/// peer IPC, and the crypto routines re-exported from crypto.hpp.
class TeeRuntime {
 public:
  TeeRuntime(DomainCtx ctx, TeeRtConfig cfg) : ctx_(ctx), cfg_(std::move(cfg)) {}

  /// Full acquisition sequence: request from the manager, wait for the grant,
  /// check the hardware status registers against the promise, attest the
  /// resource domain, and (for storage) authenticate.
  Task<Result<TeeSession>> request_and_verify(DomainId resource, SessionQuota quota,
                                              const Nonce& nonce);
  /// Disable the service, then yield every session mailbox.
  Task<Err> end_session(TeeSession& s);

  Task<Err> print(TeeSession& s, std::string text);
  Task<Result<std::string>> readline(TeeSession& s, std::uint32_t max_polls = 512);
  Task<Err> net_send(TeeSession& s, Bytes payload);
  Task<Result<Bytes>> net_recv(TeeSession& s, std::uint32_t max_polls = 512);
  Task<Result<Bytes>> storage_read(TeeSession& s, std::uint32_t first, std::uint16_t count);
  Task<Err> storage_write(TeeSession& s, std::uint32_t first, Bytes data);
  Task<Result<std::uint32_t>> sensor_sample(TeeSession& s);
  Task<Result<std::uint32_t>> pump_dose(TeeSession& s, std::uint32_t units);

  /// Quote over the program's own domain PCR.
  Task<Result<Quote>> attest(const Nonce& nonce);

  /// Peer IPC: the requester establishes, the callee accepts the unsolicited
  /// grant. Both verify ownership through the status registers.
  Task<Result<TeeSession>> ipc_establish(DomainId peer, SessionQuota quota);
  Task<Result<TeeSession>> ipc_accept(std::uint32_t max_polls = 4096);
  Task<Err> ipc_send(TeeSession& s, Bytes payload);
  Task<Result<Bytes>> ipc_recv(TeeSession& s, std::uint32_t max_polls = 512);

  /// Wait for the manager's start command (shell-launched programs).
  Task<bool> wait_start(std::uint32_t max_polls = 1 << 20);

  QuotaCallback on_quota;
  DomainCtx ctx() const { return ctx_; }
  const TeeRtConfig& config() const { return cfg_; }

 private:
  Task<Result<Quote>> tpm_quote(const Nonce& nonce, std::vector<std::uint8_t> selection);
  Task<Err> metered_write(TeeSession& s, MailboxId mb, Bytes raw, bool allow_reserve);
  Task<Result<Bytes>> metered_read(TeeSession& s, MailboxId mb, std::uint32_t max_polls,
                                   bool allow_reserve);
  void meter(TeeSession& s, MailboxId mb);
  std::uint8_t rm_channel() const;

  DomainCtx ctx_;
  TeeRtConfig cfg_;
};

}  // namespace splitsim
