#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "splitsim/attestation.hpp"
#include "splitsim/bootfs.hpp"
#include "splitsim/frame.hpp"
#include "splitsim/manifest.hpp"
#include "splitsim/task.hpp"
#include "splitsim/trace.hpp"

namespace splitsim {

class Machine;

enum class DmaDir : std::uint8_t { In, Out };
enum class Route : std::uint8_t { FifoPath, DmaPath };

// ---------------------------------------------------------------------------
// Primitive requests a domain can issue during its quantum (one per tick).

namespace ops {
struct Spin { std::uint32_t left = 1; };
struct MbWrite { MailboxId mb; Bytes msg; };
struct MbRead { MailboxId mb; };
struct MbStatus { MailboxId mb; };
struct MbDelegate { MailboxId mb; DomainId target; Quota quota; };
struct MbYield { MailboxId mb; };
struct QSend { std::uint8_t queue; Bytes msg; };
struct QRecv { std::uint8_t queue; };
struct PmuReset { DomainId target; };
struct Dma { DomainId io_domain; DmaDir dir; std::uint32_t addr; std::uint32_t len; };
// device-side primitives, valid only inside the owning domain
struct TermWrite { Bytes text; };
struct SerialFetch {};
struct LinkTx { Bytes payload; };
struct LinkRx {};
struct BlockRead { std::uint32_t first; std::uint32_t count; };
struct BlockWrite { std::uint32_t first; Bytes data; };
struct SensorRead {};
struct PumpActuate { std::uint32_t units; };
}  // namespace ops

using PendingOp =
    std::variant<ops::Spin, ops::MbWrite, ops::MbRead, ops::MbStatus, ops::MbDelegate,
                 ops::MbYield, ops::QSend, ops::QRecv, ops::PmuReset, ops::Dma, ops::TermWrite,
                 ops::SerialFetch, ops::LinkTx, ops::LinkRx, ops::BlockRead, ops::BlockWrite,
                 ops::SensorRead, ops::PumpActuate>;

struct OpResult {
  Err code = Err::Ok;
  Bytes bytes;           // read payloads
  MailboxStatus status;  // mb_status
  MailboxId blocker = 0; // reset guard: the blocking mailbox
  std::uint32_t len = 0; // dma transfer length
  std::uint32_t value = 0;
};

// ---------------------------------------------------------------------------
// Per-domain runtime record.

struct DomainRec {
  DomainDecl decl;
  Bytes memory;
  Task<void> program;
  std::coroutine_handle<> resume_point;
  std::optional<PendingOp> pending;
  OpResult result;
  bool started = false;
  bool faulted = false;
  bool halted = false;
  std::string installed_image;           // empty while the bootloader runs
  std::optional<BootImage> staged;       // set by install_image
  bool irq_pending = false;
  std::deque<std::string> stimuli;       // scripted workload commands
};

/// The hardware interface a program sees. Every awaited call is one action in
/// the domain's quantum; the plain methods are free register/ROM accesses.
class DomainCtx {
 public:
  DomainCtx(Machine* m, DomainId self) : m_(m), self_(self) {}

  struct OpAwait {
    DomainRec* rec;
    PendingOp op;
    bool await_ready() const noexcept { return false; }
    void await_suspend(std::coroutine_handle<> h) noexcept;
    OpResult await_resume() noexcept;
  };

  OpAwait spin(std::uint32_t ticks = 1) const { return make(ops::Spin{ticks ? ticks : 1}); }
  OpAwait mb_write(MailboxId mb, Bytes msg) const { return make(ops::MbWrite{mb, std::move(msg)}); }
  OpAwait mb_read(MailboxId mb) const { return make(ops::MbRead{mb}); }
  OpAwait mb_status(MailboxId mb) const { return make(ops::MbStatus{mb}); }
  OpAwait mb_delegate(MailboxId mb, DomainId target, Quota q) const {
    return make(ops::MbDelegate{mb, target, q});
  }
  OpAwait mb_yield(MailboxId mb) const { return make(ops::MbYield{mb}); }
  OpAwait q_send(std::uint8_t queue, Bytes msg) const { return make(ops::QSend{queue, std::move(msg)}); }
  OpAwait q_recv(std::uint8_t queue) const { return make(ops::QRecv{queue}); }
  OpAwait pmu_reset(DomainId target) const { return make(ops::PmuReset{target}); }
  OpAwait dma(DomainId io_domain, DmaDir dir, std::uint32_t addr, std::uint32_t len) const {
    return make(ops::Dma{io_domain, dir, addr, len});
  }
  OpAwait term_write(Bytes text) const { return make(ops::TermWrite{std::move(text)}); }
  OpAwait serial_fetch() const { return make(ops::SerialFetch{}); }
  OpAwait link_tx(Bytes payload) const { return make(ops::LinkTx{std::move(payload)}); }
  OpAwait link_rx() const { return make(ops::LinkRx{}); }
  OpAwait block_read(std::uint32_t first, std::uint32_t count) const {
    return make(ops::BlockRead{first, count});
  }
  OpAwait block_write(std::uint32_t first, Bytes data) const {
    return make(ops::BlockWrite{first, std::move(data)});
  }
  OpAwait sensor_read() const { return make(ops::SensorRead{}); }
  OpAwait pump_actuate(std::uint32_t units) const { return make(ops::PumpActuate{units}); }

  // free accesses
  DomainId self() const { return self_; }
  Machine& machine() const { return *m_; }
  Tick now() const;
  const DomainDecl& decl() const;
  Bytes& memory() const;
  void note(std::string event,
            std::vector<std::pair<std::string, TraceEvent::Value>> detail = {}) const;
  void install_image(BootImage image) const;
  bool pop_stimulus(std::string& out) const;

 private:
  OpAwait make(PendingOp op) const;

  Machine* m_;
  DomainId self_;
};

using ProgramFactory = std::function<Task<void>(DomainCtx)>;

// ---------------------------------------------------------------------------
// Wiring digests the machine precomputes from the manifest.

struct IoWiring {
  std::optional<MailboxId> ctl_send;   // client -> device
  std::optional<MailboxId> ctl_recv;   // device -> client
  std::optional<MailboxId> data_send;  // client -> device
  std::optional<MailboxId> data_recv;  // device -> client

  std::vector<MailboxId> all() const {
    std::vector<MailboxId> v;
    for (const auto& o : {ctl_send, ctl_recv, data_send, data_recv})
      if (o) v.push_back(*o);
    return v;
  }
};

struct PermQueue {
  QueueDecl decl;
  struct Msg {
    Bytes bytes;
    Tick arrival;
    DomainId sender;
  };
  std::deque<Msg> to_a;  // messages addressed to end_a
  std::deque<Msg> to_b;
};

/// Fault-injection switches for the platform pieces the checker mutates.
struct PlatformFaults {
  bool ignore_reset_guard = false;
  bool arbiter_stuck_dma = false;
};

// Devices ---------------------------------------------------------------

struct TerminalDevice {
  std::string sink;
  std::deque<std::pair<Tick, std::string>> input;  // scheduled injected lines
};

using LinkPeer = std::function<std::vector<Bytes>(const Bytes&)>;

struct NetworkLink {
  bool down = false;
  LinkPeer peer;  // nullptr drops frames
  std::deque<std::pair<Tick, Bytes>> rx;  // toward the machine
  std::uint32_t delay = 1;
};

struct BlockStore {
  Bytes blocks;  // device_blocks * 512 bytes

  std::uint32_t block_count() const { return static_cast<std::uint32_t>(blocks.size() / kBlockSize); }
};

struct SensorFeed {
  std::vector<std::uint32_t> values;
  std::size_t next = 0;
  std::uint32_t fallback = 120;
};

// ---------------------------------------------------------------------------

/// The assembled machine: domains, mailboxes, permanent queues, TPM bank and
/// mediator, arbiter + domain-bound DMA, reset guard, and the logical clock.
/// Deterministic: stepping a freshly built machine with the same manifest,
/// programs, and scripted inputs always yields the same trace bytes.
class Machine {
 public:
  struct BuildOpts {
    std::set<std::string> tampered_images;  // stored bytes flipped after measurement
    PlatformFaults faults;
  };

  static Result<std::unique_ptr<Machine>> build(const MachineManifest& manifest,
                                                const BuildOpts& opts = {});
  /// Error text for the last failed build (first violated constraint).
  static const std::string& last_build_error();

  void register_program(const std::string& image, ProgramFactory factory);
  void step(std::uint64_t ticks);
  /// Steps until the note event `tag` is seen or the budget runs out; returns
  /// the tick of the note, if reached.
  std::optional<Tick> step_until_note(const std::string& tag, std::uint64_t max_ticks);

  Tick now() const { return tick_; }
  DomainId rm() const { return rm_; }
  DomainId untrusted() const { return untrusted_; }
  const MachineManifest& manifest() const { return manifest_; }

  DomainRec& domain(DomainId id);
  const DomainRec* find_domain(DomainId id) const;
  Mailbox& mailbox(MailboxId id);
  const Mailbox* find_mailbox(MailboxId id) const;
  std::vector<Mailbox>& mailboxes() { return mailboxes_; }
  const IoWiring& wiring(DomainId io_domain) const;
  std::uint8_t rm_queue_for(DomainId peer) const;   // 0xff when absent
  std::uint8_t tpm_queue_for(DomainId domain) const;

  PcrBank& bank() { return bank_; }
  const Key& device_key() const { return device_key_; }
  const BootImage& image(const std::string& name) const;
  Digest image_digest(const std::string& name) const;

  TerminalDevice& terminal() { return terminal_; }
  NetworkLink& link() { return link_; }
  BlockStore& storage() { return storage_; }
  SensorFeed& sensor() { return sensor_; }
  std::vector<std::uint32_t>& pump_log() { return pump_log_; }
  void inject_line(Tick at, std::string line) { terminal_.input.emplace_back(at, std::move(line)); }
  void push_stimulus(DomainId d, std::string action) { domain(d).stimuli.push_back(std::move(action)); }

  TraceLog& trace() { return trace_; }
  void emit(TraceEvent e) {
    if (trace_muted) return;
    e.tick = tick_;
    trace_.append(std::move(e));
  }
  /// Heavy fuzz drivers may mute the trace; notes still register.
  bool trace_muted = false;
  std::optional<Tick> note_tick(const std::string& tag) const;

  /// Test entry point mirroring the manager's PMU path, honoring the guard.
  Err force_domain_reset(DomainId target);

  /// Reset-guard predicate: empty when `target` may be reset now, otherwise
  /// the id of a mailbox whose live session involves the target.
  std::optional<MailboxId> reset_blocker(DomainId target) const;
  /// Arbiter route for an io domain with a declared arbiter.
  Result<Route> arbiter_route(DomainId io_domain) const;

  PlatformFaults faults;

  // used by DomainCtx / programs
  void record_note(DomainId d, std::string event,
                   std::vector<std::pair<std::string, TraceEvent::Value>> detail);
  void stage_install(DomainId d, BootImage image);

 private:
  friend class DomainCtx;
  Machine() = default;

  void power_on();
  void arm_bootloader(DomainRec& d);
  void quantum(DomainRec& d);
  void handle_completion(DomainRec& d);
  bool execute(DomainRec& d, PendingOp& op);  // false: skip resume this quantum
  void mediator_serve();
  Err do_domain_reset(DomainId target);

  Err exec_mb_write(DomainRec& d, ops::MbWrite& o);
  Err exec_mb_read(DomainRec& d, ops::MbRead& o, Bytes& out);
  Err exec_dma(DomainRec& d, const ops::Dma& o, std::uint32_t& moved);

  MachineManifest manifest_;
  Tick tick_ = 0;
  DomainId rm_ = 0;
  DomainId untrusted_ = 0;
  std::vector<DomainRec> domains_;
  std::vector<Mailbox> mailboxes_;
  std::vector<PermQueue> queues_;
  std::map<DomainId, IoWiring> wirings_;
  PcrBank bank_{0};
  Key device_key_{};
  std::map<std::string, BootImage> images_;
  std::map<std::string, ProgramFactory> registry_;
  TerminalDevice terminal_;
  NetworkLink link_;
  BlockStore storage_;
  SensorFeed sensor_;
  std::vector<std::uint32_t> pump_log_;
  TraceLog trace_;
  std::map<std::string, Tick> notes_;
  std::map<DomainId, Route> last_route_;
};

/// Built-in idle program: parks the domain.
Task<void> idle_program(DomainCtx ctx);

/// Reset-guard combinational logic: the first mailbox with a live session
/// involving `target` (as owner or fixed end), or nothing when reset is safe.
std::optional<MailboxId> reset_guard_blocker(const std::vector<Mailbox>& mailboxes,
                                             DomainId target, Tick now);

/// Arbiter switch: the DMA path engages exactly while the untrusted domain
/// owns the device's data-plane mailbox.
Route arbiter_route_of(const Mailbox& data_mb, DomainId untrusted_id, bool stuck_dma = false);

}  // namespace splitsim
