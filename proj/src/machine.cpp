#include "splitsim/machine.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include "splitsim/proto.hpp"

namespace splitsim {

// ---------------------------------------------------------------------------
// DomainCtx

void DomainCtx::OpAwait::await_suspend(std::coroutine_handle<> h) noexcept {
  rec->pending = std::move(op);
  rec->resume_point = h;
}

OpResult DomainCtx::OpAwait::await_resume() noexcept { return std::move(rec->result); }

DomainCtx::OpAwait DomainCtx::make(PendingOp op) const {
  return OpAwait{&m_->domain(self_), std::move(op)};
}

Tick DomainCtx::now() const { return m_->now(); }
const DomainDecl& DomainCtx::decl() const { return m_->domain(self_).decl; }
Bytes& DomainCtx::memory() const { return m_->domain(self_).memory; }

void DomainCtx::note(std::string event,
                     std::vector<std::pair<std::string, TraceEvent::Value>> detail) const {
  m_->record_note(self_, std::move(event), std::move(detail));
}

void DomainCtx::install_image(BootImage image) const { m_->stage_install(self_, std::move(image)); }

bool DomainCtx::pop_stimulus(std::string& out) const {
  DomainRec& d = m_->domain(self_);
  if (d.stimuli.empty()) return false;
  out = std::move(d.stimuli.front());
  d.stimuli.pop_front();
  return true;
}

Task<void> idle_program(DomainCtx ctx) {
  for (;;) co_await ctx.spin(64);
}

// ---------------------------------------------------------------------------
// Shared hardware predicates (also driven directly by the checker).

std::optional<MailboxId> reset_guard_blocker(const std::vector<Mailbox>& mailboxes,
                                             DomainId target, Tick now) {
  for (const Mailbox& mb : mailboxes) {
    const std::optional<Quota>& q = mb.quota();
    if (!q || q->deadline <= now) continue;  // default ownership is not a session
    if (mb.owner() == target || mb.config().fixed_end == target) return mb.config().id;
  }
  return std::nullopt;
}

Route arbiter_route_of(const Mailbox& data_mb, DomainId untrusted_id, bool stuck_dma) {
  if (stuck_dma) return Route::DmaPath;
  return data_mb.owner() == untrusted_id ? Route::DmaPath : Route::FifoPath;
}

// ---------------------------------------------------------------------------
// Bootloaders (ROM programs).

namespace {

struct ImageAssembly {
  std::string name;
  std::uint32_t expect_len = 0;
  Bytes data;
  bool header_seen = false;

  // returns a completed image when a well-formed transfer ends
  std::optional<BootImage> feed(const Frame& f) {
    if (f.opcode == op::kImageHeader) {
      ByteReader r(f.payload);
      name = r.str_fixed(kBootFsNameLen);
      expect_len = r.u32();
      data.clear();
      header_seen = r.ok();
      return std::nullopt;
    }
    if (f.opcode == op::kData && header_seen) {
      data.insert(data.end(), f.payload.begin(), f.payload.end());
      return std::nullopt;
    }
    if (f.opcode == op::kDataEnd && header_seen && data.size() == expect_len) {
      BootImage img = BootImage::from_bytes(name, std::move(data));
      *this = ImageAssembly{};
      return img;
    }
    return std::nullopt;
  }
};

// Receives a staged image over the storage data plane once the manager
// delegates it here, measures it, and jumps to it.
Task<void> generic_bootloader(DomainCtx ctx, MailboxId boot_mb) {
  ImageAssembly asm_state;
  for (;;) {
    OpResult r = co_await ctx.mb_read(boot_mb);
    if (r.code != Err::Ok) continue;
    Result<Frame> f = Frame::decode(r.bytes);
    if (!f.ok()) continue;
    std::optional<BootImage> img = asm_state.feed(f.value());
    if (img) {
      co_await ctx.mb_yield(boot_mb);
      ctx.install_image(std::move(*img));
      co_return;
    }
  }
}

// The storage domain self-loads: its bootloader reads its own image straight
// from the boot partition on the device it controls.
Task<void> storage_bootloader(DomainCtx ctx) {
  OpResult table = co_await ctx.block_read(0, kBootFsTableBlocks);
  if (table.code != Err::Ok) {
    ctx.note("boot_abort", {{"image", ctx.decl().image}, {"why", "no-device"}});
    co_return;
  }
  Result<BootFsEntry> e = bootfs_lookup(table.bytes, ctx.decl().image);
  if (!e.ok()) {
    ctx.note("boot_abort",
             {{"image", ctx.decl().image}, {"why", std::string(err_name(e.error()))}});
    co_return;
  }
  std::uint32_t nblocks = (e.value().length + kBlockSize - 1) / kBlockSize;
  OpResult raw = co_await ctx.block_read(e.value().offset_block, nblocks);
  if (raw.code != Err::Ok) {
    ctx.note("boot_abort", {{"image", ctx.decl().image}, {"why", "short-read"}});
    co_return;
  }
  raw.bytes.resize(e.value().length);
  ctx.install_image(BootImage::from_bytes(ctx.decl().image, std::move(raw.bytes)));
}

// The manager's bootloader drives the storage service over the control plane
// it owns by default: look the image up in the boot filesystem, have it staged
// onto the data plane, then receive and measure it.
Task<void> rm_bootloader(DomainCtx ctx, IoWiring stor) {
  ByteWriter name;
  name.str_fixed(ctx.decl().image, kBootFsNameLen);
  if (!co_await send_with_retry(ctx, *stor.ctl_send,
                                Frame::make(op::kStorLookup, name.view()).encode()))
    co_return;

  for (;;) {
    OpResult r = co_await ctx.mb_read(*stor.ctl_recv);
    if (r.code != Err::Ok) continue;
    Result<Frame> f = Frame::decode(r.bytes);
    if (!f.ok()) continue;
    if (f.value().opcode == op::kStorEntry) break;
    if (f.value().opcode == op::kError) {
      ctx.note("boot_abort", {{"image", ctx.decl().image}, {"why", "not-found"}});
      co_return;
    }
  }

  if (!co_await send_with_retry(ctx, *stor.ctl_send,
                                Frame::make(op::kStorStage, name.view()).encode()))
    co_return;

  ImageAssembly asm_state;
  for (;;) {
    OpResult r = co_await ctx.mb_read(*stor.data_recv);
    if (r.code != Err::Ok) continue;
    Result<Frame> f = Frame::decode(r.bytes);
    if (!f.ok()) continue;
    std::optional<BootImage> img = asm_state.feed(f.value());
    if (img) {
      ctx.install_image(std::move(*img));
      co_return;
    }
  }
}

// Minimal machines without a storage domain boot straight from ROM.
Task<void> rom_bootloader(DomainCtx ctx) {
  BootImage img = ctx.machine().image(ctx.decl().image);
  co_await ctx.spin(1);
  ctx.install_image(std::move(img));
}

}  // namespace

// ---------------------------------------------------------------------------
// Build

namespace {
std::string g_last_build_error;  // single-threaded builds; diagnostic only
}

const std::string& Machine::last_build_error() { return g_last_build_error; }

Result<std::unique_ptr<Machine>> Machine::build(const MachineManifest& manifest,
                                                const BuildOpts& opts) {
  std::string violation = manifest.validate();
  if (!violation.empty()) {
    g_last_build_error = violation;
    return Err::InvalidManifest;
  }

  std::unique_ptr<Machine> m(new Machine());
  m->manifest_ = manifest;
  m->faults = opts.faults;
  m->rm_ = manifest.rm_id();
  m->untrusted_ = manifest.untrusted_id();

  std::uint8_t max_pcr = 0;
  for (const DomainDecl& d : manifest.domains) max_pcr = std::max(max_pcr, d.pcr);
  m->bank_ = PcrBank(max_pcr + 1);
  m->device_key_ = derive_key("device-key:" + manifest.name);

  for (const ImageDecl& decl : manifest.images) {
    BootImage img = BootImage::synthetic(decl.name, decl.size);
    if (opts.tampered_images.count(decl.name)) img.bytes[0] ^= 0xff;  // digest keeps the
    m->images_.emplace(decl.name, std::move(img));                    // advertised value
  }

  std::vector<DomainDecl> sorted = manifest.domains;
  std::sort(sorted.begin(), sorted.end(),
            [](const DomainDecl& a, const DomainDecl& b) { return a.id < b.id; });
  for (const DomainDecl& d : sorted) {
    DomainRec rec;
    rec.decl = d;
    rec.memory.assign(d.mem_size, 0);
    m->domains_.push_back(std::move(rec));
  }

  for (const MailboxConfig& cfg : manifest.mailboxes) {
    Result<Mailbox> mb = Mailbox::create(cfg);
    if (!mb.ok()) {
      g_last_build_error = "mailbox " + std::to_string(cfg.id) + " rejected";
      return Err::InvalidManifest;
    }
    m->mailboxes_.push_back(mb.take());
    IoWiring& w = m->wirings_[cfg.fixed_end];
    bool data = cfg.msg_size >= 512;
    if (cfg.fixed_role == FixedRole::FixedReader) {
      (data ? w.data_send : w.ctl_send) = cfg.id;
    } else {
      (data ? w.data_recv : w.ctl_recv) = cfg.id;
    }
  }

  for (const QueueDecl& q : manifest.queues) m->queues_.push_back(PermQueue{q, {}, {}});

  if (const DomainDecl* stor = manifest.find_by_device(DeviceKind::Storage)) {
    std::vector<BootImage> images;
    for (const ImageDecl& decl : manifest.images) images.push_back(m->images_.at(decl.name));
    Result<Bytes> fs = bootfs_format(images);
    if (!fs.ok()) {
      g_last_build_error = "boot filesystem does not fit its table";
      return Err::InvalidManifest;
    }
    std::size_t dev_bytes = static_cast<std::size_t>(stor->device_blocks) * kBlockSize;
    if (fs.value().size() > dev_bytes) {
      g_last_build_error = "boot images exceed the storage device";
      return Err::InvalidManifest;
    }
    m->storage_.blocks.assign(dev_bytes, 0);
    std::memcpy(m->storage_.blocks.data(), fs.value().data(), fs.value().size());
  }

  m->power_on();
  return m;
}

void Machine::power_on() {
  tick_ = 0;
  emit(TraceEvent{.event = "power_on"}.with("machine", manifest_.name));
  for (DomainRec& d : domains_) arm_bootloader(d);
}

void Machine::arm_bootloader(DomainRec& d) {
  d.program.reset();
  d.pending.reset();
  d.resume_point = {};
  d.started = false;
  d.faulted = false;
  d.halted = false;
  d.installed_image.clear();
  d.staged.reset();
  d.irq_pending = false;
  d.stimuli.clear();

  DomainCtx ctx(this, d.decl.id);
  const DomainDecl* stor = manifest_.find_by_device(DeviceKind::Storage);
  bool staged_boot = stor && wirings_.count(stor->id) && wirings_.at(stor->id).data_recv &&
                     wirings_.at(stor->id).ctl_send && wirings_.at(stor->id).ctl_recv;
  if (!staged_boot) {
    d.program = rom_bootloader(ctx);
  } else if (d.decl.id == stor->id) {
    d.program = storage_bootloader(ctx);
  } else if (d.decl.id == rm_) {
    d.program = rm_bootloader(ctx, wirings_.at(stor->id));
  } else {
    d.program = generic_bootloader(ctx, *wirings_.at(stor->id).data_recv);
  }
}

// ---------------------------------------------------------------------------
// Accessors

DomainRec& Machine::domain(DomainId id) {
  for (DomainRec& d : domains_)
    if (d.decl.id == id) return d;
  throw std::out_of_range("unknown domain");
}

const DomainRec* Machine::find_domain(DomainId id) const {
  for (const DomainRec& d : domains_)
    if (d.decl.id == id) return &d;
  return nullptr;
}

Mailbox& Machine::mailbox(MailboxId id) {
  for (Mailbox& mb : mailboxes_)
    if (mb.config().id == id) return mb;
  throw std::out_of_range("unknown mailbox");
}

const Mailbox* Machine::find_mailbox(MailboxId id) const {
  for (const Mailbox& mb : mailboxes_)
    if (mb.config().id == id) return &mb;
  return nullptr;
}

const IoWiring& Machine::wiring(DomainId io_domain) const { return wirings_.at(io_domain); }

std::uint8_t Machine::rm_queue_for(DomainId peer) const {
  for (const PermQueue& q : queues_) {
    if ((q.decl.end_a == rm_ && q.decl.end_b == peer) ||
        (q.decl.end_b == rm_ && q.decl.end_a == peer))
      return q.decl.id;
  }
  return 0xff;
}

std::uint8_t Machine::tpm_queue_for(DomainId d) const {
  for (const PermQueue& q : queues_) {
    if ((q.decl.end_a == d && q.decl.end_b == kTpmEndpoint) ||
        (q.decl.end_b == d && q.decl.end_a == kTpmEndpoint))
      return q.decl.id;
  }
  return 0xff;
}

const BootImage& Machine::image(const std::string& name) const { return images_.at(name); }

Digest Machine::image_digest(const std::string& name) const { return images_.at(name).digest; }

std::optional<Tick> Machine::note_tick(const std::string& tag) const {
  auto it = notes_.find(tag);
  if (it == notes_.end()) return std::nullopt;
  return it->second;
}

void Machine::record_note(DomainId d, std::string event,
                          std::vector<std::pair<std::string, TraceEvent::Value>> detail) {
  notes_.emplace(event, tick_);
  TraceEvent e;
  e.event = std::move(event);
  e.domain = d;
  e.detail = std::move(detail);
  emit(std::move(e));
}

Err Machine::force_domain_reset(DomainId target) {
  if (!find_domain(target)) return Err::UnknownDomain;
  if (std::optional<MailboxId> blocker = reset_guard_blocker(mailboxes_, target, tick_)) {
    (void)blocker;
    if (!faults.ignore_reset_guard) return Err::Blocked;
  }
  return do_domain_reset(target);
}

void Machine::stage_install(DomainId id, BootImage image) {
  DomainRec& d = domain(id);
  std::fill(d.memory.begin(), d.memory.end(), 0);
  std::size_t n = std::min(d.memory.size(), image.bytes.size());
  std::memcpy(d.memory.data(), image.bytes.data(), n);
  Result<Digest> pcr = bank_.reset_and_extend(d.decl.pcr, image.digest);
  emit(TraceEvent{.event = "bootload", .domain = id}
           .with("image", image.name)
           .with("digest", hex_encode(image.digest))
           .with("pcr", pcr.ok() ? hex_encode(pcr.value()) : "bad-index"));
  d.staged = std::move(image);
}

std::optional<MailboxId> Machine::reset_blocker(DomainId target) const {
  return reset_guard_blocker(mailboxes_, target, tick_);
}

Result<Route> Machine::arbiter_route(DomainId io_domain) const {
  for (const ArbiterDecl& a : manifest_.arbiters) {
    if (a.io_domain != io_domain) continue;
    const Mailbox* mb = find_mailbox(a.data_mailbox);
    if (!mb) return Err::NoArbiter;
    return arbiter_route_of(*mb, untrusted_, faults.arbiter_stuck_dma);
  }
  return Err::NoArbiter;
}

// ---------------------------------------------------------------------------
// Step loop

void Machine::step(std::uint64_t ticks) {
  for (std::uint64_t i = 0; i < ticks; ++i) {
    // (1) deadline expiry, before any domain acts
    for (Mailbox& mb : mailboxes_) {
      DomainId prev = mb.owner();
      if (mb.expire_check(tick_)) {
        emit(TraceEvent{.event = "expire", .mailbox = mb.config().id}
                 .with("owner_was", static_cast<std::uint64_t>(prev))
                 .with("cause", "time"));
      }
    }
    // (2) arbiter routes, recorded when they change
    for (const ArbiterDecl& a : manifest_.arbiters) {
      Result<Route> r = arbiter_route(a.io_domain);
      if (!r.ok()) continue;
      auto it = last_route_.find(a.io_domain);
      if (it == last_route_.end() || it->second != r.value()) {
        last_route_[a.io_domain] = r.value();
        emit(TraceEvent{.event = "arbiter", .domain = a.io_domain}
                 .with("route", r.value() == Route::DmaPath ? "dma" : "fifo"));
      }
    }
    // (3) one quantum per running domain, ascending id
    for (DomainRec& d : domains_) quantum(d);
    // (4) the TPM mediator drains this tick's requests in arrival order
    mediator_serve();
    ++tick_;
  }
}

std::optional<Tick> Machine::step_until_note(const std::string& tag, std::uint64_t max_ticks) {
  for (std::uint64_t i = 0; i < max_ticks; ++i) {
    if (std::optional<Tick> t = note_tick(tag)) return t;
    step(1);
  }
  return note_tick(tag);
}

void Machine::quantum(DomainRec& d) {
  if (d.faulted || d.halted || !d.program.valid()) return;
  if (!d.started) {
    d.started = true;
    d.resume_point = d.program.handle();
    d.resume_point.resume();
    if (d.program.done()) handle_completion(d);
    return;
  }
  if (d.program.done()) {
    handle_completion(d);
    return;
  }
  if (!d.pending) return;
  PendingOp op = std::move(*d.pending);
  d.pending.reset();
  if (!execute(d, op)) return;
  if (!d.program.valid() || !d.started) return;  // reset landed on ourselves
  d.resume_point.resume();
  if (d.program.done()) handle_completion(d);
}

void Machine::handle_completion(DomainRec& d) {
  if (std::exception_ptr ex = d.program.exception()) {
    d.faulted = true;
    std::string what = "unknown";
    try {
      std::rethrow_exception(ex);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    emit(TraceEvent{.event = "program_fault", .domain = d.decl.id}.with("what", what));
    return;
  }
  if (d.staged) {
    BootImage img = std::move(*d.staged);
    d.staged.reset();
    auto it = registry_.find(img.name);
    if (it == registry_.end()) {
      emit(TraceEvent{.event = "program_missing", .domain = d.decl.id}.with("image", img.name));
      d.halted = true;
      return;
    }
    d.installed_image = img.name;
    d.program = it->second(DomainCtx(this, d.decl.id));
    d.started = false;
    emit(TraceEvent{.event = "program_start", .domain = d.decl.id}.with("image", img.name));
    return;
  }
  emit(TraceEvent{.event = "program_exit", .domain = d.decl.id});
  d.halted = true;
}

void Machine::register_program(const std::string& image, ProgramFactory factory) {
  registry_[image] = std::move(factory);
}

// ---------------------------------------------------------------------------
// Primitive execution

Err Machine::exec_mb_write(DomainRec& d, ops::MbWrite& o) {
  Mailbox* mb = nullptr;
  for (Mailbox& m : mailboxes_)
    if (m.config().id == o.mb) mb = &m;
  if (!mb) return Err::NoAccess;
  bool was_session = !mb->default_owned();
  DomainId prev = mb->owner();
  Err e = mb->write(d.decl.id, o.msg, tick_);
  emit(TraceEvent{.event = "mb_write", .domain = d.decl.id, .mailbox = o.mb}
           .with("len", static_cast<std::uint64_t>(o.msg.size()))
           .with("result", std::string(err_name(e))));
  if (e == Err::Ok && was_session && mb->default_owned())
    emit(TraceEvent{.event = "expire", .mailbox = o.mb}
             .with("owner_was", static_cast<std::uint64_t>(prev))
             .with("cause", "msgs"));
  return e;
}

Err Machine::exec_mb_read(DomainRec& d, ops::MbRead& o, Bytes& out) {
  Mailbox* mb = nullptr;
  for (Mailbox& m : mailboxes_)
    if (m.config().id == o.mb) mb = &m;
  if (!mb) return Err::NoAccess;
  bool was_session = !mb->default_owned();
  DomainId prev = mb->owner();
  Result<Bytes> r = mb->read(d.decl.id, tick_);
  Err e = r.ok() ? Err::Ok : r.error();
  // reads are frequent; only denials and session-ending reads are traced
  if (e != Err::Ok && e != Err::QueueEmpty)
    emit(TraceEvent{.event = "mb_read", .domain = d.decl.id, .mailbox = o.mb}
             .with("result", std::string(err_name(e))));
  if (e == Err::Ok && was_session && mb->default_owned())
    emit(TraceEvent{.event = "expire", .mailbox = o.mb}
             .with("owner_was", static_cast<std::uint64_t>(prev))
             .with("cause", "msgs"));
  if (r.ok()) out = r.take();
  return e;
}

Err Machine::exec_dma(DomainRec& d, const ops::Dma& o, std::uint32_t& moved) {
  moved = 0;
  if (d.decl.id != untrusted_) return Err::NoAccess;
  const ArbiterDecl* arb = nullptr;
  for (const ArbiterDecl& a : manifest_.arbiters)
    if (a.io_domain == o.io_domain) arb = &a;
  if (!arb) return Err::NoArbiter;
  Result<Route> route = arbiter_route(o.io_domain);
  if (!route.ok() || route.value() != Route::DmaPath) return Err::RouteDisabled;
  std::uint64_t end = static_cast<std::uint64_t>(o.addr) + o.len;
  if (o.len == 0 || o.addr < arb->window_base ||
      end > static_cast<std::uint64_t>(arb->window_base) + arb->window_len ||
      end > d.memory.size())
    return Err::WindowViolation;

  if (o.dir == DmaDir::Out) {
    Bytes payload(d.memory.begin() + o.addr, d.memory.begin() + o.addr + o.len);
    if (link_.down) return Err::LinkDown;
    emit(TraceEvent{.event = "link_tx", .domain = o.io_domain}
             .with("len", static_cast<std::uint64_t>(payload.size()))
             .with("path", "dma"));
    if (link_.peer) {
      for (Bytes& reply : link_.peer(payload))
        link_.rx.emplace_back(tick_ + link_.delay, std::move(reply));
    }
    moved = o.len;
  } else {
    if (link_.rx.empty() || link_.rx.front().first > tick_) return Err::Ok;  // nothing yet
    Bytes payload = std::move(link_.rx.front().second);
    link_.rx.pop_front();
    moved = static_cast<std::uint32_t>(std::min<std::size_t>(o.len, payload.size()));
    std::memcpy(d.memory.data() + o.addr, payload.data(), moved);
  }
  if (moved > 0) {
    d.irq_pending = true;
    emit(TraceEvent{.event = "dma_irq", .domain = d.decl.id});
  }
  return Err::Ok;
}

Err Machine::do_domain_reset(DomainId target) {
  DomainRec& t = domain(target);
  std::fill(t.memory.begin(), t.memory.end(), 0);
  arm_bootloader(t);
  for (Mailbox& mb : mailboxes_) {
    if (mb.config().fixed_end == target || mb.owner() == target) {
      mb.hw_reset();
      emit(TraceEvent{.event = "mb_reset", .mailbox = mb.config().id});
    }
  }
  emit(TraceEvent{.event = "domain_reset", .domain = target});
  return Err::Ok;
}

bool Machine::execute(DomainRec& d, PendingOp& op) {
  OpResult res;

  if (auto* spin = std::get_if<ops::Spin>(&op)) {
    if (spin->left > 1) {
      d.pending = ops::Spin{spin->left - 1};
      return false;
    }
    d.result = res;
    return true;
  }

  if (auto* w = std::get_if<ops::MbWrite>(&op)) {
    res.code = exec_mb_write(d, *w);
  } else if (auto* r = std::get_if<ops::MbRead>(&op)) {
    res.code = exec_mb_read(d, *r, res.bytes);
  } else if (auto* s = std::get_if<ops::MbStatus>(&op)) {
    const Mailbox* target = find_mailbox(s->mb);
    if (!target) {
      res.code = Err::NoAccess;
    } else {
      res.status = mailbox(s->mb).read_status(d.decl.id, tick_);
      emit(TraceEvent{.event = "mb_status", .domain = d.decl.id, .mailbox = s->mb}
               .with("dummy", res.status.is_dummy));
    }
  } else if (auto* del = std::get_if<ops::MbDelegate>(&op)) {
    const Mailbox* target = find_mailbox(del->mb);
    if (!target) {
      res.code = Err::NoAccess;
    } else {
      res.code = mailbox(del->mb).delegate_to(d.decl.id, del->target, del->quota, tick_);
      TraceEvent e{.event = "delegate", .domain = d.decl.id, .mailbox = del->mb};
      e.with("target", static_cast<std::uint64_t>(del->target));
      if (del->quota.msgs) e.with("msgs", static_cast<std::uint64_t>(*del->quota.msgs));
      else e.with("msgs_inf", true);
      e.with("deadline", del->quota.deadline).with("result", std::string(err_name(res.code)));
      emit(std::move(e));
    }
  } else if (auto* y = std::get_if<ops::MbYield>(&op)) {
    const Mailbox* target = find_mailbox(y->mb);
    if (!target) {
      res.code = Err::NoAccess;
    } else {
      res.code = mailbox(y->mb).yield_access(d.decl.id, tick_);
      emit(TraceEvent{.event = "yield", .domain = d.decl.id, .mailbox = y->mb}
               .with("result", std::string(err_name(res.code))));
    }
  } else if (auto* qs = std::get_if<ops::QSend>(&op)) {
    res.code = Err::NoAccess;
    for (PermQueue& q : queues_) {
      if (q.decl.id != qs->queue) continue;
      if (q.decl.end_a != d.decl.id && q.decl.end_b != d.decl.id) break;
      std::deque<PermQueue::Msg>& dir = q.decl.end_a == d.decl.id ? q.to_b : q.to_a;
      if (dir.size() >= q.decl.depth) {
        res.code = Err::QueueFull;
      } else if (qs->msg.size() > q.decl.msg_size) {
        res.code = Err::MsgTooLarge;
      } else {
        dir.push_back({std::move(qs->msg), tick_, d.decl.id});
        res.code = Err::Ok;
      }
      break;
    }
  } else if (auto* qr = std::get_if<ops::QRecv>(&op)) {
    res.code = Err::NoAccess;
    for (PermQueue& q : queues_) {
      if (q.decl.id != qr->queue) continue;
      if (q.decl.end_a != d.decl.id && q.decl.end_b != d.decl.id) break;
      std::deque<PermQueue::Msg>& dir = q.decl.end_a == d.decl.id ? q.to_a : q.to_b;
      if (dir.empty() || dir.front().arrival > tick_) {
        res.code = Err::QueueEmpty;
      } else {
        res.bytes = std::move(dir.front().bytes);
        dir.pop_front();
        res.code = Err::Ok;
      }
      break;
    }
  } else if (auto* pr = std::get_if<ops::PmuReset>(&op)) {
    if (d.decl.id != rm_) {
      res.code = Err::NotRm;
    } else if (!find_domain(pr->target)) {
      res.code = Err::UnknownDomain;
    } else {
      std::optional<MailboxId> blocker = reset_blocker(pr->target);
      if (blocker && !faults.ignore_reset_guard) {
        res.code = Err::Blocked;
        res.blocker = *blocker;
      } else {
        res.code = Err::Ok;
      }
    }
    {
      TraceEvent e{.event = "reset_request", .domain = d.decl.id};
      e.with("target", static_cast<std::uint64_t>(pr->target))
          .with("outcome", std::string(err_name(res.code)));
      if (res.code == Err::Blocked) e.with("blocking_mailbox", static_cast<std::uint64_t>(res.blocker));
      emit(std::move(e));
    }
    if (res.code == Err::Ok) {
      bool self = pr->target == d.decl.id;
      do_domain_reset(pr->target);
      if (self) return false;  // our coroutine is gone; the bootloader starts next quantum
    }
  } else if (auto* dm = std::get_if<ops::Dma>(&op)) {
    res.code = exec_dma(d, *dm, res.len);
    emit(TraceEvent{.event = "dma", .domain = d.decl.id}
             .with("io", static_cast<std::uint64_t>(dm->io_domain))
             .with("dir", dm->dir == DmaDir::In ? "in" : "out")
             .with("addr", static_cast<std::uint64_t>(dm->addr))
             .with("len", static_cast<std::uint64_t>(res.len))
             .with("result", std::string(err_name(res.code))));
  } else if (auto* tw = std::get_if<ops::TermWrite>(&op)) {
    if (d.decl.kind.tag != DomainKindTag::Io || d.decl.kind.device != DeviceKind::SerialOut) {
      res.code = Err::NoAccess;
    } else {
      std::string text = to_string(tw->text);
      terminal_.sink += text;
      std::string shown;  // keep the trace valid utf-8 whatever the sink got
      for (char c : text)
        shown += (c == '\n' || (c >= 0x20 && c < 0x7f)) ? std::string(1, c) : "?";
      emit(TraceEvent{.event = "term_out", .domain = d.decl.id}.with("text", shown));
    }
  } else if (std::get_if<ops::SerialFetch>(&op)) {
    if (d.decl.kind.tag != DomainKindTag::Io || d.decl.kind.device != DeviceKind::SerialIn) {
      res.code = Err::NoAccess;
    } else if (terminal_.input.empty() || terminal_.input.front().first > tick_) {
      res.code = Err::QueueEmpty;
    } else {
      std::string line = std::move(terminal_.input.front().second);
      terminal_.input.pop_front();
      emit(TraceEvent{.event = "term_in", .domain = d.decl.id}.with("text", line));
      res.bytes = to_bytes(line);
    }
  } else if (auto* lt = std::get_if<ops::LinkTx>(&op)) {
    if (d.decl.kind.tag != DomainKindTag::Io || d.decl.kind.device != DeviceKind::Network) {
      res.code = Err::NoAccess;
    } else if (link_.down) {
      res.code = Err::LinkDown;
    } else {
      emit(TraceEvent{.event = "link_tx", .domain = d.decl.id}
               .with("len", static_cast<std::uint64_t>(lt->payload.size()))
               .with("path", "fifo"));
      if (link_.peer) {
        for (Bytes& reply : link_.peer(lt->payload))
          link_.rx.emplace_back(tick_ + link_.delay, std::move(reply));
      }
    }
  } else if (std::get_if<ops::LinkRx>(&op)) {
    if (d.decl.kind.tag != DomainKindTag::Io || d.decl.kind.device != DeviceKind::Network) {
      res.code = Err::NoAccess;
    } else {
      Result<Route> route = arbiter_route(d.decl.id);
      bool diverted = route.ok() && route.value() == Route::DmaPath;
      if (diverted || link_.rx.empty() || link_.rx.front().first > tick_) {
        res.code = Err::QueueEmpty;
      } else {
        res.bytes = std::move(link_.rx.front().second);
        link_.rx.pop_front();
      }
    }
  } else if (auto* br = std::get_if<ops::BlockRead>(&op)) {
    if (d.decl.kind.tag != DomainKindTag::Io || d.decl.kind.device != DeviceKind::Storage) {
      res.code = Err::NoAccess;
    } else if (static_cast<std::uint64_t>(br->first) + br->count > storage_.block_count()) {
      res.code = Err::BadIndex;
    } else {
      res.bytes.assign(storage_.blocks.begin() + static_cast<std::size_t>(br->first) * kBlockSize,
                       storage_.blocks.begin() +
                           static_cast<std::size_t>(br->first + br->count) * kBlockSize);
    }
  } else if (auto* bw = std::get_if<ops::BlockWrite>(&op)) {
    if (d.decl.kind.tag != DomainKindTag::Io || d.decl.kind.device != DeviceKind::Storage) {
      res.code = Err::NoAccess;
    } else if (bw->data.size() % kBlockSize != 0 ||
               static_cast<std::uint64_t>(bw->first) + bw->data.size() / kBlockSize >
                   storage_.block_count()) {
      res.code = Err::BadIndex;
    } else {
      std::memcpy(storage_.blocks.data() + static_cast<std::size_t>(bw->first) * kBlockSize,
                  bw->data.data(), bw->data.size());
    }
  } else if (std::get_if<ops::SensorRead>(&op)) {
    if (d.decl.kind.tag != DomainKindTag::Io || d.decl.kind.device != DeviceKind::Sensor) {
      res.code = Err::NoAccess;
    } else {
      res.value = sensor_.next < sensor_.values.size() ? sensor_.values[sensor_.next++]
                                                       : sensor_.fallback;
    }
  } else if (auto* pa = std::get_if<ops::PumpActuate>(&op)) {
    if (d.decl.kind.tag != DomainKindTag::Io || d.decl.kind.device != DeviceKind::Pump) {
      res.code = Err::NoAccess;
    } else {
      pump_log_.push_back(pa->units);
      emit(TraceEvent{.event = "pump", .domain = d.decl.id}
               .with("units", static_cast<std::uint64_t>(pa->units)));
    }
  }

  d.result = std::move(res);
  return true;
}

// ---------------------------------------------------------------------------
// TPM mediator

void Machine::mediator_serve() {
  for (;;) {
    PermQueue* best_q = nullptr;
    bool best_toward_a = false;
    for (PermQueue& q : queues_) {
      bool a_is_tpm = q.decl.end_a == kTpmEndpoint;
      bool b_is_tpm = q.decl.end_b == kTpmEndpoint;
      if (!a_is_tpm && !b_is_tpm) continue;
      std::deque<PermQueue::Msg>& in = a_is_tpm ? q.to_a : q.to_b;
      std::deque<PermQueue::Msg>& out = a_is_tpm ? q.to_b : q.to_a;
      if (in.empty() || in.front().arrival > tick_) continue;
      if (out.size() >= q.decl.depth) continue;  // reply side full: retry next tick
      if (!best_q) {
        best_q = &q;
        best_toward_a = a_is_tpm;
        continue;
      }
      std::deque<PermQueue::Msg>& cur =
          best_toward_a ? best_q->to_a : best_q->to_b;
      const PermQueue::Msg& lhs = in.front();
      const PermQueue::Msg& rhs = cur.front();
      if (lhs.arrival < rhs.arrival ||
          (lhs.arrival == rhs.arrival && lhs.sender < rhs.sender)) {
        best_q = &q;
        best_toward_a = a_is_tpm;
      }
    }
    if (!best_q) return;

    std::deque<PermQueue::Msg>& in = best_toward_a ? best_q->to_a : best_q->to_b;
    std::deque<PermQueue::Msg>& out = best_toward_a ? best_q->to_b : best_q->to_a;
    PermQueue::Msg msg = std::move(in.front());
    in.pop_front();

    Frame reply;
    Result<Frame> f = Frame::decode(msg.bytes);
    if (!f.ok()) {
      reply = Frame::error(Err::BadFrame);
    } else if (f.value().opcode == op::kTpmExtend) {
      ByteReader r(f.value().payload);
      std::uint8_t idx = r.u8();
      Bytes dig = r.bytes(32);
      const DomainRec* sender = find_domain(msg.sender);
      if (!r.ok() || !sender) {
        reply = Frame::error(Err::BadFrame);
      } else if (idx != sender->decl.pcr) {
        reply = Frame::make(op::kTpmErr, Frame::error(Err::ForbiddenExtend).payload);
        emit(TraceEvent{.event = "tpm_denied", .domain = msg.sender}
                 .with("pcr", static_cast<std::uint64_t>(idx)));
      } else {
        Digest d;
        std::copy(dig.begin(), dig.end(), d.begin());
        Result<Digest> nv = bank_.extend(idx, d);
        emit(TraceEvent{.event = "pcr_extend", .domain = msg.sender}
                 .with("pcr", static_cast<std::uint64_t>(idx))
                 .with("digest", hex_encode(d))
                 .with("value", nv.ok() ? hex_encode(nv.value()) : "bad-index"));
        ByteWriter w;
        if (nv.ok()) w.bytes(nv.value());
        reply = Frame::make(op::kTpmOk, w.take());
      }
    } else if (f.value().opcode == op::kTpmQuote) {
      ByteReader r(f.value().payload);
      Bytes nonce_raw = r.bytes(kNonceLen);
      std::uint8_t nsel = r.u8();
      std::vector<std::uint8_t> sel;
      for (std::uint8_t i = 0; i < nsel; ++i) sel.push_back(r.u8());
      if (!r.ok()) {
        reply = Frame::error(Err::BadFrame);
      } else {
        Nonce nonce{};
        std::copy(nonce_raw.begin(), nonce_raw.end(), nonce.begin());
        Result<Quote> q = make_quote(bank_, nonce, sel, device_key_);
        if (!q.ok()) {
          reply = Frame::make(op::kTpmErr, Frame::error(q.error()).payload);
        } else {
          emit(TraceEvent{.event = "quote", .domain = msg.sender}
                   .with("nsel", static_cast<std::uint64_t>(sel.size())));
          reply = Frame::make(op::kTpmQuoteReply, q.value().serialize());
        }
      }
    } else {
      reply = Frame::error(Err::BadFrame);
    }
    out.push_back({reply.encode(), tick_, kTpmEndpoint});
  }
}

}  // namespace splitsim
