#include "splitsim/workload.hpp"

#include <sstream>

#include "splitsim/proto.hpp"
#include "splitsim/resource_manager.hpp"
#include "splitsim/services.hpp"

namespace splitsim {

std::string WorkloadAction::serialize() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Spin: os << "spin " << a; break;
    case Kind::StorageRead: os << "storage_read " << a << " " << b; break;
    case Kind::StorageWrite: os << "storage_write " << a << " " << b << " " << c; break;
    case Kind::StorageStream: os << "storage_stream " << a << " " << b; break;
    case Kind::NetSend: os << "net_send " << a; break;
    case Kind::NetRecv: os << "net_recv " << a; break;
    case Kind::SnoopStatus: os << "snoop_status " << a; break;
    case Kind::RogueWrite: os << "rogue_write " << a; break;
    case Kind::RogueRead: os << "rogue_read " << a; break;
    case Kind::StorageIntrude: os << "storage_intrude " << a << " " << b; break;
    case Kind::DmaRaw: os << "dma_raw " << a << " " << b << " " << c; break;
    case Kind::DevicePoke: os << "poke_device " << a; break;
    case Kind::Note: os << "note " << tag; break;
  }
  return os.str();
}

std::optional<WorkloadAction> WorkloadAction::parse(const std::string& line) {
  std::istringstream is(line);
  std::string op;
  is >> op;
  WorkloadAction w;
  if (op == "spin") { w.kind = Kind::Spin; is >> w.a; }
  else if (op == "storage_read") { w.kind = Kind::StorageRead; is >> w.a >> w.b; }
  else if (op == "storage_write") { w.kind = Kind::StorageWrite; is >> w.a >> w.b >> w.c; }
  else if (op == "storage_stream") { w.kind = Kind::StorageStream; is >> w.a >> w.b; }
  else if (op == "net_send") { w.kind = Kind::NetSend; is >> w.a; }
  else if (op == "net_recv") { w.kind = Kind::NetRecv; is >> w.a; }
  else if (op == "snoop_status") { w.kind = Kind::SnoopStatus; is >> w.a; }
  else if (op == "rogue_write") { w.kind = Kind::RogueWrite; is >> w.a; }
  else if (op == "rogue_read") { w.kind = Kind::RogueRead; is >> w.a; }
  else if (op == "storage_intrude") { w.kind = Kind::StorageIntrude; is >> w.a >> w.b; }
  else if (op == "dma_raw") { w.kind = Kind::DmaRaw; is >> w.a >> w.b >> w.c; }
  else if (op == "poke_device") { w.kind = Kind::DevicePoke; is >> w.a; }
  else if (op == "note") { w.kind = Kind::Note; is >> w.tag; }
  else return std::nullopt;
  if (is.fail() && w.kind != Kind::Note) return std::nullopt;
  return w;
}

namespace {

struct CompatState {
  std::uint8_t rm_ch = 0xff;
  std::vector<MailboxId> session;  // currently granted storage/net mailboxes
  Tick deadline = 0;
  bool have_session = false;
  DomainId resource = 0;
};

// Request a resource from the manager, blocking the script until granted.
// Reports the blocked duration so contention runs can account for it.
Task<bool> acquire(DomainCtx ctx, CompatState& st, DomainId resource,
                   std::optional<std::uint32_t> msgs, std::uint32_t ticks) {
  ByteWriter req;
  req.u8(resource);
  req.u32(msgs ? *msgs : 0xffffffffu);
  req.u32(ticks);
  req.u8(2);
  Tick asked = ctx.now();
  if (!co_await q_send_retry(ctx, st.rm_ch, Frame::make(op::kRmRequest, req.take()).encode()))
    co_return false;
  for (std::uint32_t polls = 0; polls < 1u << 16; ++polls) {
    OpResult r = co_await ctx.q_recv(st.rm_ch);
    if (r.code != Err::Ok) continue;
    Result<Frame> f = Frame::decode(r.bytes);
    if (!f.ok()) continue;
    if (f.value().opcode == op::kRmQueued) continue;
    if (f.value().opcode != op::kRmGrant) co_return false;
    ByteReader g(f.value().payload);
    std::uint8_t n = g.u8();
    st.session.clear();
    for (std::uint8_t i = 0; i < n; ++i) st.session.push_back(g.u8());
    g.u32();
    st.deadline = g.u64();
    st.have_session = true;
    st.resource = resource;
    ctx.note("compat_granted", {{"resource", static_cast<std::uint64_t>(resource)},
                                {"blocked", ctx.now() - asked}});
    co_return true;
  }
  co_return false;
}

Task<void> release(DomainCtx ctx, CompatState& st) {
  if (!st.have_session) co_return;
  if (ctx.now() < st.deadline)
    for (MailboxId mb : st.session) co_await ctx.mb_yield(mb);
  st.have_session = false;
  st.session.clear();
}

bool session_usable(const DomainCtx& ctx, const CompatState& st, DomainId resource) {
  return st.have_session && st.resource == resource && ctx.now() + 4 < st.deadline;
}

Task<bool> stor_cmd_reply(DomainCtx ctx, const IoWiring& w, Frame f, std::uint16_t want_op) {
  if (!co_await send_frame_retry(ctx, *w.ctl_send, std::move(f), 64)) co_return false;
  Result<Frame> r = co_await recv_frame(ctx, *w.ctl_recv, 256);
  co_return r.ok() && r.value().opcode == want_op;
}

// One storage acquisition: authenticate, run `body`, yield.
Task<bool> storage_op(DomainCtx ctx, CompatState& st, std::uint32_t first, std::uint16_t count,
                      bool write, std::uint8_t fill, bool intrude) {
  Machine& m = ctx.machine();
  const DomainDecl* stor = m.manifest().find_by_device(DeviceKind::Storage);
  if (!stor) co_return false;
  const IoWiring& w = m.wiring(stor->id);
  if (!session_usable(ctx, st, stor->id)) {
    co_await release(ctx, st);
    if (!co_await acquire(ctx, st, stor->id, std::nullopt, 64)) co_return false;
  }

  bool ok = true;
  std::string image = m.domain(ctx.self()).installed_image;
  if (image.empty()) image = ctx.decl().image;
  ByteWriter a;
  if (intrude) {
    Digest wrong = sha256("not-my-credential");
    a.bytes(wrong);
    bool authed = co_await stor_cmd_reply(ctx, w, Frame::make(op::kStorAuth, a.take()), op::kOk);
    ctx.note("compat_intrude_auth", {{"accepted", authed}});
    if (!authed) {
      // fall back to our own partition credential, then poke outside it
      ByteWriter own;
      own.bytes(client_credential(image));
      if (!co_await stor_cmd_reply(ctx, w, Frame::make(op::kStorAuth, own.take()), op::kOk)) {
        co_await release(ctx, st);
        co_return false;
      }
    }
  } else {
    a.bytes(client_credential(image));
    if (!co_await stor_cmd_reply(ctx, w, Frame::make(op::kStorAuth, a.take()), op::kOk)) {
      co_await release(ctx, st);
      co_return false;
    }
  }

  ByteWriter req;
  req.u32(first);
  req.u16(count);
  if (!write) {
    if (!co_await send_frame_retry(ctx, *w.ctl_send, Frame::make(op::kStorRead, req.take()), 64)) {
      ok = false;
    } else {
      std::size_t want = static_cast<std::size_t>(count) * kBlockSize;
      Bytes data;
      bool done = false, failed = false;
      for (std::uint32_t polls = 0; polls < 4096 && !done && !failed; ++polls) {
        OpResult ctl = co_await ctx.mb_read(*w.ctl_recv);
        if (ctl.code == Err::Ok) {
          Result<Frame> f = Frame::decode(ctl.bytes);
          if (f.ok() && f.value().opcode == op::kError) {
            ByteReader er(f.value().payload);
            Err what = static_cast<Err>(er.u16());
            ctx.note("compat_storage_denied", {{"why", std::string(err_name(what))}});
            failed = true;
          }
        }
        OpResult d = co_await ctx.mb_read(*w.data_recv);
        if (d.code == Err::Ok) {
          Result<Frame> f = Frame::decode(d.bytes);
          if (f.ok() && f.value().opcode == op::kData)
            data.insert(data.end(), f.value().payload.begin(), f.value().payload.end());
          if (f.ok() && f.value().opcode == op::kDataEnd) done = true;
        }
      }
      ok = done && data.size() == want;
      if (ok)
        ctx.note("compat_read", {{"first", static_cast<std::uint64_t>(first)},
                                 {"count", static_cast<std::uint64_t>(count)}});
    }
  } else {
    if (!co_await send_frame_retry(ctx, *w.ctl_send, Frame::make(op::kStorWrite, req.take()), 64)) {
      ok = false;
    } else {
      Bytes data(static_cast<std::size_t>(count) * kBlockSize, fill);
      std::size_t cap = m.find_mailbox(*w.data_send)->config().msg_size - kFrameHeader;
      for (std::size_t pos = 0; pos < data.size(); pos += cap) {
        std::size_t n = std::min(cap, data.size() - pos);
        Bytes chunk(data.begin() + static_cast<std::ptrdiff_t>(pos),
                    data.begin() + static_cast<std::ptrdiff_t>(pos + n));
        if (!co_await send_frame_retry(ctx, *w.data_send, Frame::make(op::kData, std::move(chunk)),
                                       256)) {
          ok = false;
          break;
        }
      }
      if (ok) {
        Result<Frame> r = co_await recv_frame(ctx, *w.ctl_recv, 512);
        ok = r.ok() && r.value().opcode == op::kOk;
        if (r.ok() && r.value().opcode == op::kError) {
          ByteReader er(r.value().payload);
          ctx.note("compat_storage_denied",
                   {{"why", std::string(err_name(static_cast<Err>(er.u16())))}});
        }
      }
    }
  }
  co_await release(ctx, st);
  co_return ok;
}

}  // namespace

Task<void> untrusted_workload(DomainCtx ctx, std::vector<WorkloadAction> script) {
  Machine& m = ctx.machine();
  CompatState st;
  st.rm_ch = m.rm_queue_for(ctx.self());
  std::size_t ip = 0;

  for (;;) {
    WorkloadAction act;
    if (ip < script.size()) {
      act = script[ip++];
    } else {
      std::string line;
      if (ctx.pop_stimulus(line)) {
        std::optional<WorkloadAction> parsed = WorkloadAction::parse(line);
        if (!parsed) continue;
        act = *parsed;
      } else {
        co_await ctx.spin(1);
        continue;
      }
    }

    switch (act.kind) {
      case WorkloadAction::Kind::Spin:
        co_await ctx.spin(act.a ? act.a : 1);
        break;
      case WorkloadAction::Kind::Note:
        ctx.note(act.tag);
        break;
      case WorkloadAction::Kind::StorageRead:
        co_await storage_op(ctx, st, act.a, static_cast<std::uint16_t>(act.b), false, 0, false);
        break;
      case WorkloadAction::Kind::StorageWrite:
        co_await storage_op(ctx, st, act.a, static_cast<std::uint16_t>(act.b), true,
                            static_cast<std::uint8_t>(act.c), false);
        break;
      case WorkloadAction::Kind::StorageStream: {
        for (std::uint32_t i = 0; i < act.a; ++i)
          co_await storage_op(ctx, st, act.b, 1, false, 0, false);
        ctx.note("compat_stream_done");
        break;
      }
      case WorkloadAction::Kind::StorageIntrude:
        co_await storage_op(ctx, st, act.a, static_cast<std::uint16_t>(act.b), false, 0, true);
        break;
      case WorkloadAction::Kind::NetSend: {
        const DomainDecl* net = m.manifest().find_by_device(DeviceKind::Network);
        if (!net) break;
        if (!session_usable(ctx, st, net->id)) {
          co_await release(ctx, st);
          if (!co_await acquire(ctx, st, net->id, std::nullopt, 256)) break;
        }
        const ArbiterDecl* arb = nullptr;
        for (const ArbiterDecl& a : m.manifest().arbiters)
          if (a.io_domain == net->id) arb = &a;
        if (!arb) break;
        std::uint32_t len = std::min(act.a, arb->window_len);
        Bytes& mem = ctx.memory();
        for (std::uint32_t i = 0; i < len; ++i)
          mem[arb->window_base + i] = static_cast<std::uint8_t>(i * 31 + 7);
        OpResult r = co_await ctx.dma(net->id, DmaDir::Out, arb->window_base, len);
        ctx.note("compat_net_send", {{"len", static_cast<std::uint64_t>(r.len)},
                                     {"result", std::string(err_name(r.code))}});
        break;
      }
      case WorkloadAction::Kind::NetRecv: {
        const DomainDecl* net = m.manifest().find_by_device(DeviceKind::Network);
        if (!net) break;
        const ArbiterDecl* arb = nullptr;
        for (const ArbiterDecl& a : m.manifest().arbiters)
          if (a.io_domain == net->id) arb = &a;
        if (!arb) break;
        std::uint32_t len = std::min(act.a, arb->window_len);
        for (std::uint32_t polls = 0; polls < 512; ++polls) {
          OpResult r = co_await ctx.dma(net->id, DmaDir::In, arb->window_base, len);
          if (r.code != Err::Ok) {
            ctx.note("compat_net_recv", {{"result", std::string(err_name(r.code))}});
            break;
          }
          if (r.len > 0) {
            ctx.note("compat_net_recv", {{"len", static_cast<std::uint64_t>(r.len)},
                                         {"result", "ok"}});
            break;
          }
        }
        break;
      }
      case WorkloadAction::Kind::DmaRaw: {
        const DomainDecl* net = m.manifest().find_by_device(DeviceKind::Network);
        if (!net) break;
        OpResult r = co_await ctx.dma(net->id, act.a == 0 ? DmaDir::In : DmaDir::Out, act.b,
                                      act.c);
        ctx.note("attack_dma", {{"addr", static_cast<std::uint64_t>(act.b)},
                                {"len", static_cast<std::uint64_t>(r.len)},
                                {"result", std::string(err_name(r.code))}});
        break;
      }
      case WorkloadAction::Kind::DevicePoke: {
        DomainId dev = static_cast<DomainId>(act.a);
        const DomainRec* rec = m.find_domain(dev);
        if (!rec || rec->decl.kind.tag != DomainKindTag::Io) break;
        co_await release(ctx, st);
        if (!co_await acquire(ctx, st, dev, 8, 96)) {
          ctx.note("attack_stale", {{"result", "no-grant"}});
          break;
        }
        const IoWiring& w = m.wiring(dev);
        Frame f = rec->decl.kind.device == DeviceKind::Pump
                      ? Frame::make(op::kPumpDose, Bytes{1, 0, 0, 0})
                      : Frame::make(op::kPrint, to_bytes("stale"));
        co_await send_frame_retry(ctx, *w.ctl_send, std::move(f), 16);
        if (w.ctl_recv) {
          Result<Frame> r = co_await recv_frame(ctx, *w.ctl_recv, 64);
          std::string outcome = "none";
          if (r.ok() && r.value().opcode == op::kError) {
            ByteReader er(r.value().payload);
            outcome = std::string(err_name(static_cast<Err>(er.u16())));
          } else if (r.ok()) {
            outcome = std::string(frame_op_name(r.value().opcode));
          }
          ctx.note("attack_stale", {{"result", outcome}});
        } else {
          ctx.note("attack_stale", {{"result", "sent"}});
        }
        co_await release(ctx, st);
        break;
      }
      case WorkloadAction::Kind::SnoopStatus: {
        OpResult r = co_await ctx.mb_status(static_cast<MailboxId>(act.a));
        ctx.note("attack_snoop", {{"mailbox", static_cast<std::uint64_t>(act.a)},
                                  {"dummy", r.status.is_dummy}});
        break;
      }
      case WorkloadAction::Kind::RogueWrite: {
        OpResult r = co_await ctx.mb_write(static_cast<MailboxId>(act.a),
                                           Frame::make(op::kPrint, to_bytes("pwned")).encode());
        ctx.note("attack_write", {{"mailbox", static_cast<std::uint64_t>(act.a)},
                                  {"result", std::string(err_name(r.code))}});
        break;
      }
      case WorkloadAction::Kind::RogueRead: {
        OpResult r = co_await ctx.mb_read(static_cast<MailboxId>(act.a));
        ctx.note("attack_read", {{"mailbox", static_cast<std::uint64_t>(act.a)},
                                 {"result", std::string(err_name(r.code))}});
        break;
      }
    }
  }
}

void register_workload(Machine& m, std::vector<WorkloadAction> script) {
  m.register_program("workload", [script](DomainCtx ctx) {
    return untrusted_workload(ctx, script);
  });
}

}  // namespace splitsim
