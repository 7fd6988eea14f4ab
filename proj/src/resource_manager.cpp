#include "splitsim/resource_manager.hpp"

#include <algorithm>
#include <random>

#include "splitsim/proto.hpp"
#include "splitsim/services.hpp"

namespace splitsim {

std::uint32_t client_partition_base(DomainId requester) {
  return 1024 + static_cast<std::uint32_t>(requester) * 256;
}

namespace {

constexpr std::uint32_t kClientPartitionBlocks = 256;

struct PendingReq {
  DomainId requester = 0;
  DomainId resource = 0;
  std::optional<std::uint32_t> msgs;
  std::uint32_t ticks = 0;
};

struct ResourceRt {
  std::vector<MailboxId> set;      // mailboxes fixed to the resource domain
  bool restricted = false;         // storage: bind before delegation, no reset
  bool has_arbiter = false;
  bool is_tee = false;             // peer-IPC resource
  std::deque<PendingReq> waiters;
  Tick busy_until = 0;
  DomainId holder = 0;
  bool held = false;
};

struct RmState {
  RmConfig cfg;
  std::map<DomainId, ResourceRt> resources;
  std::vector<std::pair<std::uint8_t, DomainId>> channels;  // queue id, peer
  std::map<DomainId, std::string> staged_image;
  std::set<std::uint16_t> allocated_parts;
  std::set<std::string> fired_hostiles;
  std::mt19937_64 inject_rng{1};
  bool ui_busy = false;
  std::size_t duty = 0;
  std::size_t poll_cursor = 0;
};

// ---------------------------------------------------------------------------

Task<bool> stage_domain(DomainCtx ctx, RmState& st, DomainId target,
                        const std::string& image) {
  Machine& m = ctx.machine();
  const DomainDecl* stor = m.manifest().find_by_device(DeviceKind::Storage);
  if (!stor) co_return false;
  const IoWiring& w = m.wiring(stor->id);

  // the data plane must be ours before it can be handed to the bootloader
  for (std::uint32_t i = 0;; ++i) {
    if (i > st.cfg.boot_window) co_return false;
    OpResult s = co_await ctx.mb_status(*w.data_recv);
    if (!s.status.is_dummy && s.status.owner == ctx.self()) break;
  }
  OpResult del = co_await ctx.mb_delegate(
      *w.data_recv, target, Quota::unlimited_msgs(ctx.now() + st.cfg.boot_window));
  if (del.code != Err::Ok) co_return false;

  ByteWriter name;
  name.str_fixed(image, kBootFsNameLen);
  if (!co_await send_frame_retry(ctx, *w.ctl_send, Frame::make(op::kStorStage, name.view())))
    co_return false;

  for (std::uint32_t i = 0; i < st.cfg.boot_window; ++i) {
    OpResult c = co_await ctx.mb_read(*w.ctl_recv);
    if (c.code == Err::Ok) {
      Result<Frame> f = Frame::decode(c.bytes);
      if (f.ok() && f.value().opcode == op::kError) {
        ctx.note("boot_abort", {{"image", image}});
        co_return false;
      }
    }
    OpResult s = co_await ctx.mb_status(*w.data_recv);
    if (!s.status.is_dummy && s.status.owner == ctx.self()) {
      st.staged_image[target] = image;
      co_return true;
    }
  }
  co_return false;
}

// Ensures the requester's partition exists and carries its credential.
Task<bool> prepare_storage_resource(DomainCtx ctx, RmState& st, const IoWiring& w,
                                    DomainId requester) {
  std::uint16_t part = requester;
  auto image_it = st.staged_image.find(requester);
  std::string image = image_it != st.staged_image.end()
                          ? image_it->second
                          : ctx.machine().domain(requester).decl.image;
  if (!st.allocated_parts.count(part)) {
    ByteWriter a;
    a.u16(part);
    a.u32(client_partition_base(requester));
    a.u32(client_partition_base(requester) + kClientPartitionBlocks - 1);
    if (!co_await send_frame_retry(ctx, *w.ctl_send, Frame::make(op::kStorAlloc, a.take())))
      co_return false;
    Result<Frame> r = co_await recv_frame(ctx, *w.ctl_recv, 64);
    if (!r.ok() || r.value().opcode != op::kOk) co_return false;
    st.allocated_parts.insert(part);
  }
  ByteWriter b;
  b.u16(part);
  b.bytes(client_credential(image));
  if (!co_await send_frame_retry(ctx, *w.ctl_send, Frame::make(op::kStorBind, b.take())))
    co_return false;
  Result<Frame> r = co_await recv_frame(ctx, *w.ctl_recv, 64);
  co_return r.ok() && r.value().opcode == op::kOk;
}

Task<void> reply_on_channel(DomainCtx ctx, RmState& st, DomainId peer, Frame f) {
  for (auto& [qid, p] : st.channels)
    if (p == peer) {
      co_await q_send_retry(ctx, qid, f.encode(), 64);
      co_return;
    }
}

// The grant itself: reset + restage for non-restricted devices, bind-then-
// delegate for storage, split delegation for TEE-to-TEE pairs.
Task<bool> try_grant(DomainCtx ctx, RmState& st, DomainId rid, ResourceRt& res) {
  Machine& m = ctx.machine();
  if (res.waiters.empty()) co_return false;

  // every mailbox of the resource must be back under our control
  for (MailboxId mb : res.set) {
    OpResult s = co_await ctx.mb_status(mb);
    if (s.status.is_dummy || s.status.owner != ctx.self()) co_return false;
  }
  PendingReq req = res.waiters.front();

  if (res.is_tee) {
    // peer IPC: requester gets the reader end of the callee's mailbox and
    // vice versa; both sides are notified
    std::vector<MailboxId> to_requester, to_callee;
    for (const MailboxConfig& c : m.manifest().mailboxes) {
      if (c.fixed_end == rid && c.wired(req.requester)) to_requester.push_back(c.id);
      if (c.fixed_end == req.requester && c.wired(rid)) to_callee.push_back(c.id);
    }
    for (MailboxId mb : to_callee) {
      OpResult s = co_await ctx.mb_status(mb);
      if (s.status.is_dummy || s.status.owner != ctx.self()) co_return false;
    }
    res.waiters.pop_front();
    Tick deadline = ctx.now() + req.ticks;
    bool first = true;
    for (MailboxId mb : to_requester) {
      co_await ctx.mb_delegate(mb, req.requester, Quota{req.msgs, deadline});
      if (first) {
        ctx.note("rm_grant", {{"requester", static_cast<std::uint64_t>(req.requester)},
                              {"resource", static_cast<std::uint64_t>(rid)},
                              {"deadline", deadline},
                              {"ipc", true}});
        first = false;
      }
    }
    for (MailboxId mb : to_callee) co_await ctx.mb_delegate(mb, rid, Quota{req.msgs, deadline});
    auto encode_grant = [&](const std::vector<MailboxId>& ids) {
      ByteWriter g;
      g.u8(static_cast<std::uint8_t>(ids.size()));
      for (MailboxId mb : ids) g.u8(mb);
      g.u32(req.msgs ? *req.msgs : 0xffffffffu);
      g.u64(deadline);
      return Frame::make(op::kRmGrant, g.take());
    };
    co_await reply_on_channel(ctx, st, req.requester, encode_grant(to_requester));
    co_await reply_on_channel(ctx, st, rid, encode_grant(to_callee));
    res.busy_until = deadline;
    res.holder = req.requester;
    res.held = true;
    co_return true;
  }

  const IoWiring& w = m.wiring(rid);
  if (res.restricted) {
    if (!co_await prepare_storage_resource(ctx, st, w, req.requester)) {
      res.waiters.pop_front();
      ctx.note("rm_deny", {{"requester", static_cast<std::uint64_t>(req.requester)},
                           {"resource", static_cast<std::uint64_t>(rid)},
                           {"why", "bind-failed"}});
      co_await reply_on_channel(ctx, st, req.requester, Frame::error(Err::UnknownPartition));
      co_return true;
    }
  } else if (!st.cfg.skip_reset_for.count(req.requester)) {
    OpResult rr = co_await ctx.pmu_reset(rid);
    if (rr.code != Err::Ok) co_return false;  // still in a live session somewhere
    auto image_it = st.staged_image.find(rid);
    std::string image = image_it != st.staged_image.end() ? image_it->second
                                                          : m.domain(rid).decl.image;
    if (!co_await stage_domain(ctx, st, rid, image)) {
      res.waiters.pop_front();
      co_await reply_on_channel(ctx, st, req.requester, Frame::error(Err::ImageMissing));
      co_return true;
    }
    // let the rebooted service settle into its polling loop
    co_await ctx.spin(2);
    if (st.cfg.inject_stale_frame && w.ctl_send) {
      Bytes junk = to_bytes(hex_encode(sha256(std::to_string(st.inject_rng()))).substr(0, 12));
      co_await send_frame_retry(ctx, *w.ctl_send,
                                Frame::make(op::kPrint, std::move(junk)), 16);
      co_await ctx.spin(12);  // the service marks itself used before we delegate
      ctx.note("stale_injected", {{"resource", static_cast<std::uint64_t>(rid)}});
    }
  }

  res.waiters.pop_front();
  std::optional<std::uint32_t> msgs = req.msgs;
  if (st.cfg.undercut_msgs && msgs && *msgs > 1) msgs = *msgs - 1;
  Tick deadline = ctx.now() + req.ticks;
  bool first = true;
  for (MailboxId mb : res.set) {
    co_await ctx.mb_delegate(mb, req.requester, Quota{msgs, deadline});
    if (first) {
      ctx.note("rm_grant", {{"requester", static_cast<std::uint64_t>(req.requester)},
                            {"resource", static_cast<std::uint64_t>(rid)},
                            {"deadline", deadline},
                            {"restricted", res.restricted},
                            {"arbiter", res.has_arbiter}});
      first = false;
    }
  }
  ByteWriter g;
  g.u8(static_cast<std::uint8_t>(res.set.size()));
  for (MailboxId mb : res.set) g.u8(mb);
  g.u32(req.msgs ? *req.msgs : 0xffffffffu);  // the promise; hardware tells the truth
  g.u64(deadline);
  co_await reply_on_channel(ctx, st, req.requester, Frame::make(op::kRmGrant, g.take()));
  res.busy_until = deadline;
  res.holder = req.requester;
  res.held = true;
  co_return true;
}

Task<void> handle_request(DomainCtx ctx, RmState& st, DomainId peer, const Frame& f) {
  Machine& m = ctx.machine();
  ByteReader r(f.payload);
  DomainId rid = r.u8();
  std::uint32_t msgs_raw = r.u32();
  std::uint32_t ticks = r.u32();
  r.u8();  // purpose tag, informational
  if (!r.ok()) co_return;

  PendingReq req;
  req.requester = peer;
  req.resource = rid;
  req.msgs = msgs_raw == 0xffffffffu ? std::nullopt : std::optional<std::uint32_t>(msgs_raw);
  req.ticks = ticks;

  const PolicyDecl& pol = m.manifest().policy;
  auto it = st.resources.find(rid);
  if (it == st.resources.end()) {
    ctx.note("rm_deny", {{"requester", static_cast<std::uint64_t>(peer)},
                         {"resource", static_cast<std::uint64_t>(rid)},
                         {"why", "unknown-resource"}});
    co_await reply_on_channel(ctx, st, peer, Frame::error(Err::UnknownDomain));
    co_return;
  }
  if ((req.msgs && *req.msgs > pol.max_msgs) || ticks == 0 || ticks > pol.max_ticks) {
    ctx.note("rm_deny", {{"requester", static_cast<std::uint64_t>(peer)},
                         {"resource", static_cast<std::uint64_t>(rid)},
                         {"why", "policy"}});
    co_await reply_on_channel(ctx, st, peer, Frame::make(op::kRmDeny,
                                                         Frame::error(Err::PolicyDenied).payload));
    co_return;
  }

  ResourceRt& res = it->second;
  ctx.note("rm_request", {{"requester", static_cast<std::uint64_t>(peer)},
                          {"resource", static_cast<std::uint64_t>(rid)}});
  res.waiters.push_back(req);
  if (res.waiters.size() > 1 || (res.held && res.busy_until > ctx.now())) {
    ctx.note("rm_queue", {{"requester", static_cast<std::uint64_t>(peer)},
                          {"resource", static_cast<std::uint64_t>(rid)}});
    co_await reply_on_channel(ctx, st, peer, Frame::make(op::kRmQueued));
    co_return;
  }
  co_await try_grant(ctx, st, rid, res);
}

Task<void> shell_step(DomainCtx ctx, RmState& st) {
  Machine& m = ctx.machine();
  const DomainDecl* sin = m.manifest().find_by_device(DeviceKind::SerialIn);
  const DomainDecl* sout = m.manifest().find_by_device(DeviceKind::SerialOut);
  if (!sin || !sout) co_return;
  MailboxId in_mb = *m.wiring(sin->id).ctl_recv;
  MailboxId out_mb = *m.wiring(sout->id).ctl_send;

  OpResult s = co_await ctx.mb_status(out_mb);
  if (s.status.is_dummy) {
    st.ui_busy = true;  // a program holds the UI; stay quiet
    co_return;
  }
  if (st.ui_busy) {
    // queued client requests outrank the shell's own reclaim
    auto waiting = st.resources.find(sout->id);
    if (waiting != st.resources.end() && !waiting->second.waiters.empty()) co_return;
    st.ui_busy = false;
    // the program disabled the output service before yielding; reclaim it
    // clean before showing the prompt again
    OpResult rr = co_await ctx.pmu_reset(sout->id);
    if (rr.code == Err::Ok) {
      auto it = st.staged_image.find(sout->id);
      co_await stage_domain(ctx, st, sout->id,
                            it != st.staged_image.end() ? it->second : sout->image);
    }
    co_await send_frame_retry(ctx, out_mb, Frame::make(op::kPrint, to_bytes("splittrust> ")), 8);
    ctx.note("shell_prompt");
  }
  OpResult line = co_await ctx.mb_read(in_mb);
  if (line.code != Err::Ok) co_return;
  Result<Frame> f = Frame::decode(line.bytes);
  if (!f.ok() || f.value().opcode != op::kLine) co_return;
  std::string text = to_string(f.value().payload);
  ctx.note("shell", {{"line", text}});
  co_await send_frame_retry(ctx, out_mb,
                            Frame::make(op::kPrint, to_bytes("$ " + text + "\n")), 8);
  if (text.rfind("run ", 0) == 0) {
    std::string image = "app_" + text.substr(4);
    for (auto& [dom, img] : st.staged_image) {
      if (img == image) {
        co_await reply_on_channel(ctx, st, dom, Frame::make(op::kRmStart));
        ctx.note("shell_launch", {{"image", image}});
        co_return;
      }
    }
    co_await send_frame_retry(ctx, out_mb,
                              Frame::make(op::kPrint, to_bytes("no such program\n")), 8);
  }
}

}  // namespace

Task<void> resource_manager_program(DomainCtx ctx, RmConfig cfg) {
  Machine& m = ctx.machine();
  RmState st;
  st.cfg = cfg;
  st.inject_rng.seed(cfg.inject_seed);

  // resource table and request channels from the wiring
  for (const DomainDecl& d : m.manifest().domains) {
    if (d.id == ctx.self()) continue;
    ResourceRt res;
    for (const MailboxConfig& c : m.manifest().mailboxes)
      if (c.fixed_end == d.id) res.set.push_back(c.id);
    if (res.set.empty()) continue;
    res.restricted = d.kind.tag == DomainKindTag::Io && d.kind.device == DeviceKind::Storage;
    res.is_tee = d.kind.tag == DomainKindTag::Tee;
    for (const ArbiterDecl& a : m.manifest().arbiters)
      if (a.io_domain == d.id) res.has_arbiter = true;
    st.resources.emplace(d.id, std::move(res));
  }
  for (const QueueDecl& q : m.manifest().queues) {
    if (q.end_a == ctx.self() && q.end_b != kTpmEndpoint) st.channels.push_back({q.id, q.end_b});
    if (q.end_b == ctx.self() && q.end_a != kTpmEndpoint) st.channels.push_back({q.id, q.end_a});
  }

  // boot choreography: every remaining domain gets its image over the storage
  // data plane, in ascending id order
  const DomainDecl* stor = m.manifest().find_by_device(DeviceKind::Storage);
  std::vector<DomainDecl> order = m.manifest().domains;
  std::sort(order.begin(), order.end(),
            [](const DomainDecl& a, const DomainDecl& b) { return a.id < b.id; });
  bool boot_ok = true;
  for (const DomainDecl& d : order) {
    if (d.id == ctx.self() || (stor && d.id == stor->id)) continue;
    if (!stor) break;  // rom-boot machines need no staging
    if (!co_await stage_domain(ctx, st, d.id, d.image)) {
      ctx.note("boot_abort", {{"image", d.image}});
      boot_ok = false;
      break;
    }
  }
  ctx.note("boot_complete", {{"ok", boot_ok}});
  if (cfg.shell) {
    const DomainDecl* sout = m.manifest().find_by_device(DeviceKind::SerialOut);
    if (sout)
      co_await send_frame_retry(ctx, *m.wiring(sout->id).ctl_send,
                                Frame::make(op::kPrint, to_bytes("splittrust> ")), 8);
  }

  // serve loop: expiry-driven regrants preempt the duty rotation
  for (;;) {
    bool urgent = false;
    for (auto& [rid, res] : st.resources) {
      if (res.waiters.empty()) continue;
      if (res.held && res.busy_until > ctx.now()) continue;
      urgent = true;
      if (co_await try_grant(ctx, st, rid, res)) res.held = res.held;  // state updated inside
      break;
    }
    if (urgent) continue;

    // one hostile reset per trigger note, for attack-injection scenarios
    bool fired = false;
    for (auto& [tag, target] : st.cfg.hostile_resets) {
      if (st.fired_hostiles.count(tag)) continue;
      if (!m.note_tick(tag)) continue;
      st.fired_hostiles.insert(tag);
      OpResult rr = co_await ctx.pmu_reset(target);
      ctx.note("hostile_reset", {{"target", static_cast<std::uint64_t>(target)},
                                 {"outcome", std::string(err_name(rr.code))}});
      if (rr.code == Err::Ok) {
        // queued requests from a reset domain are dropped
        for (auto& [rid, res] : st.resources) {
          std::deque<PendingReq> keep;
          for (PendingReq& p : res.waiters) {
            if (p.requester == target)
              ctx.note("rm_drop", {{"requester", static_cast<std::uint64_t>(target)}});
            else
              keep.push_back(p);
          }
          res.waiters.swap(keep);
        }
      }
      fired = true;
      break;
    }
    if (fired) continue;

    std::size_t n_duties = st.channels.size() + 2;
    std::size_t duty = st.duty++ % n_duties;
    if (duty < st.channels.size()) {
      auto [qid, peer] = st.channels[duty];
      OpResult r = co_await ctx.q_recv(qid);
      if (r.code == Err::Ok) {
        Result<Frame> f = Frame::decode(r.bytes);
        if (f.ok() && f.value().opcode == op::kRmRequest)
          co_await handle_request(ctx, st, peer, f.value());
      }
    } else if (duty == st.channels.size() && cfg.shell) {
      co_await shell_step(ctx, st);
    } else {
      // poll one waited-on resource for an early yield
      std::vector<DomainId> waited;
      for (auto& [rid, res] : st.resources)
        if (!res.waiters.empty()) waited.push_back(rid);
      if (waited.empty()) {
        co_await ctx.spin(1);
      } else {
        DomainId rid = waited[st.poll_cursor++ % waited.size()];
        co_await try_grant(ctx, st, rid, st.resources.at(rid));
      }
    }
  }
}

void register_resource_manager(Machine& m, RmConfig cfg) {
  m.register_program("rmanager",
                     [cfg](DomainCtx ctx) { return resource_manager_program(ctx, cfg); });
}

}  // namespace splitsim
