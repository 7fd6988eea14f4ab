#include "splitsim/services.hpp"

#include <algorithm>

#include "splitsim/proto.hpp"

namespace splitsim {

Digest client_credential(const std::string& image_name) { return sha256("cred:" + image_name); }

Task<void> ensure_fresh(DomainCtx ctx, ServiceLifecycle& lifecycle) {
  if (lifecycle != ServiceLifecycle::Fresh) co_return;
  std::uint8_t q = ctx.machine().tpm_queue_for(ctx.self());
  ByteWriter w;
  w.u8(ctx.decl().pcr);
  w.bytes(freshness_constant());
  co_await q_send_retry(ctx, q, Frame::make(op::kTpmExtend, w.take()).encode());
  co_await q_recv_frame(ctx, q, 64);  // wait until the extend landed
  ctx.note("freshness");
  lifecycle = ServiceLifecycle::Active;
}

// ---------------------------------------------------------------------------
// Serial output: fixed reader of one mailbox, sink is the terminal.

Task<void> serial_out_service(DomainCtx ctx) {
  const IoWiring& w = ctx.machine().wiring(ctx.self());
  MailboxId in = *w.ctl_send;
  ServiceLifecycle lc = ServiceLifecycle::Fresh;
  for (;;) {
    OpResult r = co_await ctx.mb_read(in);
    if (r.code != Err::Ok) continue;
    co_await ensure_fresh(ctx, lc);
    Result<Frame> f = Frame::decode(r.bytes);
    if (!f.ok()) {
      ctx.note("svc_bad_frame");
      continue;
    }
    if (lc == ServiceLifecycle::Disabled) {
      ctx.note("svc_rejected", {{"op", std::string(frame_op_name(f.value().opcode))}});
      continue;
    }
    switch (f.value().opcode) {
      case op::kPrint:
        co_await ctx.term_write(f.value().payload);
        break;
      case op::kDisable:
        lc = ServiceLifecycle::Disabled;
        ctx.note("svc_disabled");
        break;
      default:
        ctx.note("svc_bad_frame", {{"op", static_cast<std::uint64_t>(f.value().opcode)}});
    }
  }
}

// ---------------------------------------------------------------------------
// Serial input: fixed writer; forwards injected terminal lines to whoever
// holds the delegatable reader end. Marks freshness before its first output.

Task<void> serial_in_service(DomainCtx ctx) {
  const IoWiring& w = ctx.machine().wiring(ctx.self());
  MailboxId out = *w.ctl_recv;
  ServiceLifecycle lc = ServiceLifecycle::Fresh;
  for (;;) {
    OpResult line = co_await ctx.serial_fetch();
    if (line.code != Err::Ok) {
      co_await ctx.spin(1);
      continue;
    }
    if (lc == ServiceLifecycle::Disabled) continue;  // swallow input, no output
    co_await ensure_fresh(ctx, lc);
    co_await send_frame_retry(ctx, out, Frame::make(op::kLine, std::move(line.bytes)), 64);
  }
}

// ---------------------------------------------------------------------------
// Network: control plane for disable, data plane bridging the link. The
// arbiter diverts the device stream to DMA while the untrusted domain owns
// the data plane, so link_rx only yields frames on the FIFO path.

Task<void> network_service(DomainCtx ctx) {
  const IoWiring& w = ctx.machine().wiring(ctx.self());
  ServiceLifecycle lc = ServiceLifecycle::Fresh;
  std::deque<Bytes> outbound;
  for (;;) {
    // control plane
    OpResult c = co_await ctx.mb_read(*w.ctl_send);
    if (c.code == Err::Ok) {
      co_await ensure_fresh(ctx, lc);
      Result<Frame> f = Frame::decode(c.bytes);
      if (!f.ok()) {
        co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(Err::BadFrame), 16);
      } else if (f.value().opcode == op::kDisable) {
        if (lc == ServiceLifecycle::Disabled) {
          co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(Err::AlreadyDisabled), 16);
        } else {
          lc = ServiceLifecycle::Disabled;
          ctx.note("svc_disabled");
          co_await send_frame_retry(ctx, *w.ctl_recv, Frame::make(op::kOk), 16);
        }
      } else {
        co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(Err::BadFrame), 16);
      }
    }
    // client -> link
    OpResult d = co_await ctx.mb_read(*w.data_send);
    if (d.code == Err::Ok) {
      co_await ensure_fresh(ctx, lc);
      Result<Frame> f = Frame::decode(d.bytes);
      if (f.ok() && f.value().opcode == op::kNetData && lc == ServiceLifecycle::Active) {
        OpResult tx = co_await ctx.link_tx(std::move(f.value().payload));
        if (tx.code != Err::Ok)
          co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(tx.code), 16);
      } else if (lc == ServiceLifecycle::Disabled) {
        ctx.note("svc_rejected", {{"op", "net-data"}});
        co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(Err::ServiceDisabled), 16);
      }
    }
    // link -> client (FIFO path only)
    if (lc == ServiceLifecycle::Active) {
      OpResult rx = co_await ctx.link_rx();
      if (rx.code == Err::Ok)
        outbound.push_back(Frame::make(op::kNetData, std::move(rx.bytes)).encode());
    } else {
      co_await ctx.spin(1);
    }
    if (!outbound.empty()) {
      OpResult wr = co_await ctx.mb_write(*w.data_recv, outbound.front());
      if (wr.code == Err::Ok || wr.code == Err::MsgTooLarge) outbound.pop_front();
    } else {
      co_await ctx.spin(1);
    }
  }
}

// ---------------------------------------------------------------------------
// Storage: the restricted service. Resources are partitions; the manager
// allocates and binds them while it owns the control plane, clients
// authenticate per session. The boot partition (0) serves lookups and image
// staging without credentials.

namespace {

struct StorageState {
  ServiceLifecycle lc = ServiceLifecycle::Fresh;
  std::vector<StorageResource> resources;
  std::optional<std::uint16_t> session_auth;
  std::optional<DomainId> last_client;

  const StorageResource* find(std::uint16_t part) const {
    for (const StorageResource& r : resources)
      if (r.partition == part) return &r;
    return nullptr;
  }
  bool overlaps(std::uint32_t first, std::uint32_t last) const {
    for (const StorageResource& r : resources)
      if (first <= r.last_block && r.first_block <= last) return true;
    return false;
  }
};

Task<void> stor_reply(DomainCtx ctx, MailboxId mb, Frame f) {
  co_await send_frame_retry(ctx, mb, std::move(f), 64);
}

// Streams `data` as kData frames followed by kDataEnd.
Task<void> stor_stream(DomainCtx ctx, MailboxId mb, Bytes data, std::optional<Frame> header) {
  if (header) co_await send_frame_retry(ctx, mb, std::move(*header), 256);
  std::size_t pos = 0;
  const Mailbox* box = ctx.machine().find_mailbox(mb);
  std::size_t chunk = box ? box->config().msg_size - kFrameHeader : kMaxPayload512;
  while (pos < data.size()) {
    std::size_t n = std::min(chunk, data.size() - pos);
    Bytes part(data.begin() + static_cast<std::ptrdiff_t>(pos),
               data.begin() + static_cast<std::ptrdiff_t>(pos + n));
    co_await send_frame_retry(ctx, mb, Frame::make(op::kData, std::move(part)), 256);
    pos += n;
  }
  co_await send_frame_retry(ctx, mb, Frame::make(op::kDataEnd), 256);
}

}  // namespace

Task<void> storage_service(DomainCtx ctx) {
  const IoWiring& w = ctx.machine().wiring(ctx.self());
  StorageState st;

  // the boot partition's extent comes from the filesystem table
  {
    OpResult table = co_await ctx.block_read(0, kBootFsTableBlocks);
    std::uint32_t boot_last = kBootFsTableBlocks - 1;
    if (table.code == Err::Ok) {
      for (const BootFsEntry& e : bootfs_list(table.bytes)) {
        std::uint32_t blocks = (e.length + kBlockSize - 1) / kBlockSize;
        boot_last = std::max(boot_last, e.offset_block + blocks - 1);
      }
    }
    st.resources.push_back(StorageResource{0, 0, boot_last, std::nullopt});
  }

  for (;;) {
    // a new session (ownership change) drops any prior authentication
    OpResult status = co_await ctx.mb_status(*w.ctl_send);
    if (!status.status.is_dummy && status.status.owner != st.last_client) {
      st.last_client = status.status.owner;
      st.session_auth.reset();
    }

    OpResult c = co_await ctx.mb_read(*w.ctl_send);
    if (c.code != Err::Ok) {
      co_await ctx.spin(1);
      continue;
    }
    co_await ensure_fresh(ctx, st.lc);
    Result<Frame> fr = Frame::decode(c.bytes);
    if (!fr.ok()) {
      co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::BadFrame));
      continue;
    }
    Frame& f = fr.value();
    ctx.note("svc_frame", {{"op", std::string(frame_op_name(f.opcode))}});
    if (st.lc == ServiceLifecycle::Disabled) {
      ctx.note("svc_rejected", {{"op", std::string(frame_op_name(f.opcode))}});
      co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::ServiceDisabled));
      continue;
    }
    bool from_manager = !status.status.is_dummy && status.status.owner == ctx.machine().rm();

    switch (f.opcode) {
      case op::kStorAlloc: {
        ByteReader r(f.payload);
        std::uint16_t part = r.u16();
        std::uint32_t first = r.u32(), last = r.u32();
        if (!r.ok() || last < first) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::BadFrame));
        } else if (!from_manager) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::NoAccess));
        } else if (st.find(part) || st.overlaps(first, last) ||
                   last >= ctx.machine().storage().block_count()) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::Overlap));
        } else {
          st.resources.push_back(StorageResource{part, first, last, std::nullopt});
          ctx.note("stor_alloc", {{"part", static_cast<std::uint64_t>(part)}});
          co_await stor_reply(ctx, *w.ctl_recv, Frame::make(op::kOk));
        }
        break;
      }
      case op::kStorBind: {
        ByteReader r(f.payload);
        std::uint16_t part = r.u16();
        Bytes cred = r.bytes(32);
        const StorageResource* res = st.find(part);
        if (!r.ok()) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::BadFrame));
        } else if (!from_manager) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::NoAccess));
        } else if (!res || part == 0) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::UnknownPartition));
        } else {
          Digest d;
          std::copy(cred.begin(), cred.end(), d.begin());
          const_cast<StorageResource*>(res)->credential = d;  // bind overwrites
          ctx.note("stor_bind", {{"part", static_cast<std::uint64_t>(part)}});
          co_await stor_reply(ctx, *w.ctl_recv, Frame::make(op::kOk));
        }
        break;
      }
      case op::kStorAuth: {
        ByteReader r(f.payload);
        Bytes cred = r.bytes(32);
        if (!r.ok()) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::BadFrame));
          break;
        }
        Digest d;
        std::copy(cred.begin(), cred.end(), d.begin());
        const StorageResource* hit = nullptr;
        for (const StorageResource& res : st.resources)
          if (res.credential && constant_time_eq(*res.credential, d)) hit = &res;
        if (!hit) {
          ctx.note("stor_auth_failed");
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::AuthFailed));
        } else {
          st.session_auth = hit->partition;
          ctx.note("stor_auth", {{"part", static_cast<std::uint64_t>(hit->partition)}});
          co_await stor_reply(ctx, *w.ctl_recv, Frame::make(op::kOk));
        }
        break;
      }
      case op::kStorRead:
      case op::kStorWrite: {
        ByteReader r(f.payload);
        std::uint32_t first = r.u32();
        std::uint16_t count = r.u16();
        if (!r.ok() || count == 0) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::BadFrame));
          break;
        }
        if (!st.session_auth) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::NotAuthenticated));
          break;
        }
        const StorageResource* res = st.find(*st.session_auth);
        std::uint64_t last = static_cast<std::uint64_t>(first) + count - 1;
        if (!res || first < res->first_block || last > res->last_block) {
          ctx.note("stor_confinement", {{"first", static_cast<std::uint64_t>(first)}});
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::OutOfPartition));
          break;
        }
        if (f.opcode == op::kStorRead) {
          OpResult data = co_await ctx.block_read(first, count);
          if (data.code != Err::Ok) {
            co_await stor_reply(ctx, *w.ctl_recv, Frame::error(data.code));
          } else {
            ctx.note("stor_io", {{"rw", "read"},
                                 {"part", static_cast<std::uint64_t>(res->partition)},
                                 {"first", static_cast<std::uint64_t>(first)},
                                 {"count", static_cast<std::uint64_t>(count)}});
            co_await stor_stream(ctx, *w.data_recv, std::move(data.bytes), std::nullopt);
          }
        } else {
          // collect count*512 bytes from the data plane, then commit
          Bytes incoming;
          std::size_t want = static_cast<std::size_t>(count) * kBlockSize;
          bool ok = true;
          for (int polls = 0; incoming.size() < want; ++polls) {
            if (polls > 4096) {
              ok = false;
              break;
            }
            OpResult d2 = co_await ctx.mb_read(*w.data_send);
            if (d2.code != Err::Ok) continue;
            Result<Frame> df = Frame::decode(d2.bytes);
            if (df.ok() && df.value().opcode == op::kData)
              incoming.insert(incoming.end(), df.value().payload.begin(),
                              df.value().payload.end());
          }
          if (!ok || incoming.size() != want) {
            co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::BadFrame));
          } else {
            co_await ctx.block_write(first, std::move(incoming));
            ctx.note("stor_io", {{"rw", "write"},
                                 {"part", static_cast<std::uint64_t>(res->partition)},
                                 {"first", static_cast<std::uint64_t>(first)},
                                 {"count", static_cast<std::uint64_t>(count)}});
            co_await stor_reply(ctx, *w.ctl_recv, Frame::make(op::kOk));
          }
        }
        break;
      }
      case op::kStorQuery: {
        ByteWriter wq;
        wq.u8(static_cast<std::uint8_t>(st.lc));
        wq.u32(st.session_auth ? *st.session_auth : 0xffffffffu);
        co_await stor_reply(ctx, *w.ctl_recv, Frame::make(op::kStorStatus, wq.take()));
        break;
      }
      case op::kStorLookup:
      case op::kStorStage: {
        ByteReader r(f.payload);
        std::string name = r.str_fixed(kBootFsNameLen);
        OpResult table = co_await ctx.block_read(0, kBootFsTableBlocks);
        if (table.code != Err::Ok) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::BadMagic));
          break;
        }
        Result<BootFsEntry> e = bootfs_lookup(table.bytes, name);
        if (!e.ok()) {
          co_await stor_reply(ctx, *w.ctl_recv, Frame::error(e.error()));
          break;
        }
        if (f.opcode == op::kStorLookup) {
          ByteWriter we;
          we.u32(e.value().offset_block);
          we.u32(e.value().length);
          we.bytes(e.value().digest);
          co_await stor_reply(ctx, *w.ctl_recv, Frame::make(op::kStorEntry, we.take()));
        } else {
          std::uint32_t nblocks = (e.value().length + kBlockSize - 1) / kBlockSize;
          OpResult raw = co_await ctx.block_read(e.value().offset_block, nblocks);
          if (raw.code != Err::Ok) {
            co_await stor_reply(ctx, *w.ctl_recv, Frame::error(raw.code));
            break;
          }
          raw.bytes.resize(e.value().length);
          ByteWriter hdr;
          hdr.str_fixed(name, kBootFsNameLen);
          hdr.u32(e.value().length);
          hdr.bytes(e.value().digest);
          ctx.note("stor_stage", {{"image", name}});
          co_await stor_stream(ctx, *w.data_recv, std::move(raw.bytes),
                               Frame::make(op::kImageHeader, hdr.take()));
        }
        break;
      }
      case op::kDisable: {
        // the storage domain survives across clients; disable only closes the
        // caller's authenticated session
        st.session_auth.reset();
        ctx.note("stor_session_closed");
        co_await stor_reply(ctx, *w.ctl_recv, Frame::make(op::kOk));
        break;
      }
      default:
        co_await stor_reply(ctx, *w.ctl_recv, Frame::error(Err::BadFrame));
    }
  }
}

// ---------------------------------------------------------------------------
// Sensor and pump: tiny request/response devices used by the dosing program.

Task<void> sensor_service(DomainCtx ctx) {
  const IoWiring& w = ctx.machine().wiring(ctx.self());
  ServiceLifecycle lc = ServiceLifecycle::Fresh;
  for (;;) {
    OpResult r = co_await ctx.mb_read(*w.ctl_send);
    if (r.code != Err::Ok) continue;
    co_await ensure_fresh(ctx, lc);
    Result<Frame> f = Frame::decode(r.bytes);
    if (!f.ok()) {
      co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(Err::BadFrame), 16);
      continue;
    }
    if (lc == ServiceLifecycle::Disabled) {
      ctx.note("svc_rejected", {{"op", std::string(frame_op_name(f.value().opcode))}});
      co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(Err::ServiceDisabled), 16);
      continue;
    }
    if (f.value().opcode == op::kSensorRead) {
      OpResult v = co_await ctx.sensor_read();
      ByteWriter wr;
      wr.u32(v.value);
      co_await send_frame_retry(ctx, *w.ctl_recv, Frame::make(op::kSensorValue, wr.take()), 16);
    } else if (f.value().opcode == op::kDisable) {
      lc = ServiceLifecycle::Disabled;
      ctx.note("svc_disabled");
      co_await send_frame_retry(ctx, *w.ctl_recv, Frame::make(op::kOk), 16);
    } else {
      co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(Err::BadFrame), 16);
    }
  }
}

Task<void> pump_service(DomainCtx ctx) {
  const IoWiring& w = ctx.machine().wiring(ctx.self());
  ServiceLifecycle lc = ServiceLifecycle::Fresh;
  for (;;) {
    OpResult r = co_await ctx.mb_read(*w.ctl_send);
    if (r.code != Err::Ok) continue;
    co_await ensure_fresh(ctx, lc);
    Result<Frame> f = Frame::decode(r.bytes);
    if (!f.ok()) {
      co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(Err::BadFrame), 16);
      continue;
    }
    if (lc == ServiceLifecycle::Disabled) {
      ctx.note("svc_rejected", {{"op", std::string(frame_op_name(f.value().opcode))}});
      co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(Err::ServiceDisabled), 16);
      continue;
    }
    if (f.value().opcode == op::kPumpDose) {
      ByteReader rd(f.value().payload);
      std::uint32_t units = rd.u32();
      co_await ctx.pump_actuate(units);
      ByteWriter wr;
      wr.u32(units);
      co_await send_frame_retry(ctx, *w.ctl_recv, Frame::make(op::kPumpAck, wr.take()), 16);
    } else if (f.value().opcode == op::kDisable) {
      lc = ServiceLifecycle::Disabled;
      ctx.note("svc_disabled");
      co_await send_frame_retry(ctx, *w.ctl_recv, Frame::make(op::kOk), 16);
    } else {
      co_await send_frame_retry(ctx, *w.ctl_recv, Frame::error(Err::BadFrame), 16);
    }
  }
}

void register_default_services(Machine& m) {
  m.register_program("svc_serial_in", serial_in_service);
  m.register_program("svc_serial_out", serial_out_service);
  m.register_program("svc_storage", storage_service);
  m.register_program("svc_network", network_service);
  m.register_program("svc_sensor", sensor_service);
  m.register_program("svc_pump", pump_service);
  m.register_program("app_idle", idle_program);
}

}  // namespace splitsim
