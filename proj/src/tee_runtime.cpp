#include "splitsim/tee_runtime.hpp"

#include <algorithm>

#include "splitsim/proto.hpp"

namespace splitsim {

std::vector<Bytes> net_fragment(std::span<const std::uint8_t> payload,
                                std::size_t frame_payload) {
  std::vector<Bytes> out;
  std::size_t chunk = frame_payload > 2 ? frame_payload - 2 : 1;
  std::size_t nfrag = payload.empty() ? 1 : (payload.size() + chunk - 1) / chunk;
  for (std::size_t i = 0; i < nfrag; ++i) {
    std::size_t off = i * chunk;
    std::size_t n = std::min(chunk, payload.size() - off);
    ByteWriter w;
    std::uint16_t seq = static_cast<std::uint16_t>(i & 0x7fff);
    if (i + 1 == nfrag) seq |= 0x8000;
    w.u16(seq);
    w.bytes(payload.subspan(off, n));
    out.push_back(w.take());
  }
  return out;
}

bool NetReassembly::feed(std::span<const std::uint8_t> fragment) {
  if (fragment.size() < 2) return false;
  ByteReader r(fragment);
  std::uint16_t seq = r.u16();
  Bytes chunk = r.rest();
  data.insert(data.end(), chunk.begin(), chunk.end());
  if (seq & 0x8000) complete = true;
  return true;
}

std::uint8_t TeeRuntime::rm_channel() const {
  return ctx_.machine().rm_queue_for(ctx_.self());
}

void TeeRuntime::meter(TeeSession& s, MailboxId mb) {
  auto it = s.msgs_left.find(mb);
  if (it == s.msgs_left.end()) return;  // fixed-end mailboxes are unmetered
  if (it->second && *it->second > 0) --*it->second;
  if (on_quota) {
    Tick now = ctx_.now();
    on_quota(mb, it->second, s.deadline > now ? s.deadline - now : 0);
  }
}

Task<Err> TeeRuntime::metered_write(TeeSession& s, MailboxId mb, Bytes raw,
                                    bool allow_reserve) {
  if (!s.active || !s.verified) co_return Err::AlreadyEnded;
  auto it = s.msgs_left.find(mb);
  if (it != s.msgs_left.end() && it->second && !allow_reserve &&
      *it->second <= cfg_.reserve_msgs)
    co_return Err::QuotaExhausted;
  for (int i = 0; i < 64; ++i) {
    OpResult r = co_await ctx_.mb_write(mb, raw);
    if (r.code == Err::QueueFull) continue;
    if (r.code == Err::Ok) meter(s, mb);
    co_return r.code;
  }
  co_return Err::QueueFull;
}

Task<Result<Bytes>> TeeRuntime::metered_read(TeeSession& s, MailboxId mb,
                                             std::uint32_t max_polls, bool allow_reserve) {
  if (!s.active || !s.verified) co_return Err::AlreadyEnded;
  auto it = s.msgs_left.find(mb);
  if (it != s.msgs_left.end() && it->second && !allow_reserve &&
      *it->second <= cfg_.reserve_msgs)
    co_return Err::QuotaExhausted;
  for (std::uint32_t i = 0; i < max_polls; ++i) {
    OpResult r = co_await ctx_.mb_read(mb);
    if (r.code == Err::QueueEmpty) continue;
    if (r.code != Err::Ok) co_return r.code;
    meter(s, mb);
    co_return std::move(r.bytes);
  }
  co_return Err::QueueEmpty;
}

Task<Result<Quote>> TeeRuntime::tpm_quote(const Nonce& nonce,
                                          std::vector<std::uint8_t> selection) {
  std::uint8_t q = ctx_.machine().tpm_queue_for(ctx_.self());
  ByteWriter w;
  w.bytes(nonce);
  w.u8(static_cast<std::uint8_t>(selection.size()));
  for (std::uint8_t s : selection) w.u8(s);
  if (!co_await q_send_retry(ctx_, q, Frame::make(op::kTpmQuote, w.take()).encode()))
    co_return Err::QueueFull;
  Result<Frame> f = co_await q_recv_frame(ctx_, q, cfg_.reply_poll_budget);
  if (!f.ok()) co_return f.error();
  if (f.value().opcode != op::kTpmQuoteReply) co_return Err::AttestReject;
  Result<Quote> quote = Quote::deserialize(f.value().payload);
  if (!quote.ok()) co_return quote.error();
  co_return quote.take();
}

Task<Result<Quote>> TeeRuntime::attest(const Nonce& nonce) {
  co_return co_await tpm_quote(nonce, {ctx_.decl().pcr});
}

Task<bool> TeeRuntime::wait_start(std::uint32_t max_polls) {
  Result<Frame> f = co_await q_recv_frame(ctx_, rm_channel(), max_polls);
  co_return f.ok() && f.value().opcode == op::kRmStart;
}

namespace {
// A failed verification hands every granted mailbox straight back.
Task<void> yield_all(DomainCtx ctx, const std::vector<MailboxId>& mailboxes) {
  for (MailboxId mb : mailboxes) co_await ctx.mb_yield(mb);
}
}  // namespace

Task<Result<TeeSession>> TeeRuntime::request_and_verify(DomainId resource, SessionQuota quota,
                                                        const Nonce& nonce) {
  Machine& m = ctx_.machine();
  std::uint8_t ch = rm_channel();

  ByteWriter req;
  req.u8(resource);
  req.u32(quota.msgs ? *quota.msgs : 0xffffffffu);
  req.u32(quota.ticks);
  req.u8(0);
  if (!co_await q_send_retry(ctx_, ch, Frame::make(op::kRmRequest, req.take()).encode()))
    co_return Err::GrantTimeout;

  TeeSession s;
  s.resource = resource;
  for (std::uint32_t polls = 0;; ++polls) {
    if (polls >= cfg_.grant_poll_budget) {
      ctx_.note("tee_verify", {{"resource", static_cast<std::uint64_t>(resource)},
                               {"outcome", "grant-timeout"}});
      co_return Err::GrantTimeout;
    }
    OpResult r = co_await ctx_.q_recv(ch);
    if (r.code != Err::Ok) continue;
    Result<Frame> f = Frame::decode(r.bytes);
    if (!f.ok()) continue;
    if (f.value().opcode == op::kRmQueued) continue;
    if (f.value().opcode == op::kRmDeny || f.value().opcode == op::kError) {
      ctx_.note("tee_verify", {{"resource", static_cast<std::uint64_t>(resource)},
                               {"outcome", "denied"}});
      co_return Err::PolicyDenied;
    }
    if (f.value().opcode == op::kRmGrant) {
      ByteReader g(f.value().payload);
      std::uint8_t n = g.u8();
      for (std::uint8_t i = 0; i < n; ++i) s.mailboxes.push_back(g.u8());
      std::uint32_t msgs_raw = g.u32();
      s.promised_msgs = msgs_raw == 0xffffffffu ? std::nullopt
                                                : std::optional<std::uint32_t>(msgs_raw);
      s.deadline = g.u64();
      if (!g.ok()) co_return Err::BadFrame;
      break;
    }
  }

  // the manager's word means nothing; the status registers do
  if (s.promised_msgs && quota.msgs && *s.promised_msgs < *quota.msgs) {
    ctx_.note("tee_verify", {{"resource", static_cast<std::uint64_t>(resource)},
                             {"outcome", "status-mismatch"}});
    co_await yield_all(ctx_, s.mailboxes);
    co_return Err::StatusMismatch;
  }
  for (MailboxId mb : s.mailboxes) {
    const Mailbox* box = m.find_mailbox(mb);
    if (!box) co_return Err::StatusMismatch;
    bool delegated_to_me = box->config().fixed_end != ctx_.self();
    OpResult st = co_await ctx_.mb_status(mb);
    Tick now = ctx_.now();
    Tick expect_left = s.deadline > now ? s.deadline - now : 0;
    bool ok;
    if (delegated_to_me) {
      ok = !st.status.is_dummy && st.status.owner == ctx_.self() &&
           st.status.msgs_left == s.promised_msgs && st.status.time_left == expect_left;
      if (ok) s.msgs_left[mb] = s.promised_msgs;
    } else {
      // our own fixed end: the peer side must hold the other half
      ok = !st.status.is_dummy && st.status.owner != ctx_.self();
    }
    if (!ok) {
      ctx_.note("tee_verify", {{"resource", static_cast<std::uint64_t>(resource)},
                               {"outcome", "status-mismatch"},
                               {"mailbox", static_cast<std::uint64_t>(mb)}});
      co_await yield_all(ctx_, s.mailboxes);
      co_return Err::StatusMismatch;
    }
  }

  // attest the software loaded in the resource domain, and that the domain is
  // unused since reset (its PCR would already carry the freshness mark)
  auto exp_it = cfg_.service_image_digest.find(resource);
  if (exp_it == cfg_.service_image_digest.end()) {
    ctx_.note("tee_verify", {{"resource", static_cast<std::uint64_t>(resource)},
                             {"outcome", "attest-reject"}});
    co_await yield_all(ctx_, s.mailboxes);
    co_return Err::AttestReject;
  }
  const DomainRec* rdom = m.find_domain(resource);
  if (!rdom) {
    co_await yield_all(ctx_, s.mailboxes);
    co_return Err::AttestReject;
  }
  s.restricted = rdom->decl.kind.tag == DomainKindTag::Io &&
                 rdom->decl.kind.device == DeviceKind::Storage;

  Result<Quote> quote = co_await tpm_quote(nonce, {rdom->decl.pcr});
  if (!quote.ok()) {
    co_await yield_all(ctx_, s.mailboxes);
    co_return Err::AttestReject;
  }
  Digest boot_only = boot_pcr(exp_it->second);
  Digest used_once = pcr_fold(boot_only, freshness_constant());
  Digest expected = s.restricted ? used_once : boot_only;
  QuoteVerdict v = verify_quote(quote.value(), {expected}, nonce, cfg_.device_key);
  if (v != QuoteVerdict::Accept) {
    co_await yield_all(ctx_, s.mailboxes);
    if (v == QuoteVerdict::RejectPcrMismatch &&
        verify_quote(quote.value(), {used_once}, nonce, cfg_.device_key) ==
            QuoteVerdict::Accept) {
      ctx_.note("tee_verify", {{"resource", static_cast<std::uint64_t>(resource)},
                               {"outcome", "stale-domain"}});
      co_return Err::StaleDomain;
    }
    ctx_.note("tee_verify", {{"resource", static_cast<std::uint64_t>(resource)},
                             {"outcome", "attest-reject"}});
    co_return Err::AttestReject;
  }

  s.verified = true;
  s.active = true;

  if (s.restricted) {
    const IoWiring& w = m.wiring(resource);
    std::string image = m.domain(ctx_.self()).installed_image;
    if (image.empty()) image = ctx_.decl().image;
    ByteWriter a;
    a.bytes(client_credential(image));
    Err e = co_await metered_write(s, *w.ctl_send, Frame::make(op::kStorAuth, a.take()).encode(),
                                   true);
    if (e != Err::Ok) co_return e;
    Result<Bytes> reply = co_await metered_read(s, *w.ctl_recv, cfg_.reply_poll_budget, true);
    if (!reply.ok()) co_return reply.error();
    Result<Frame> rf = Frame::decode(reply.value());
    if (!rf.ok() || rf.value().opcode != op::kOk) {
      ctx_.note("tee_verify", {{"resource", static_cast<std::uint64_t>(resource)},
                               {"outcome", "auth-failed"}});
      co_return Err::AuthFailed;
    }
  }

  ctx_.note("tee_verify", {{"resource", static_cast<std::uint64_t>(resource)},
                           {"outcome", "verified"}});
  co_return s;
}

Task<Err> TeeRuntime::end_session(TeeSession& s) {
  if (!s.active) co_return Err::AlreadyEnded;
  Machine& m = ctx_.machine();
  s.active = false;

  OpResult probe = co_await ctx_.mb_status(s.mailboxes.empty() ? 0 : s.mailboxes.front());
  bool still_mine = !probe.status.is_dummy && probe.status.owner == ctx_.self();
  if (!still_mine) {
    // quota already expired: ownership reverted, disable is out of reach
    ctx_.note("session_end", {{"resource", static_cast<std::uint64_t>(s.resource)},
                              {"expired", true}});
    co_return Err::Ok;
  }

  // disable precedes yield: the service goes quiet before the hardware wipes
  const IoWiring* w = nullptr;
  if (m.find_domain(s.resource) &&
      m.find_domain(s.resource)->decl.kind.tag == DomainKindTag::Io)
    w = &m.wiring(s.resource);
  if (w && w->ctl_send) {
    for (MailboxId mb : s.mailboxes) {
      if (mb != *w->ctl_send) continue;
      co_await ctx_.mb_write(mb, Frame::make(op::kDisable).encode());
      meter(s, mb);
      if (w->ctl_recv) {
        // drain the acknowledgment where the service has a reply path
        for (std::uint32_t i = 0; i < 64; ++i) {
          OpResult r = co_await ctx_.mb_read(*w->ctl_recv);
          if (r.code == Err::Ok) {
            meter(s, *w->ctl_recv);
            break;
          }
          if (r.code != Err::QueueEmpty) break;
        }
      } else {
        // no reply path: give the service a window to consume the disable
        // before the yield wipes the queue under it
        co_await ctx_.spin(8);
      }
    }
  }
  for (MailboxId mb : s.mailboxes) {
    const Mailbox* box = m.find_mailbox(mb);
    if (box && box->config().fixed_end == ctx_.self()) continue;  // not ours to yield
    co_await ctx_.mb_yield(mb);
  }
  ctx_.note("session_end", {{"resource", static_cast<std::uint64_t>(s.resource)},
                            {"expired", false}});
  co_return Err::Ok;
}

Task<Err> TeeRuntime::print(TeeSession& s, std::string text) {
  const IoWiring& w = ctx_.machine().wiring(s.resource);
  co_return co_await metered_write(s, *w.ctl_send,
                                   Frame::make(op::kPrint, to_bytes(text)).encode(), false);
}

Task<Result<std::string>> TeeRuntime::readline(TeeSession& s, std::uint32_t max_polls) {
  const IoWiring& w = ctx_.machine().wiring(s.resource);
  Result<Bytes> r = co_await metered_read(s, *w.ctl_recv, max_polls, false);
  if (!r.ok()) co_return r.error();
  Result<Frame> f = Frame::decode(r.value());
  if (!f.ok() || f.value().opcode != op::kLine) co_return Err::BadFrame;
  co_return to_string(f.value().payload);
}

Task<Err> TeeRuntime::net_send(TeeSession& s, Bytes payload) {
  Machine& m = ctx_.machine();
  const IoWiring& w = m.wiring(s.resource);
  const Mailbox* box = m.find_mailbox(*w.data_send);
  std::size_t cap = box->config().msg_size - kFrameHeader;
  for (Bytes& frag : net_fragment(payload, cap)) {
    Err e = co_await metered_write(s, *w.data_send,
                                   Frame::make(op::kNetData, std::move(frag)).encode(), false);
    if (e != Err::Ok) co_return e;
  }
  co_return Err::Ok;
}

Task<Result<Bytes>> TeeRuntime::net_recv(TeeSession& s, std::uint32_t max_polls) {
  const IoWiring& w = ctx_.machine().wiring(s.resource);
  NetReassembly re;
  while (!re.complete) {
    Result<Bytes> r = co_await metered_read(s, *w.data_recv, max_polls, false);
    if (!r.ok()) co_return r.error();
    Result<Frame> f = Frame::decode(r.value());
    if (!f.ok() || f.value().opcode != op::kNetData) co_return Err::BadFrame;
    if (!re.feed(f.value().payload)) co_return Err::BadFrame;
  }
  co_return std::move(re.data);
}

Task<Result<Bytes>> TeeRuntime::storage_read(TeeSession& s, std::uint32_t first,
                                             std::uint16_t count) {
  const IoWiring& w = ctx_.machine().wiring(s.resource);
  ByteWriter req;
  req.u32(first);
  req.u16(count);
  Err e = co_await metered_write(s, *w.ctl_send, Frame::make(op::kStorRead, req.take()).encode(),
                                 false);
  if (e != Err::Ok) co_return e;
  Bytes data;
  std::size_t want = static_cast<std::size_t>(count) * kBlockSize;
  for (std::uint32_t polls = 0; polls < cfg_.reply_poll_budget * 4; ++polls) {
    // an error reply beats data frames when the range is rejected
    OpResult ctl = co_await ctx_.mb_read(*w.ctl_recv);
    if (ctl.code == Err::Ok) {
      meter(s, *w.ctl_recv);
      Result<Frame> f = Frame::decode(ctl.bytes);
      if (f.ok() && f.value().opcode == op::kError) {
        ByteReader r(f.value().payload);
        co_return static_cast<Err>(r.u16());
      }
    }
    Result<Bytes> raw = co_await metered_read(s, *w.data_recv, 1, false);
    if (raw.ok()) {
      Result<Frame> f = Frame::decode(raw.value());
      if (f.ok() && f.value().opcode == op::kData)
        data.insert(data.end(), f.value().payload.begin(), f.value().payload.end());
      if (f.ok() && f.value().opcode == op::kDataEnd) {
        if (data.size() != want) co_return Err::BadFrame;
        co_return std::move(data);
      }
    } else if (raw.error() != Err::QueueEmpty) {
      co_return raw.error();
    }
  }
  co_return Err::GrantTimeout;
}

Task<Err> TeeRuntime::storage_write(TeeSession& s, std::uint32_t first, Bytes data) {
  if (data.size() % kBlockSize != 0) co_return Err::BadFrame;
  const IoWiring& w = ctx_.machine().wiring(s.resource);
  ByteWriter req;
  req.u32(first);
  req.u16(static_cast<std::uint16_t>(data.size() / kBlockSize));
  Err e = co_await metered_write(s, *w.ctl_send, Frame::make(op::kStorWrite, req.take()).encode(),
                                 false);
  if (e != Err::Ok) co_return e;
  const Mailbox* box = ctx_.machine().find_mailbox(*w.data_send);
  std::size_t cap = box->config().msg_size - kFrameHeader;
  std::size_t pos = 0;
  while (pos < data.size()) {
    std::size_t n = std::min(cap, data.size() - pos);
    Bytes chunk(data.begin() + static_cast<std::ptrdiff_t>(pos),
                data.begin() + static_cast<std::ptrdiff_t>(pos + n));
    Err we = co_await metered_write(s, *w.data_send,
                                    Frame::make(op::kData, std::move(chunk)).encode(), false);
    if (we != Err::Ok) co_return we;
    pos += n;
  }
  Result<Bytes> reply = co_await metered_read(s, *w.ctl_recv, cfg_.reply_poll_budget, false);
  if (!reply.ok()) co_return reply.error();
  Result<Frame> f = Frame::decode(reply.value());
  if (!f.ok()) co_return Err::BadFrame;
  if (f.value().opcode == op::kOk) co_return Err::Ok;
  if (f.value().opcode == op::kError) {
    ByteReader r(f.value().payload);
    co_return static_cast<Err>(r.u16());
  }
  co_return Err::BadFrame;
}

Task<Result<std::uint32_t>> TeeRuntime::sensor_sample(TeeSession& s) {
  const IoWiring& w = ctx_.machine().wiring(s.resource);
  Err e = co_await metered_write(s, *w.ctl_send, Frame::make(op::kSensorRead).encode(), false);
  if (e != Err::Ok) co_return e;
  Result<Bytes> reply = co_await metered_read(s, *w.ctl_recv, cfg_.reply_poll_budget, false);
  if (!reply.ok()) co_return reply.error();
  Result<Frame> f = Frame::decode(reply.value());
  if (!f.ok() || f.value().opcode != op::kSensorValue) co_return Err::BadFrame;
  ByteReader r(f.value().payload);
  co_return r.u32();
}

Task<Result<std::uint32_t>> TeeRuntime::pump_dose(TeeSession& s, std::uint32_t units) {
  const IoWiring& w = ctx_.machine().wiring(s.resource);
  ByteWriter req;
  req.u32(units);
  Err e = co_await metered_write(s, *w.ctl_send, Frame::make(op::kPumpDose, req.take()).encode(),
                                 false);
  if (e != Err::Ok) co_return e;
  Result<Bytes> reply = co_await metered_read(s, *w.ctl_recv, cfg_.reply_poll_budget, false);
  if (!reply.ok()) co_return reply.error();
  Result<Frame> f = Frame::decode(reply.value());
  if (!f.ok() || f.value().opcode != op::kPumpAck) co_return Err::BadFrame;
  ByteReader r(f.value().payload);
  co_return r.u32();
}

Task<Result<TeeSession>> TeeRuntime::ipc_establish(DomainId peer, SessionQuota quota) {
  Machine& m = ctx_.machine();
  std::uint8_t ch = rm_channel();
  ByteWriter req;
  req.u8(peer);
  req.u32(quota.msgs ? *quota.msgs : 0xffffffffu);
  req.u32(quota.ticks);
  req.u8(1);
  if (!co_await q_send_retry(ctx_, ch, Frame::make(op::kRmRequest, req.take()).encode()))
    co_return Err::GrantTimeout;
  for (std::uint32_t polls = 0; polls < cfg_.grant_poll_budget; ++polls) {
    OpResult r = co_await ctx_.q_recv(ch);
    if (r.code != Err::Ok) continue;
    Result<Frame> f = Frame::decode(r.bytes);
    if (!f.ok()) continue;
    if (f.value().opcode == op::kRmQueued) continue;
    if (f.value().opcode != op::kRmGrant) co_return Err::PolicyDenied;
    ByteReader g(f.value().payload);
    TeeSession s;
    s.resource = peer;
    std::uint8_t n = g.u8();
    for (std::uint8_t i = 0; i < n; ++i) s.mailboxes.push_back(g.u8());
    std::uint32_t msgs_raw = g.u32();
    s.promised_msgs =
        msgs_raw == 0xffffffffu ? std::nullopt : std::optional<std::uint32_t>(msgs_raw);
    s.deadline = g.u64();
    // the peer's mailbox must be delegated to us; ours must be with the peer
    for (MailboxId mb : s.mailboxes) {
      OpResult st = co_await ctx_.mb_status(mb);
      if (st.status.is_dummy || st.status.owner != ctx_.self()) co_return Err::StatusMismatch;
      s.msgs_left[mb] = s.promised_msgs;
    }
    for (const MailboxConfig& c : m.manifest().mailboxes) {
      if (c.fixed_end != ctx_.self() || !c.wired(peer)) continue;
      OpResult st = co_await ctx_.mb_status(c.id);
      if (st.status.is_dummy || st.status.owner != peer) co_return Err::StatusMismatch;
      s.mailboxes.push_back(c.id);  // our writable fixed end
    }
    s.verified = true;
    s.active = true;
    ctx_.note("tee_verify",
              {{"resource", static_cast<std::uint64_t>(peer)}, {"outcome", "verified"}});
    co_return s;
  }
  co_return Err::GrantTimeout;
}

Task<Result<TeeSession>> TeeRuntime::ipc_accept(std::uint32_t max_polls) {
  Machine& m = ctx_.machine();
  std::uint8_t ch = rm_channel();
  for (std::uint32_t polls = 0; polls < max_polls; ++polls) {
    OpResult r = co_await ctx_.q_recv(ch);
    if (r.code != Err::Ok) continue;
    Result<Frame> f = Frame::decode(r.bytes);
    if (!f.ok() || f.value().opcode != op::kRmGrant) continue;
    ByteReader g(f.value().payload);
    TeeSession s;
    std::uint8_t n = g.u8();
    for (std::uint8_t i = 0; i < n; ++i) s.mailboxes.push_back(g.u8());
    std::uint32_t msgs_raw = g.u32();
    s.promised_msgs =
        msgs_raw == 0xffffffffu ? std::nullopt : std::optional<std::uint32_t>(msgs_raw);
    s.deadline = g.u64();
    for (MailboxId mb : s.mailboxes) {
      OpResult st = co_await ctx_.mb_status(mb);
      if (st.status.is_dummy || st.status.owner != ctx_.self()) co_return Err::StatusMismatch;
      s.msgs_left[mb] = s.promised_msgs;
      const Mailbox* box = m.find_mailbox(mb);
      if (box) s.resource = box->config().fixed_end;  // the peer on the fixed end
    }
    for (const MailboxConfig& c : m.manifest().mailboxes) {
      if (c.fixed_end != ctx_.self() || !c.wired(s.resource)) continue;
      OpResult st = co_await ctx_.mb_status(c.id);
      if (st.status.is_dummy || st.status.owner != s.resource) co_return Err::StatusMismatch;
      s.mailboxes.push_back(c.id);
    }
    s.verified = true;
    s.active = true;
    co_return s;
  }
  co_return Err::GrantTimeout;
}

Task<Err> TeeRuntime::ipc_send(TeeSession& s, Bytes payload) {
  // our fixed-end mailbox is the writable one
  for (MailboxId mb : s.mailboxes) {
    const Mailbox* box = ctx_.machine().find_mailbox(mb);
    if (!box || box->config().fixed_end != ctx_.self()) continue;
    co_return co_await metered_write(s, mb, Frame::make(op::kNetData, std::move(payload)).encode(),
                                     false);
  }
  co_return Err::NoAccess;
}

Task<Result<Bytes>> TeeRuntime::ipc_recv(TeeSession& s, std::uint32_t max_polls) {
  for (MailboxId mb : s.mailboxes) {
    const Mailbox* box = ctx_.machine().find_mailbox(mb);
    if (!box || box->config().fixed_end == ctx_.self()) continue;
    Result<Bytes> r = co_await metered_read(s, mb, max_polls, false);
    if (!r.ok()) co_return r.error();
    Result<Frame> f = Frame::decode(r.value());
    if (!f.ok() || f.value().opcode != op::kNetData) co_return Err::BadFrame;
    co_return std::move(f.value().payload);
  }
  co_return Err::NoAccess;
}

}  // namespace splitsim
