#pragma once

#include "splitsim/frame.hpp"
#include "splitsim/machine.hpp"

namespace splitsim {

/// Writes one message, riding out transient queue-full rejections. Each retry
/// costs a tick; anything other than queue-full aborts.
inline Task<bool> send_with_retry(DomainCtx ctx, MailboxId mb, Bytes raw, int tries = 256) {
  for (int i = 0; i < tries; ++i) {
    OpResult r = co_await ctx.mb_write(mb, raw);
    if (r.code == Err::Ok) co_return true;
    if (r.code != Err::QueueFull) co_return false;
  }
  co_return false;
}

inline Task<bool> send_frame_retry(DomainCtx ctx, MailboxId mb, Frame f, int tries = 256) {
  co_return co_await send_with_retry(ctx, mb, f.encode(), tries);
}

/// Polls a mailbox until a decodable frame arrives or the poll budget runs
/// out. Undecodable messages are skipped.
inline Task<Result<Frame>> recv_frame(DomainCtx ctx, MailboxId mb, std::uint32_t max_polls) {
  for (std::uint32_t i = 0; i < max_polls; ++i) {
    OpResult r = co_await ctx.mb_read(mb);
    if (r.code == Err::QueueEmpty) continue;
    if (r.code != Err::Ok) co_return r.code;
    Result<Frame> f = Frame::decode(r.bytes);
    if (f.ok()) co_return f.take();
  }
  co_return Err::GrantTimeout;
}

inline Task<bool> q_send_retry(DomainCtx ctx, std::uint8_t queue, Bytes raw, int tries = 256) {
  for (int i = 0; i < tries; ++i) {
    OpResult r = co_await ctx.q_send(queue, raw);
    if (r.code == Err::Ok) co_return true;
    if (r.code != Err::QueueFull) co_return false;
  }
  co_return false;
}

/// Polls a permanent queue until a frame arrives or the budget runs out.
inline Task<Result<Frame>> q_recv_frame(DomainCtx ctx, std::uint8_t queue,
                                        std::uint32_t max_polls) {
  for (std::uint32_t i = 0; i < max_polls; ++i) {
    OpResult r = co_await ctx.q_recv(queue);
    if (r.code == Err::QueueEmpty) continue;
    if (r.code != Err::Ok) co_return r.code;
    Result<Frame> f = Frame::decode(r.bytes);
    if (f.ok()) co_return f.take();
  }
  co_return Err::GrantTimeout;
}

}  // namespace splitsim
