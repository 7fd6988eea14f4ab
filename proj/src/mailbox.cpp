#include "splitsim/mailbox.hpp"

#include <algorithm>
#include <cstring>

namespace splitsim {

bool MailboxConfig::valid() const {
  if (depth < 1 || msg_size < 1) return false;
  if (wired(fixed_end)) return false;
  if (!wired(rm)) return false;
  for (std::size_t i = 0; i < wired_delegates.size(); ++i)
    for (std::size_t j = i + 1; j < wired_delegates.size(); ++j)
      if (wired_delegates[i] == wired_delegates[j]) return false;
  return true;
}

bool MailboxConfig::wired(DomainId d) const {
  return std::find(wired_delegates.begin(), wired_delegates.end(), d) != wired_delegates.end();
}

Result<Mailbox> Mailbox::create(MailboxConfig config) {
  if (!config.valid()) return Err::InvalidConfig;
  return Mailbox(std::move(config));
}

Mailbox::Mailbox(MailboxConfig config)
    : config_(std::move(config)),
      owner_(config_.rm),
      slots_(static_cast<std::size_t>(config_.depth) * config_.msg_size, 0),
      lengths_(config_.depth, 0) {}

DomainId Mailbox::writer_side() const {
  return config_.fixed_role == FixedRole::FixedWriter ? config_.fixed_end : owner_;
}

DomainId Mailbox::reader_side() const {
  return config_.fixed_role == FixedRole::FixedReader ? config_.fixed_end : owner_;
}

std::span<const std::uint8_t> Mailbox::slot(std::uint32_t i) const {
  return std::span<const std::uint8_t>(slots_).subspan(
      static_cast<std::size_t>(i) * config_.msg_size, config_.msg_size);
}

void Mailbox::wipe() {
  std::fill(slots_.begin(), slots_.end(), 0);
  std::fill(lengths_.begin(), lengths_.end(), 0);
  head_ = 0;
  count_ = 0;
}

void Mailbox::end_session() {
  owner_ = config_.rm;
  quota_.reset();
  wipe();
}

bool Mailbox::expire_check(Tick now) {
  if (quota_ && now >= quota_->deadline) {
    end_session();
    return true;
  }
  return false;
}

Err Mailbox::delegate_to(DomainId caller, DomainId target, Quota quota, Tick now) {
  expire_check(now);
  if (!faults.any_delegator && caller != config_.rm) return Err::NotOwner;
  if (owner_ != config_.rm || quota_.has_value()) return Err::NotOwner;  // irrevocable
  if (!config_.wired(target) || target == config_.rm) return Err::NotWired;
  if (quota.deadline <= now) return Err::BadDeadline;
  if (quota.msgs && *quota.msgs == 0) return Err::BadDeadline;  // empty budget
  owner_ = target;
  quota_ = quota;
  wipe();
  return Err::Ok;
}

Err Mailbox::yield_access(DomainId caller, Tick now) {
  expire_check(now);
  if (!quota_ || caller != owner_) return Err::NotOwner;
  owner_ = config_.rm;
  quota_.reset();
  if (!faults.skip_wipe_on_yield) wipe();
  return Err::Ok;
}

// Decrements the message budget when `actor` sits on the delegatable end of a
// metered session; ends the session the moment the budget reaches zero.
bool Mailbox::meter_and_maybe_expire(DomainId actor) {
  if (!quota_ || actor != owner_) return false;
  if (faults.unmetered_writes) return false;
  if (!quota_->msgs) return false;  // infinite budget
  --*quota_->msgs;
  if (*quota_->msgs == 0) {
    end_session();
    return true;
  }
  return false;
}

Err Mailbox::write(DomainId caller, std::span<const std::uint8_t> msg, Tick now) {
  expire_check(now);
  if (caller != writer_side()) return Err::NoAccess;
  if (msg.size() > config_.msg_size) return Err::MsgTooLarge;
  if (count_ == config_.depth) return Err::QueueFull;
  std::uint32_t idx = (head_ + count_) % config_.depth;
  std::uint8_t* dst = slots_.data() + static_cast<std::size_t>(idx) * config_.msg_size;
  std::memset(dst, 0, config_.msg_size);
  if (!msg.empty()) std::memcpy(dst, msg.data(), msg.size());
  lengths_[idx] = static_cast<std::uint32_t>(msg.size());
  ++count_;
  meter_and_maybe_expire(caller);
  return Err::Ok;
}

Result<Bytes> Mailbox::read(DomainId caller, Tick now) {
  expire_check(now);
  if (caller != reader_side()) return Err::NoAccess;
  if (count_ == 0) return Err::QueueEmpty;
  std::uint8_t* src = slots_.data() + static_cast<std::size_t>(head_) * config_.msg_size;
  Bytes out(src, src + lengths_[head_]);
  std::memset(src, 0, config_.msg_size);
  lengths_[head_] = 0;
  head_ = (head_ + 1) % config_.depth;
  --count_;
  meter_and_maybe_expire(caller);
  return out;
}

MailboxStatus Mailbox::read_status(DomainId caller, Tick now) {
  expire_check(now);
  if (!faults.leaky_status && caller != owner_ && caller != config_.fixed_end)
    return MailboxStatus::dummy();
  MailboxStatus s;
  s.owner = owner_;
  if (quota_) {
    s.msgs_left = quota_->msgs;
    s.time_left = quota_->deadline > now ? quota_->deadline - now : 0;
  } else {
    s.msgs_left = std::nullopt;
    s.time_left = kUnboundedTime;
  }
  s.is_dummy = false;
  return s;
}

void Mailbox::hw_reset() { end_session(); }

std::vector<Bytes> Mailbox::peek_queue() const {
  std::vector<Bytes> out;
  for (std::uint32_t i = 0; i < count_; ++i) {
    std::uint32_t idx = (head_ + i) % config_.depth;
    std::span<const std::uint8_t> s = slot(idx);
    out.emplace_back(s.begin(), s.begin() + lengths_[idx]);
  }
  return out;
}

bool Mailbox::unused_slots_zero() const {
  std::vector<bool> live(config_.depth, false);
  for (std::uint32_t i = 0; i < count_; ++i) live[(head_ + i) % config_.depth] = true;
  for (std::uint32_t idx = 0; idx < config_.depth; ++idx) {
    std::span<const std::uint8_t> s = slot(idx);
    std::uint32_t from = live[idx] ? lengths_[idx] : 0;
    for (std::uint32_t b = from; b < config_.msg_size; ++b)
      if (s[b] != 0) return false;
  }
  return true;
}

}  // namespace splitsim
