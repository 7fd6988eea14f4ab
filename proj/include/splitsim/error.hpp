#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <variant>

namespace splitsim {

/// One error vocabulary for the whole machine. Each subsystem uses the slice
/// that its contract names; the trace and wire formats carry these by name.
enum class Err : std::uint8_t {
  Ok = 0,
  // mailbox
  InvalidConfig,
  NotOwner,
  NotWired,
  BadDeadline,
  NoAccess,
  QueueFull,
  QueueEmpty,
  MsgTooLarge,
  // platform
  InvalidManifest,
  NotRm,
  UnknownDomain,
  Blocked,
  NoArbiter,
  RouteDisabled,
  WindowViolation,
  LinkDown,
  // attestation
  BadIndex,
  EmptySelection,
  ImageMissing,
  ForbiddenExtend,
  RejectMac,
  RejectNonce,
  RejectPcrMismatch,
  // io services
  BadFrame,
  Overlap,
  UnknownPartition,
  AuthFailed,
  OutOfPartition,
  NotAuthenticated,
  NotFound,
  BadMagic,
  AlreadyDisabled,
  ServiceDisabled,
  // resource manager / runtime
  PolicyDenied,
  GrantTimeout,
  StatusMismatch,
  AttestReject,
  StaleDomain,
  AlreadyEnded,
  QuotaExhausted,
  // harness
  BoundsTooLarge,
};

std::string_view err_name(Err e);

/// Minimal expected-style carrier for operations that produce a value.
template <class T>
class Result {
 public:
  Result(T value) : v_(std::move(value)) {}  // NOLINT(google-explicit-constructor)
  Result(Err e) : v_(e) {}                   // NOLINT(google-explicit-constructor)

  bool ok() const { return std::holds_alternative<T>(v_); }
  explicit operator bool() const { return ok(); }

  Err error() const { return ok() ? Err::Ok : std::get<Err>(v_); }
  T& value() { return std::get<T>(v_); }
  const T& value() const { return std::get<T>(v_); }
  T take() { return std::move(std::get<T>(v_)); }

 private:
  std::variant<T, Err> v_;
};

}  // namespace splitsim
