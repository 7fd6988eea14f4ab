#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "splitsim/error.hpp"
#include "splitsim/mailbox.hpp"

namespace splitsim {

/// Endpoint id reserved for the TPM mediator on permanent queues.
constexpr DomainId kTpmEndpoint = 0xFF;

enum class DeviceKind : std::uint8_t { SerialIn, SerialOut, Storage, Network, Sensor, Pump };

enum class DomainKindTag : std::uint8_t { ResourceManager, Tee, Io, Untrusted };

struct DomainKind {
  DomainKindTag tag = DomainKindTag::Tee;
  DeviceKind device = DeviceKind::SerialIn;  // meaningful only for Io

  static DomainKind rm() { return {DomainKindTag::ResourceManager, {}}; }
  static DomainKind tee() { return {DomainKindTag::Tee, {}}; }
  static DomainKind io(DeviceKind d) { return {DomainKindTag::Io, d}; }
  static DomainKind untrusted() { return {DomainKindTag::Untrusted, {}}; }
};

struct DomainDecl {
  DomainId id = 0;
  std::string name;
  DomainKind kind;
  std::uint32_t mem_size = 4096;
  std::string image;       // boot image name
  std::uint8_t pcr = 0;    // register index in the bank
  std::uint32_t device_blocks = 0;  // storage domains: backing store size
};

struct QueueDecl {
  std::uint8_t id = 0;
  std::string name;
  DomainId end_a = 0;  // domain id or kTpmEndpoint
  DomainId end_b = 0;
  std::uint32_t depth = 4;
  std::uint32_t msg_size = 64;
};

struct ArbiterDecl {
  DomainId io_domain = 0;
  MailboxId data_mailbox = 0;  // the mailbox whose owner selects the route
  std::uint32_t window_base = 0;  // range within untrusted memory
  std::uint32_t window_len = 0;
};

struct PolicyDecl {
  std::uint32_t max_msgs = 65536;
  std::uint32_t max_ticks = 10000;
};

struct ImageDecl {
  std::string name;
  std::uint32_t size = 1024;  // synthetic payload length
};

struct MachineManifest {
  std::string name = "machine";
  std::vector<DomainDecl> domains;
  std::vector<MailboxConfig> mailboxes;
  std::vector<QueueDecl> queues;
  std::vector<ArbiterDecl> arbiters;
  std::vector<ImageDecl> images;
  PolicyDecl policy;

  /// Empty string when the manifest is well formed; otherwise names the first
  /// violated constraint.
  std::string validate() const;

  const DomainDecl* find_domain(DomainId id) const;
  const DomainDecl* find_by_kind(DomainKindTag tag) const;       // first match
  const DomainDecl* find_by_device(DeviceKind dev) const;        // first match
  DomainId rm_id() const;
  DomainId untrusted_id() const;

  std::string to_json() const;
  static Result<MachineManifest> from_json(const std::string& text);
};

/// The prototype roster: one untrusted domain, one resource manager, two TEEs
/// and four I/O domains (serial in/out, storage, network), 12 mailboxes and
/// 11 permanent queues plus the TPM mediator endpoint.
MachineManifest default_manifest();

/// Default roster extended with glucose-sensor and insulin-pump I/O domains.
MachineManifest insulin_manifest();

/// Stable mailbox ids in the default manifest.
namespace mb {
constexpr MailboxId kSerialIn = 0;
constexpr MailboxId kSerialOut = 1;
constexpr MailboxId kStorCtlSend = 2;   // client -> storage
constexpr MailboxId kStorCtlRecv = 3;   // storage -> client
constexpr MailboxId kStorDataSend = 4;  // client -> storage
constexpr MailboxId kStorDataRecv = 5;  // storage -> client
constexpr MailboxId kNetCtlSend = 6;
constexpr MailboxId kNetCtlRecv = 7;
constexpr MailboxId kNetDataSend = 8;
constexpr MailboxId kNetDataRecv = 9;
constexpr MailboxId kIpc12 = 10;  // tee1 writes, delegatable reader
constexpr MailboxId kIpc21 = 11;  // tee2 writes, delegatable reader
constexpr MailboxId kSensorSend = 12;  // insulin manifest only
constexpr MailboxId kSensorRecv = 13;
constexpr MailboxId kPumpSend = 14;
constexpr MailboxId kPumpRecv = 15;
}  // namespace mb

/// Stable domain ids in the default manifest.
namespace dom {
constexpr DomainId kRm = 0;
constexpr DomainId kTee1 = 1;
constexpr DomainId kTee2 = 2;
constexpr DomainId kSerialIn = 3;
constexpr DomainId kSerialOut = 4;
constexpr DomainId kStorage = 5;
constexpr DomainId kNetwork = 6;
constexpr DomainId kUntrusted = 7;
constexpr DomainId kSensor = 8;  // insulin manifest only
constexpr DomainId kPump = 9;
}  // namespace dom

}  // namespace splitsim
