#pragma once

#include <cstdint>
#include <string_view>

#include "splitsim/bytes.hpp"
#include "splitsim/error.hpp"

namespace splitsim {

/// Every message riding a mailbox or permanent queue is one frame:
/// a 4-byte little-endian header (opcode u16, length u16), then the payload.
/// A 512-byte message slot therefore carries at most 508 payload bytes.
constexpr std::size_t kFrameHeader = 4;
constexpr std::size_t kMaxPayload512 = 512 - kFrameHeader;

namespace op {
// common
constexpr std::uint16_t kError = 0x0010;
constexpr std::uint16_t kOk = 0x0011;
constexpr std::uint16_t kDisable = 0x000F;
// serial
constexpr std::uint16_t kPrint = 0x0101;
constexpr std::uint16_t kLine = 0x0201;
// storage control
constexpr std::uint16_t kStorAlloc = 0x0301;
constexpr std::uint16_t kStorBind = 0x0302;
constexpr std::uint16_t kStorAuth = 0x0303;
constexpr std::uint16_t kStorRead = 0x0304;
constexpr std::uint16_t kStorWrite = 0x0305;
constexpr std::uint16_t kStorQuery = 0x0306;
constexpr std::uint16_t kStorLookup = 0x0307;
constexpr std::uint16_t kStorStage = 0x0308;
// storage replies / data plane
constexpr std::uint16_t kStorStatus = 0x0321;
constexpr std::uint16_t kStorEntry = 0x0322;
constexpr std::uint16_t kData = 0x0310;
constexpr std::uint16_t kDataEnd = 0x0311;
constexpr std::uint16_t kImageHeader = 0x0312;
// network
constexpr std::uint16_t kNetData = 0x0410;
// sensor / pump
constexpr std::uint16_t kSensorRead = 0x0501;
constexpr std::uint16_t kSensorValue = 0x0510;
constexpr std::uint16_t kPumpDose = 0x0601;
constexpr std::uint16_t kPumpAck = 0x0610;
// resource manager channel
constexpr std::uint16_t kRmRequest = 0x0701;
constexpr std::uint16_t kRmGrant = 0x0710;
constexpr std::uint16_t kRmQueued = 0x0711;
constexpr std::uint16_t kRmDeny = 0x0712;
constexpr std::uint16_t kRmStart = 0x0720;
// tpm mediator channel
constexpr std::uint16_t kTpmExtend = 0x0801;
constexpr std::uint16_t kTpmQuote = 0x0802;
constexpr std::uint16_t kTpmOk = 0x0810;
constexpr std::uint16_t kTpmQuoteReply = 0x0811;
constexpr std::uint16_t kTpmErr = 0x0812;
}  // namespace op

struct Frame {
  std::uint16_t opcode = 0;
  Bytes payload;

  Bytes encode() const;
  static Result<Frame> decode(std::span<const std::uint8_t> raw);

  static Frame make(std::uint16_t opcode, Bytes payload = {}) {
    return Frame{opcode, std::move(payload)};
  }
  static Frame error(Err e);
};

std::string_view frame_op_name(std::uint16_t opcode);

}  // namespace splitsim
