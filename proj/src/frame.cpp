#include "splitsim/frame.hpp"

namespace splitsim {

Bytes Frame::encode() const {
  ByteWriter w;
  w.u16(opcode);
  w.u16(static_cast<std::uint16_t>(payload.size()));
  w.bytes(payload);
  return w.take();
}

Result<Frame> Frame::decode(std::span<const std::uint8_t> raw) {
  if (raw.size() < kFrameHeader) return Err::BadFrame;
  ByteReader r(raw);
  Frame f;
  f.opcode = r.u16();
  std::uint16_t len = r.u16();
  if (raw.size() != kFrameHeader + len) return Err::BadFrame;
  f.payload = r.bytes(len);
  return f;
}

Frame Frame::error(Err e) {
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(e));
  return Frame{op::kError, w.take()};
}

std::string_view frame_op_name(std::uint16_t opcode) {
  switch (opcode) {
    case op::kError: return "error";
    case op::kOk: return "ok";
    case op::kDisable: return "disable";
    case op::kPrint: return "print";
    case op::kLine: return "line";
    case op::kStorAlloc: return "stor-alloc";
    case op::kStorBind: return "stor-bind";
    case op::kStorAuth: return "stor-auth";
    case op::kStorRead: return "stor-read";
    case op::kStorWrite: return "stor-write";
    case op::kStorQuery: return "stor-query";
    case op::kStorLookup: return "stor-lookup";
    case op::kStorStage: return "stor-stage";
    case op::kStorStatus: return "stor-status";
    case op::kStorEntry: return "stor-entry";
    case op::kData: return "data";
    case op::kDataEnd: return "data-end";
    case op::kImageHeader: return "image-header";
    case op::kNetData: return "net-data";
    case op::kSensorRead: return "sensor-read";
    case op::kSensorValue: return "sensor-value";
    case op::kPumpDose: return "pump-dose";
    case op::kPumpAck: return "pump-ack";
    case op::kRmRequest: return "rm-request";
    case op::kRmGrant: return "rm-grant";
    case op::kRmQueued: return "rm-queued";
    case op::kRmDeny: return "rm-deny";
    case op::kRmStart: return "rm-start";
    case op::kTpmExtend: return "tpm-extend";
    case op::kTpmQuote: return "tpm-quote";
    case op::kTpmOk: return "tpm-ok";
    case op::kTpmQuoteReply: return "tpm-quote-reply";
    case op::kTpmErr: return "tpm-err";
  }
  return "op";
}

}  // namespace splitsim
