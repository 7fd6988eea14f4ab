#include "splitsim/bootfs.hpp"
#include "splitsim/frame.hpp"
#include "splitsim/tee_runtime.hpp"

#include "doctest.h"

using namespace splitsim;

TEST_CASE("frame codec round trips every payload size up to the 512-byte slot") {
  for (std::size_t n = 0; n <= kMaxPayload512; ++n) {
    Frame f;
    f.opcode = static_cast<std::uint16_t>(0x0300 + (n % 7));
    f.payload.resize(n);
    for (std::size_t i = 0; i < n; ++i) f.payload[i] = static_cast<std::uint8_t>(i * 13 + n);
    Bytes wire = f.encode();
    REQUIRE(wire.size() == kFrameHeader + n);
    auto back = Frame::decode(wire);
    REQUIRE(back.ok());
    CHECK(back.value().opcode == f.opcode);
    CHECK(back.value().payload == f.payload);
  }
}

TEST_CASE("malformed frames are rejected, never crash") {
  CHECK(Frame::decode(Bytes{}).error() == Err::BadFrame);
  CHECK(Frame::decode(Bytes{1, 2, 3}).error() == Err::BadFrame);
  // header says more payload than present
  Frame f = Frame::make(op::kPrint, to_bytes("hello"));
  Bytes wire = f.encode();
  wire[2] = 0xff;  // length low byte
  CHECK(Frame::decode(wire).error() == Err::BadFrame);
  // trailing garbage
  wire = f.encode();
  wire.push_back(0);
  CHECK(Frame::decode(wire).error() == Err::BadFrame);
}

TEST_CASE("net fragmentation splits and reassembles") {
  SUBCASE("600 bytes become two frames") {
    Bytes payload(600);
    for (std::size_t i = 0; i < payload.size(); ++i)
      payload[i] = static_cast<std::uint8_t>(i);
    auto frags = net_fragment(payload, kMaxPayload512);
    CHECK(frags.size() == 2);
    NetReassembly re;
    for (const Bytes& f : frags) REQUIRE(re.feed(f));
    CHECK(re.complete);
    CHECK(re.data == payload);
  }
  SUBCASE("empty payload still carries one final fragment") {
    auto frags = net_fragment({}, kMaxPayload512);
    REQUIRE(frags.size() == 1);
    NetReassembly re;
    REQUIRE(re.feed(frags[0]));
    CHECK(re.complete);
    CHECK(re.data.empty());
  }
  SUBCASE("random sizes round trip") {
    for (std::size_t n : {1u, 505u, 506u, 507u, 1013u, 4000u}) {
      Bytes payload(n, 0x5a);
      auto frags = net_fragment(payload, kMaxPayload512);
      NetReassembly re;
      for (const Bytes& f : frags) REQUIRE(re.feed(f));
      CHECK(re.complete);
      CHECK(re.data == payload);
    }
  }
  SUBCASE("short fragment is malformed") {
    NetReassembly re;
    CHECK_FALSE(re.feed(Bytes{1}));
  }
}

TEST_CASE("boot filesystem format and lookup") {
  std::vector<BootImage> images = {
      BootImage::synthetic("rmanager", 1000),
      BootImage::synthetic("svc_storage", 513),
      BootImage::synthetic("tiny", 1),
  };
  auto fs = bootfs_format(images);
  REQUIRE(fs.ok());
  const Bytes& part = fs.value();
  REQUIRE(part.size() % kBlockSize == 0);

  auto e = bootfs_lookup(part, "rmanager");
  REQUIRE(e.ok());
  CHECK(e.value().length == 1000);
  CHECK(e.value().digest == images[0].digest);
  // entry points at the actual bytes
  std::span<const std::uint8_t> data(part);
  Bytes stored(data.begin() + e.value().offset_block * kBlockSize,
               data.begin() + e.value().offset_block * kBlockSize + e.value().length);
  CHECK(sha256(stored) == images[0].digest);

  CHECK(bootfs_lookup(part, "nonexistent").error() == Err::NotFound);
  Bytes blank(kBlockSize * 4, 0);
  CHECK(bootfs_lookup(blank, "rmanager").error() == Err::BadMagic);

  // images land on disjoint block runs
  auto all = bootfs_list(part);
  REQUIRE(all.size() == 3);
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      std::uint32_t ai = all[i].offset_block;
      std::uint32_t bi = ai + (all[i].length + kBlockSize - 1) / kBlockSize;
      std::uint32_t aj = all[j].offset_block;
      std::uint32_t bj = aj + (all[j].length + kBlockSize - 1) / kBlockSize;
      CHECK((bi <= aj || bj <= ai));
    }
}

TEST_CASE("boot filesystem rejects oversized names and too many entries") {
  std::vector<BootImage> images = {BootImage::synthetic("name-far-too-long-to-fit", 10)};
  CHECK(bootfs_format(images).error() == Err::InvalidConfig);

  images.clear();
  for (std::size_t i = 0; i < kBootFsMaxEntries + 1; ++i)
    images.push_back(BootImage::synthetic("img" + std::to_string(i), 8));
  CHECK(bootfs_format(images).error() == Err::InvalidConfig);
}
