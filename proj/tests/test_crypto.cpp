#include "splitsim/crypto.hpp"

#include <random>

#include "doctest.h"

using namespace splitsim;

TEST_CASE("sha256 reference vectors") {
  CHECK(hex_encode(sha256("")) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(hex_encode(sha256("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(hex_encode(sha256("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")) ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  // one block boundary case: exactly 64 bytes
  std::string s(64, 'a');
  CHECK(hex_encode(sha256(s)) ==
        "ffe054fe7ae0cb6dc65c3af9b61d5209f439851db43d0ba5997337df154668eb");
}

TEST_CASE("hmac-sha256 rfc 4231 vectors") {
  Bytes key(20, 0x0b);
  Bytes data = to_bytes("Hi There");
  CHECK(hex_encode(hmac_sha256(key, data)) ==
        "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7");

  Bytes key2 = to_bytes("Jefe");
  Bytes data2 = to_bytes("what do ya want for nothing?");
  CHECK(hex_encode(hmac_sha256(key2, data2)) ==
        "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843");

  // key longer than the block size (vector 6)
  Bytes key6(131, 0xaa);
  Bytes data6 = to_bytes("Test Using Larger Than Block-Size Key - Hash Key First");
  CHECK(hex_encode(hmac_sha256(key6, data6)) ==
        "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54");
}

TEST_CASE("ae seal/open round trip and tamper rejection") {
  Key key = derive_key("test-key");
  Nonce nonce{};
  nonce[0] = 7;

  Bytes msg = to_bytes("the quick brown fox");
  Bytes sealed = ae_seal(key, nonce, msg);
  REQUIRE(sealed.size() == msg.size() + kMacLen);

  auto opened = ae_open(key, nonce, sealed);
  REQUIRE(opened.ok());
  CHECK(opened.value() == msg);

  SUBCASE("every single-byte mutation is rejected") {
    std::mt19937_64 rng(42);
    int rejected = 0;
    const int kTrials = 1000;
    for (int i = 0; i < kTrials; ++i) {
      Bytes mutated = sealed;
      std::size_t pos = rng() % mutated.size();
      std::uint8_t delta = static_cast<std::uint8_t>(1 + rng() % 255);
      mutated[pos] ^= delta;
      if (!ae_open(key, nonce, mutated).ok()) ++rejected;
    }
    CHECK(rejected == kTrials);
  }

  SUBCASE("wrong nonce is rejected") {
    Nonce other{};
    CHECK_FALSE(ae_open(key, other, sealed).ok());
  }

  SUBCASE("empty plaintext round trips") {
    Bytes sealed_empty = ae_seal(key, nonce, Bytes{});
    auto out = ae_open(key, nonce, sealed_empty);
    REQUIRE(out.ok());
    CHECK(out.value().empty());
  }
}

TEST_CASE("stream cipher is an involution") {
  Key key = derive_key("stream");
  Nonce nonce{};
  Bytes data(1000);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::uint8_t>(i * 7);
  Bytes once = stream_xor(key, nonce, data);
  CHECK(once != data);
  CHECK(stream_xor(key, nonce, once) == data);
}

TEST_CASE("hex round trip") {
  Bytes b = {0x00, 0x01, 0xfe, 0xff, 0x5a};
  CHECK(hex_decode(hex_encode(b)) == b);
  CHECK_THROWS(hex_decode("abc"));
  CHECK_THROWS(hex_decode("zz"));
}
