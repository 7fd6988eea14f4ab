#include "splitsim/crypto.hpp"

#include <cstring>
#include <stdexcept>

namespace splitsim {

namespace {

constexpr std::uint32_t kSha256K[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

inline std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

struct Sha256Ctx {
  std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                        0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  std::uint8_t block[64];
  std::size_t block_len = 0;
  std::uint64_t total = 0;

  void compress(const std::uint8_t* p) {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    for (int i = 16; i < 64; ++i) {
      std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
    std::uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
    for (int i = 0; i < 64; ++i) {
      std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      std::uint32_t ch = (e & f) ^ (~e & g);
      std::uint32_t t1 = hh + s1 + ch + kSha256K[i] + w[i];
      std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      std::uint32_t t2 = s0 + maj;
      hh = g; g = f; f = e; e = d + t1;
      d = c; c = b; b = a; a = t1 + t2;
    }
    h[0] += a; h[1] += b; h[2] += c; h[3] += d;
    h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
  }

  void update(std::span<const std::uint8_t> data) {
    total += data.size();
    for (std::uint8_t byte : data) {
      block[block_len++] = byte;
      if (block_len == 64) {
        compress(block);
        block_len = 0;
      }
    }
  }

  Digest finish() {
    std::uint64_t bits = total * 8;
    std::uint8_t pad = 0x80;
    update(std::span<const std::uint8_t>(&pad, 1));
    std::uint8_t zero = 0;
    while (block_len != 56) update(std::span<const std::uint8_t>(&zero, 1));
    std::uint8_t len_be[8];
    for (int i = 0; i < 8; ++i) len_be[i] = static_cast<std::uint8_t>(bits >> (56 - 8 * i));
    update(std::span<const std::uint8_t>(len_be, 8));
    Digest out{};
    for (int i = 0; i < 8; ++i) {
      out[4 * i] = static_cast<std::uint8_t>(h[i] >> 24);
      out[4 * i + 1] = static_cast<std::uint8_t>(h[i] >> 16);
      out[4 * i + 2] = static_cast<std::uint8_t>(h[i] >> 8);
      out[4 * i + 3] = static_cast<std::uint8_t>(h[i]);
    }
    return out;
  }
};

}  // namespace

Digest sha256(std::span<const std::uint8_t> data) {
  Sha256Ctx ctx;
  ctx.update(data);
  return ctx.finish();
}

Digest sha256(std::string_view data) {
  return sha256(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

Mac hmac_sha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> data) {
  std::array<std::uint8_t, 64> k{};
  if (key.size() > 64) {
    Digest kd = sha256(key);
    std::memcpy(k.data(), kd.data(), kd.size());
  } else {
    std::memcpy(k.data(), key.data(), key.size());
  }
  std::array<std::uint8_t, 64> ipad, opad;
  for (int i = 0; i < 64; ++i) {
    ipad[i] = k[i] ^ 0x36;
    opad[i] = k[i] ^ 0x5c;
  }
  Sha256Ctx inner;
  inner.update(ipad);
  inner.update(data);
  Digest ih = inner.finish();
  Sha256Ctx outer;
  outer.update(opad);
  outer.update(ih);
  return outer.finish();
}

Bytes stream_xor(const Key& key, const Nonce& nonce, std::span<const std::uint8_t> data) {
  Bytes out(data.begin(), data.end());
  std::uint64_t counter = 0;
  std::size_t pos = 0;
  while (pos < out.size()) {
    ByteWriter w;
    w.bytes(key);
    w.bytes(nonce);
    w.u64(counter++);
    Digest ks = sha256(w.view());
    std::size_t n = std::min<std::size_t>(ks.size(), out.size() - pos);
    for (std::size_t i = 0; i < n; ++i) out[pos + i] ^= ks[i];
    pos += n;
  }
  return out;
}

namespace {
Key subkey(const Key& key, std::string_view label) {
  Bytes lbl = to_bytes(label);
  Mac m = hmac_sha256(key, lbl);
  return m;
}
}  // namespace

Bytes ae_seal(const Key& key, const Nonce& nonce, std::span<const std::uint8_t> plaintext) {
  Key enc = subkey(key, "enc");
  Key mac = subkey(key, "mac");
  Bytes ct = stream_xor(enc, nonce, plaintext);
  ByteWriter m;
  m.bytes(nonce);
  m.bytes(ct);
  Mac tag = hmac_sha256(mac, m.view());
  Bytes out = std::move(ct);
  out.insert(out.end(), tag.begin(), tag.end());
  return out;
}

Result<Bytes> ae_open(const Key& key, const Nonce& nonce, std::span<const std::uint8_t> sealed) {
  if (sealed.size() < kMacLen) return Err::AuthFailed;
  std::span<const std::uint8_t> ct = sealed.subspan(0, sealed.size() - kMacLen);
  std::span<const std::uint8_t> tag = sealed.subspan(sealed.size() - kMacLen);
  Key enc = subkey(key, "enc");
  Key mac = subkey(key, "mac");
  ByteWriter m;
  m.bytes(nonce);
  m.bytes(ct);
  Mac expect = hmac_sha256(mac, m.view());
  if (!constant_time_eq(expect, tag)) return Err::AuthFailed;
  return stream_xor(enc, nonce, ct);
}

Key derive_key(std::string_view label) { return sha256(label); }

Digest zero_digest() { return Digest{}; }

bool constant_time_eq(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) return false;
  std::uint8_t acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc |= a[i] ^ b[i];
  return acc == 0;
}

std::string hex_encode(std::span<const std::uint8_t> data) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (std::uint8_t b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

Bytes hex_decode(std::string_view hex) {
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw std::invalid_argument("odd hex length");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = nib(hex[i]), lo = nib(hex[i + 1]);
    if (hi < 0 || lo < 0) throw std::invalid_argument("bad hex digit");
    out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
  }
  return out;
}

std::string_view err_name(Err e) {
  switch (e) {
    case Err::Ok: return "ok";
    case Err::InvalidConfig: return "invalid-config";
    case Err::NotOwner: return "not-owner";
    case Err::NotWired: return "not-wired";
    case Err::BadDeadline: return "bad-deadline";
    case Err::NoAccess: return "no-access";
    case Err::QueueFull: return "queue-full";
    case Err::QueueEmpty: return "queue-empty";
    case Err::MsgTooLarge: return "msg-too-large";
    case Err::InvalidManifest: return "invalid-manifest";
    case Err::NotRm: return "not-rm";
    case Err::UnknownDomain: return "unknown-domain";
    case Err::Blocked: return "blocked";
    case Err::NoArbiter: return "no-arbiter";
    case Err::RouteDisabled: return "route-disabled";
    case Err::WindowViolation: return "window-violation";
    case Err::LinkDown: return "link-down";
    case Err::BadIndex: return "bad-index";
    case Err::EmptySelection: return "empty-selection";
    case Err::ImageMissing: return "image-missing";
    case Err::ForbiddenExtend: return "forbidden-extend";
    case Err::RejectMac: return "reject-mac";
    case Err::RejectNonce: return "reject-nonce";
    case Err::RejectPcrMismatch: return "reject-pcr-mismatch";
    case Err::BadFrame: return "malformed-frame";
    case Err::Overlap: return "overlap";
    case Err::UnknownPartition: return "unknown-partition";
    case Err::AuthFailed: return "auth-failed";
    case Err::OutOfPartition: return "out-of-partition";
    case Err::NotAuthenticated: return "not-authenticated";
    case Err::NotFound: return "not-found";
    case Err::BadMagic: return "bad-magic";
    case Err::AlreadyDisabled: return "already-disabled";
    case Err::ServiceDisabled: return "service-disabled";
    case Err::PolicyDenied: return "policy-denied";
    case Err::GrantTimeout: return "grant-timeout";
    case Err::StatusMismatch: return "status-mismatch";
    case Err::AttestReject: return "attest-reject";
    case Err::StaleDomain: return "stale-domain";
    case Err::AlreadyEnded: return "already-ended";
    case Err::QuotaExhausted: return "quota-exhausted";
    case Err::BoundsTooLarge: return "bounds-too-large";
  }
  return "unknown";
}

}  // namespace splitsim
