#include "splitsim/attestation.hpp"

#include <algorithm>

namespace splitsim {

Digest pcr_fold(const Digest& old_value, const Digest& d) {
  ByteWriter w;
  w.bytes(old_value);
  w.bytes(d);
  return sha256(w.view());
}

Digest boot_pcr(const Digest& image_digest) { return pcr_fold(zero_digest(), image_digest); }

Result<Digest> PcrBank::extend(std::size_t index, const Digest& d) {
  if (index >= regs_.size()) return Err::BadIndex;
  regs_[index] = pcr_fold(regs_[index], d);
  return regs_[index];
}

Result<Digest> PcrBank::read(std::size_t index) const {
  if (index >= regs_.size()) return Err::BadIndex;
  return regs_[index];
}

Result<Digest> PcrBank::reset_and_extend(std::size_t index, const Digest& d) {
  if (index >= regs_.size()) return Err::BadIndex;
  regs_[index] = pcr_fold(zero_digest(), d);
  return regs_[index];
}

namespace {
Bytes quote_auth_body(const Nonce& nonce, const std::vector<std::uint8_t>& selection,
                      const std::vector<Digest>& values) {
  ByteWriter w;
  w.bytes(nonce);
  w.u8(static_cast<std::uint8_t>(selection.size()));
  for (std::uint8_t s : selection) w.u8(s);
  for (const Digest& v : values) w.bytes(v);
  return w.take();
}
}  // namespace

Bytes Quote::serialize() const {
  ByteWriter w;
  w.bytes(nonce);
  w.u8(static_cast<std::uint8_t>(selection.size()));
  for (std::uint8_t s : selection) w.u8(s);
  for (const Digest& v : values) w.bytes(v);
  w.bytes(mac);
  return w.take();
}

Result<Quote> Quote::deserialize(std::span<const std::uint8_t> raw) {
  ByteReader r(raw);
  Quote q;
  Bytes n = r.bytes(kNonceLen);
  std::uint8_t nsel = r.u8();
  for (std::uint8_t i = 0; i < nsel; ++i) q.selection.push_back(r.u8());
  for (std::uint8_t i = 0; i < nsel; ++i) {
    Bytes v = r.bytes(32);
    if (!r.ok()) return Err::BadFrame;
    Digest d;
    std::copy(v.begin(), v.end(), d.begin());
    q.values.push_back(d);
  }
  Bytes m = r.bytes(kMacLen);
  if (!r.ok() || r.remaining() != 0) return Err::BadFrame;
  std::copy(n.begin(), n.end(), q.nonce.begin());
  std::copy(m.begin(), m.end(), q.mac.begin());
  return q;
}

Result<Quote> make_quote(const PcrBank& bank, const Nonce& nonce,
                         std::vector<std::uint8_t> selection, const Key& device_key) {
  if (selection.empty()) return Err::EmptySelection;
  std::sort(selection.begin(), selection.end());
  Quote q;
  q.nonce = nonce;
  q.selection = std::move(selection);
  for (std::uint8_t idx : q.selection) {
    Result<Digest> v = bank.read(idx);
    if (!v.ok()) return v.error();
    q.values.push_back(v.value());
  }
  q.mac = hmac_sha256(device_key, quote_auth_body(q.nonce, q.selection, q.values));
  return q;
}

QuoteVerdict verify_quote(const Quote& q, const std::vector<Digest>& expected_values,
                          const Nonce& expected_nonce, const Key& device_key) {
  Mac expect = hmac_sha256(device_key, quote_auth_body(q.nonce, q.selection, q.values));
  if (!constant_time_eq(expect, q.mac)) return QuoteVerdict::RejectMac;
  if (!constant_time_eq(q.nonce, expected_nonce)) return QuoteVerdict::RejectNonce;
  if (q.values.size() != expected_values.size()) return QuoteVerdict::RejectPcrMismatch;
  for (std::size_t i = 0; i < q.values.size(); ++i)
    if (q.values[i] != expected_values[i]) return QuoteVerdict::RejectPcrMismatch;
  return QuoteVerdict::Accept;
}

std::string_view quote_verdict_name(QuoteVerdict v) {
  switch (v) {
    case QuoteVerdict::Accept: return "accept";
    case QuoteVerdict::RejectMac: return "reject-mac";
    case QuoteVerdict::RejectNonce: return "reject-nonce";
    case QuoteVerdict::RejectPcrMismatch: return "reject-pcr-mismatch";
  }
  return "unknown";
}

BootImage BootImage::from_bytes(std::string name, Bytes payload) {
  BootImage img;
  img.name = std::move(name);
  img.digest = sha256(payload);
  img.bytes = std::move(payload);
  return img;
}

BootImage BootImage::synthetic(std::string name, std::size_t size) {
  Bytes payload;
  payload.reserve(size);
  Digest seed = sha256("image:" + name);
  std::uint64_t counter = 0;
  while (payload.size() < size) {
    ByteWriter w;
    w.bytes(seed);
    w.u64(counter++);
    Digest block = sha256(w.view());
    for (std::uint8_t b : block) {
      if (payload.size() == size) break;
      payload.push_back(b);
    }
  }
  return from_bytes(std::move(name), std::move(payload));
}

}  // namespace splitsim
