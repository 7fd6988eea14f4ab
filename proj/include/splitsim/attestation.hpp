#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitsim/crypto.hpp"
#include "splitsim/error.hpp"

namespace splitsim {

/// PCR value an I/O service folds in before touching its device for the first
/// time after a reset, making any prior use visible to attestation.
inline Digest freshness_constant() {
  Digest d;
  d.fill(0xF5);
  return d;
}

/// One append-only measurement register per domain, all-zero at power-on.
class PcrBank {
 public:
  explicit PcrBank(std::size_t registers) : regs_(registers, zero_digest()) {}

  std::size_t size() const { return regs_.size(); }
  Result<Digest> extend(std::size_t index, const Digest& d);
  Result<Digest> read(std::size_t index) const;
  /// ROM-bootloader path: re-initialize a register and measure a fresh image.
  Result<Digest> reset_and_extend(std::size_t index, const Digest& d);

 private:
  std::vector<Digest> regs_;
};

/// H(old || d) — the only transition a register ever makes.
Digest pcr_fold(const Digest& old_value, const Digest& d);

/// Expected register value right after a boot measurement of `image_digest`.
Digest boot_pcr(const Digest& image_digest);

struct Quote {
  Nonce nonce{};
  std::vector<std::uint8_t> selection;  // pcr indices, ascending
  std::vector<Digest> values;
  Mac mac{};

  Bytes serialize() const;
  static Result<Quote> deserialize(std::span<const std::uint8_t> raw);
};

Result<Quote> make_quote(const PcrBank& bank, const Nonce& nonce,
                         std::vector<std::uint8_t> selection, const Key& device_key);

enum class QuoteVerdict : std::uint8_t { Accept, RejectMac, RejectNonce, RejectPcrMismatch };

/// Accepts iff the mac recomputes under the device key, the nonce matches, and
/// every selected register equals the caller's expectation.
QuoteVerdict verify_quote(const Quote& q, const std::vector<Digest>& expected_values,
                          const Nonce& expected_nonce, const Key& device_key);

std::string_view quote_verdict_name(QuoteVerdict v);

struct BootImage {
  std::string name;  // at most 16 bytes
  Bytes bytes;
  Digest digest{};  // always H(bytes)

  static BootImage from_bytes(std::string name, Bytes payload);
  /// Deterministic synthetic payload for a named program image.
  static BootImage synthetic(std::string name, std::size_t size = 1024);
};

}  // namespace splitsim
