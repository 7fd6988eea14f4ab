#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "splitsim/bytes.hpp"
#include "splitsim/error.hpp"

namespace splitsim {

/// All measurement and authentication in the project is pinned to SHA-256.
/// The authenticated encryption below is encrypt-then-MAC over a SHA-256
/// counter-mode keystream; see docs/formats.md for the exact construction.
using Digest = std::array<std::uint8_t, 32>;

constexpr std::size_t kKeyLen = 32;
constexpr std::size_t kMacLen = 32;
constexpr std::size_t kNonceLen = 16;

using Key = std::array<std::uint8_t, kKeyLen>;
using Mac = std::array<std::uint8_t, kMacLen>;
using Nonce = std::array<std::uint8_t, kNonceLen>;

Digest sha256(std::span<const std::uint8_t> data);
Digest sha256(std::string_view data);

Mac hmac_sha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> data);

/// Keystream block i = SHA-256(key || nonce || le64(i)); XORed over the input.
Bytes stream_xor(const Key& key, const Nonce& nonce, std::span<const std::uint8_t> data);

Bytes ae_seal(const Key& key, const Nonce& nonce, std::span<const std::uint8_t> plaintext);
Result<Bytes> ae_open(const Key& key, const Nonce& nonce, std::span<const std::uint8_t> sealed);

Key derive_key(std::string_view label);
Digest zero_digest();

bool constant_time_eq(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

}  // namespace splitsim
