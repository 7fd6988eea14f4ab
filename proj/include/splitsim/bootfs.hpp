#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitsim/attestation.hpp"
#include "splitsim/bytes.hpp"
#include "splitsim/error.hpp"

namespace splitsim {

/// Flat boot filesystem living in the boot partition (partition 0) of the
/// storage device. Layout on 512-byte blocks:
///   byte 0..3   magic "STFS"
///   byte 4..7   entry count (u32 le)
///   byte 8..    64-byte entries, packed, spanning the first two blocks
/// Entry: name (16, zero padded), offset block (u32), length bytes (u32),
/// image digest (32), 8 bytes reserved zero. Image data starts at block 2.
constexpr std::uint32_t kBlockSize = 512;
constexpr std::uint32_t kBootFsTableBlocks = 2;
constexpr std::size_t kBootFsEntrySize = 64;
constexpr std::size_t kBootFsMaxEntries = (kBootFsTableBlocks * kBlockSize - 8) / kBootFsEntrySize;
constexpr std::size_t kBootFsNameLen = 16;

struct BootFsEntry {
  std::string name;
  std::uint32_t offset_block = 0;
  std::uint32_t length = 0;
  Digest digest{};
};

/// Formats a block image holding the given boot images; returns the raw bytes
/// of the boot partition (a whole number of blocks).
Result<Bytes> bootfs_format(const std::vector<BootImage>& images);

Result<BootFsEntry> bootfs_lookup(std::span<const std::uint8_t> partition, std::string_view name);

std::vector<BootFsEntry> bootfs_list(std::span<const std::uint8_t> partition);

}  // namespace splitsim
