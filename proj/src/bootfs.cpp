#include "splitsim/bootfs.hpp"

#include <cstring>

namespace splitsim {

namespace {
constexpr char kMagic[4] = {'S', 'T', 'F', 'S'};

std::uint32_t blocks_for(std::uint32_t bytes) {
  return (bytes + kBlockSize - 1) / kBlockSize;
}
}  // namespace

Result<Bytes> bootfs_format(const std::vector<BootImage>& images) {
  if (images.size() > kBootFsMaxEntries) return Err::InvalidConfig;
  for (const BootImage& img : images)
    if (img.name.empty() || img.name.size() > kBootFsNameLen) return Err::InvalidConfig;

  std::uint32_t data_block = kBootFsTableBlocks;
  ByteWriter table;
  table.bytes(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(kMagic), sizeof(kMagic)));
  table.u32(static_cast<std::uint32_t>(images.size()));
  for (const BootImage& img : images) {
    table.str_fixed(img.name, kBootFsNameLen);
    table.u32(data_block);
    table.u32(static_cast<std::uint32_t>(img.bytes.size()));
    table.bytes(img.digest);
    for (int i = 0; i < 8; ++i) table.u8(0);
    data_block += blocks_for(static_cast<std::uint32_t>(img.bytes.size()));
  }

  Bytes out(static_cast<std::size_t>(data_block) * kBlockSize, 0);
  const Bytes& t = table.view();
  std::memcpy(out.data(), t.data(), t.size());
  std::uint32_t block = kBootFsTableBlocks;
  for (const BootImage& img : images) {
    std::memcpy(out.data() + static_cast<std::size_t>(block) * kBlockSize, img.bytes.data(),
                img.bytes.size());
    block += blocks_for(static_cast<std::uint32_t>(img.bytes.size()));
  }
  return out;
}

std::vector<BootFsEntry> bootfs_list(std::span<const std::uint8_t> partition) {
  std::vector<BootFsEntry> out;
  if (partition.size() < 8 || std::memcmp(partition.data(), kMagic, 4) != 0) return out;
  ByteReader r(partition.subspan(4));
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count && i < kBootFsMaxEntries; ++i) {
    BootFsEntry e;
    e.name = r.str_fixed(kBootFsNameLen);
    e.offset_block = r.u32();
    e.length = r.u32();
    Bytes d = r.bytes(32);
    r.bytes(8);
    if (!r.ok()) break;
    std::copy(d.begin(), d.end(), e.digest.begin());
    out.push_back(std::move(e));
  }
  return out;
}

Result<BootFsEntry> bootfs_lookup(std::span<const std::uint8_t> partition, std::string_view name) {
  if (partition.size() < 8 || std::memcmp(partition.data(), kMagic, 4) != 0) return Err::BadMagic;
  for (BootFsEntry& e : bootfs_list(partition))
    if (e.name == name) return std::move(e);
  return Err::NotFound;
}

}  // namespace splitsim
