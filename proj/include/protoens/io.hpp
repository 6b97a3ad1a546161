#pragma once

// On-disk formats.
//
// FVL1 feature volume, all integers little-endian:
//
//   offset  size  field
//   0       4     magic "FVL1"
//   4       2     version (u16) = 1
//   6       4     height (u32)
//   10      4     width (u32)
//   14      4     channels (u32)
//   18      4*N   float32 payload, N = height*width*channels,
//                 row-major (row, column, channel)
//
// Masks are 8-bit single-channel grayscale PNGs whose pixel value is the
// class id (255 = ignore).

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "protoens/tensor.hpp"

namespace protoens {

inline constexpr std::size_t kFvolHeaderSize = 18;
inline constexpr std::uint16_t kFvolVersion = 1;

std::vector<std::uint8_t> encode_fvol(const FeatureVolume& volume);

/// Throws FormatError (with byte offset) on bad magic, version mismatch,
/// zero dimensions, truncation, trailing bytes or non-finite values.
FeatureVolume decode_fvol(std::span<const std::uint8_t> bytes);

void write_fvol(const FeatureVolume& volume, const std::filesystem::path& path);
FeatureVolume read_fvol(const std::filesystem::path& path);

/// Throws UnsupportedFormat for anything but 8-bit grayscale without alpha.
DenseMask read_mask(const std::filesystem::path& path);
void write_mask(const DenseMask& mask, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace protoens
