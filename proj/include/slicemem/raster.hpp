#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "slicemem/tensor.hpp"

namespace slicemem {

// Raster layout (little-endian):
//   offset 0   "PSR1"
//   offset 4   u32 width
//   offset 8   u32 height
//   offset 12  u32 channels
//   offset 16  u8 dtype (0 = f32, 1 = u8)
//   offset 17  row-major, channel-last payload

enum class RasterDtype : std::uint8_t { kF32 = 0, kU8 = 1 };

inline constexpr std::size_t kRasterHeaderSize = 17;
/// Largest element count a reader accepts.
inline constexpr std::uint64_t kRasterMaxElements = std::uint64_t{1} << 30;

/// Tensor must be [H x W] or [H x W x C]. u8 payloads require integer values
/// in [0, 255] (DomainError otherwise).
std::vector<std::uint8_t> encode_raster(const Tensor& image, RasterDtype dtype);
/// Returns [H x W x C]. Throws FormatError (bad magic, dtype, dimensions,
/// trailing bytes) or TruncationError, each with the failing byte offset.
Tensor decode_raster(std::span<const std::uint8_t> bytes);

void write_raster(const std::filesystem::path& path, const Tensor& image, RasterDtype dtype);
Tensor read_raster(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace slicemem
