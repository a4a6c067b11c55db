#include "slicemem/raster.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "slicemem/errors.hpp"

namespace slicemem {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'R', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_raster(const Tensor& image, RasterDtype dtype) {
  if (image.rank() != 2 && image.rank() != 3) {
    throw DimensionError("raster tensor must be HxW or HxWxC, got " + shape_str(image.shape()));
  }
  const std::uint64_t height = image.shape()[0];
  const std::uint64_t width = image.shape()[1];
  const std::uint64_t channels = image.rank() == 3 ? image.shape()[2] : 1;
  if (height > UINT32_MAX || width > UINT32_MAX || channels > UINT32_MAX) {
    throw DimensionError("raster extents exceed 32 bits: " + shape_str(image.shape()));
  }

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(width));
  put_u32(out, static_cast<std::uint32_t>(height));
  put_u32(out, static_cast<std::uint32_t>(channels));
  out.push_back(static_cast<std::uint8_t>(dtype));

  if (dtype == RasterDtype::kU8) {
    out.reserve(out.size() + image.numel());
    for (double v : image.data()) {
      if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
        throw DomainError("u8 raster value " + std::to_string(v) + " is not an integer in [0, 255]");
      }
      out.push_back(static_cast<std::uint8_t>(v));
    }
  } else {
    out.reserve(out.size() + 4 * image.numel());
    for (double v : image.data()) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

Tensor decode_raster(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw TruncationError("raster shorter than its magic", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad raster magic", 0);
  if (bytes.size() < kRasterHeaderSize) {
    throw TruncationError("raster header truncated", bytes.size());
  }
  const std::uint64_t width = get_u32(bytes, 4);
  const std::uint64_t height = get_u32(bytes, 8);
  const std::uint64_t channels = get_u32(bytes, 12);
  const std::uint8_t dtype = bytes[16];
  if (dtype > 1) throw FormatError("unknown raster dtype " + std::to_string(dtype), 16);
  if (width == 0 || height == 0 || channels == 0) {
    throw FormatError("raster has a zero extent", 4);
  }
  // Each extent fits 32 bits, so the pairwise products below cannot wrap.
  const std::uint64_t plane = width * height;
  if (plane > kRasterMaxElements || plane * channels > kRasterMaxElements) {
    throw FormatError("raster dimensions overflow the element limit", 4);
  }
  const std::uint64_t count = plane * channels;
  const std::uint64_t elem = dtype == 0 ? 4 : 1;
  const std::uint64_t expected = kRasterHeaderSize + count * elem;
  if (bytes.size() < expected) {
    throw TruncationError("raster payload truncated: header declares " + std::to_string(expected) +
                              " bytes, file has " + std::to_string(bytes.size()),
                          bytes.size());
  }
  if (bytes.size() > expected) throw FormatError("trailing bytes after raster payload", expected);

  Tensor out({height, width, channels});
  auto data = out.data();
  for (std::uint64_t i = 0; i < count; ++i) {
    if (dtype == 0) {
      data[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, kRasterHeaderSize + 4 * i)));
    } else {
      data[i] = static_cast<double>(bytes[kRasterHeaderSize + i]);
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_raster(const std::filesystem::path& path, const Tensor& image, RasterDtype dtype) {
  write_file_bytes(path, encode_raster(image, dtype));
}

Tensor read_raster(const std::filesystem::path& path) { return decode_raster(read_file_bytes(path)); }

}  // namespace slicemem
