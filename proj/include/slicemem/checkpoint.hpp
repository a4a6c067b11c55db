#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "slicemem/tensor.hpp"

namespace slicemem {

// Checkpoint layout (little-endian):
//   "PSC1" | u32 version | u32 header length | JSON header | payloads
// The header holds {"config": ..., "tensors": [{name, shape, dtype, offset}]}
// with offsets in bytes from the start of the payload section.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct CheckpointData {
  nlohmann::json config = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

/// Payloads are written as f64 so parameters survive a round trip bitwise.
std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
/// Accepts "f64" and "f32" payloads. Throws FormatError/TruncationError with
/// a byte offset, or VersionError for any version other than 1.
CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

}  // namespace slicemem
