#include "slicemem/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <set>

#include "slicemem/errors.hpp"
#include "slicemem/raster.hpp"

namespace slicemem {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'P', 'S', 'C', '1'};
constexpr std::size_t kFixedHeader = 12;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[offset + i]) << (8 * i);
  return v;
}

}  // namespace

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  json manifest = json::array();
  std::set<std::string> seen;
  std::uint64_t offset = 0;
  for (const auto& t : data.tensors) {
    if (!seen.insert(t.name).second) throw ContractError("duplicate checkpoint tensor " + t.name);
    manifest.push_back({{"name", t.name},
                        {"shape", t.tensor.shape()},
                        {"dtype", "f64"},
                        {"offset", offset}});
    offset += 8 * t.tensor.numel();
  }
  const json header = {{"config", data.config}, {"tensors", manifest}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& t : data.tensors) {
    for (double v : t.tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw TruncationError("checkpoint shorter than its magic", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
  if (bytes.size() < kFixedHeader) throw TruncationError("checkpoint header truncated", bytes.size());
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) throw VersionError(version);
  const std::uint64_t header_len = get_le<std::uint32_t>(bytes, 8);
  if (bytes.size() < kFixedHeader + header_len) {
    throw TruncationError("checkpoint header declares " + std::to_string(header_len) + " bytes",
                          bytes.size());
  }

  json header;
  try {
    header = json::parse(bytes.begin() + kFixedHeader, bytes.begin() + kFixedHeader + header_len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what(), kFixedHeader);
  }

  const std::uint64_t payload_start = kFixedHeader + header_len;
  CheckpointData data;
  try {
    data.config = header.at("config");
    for (const json& entry : header.at("tensors")) {
      NamedTensor nt;
      nt.name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      const std::string dtype = entry.at("dtype").get<std::string>();
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      std::uint64_t elem = 0;
      if (dtype == "f64") {
        elem = 8;
      } else if (dtype == "f32") {
        elem = 4;
      } else {
        throw FormatError("tensor " + nt.name + " has unknown dtype " + dtype, kFixedHeader);
      }
      std::uint64_t count = 1;
      for (std::size_t d : shape) {
        if (d != 0 && count > kRasterMaxElements / d) {
          throw FormatError("tensor " + nt.name + " shape overflows", kFixedHeader);
        }
        count *= d;
      }
      const std::uint64_t begin = payload_start + offset;
      if (begin > bytes.size() || count * elem > bytes.size() - begin) {
        throw TruncationError("payload of tensor " + nt.name + " runs past end of file",
                              bytes.size());
      }
      std::vector<double> values(count);
      for (std::uint64_t i = 0; i < count; ++i) {
        if (elem == 8) {
          values[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, begin + 8 * i));
        } else {
          values[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, begin + 4 * i));
        }
      }
      nt.tensor = Tensor(shape, std::move(values));
      data.tensors.push_back(std::move(nt));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest malformed: ") + e.what(), kFixedHeader);
  }
  return data;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  write_file_bytes(path, encode_checkpoint(data));
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace slicemem
