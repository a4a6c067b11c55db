#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slicemem/tensor.hpp"

namespace slicemem {

/// One section of a subject: image [H x W x C] in [0, 1], optional binary
/// mask [H x W], optional physical depth in micrometers.
struct Slice {
  Tensor image;
  std::optional<Tensor> mask;
  std::optional<double> z_position_um;
  bool corrupted = false;
};

/// Ordered slices of one subject.
struct SliceSequence {
  std::string sequence_id;
  std::vector<Slice> slices;

  bool has_masks() const;
  bool has_z_positions() const;
  /// Throws ContractError on mixed image shapes, non-increasing or negative
  /// z positions, or a z position present on only some slices.
  void validate() const;
};

/// Scale of feature-estimated distances, in micrometers.
inline constexpr double kDistanceScaleUm = 10.0;

/// c * (1 - cos(a, b)). Returns c when either embedding is degenerate.
double estimate_distance(std::span<const double> a, std::span<const double> b,
                         double scale_um = kDistanceScaleUm);

/// File names inside a sequence directory.
std::string slice_file_name(std::size_t t);
std::string mask_file_name(std::size_t t);
inline constexpr const char* kSequenceDocument = "sequence.json";

/// Writes `<dir>/sequence.json` plus one f32 image raster and (when present)
/// one u8 mask raster per slice.
void save_sequence(const SliceSequence& seq, const std::filesystem::path& dir);
SliceSequence load_sequence(const std::filesystem::path& dir);
/// Every sequence directory under `root`, ordered by directory name.
std::vector<SliceSequence> load_dataset(const std::filesystem::path& root);

}  // namespace slicemem
