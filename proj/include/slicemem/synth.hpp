#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slicemem/sequence.hpp"

namespace slicemem {

/// Parameters of the synthetic serial-section generator. Geometry units are
/// pixels, depth units micrometers.
struct SynthConfig {
  std::size_t num_sequences = 4;
  std::size_t slices_per_sequence = 6;
  std::size_t image_size = 64;
  std::size_t min_blobs = 1;
  std::size_t max_blobs = 3;
  double z_gap_min_um = 2.0;
  double z_gap_max_um = 40.0;
  double drift_px_per_um = 0.08;
  double intensity_jitter = 0.08;  // sd of the per-slice staining gain
  double noise_sigma = 0.03;
  double corrupt_prob = 0.0;
  double corrupt_noise_sigma = 0.6;
  std::uint64_t seed = 1;

  void validate() const;
};

/// A rotated ellipse; (cx, cy) in pixel coordinates, pixel (x, y) has its
/// center at (x + 0.5, y + 0.5).
struct Ellipse {
  double cx = 0, cy = 0;
  double semi_a = 1, semi_b = 1;
  double angle = 0;

  bool contains(double x, double y) const;
};

struct SyntheticSequence {
  SliceSequence sequence;
  std::vector<std::vector<Ellipse>> geometry;  // per slice
  std::vector<Tensor> clean_images;            // render before corruption
};

std::string synthetic_sequence_id(std::size_t index);

/// Deterministic in (cfg, index).
SyntheticSequence synthesize_sequence(const SynthConfig& cfg, std::size_t index);

/// Union of ellipse interiors, sampled at pixel centers, as a {0,1} [size x size] mask.
Tensor rasterize(const std::vector<Ellipse>& blobs, std::size_t size);

/// Writes `<out_dir>/<sequence_id>/...` for every sequence.
void generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

/// Peak signal-to-noise ratio of `image` against `reference` (peak 1.0), in dB.
double psnr(const Tensor& reference, const Tensor& image);

}  // namespace slicemem
