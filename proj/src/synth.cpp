#include "slicemem/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "slicemem/errors.hpp"
#include "slicemem/rng.hpp"

namespace slicemem {

namespace {

constexpr double kBackgroundLevel = 0.2;
constexpr double kBlobLevel = 0.75;
constexpr double kMinSemiAxis = 3.0;
constexpr double kMaxSemiAxis = 14.0;

struct BlobTrack {
  Ellipse start;
  double vx = 0, vy = 0;          // px per um
  double da = 0, db = 0;          // px per um
  double spin = 0;                // rad per um
};

Ellipse blob_at(const BlobTrack& track, double dz, double size) {
  Ellipse e = track.start;
  const double margin = 6.0;
  e.cx = std::clamp(e.cx + track.vx * dz, margin, size - margin);
  e.cy = std::clamp(e.cy + track.vy * dz, margin, size - margin);
  e.semi_a = std::clamp(e.semi_a + track.da * dz, kMinSemiAxis, kMaxSemiAxis);
  e.semi_b = std::clamp(e.semi_b + track.db * dz, kMinSemiAxis, kMaxSemiAxis);
  e.angle += track.spin * dz;
  return e;
}

double to_pixel(double v) { return static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0))); }

}  // namespace

void SynthConfig::validate() const {
  if (num_sequences < 1 || slices_per_sequence < 1 || image_size < 1) {
    throw ConfigError("synthetic dataset counts must be at least 1");
  }
  if (min_blobs < 1 || max_blobs < min_blobs) throw ConfigError("blob count range invalid");
  if (!(corrupt_prob >= 0.0 && corrupt_prob <= 1.0)) {
    throw ConfigError("corrupt probability must lie in [0, 1]");
  }
  if (!(z_gap_min_um > 0.0 && z_gap_max_um >= z_gap_min_um)) {
    throw ConfigError("z gap range invalid");
  }
  if (noise_sigma < 0 || corrupt_noise_sigma < 0 || intensity_jitter < 0) {
    throw ConfigError("noise levels must be non-negative");
  }
}

bool Ellipse::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = (dx * c + dy * s) / semi_a;
  const double v = (-dx * s + dy * c) / semi_b;
  return u * u + v * v <= 1.0;
}

std::string synthetic_sequence_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq_%03zu", index);
  return buf;
}

Tensor rasterize(const std::vector<Ellipse>& blobs, std::size_t size) {
  Tensor mask({size, size});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      for (const Ellipse& e : blobs) {
        if (e.contains(px, py)) {
          mask.at(y, x) = 1.0;
          break;
        }
      }
    }
  }
  return mask;
}

SyntheticSequence synthesize_sequence(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  const std::string id = synthetic_sequence_id(index);
  Rng geo = Rng::substream(cfg.seed, "synthesis/geometry/" + id);
  Rng render = Rng::substream(cfg.seed, "synthesis/render/" + id);
  Rng corrupt = Rng::substream(cfg.seed, "synthesis/corruption/" + id);
  const double size = static_cast<double>(cfg.image_size);

  const std::size_t n_blobs = cfg.min_blobs + geo.below(cfg.max_blobs - cfg.min_blobs + 1);
  std::vector<BlobTrack> tracks(n_blobs);
  for (auto& tr : tracks) {
    tr.start.cx = geo.uniform(0.25 * size, 0.75 * size);
    tr.start.cy = geo.uniform(0.25 * size, 0.75 * size);
    tr.start.semi_a = geo.uniform(5.0, 11.0);
    tr.start.semi_b = geo.uniform(5.0, 11.0);
    tr.start.angle = geo.uniform(0.0, std::numbers::pi);
    const double heading = geo.uniform(0.0, 2.0 * std::numbers::pi);
    tr.vx = cfg.drift_px_per_um * std::cos(heading);
    tr.vy = cfg.drift_px_per_um * std::sin(heading);
    tr.da = geo.uniform(-0.04, 0.04);
    tr.db = geo.uniform(-0.04, 0.04);
    tr.spin = geo.uniform(-0.01, 0.01);
  }

  SyntheticSequence out;
  out.sequence.sequence_id = id;
  double z = geo.uniform(0.0, 10.0);
  const double z0 = z;
  for (std::size_t t = 0; t < cfg.slices_per_sequence; ++t) {
    if (t > 0) z += geo.uniform(cfg.z_gap_min_um, cfg.z_gap_max_um);
    std::vector<Ellipse> blobs;
    for (const auto& tr : tracks) blobs.push_back(blob_at(tr, z - z0, size));
    Tensor mask = rasterize(blobs, cfg.image_size);

    const double gain = 1.0 + render.normal(0.0, cfg.intensity_jitter);
    Tensor clean({cfg.image_size, cfg.image_size, 1});
    for (std::size_t i = 0; i < mask.numel(); ++i) {
      const double level = mask[i] > 0.0 ? kBlobLevel : kBackgroundLevel;
      clean[i] = to_pixel(gain * level + render.normal(0.0, cfg.noise_sigma));
    }

    const bool is_corrupted = corrupt.uniform() < cfg.corrupt_prob;
    Tensor image = clean;
    if (is_corrupted) {
      for (auto& v : image.data()) v = to_pixel(v + corrupt.normal(0.0, cfg.corrupt_noise_sigma));
    }

    Slice slice;
    slice.image = std::move(image);
    slice.mask = std::move(mask);
    slice.z_position_um = z;
    slice.corrupted = is_corrupted;
    out.sequence.slices.push_back(std::move(slice));
    out.geometry.push_back(std::move(blobs));
    out.clean_images.push_back(std::move(clean));
  }
  return out;
}

void generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError("cannot create dataset directory " + out_dir.string());
  }
  for (std::size_t i = 0; i < cfg.num_sequences; ++i) {
    const SyntheticSequence s = synthesize_sequence(cfg, i);
    save_sequence(s.sequence, out_dir / s.sequence.sequence_id);
  }
}

double psnr(const Tensor& reference, const Tensor& image) {
  if (reference.shape() != image.shape()) {
    throw DimensionError("psnr: " + shape_str(reference.shape()) + " vs " + shape_str(image.shape()));
  }
  double mse = 0.0;
  for (std::size_t i = 0; i < image.numel(); ++i) {
    mse += (reference[i] - image[i]) * (reference[i] - image[i]);
  }
  mse /= static_cast<double>(image.numel());
  if (mse == 0.0) return INFINITY;
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace slicemem
