#include "slicemem/sequence.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "slicemem/autograd.hpp"
#include "slicemem/errors.hpp"
#include "slicemem/raster.hpp"

namespace slicemem {

namespace fs = std::filesystem;
using nlohmann::json;

bool SliceSequence::has_masks() const {
  return std::all_of(slices.begin(), slices.end(), [](const Slice& s) { return s.mask.has_value(); });
}

bool SliceSequence::has_z_positions() const {
  return std::all_of(slices.begin(), slices.end(),
                     [](const Slice& s) { return s.z_position_um.has_value(); });
}

void SliceSequence::validate() const {
  const std::size_t with_z = std::count_if(slices.begin(), slices.end(), [](const Slice& s) {
    return s.z_position_um.has_value();
  });
  if (with_z != 0 && with_z != slices.size()) {
    throw ContractError("sequence " + sequence_id + ": z positions present on only some slices");
  }
  for (std::size_t t = 0; t < slices.size(); ++t) {
    const Slice& s = slices[t];
    if (s.image.shape() != slices[0].image.shape()) {
      throw ContractError("sequence " + sequence_id + ": slice " + std::to_string(t) + " image " +
                          shape_str(s.image.shape()) + " differs from " +
                          shape_str(slices[0].image.shape()));
    }
    if (s.z_position_um) {
      if (!(*s.z_position_um >= 0.0)) {
        throw ContractError("sequence " + sequence_id + ": negative z position");
      }
      if (t > 0 && !(*s.z_position_um > *slices[t - 1].z_position_um)) {
        throw ContractError("sequence " + sequence_id + ": z positions not strictly increasing");
      }
    }
  }
}

double estimate_distance(std::span<const double> a, std::span<const double> b, double scale_um) {
  bool degenerate = false;
  const double sim = cosine_similarity(a, b, &degenerate);
  if (degenerate) return scale_um;
  return std::max(0.0, scale_um * (1.0 - sim));
}

std::string slice_file_name(std::size_t t) { return "slice_" + std::to_string(t) + ".psr"; }
std::string mask_file_name(std::size_t t) { return "mask_" + std::to_string(t) + ".psr"; }

void save_sequence(const SliceSequence& seq, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json doc;
  doc["sequence_id"] = seq.sequence_id;
  doc["slices"] = json::array();
  for (std::size_t t = 0; t < seq.slices.size(); ++t) {
    const Slice& s = seq.slices[t];
    json entry;
    entry["image"] = slice_file_name(t);
    write_raster(dir / slice_file_name(t), s.image, RasterDtype::kF32);
    if (s.mask) {
      entry["mask"] = mask_file_name(t);
      write_raster(dir / mask_file_name(t), *s.mask, RasterDtype::kU8);
    } else {
      entry["mask"] = nullptr;
    }
    entry["z_position_um"] = s.z_position_um ? json(*s.z_position_um) : json(nullptr);
    entry["corrupted"] = s.corrupted;
    doc["slices"].push_back(std::move(entry));
  }
  std::ofstream out(dir / kSequenceDocument, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / kSequenceDocument).string());
  out << doc.dump(2) << "\n";
}

SliceSequence load_sequence(const fs::path& dir) {
  const fs::path doc_path = dir / kSequenceDocument;
  std::ifstream in(doc_path);
  if (!in) throw IoError("cannot open " + doc_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed " + doc_path.string() + ": " + e.what());
  }

  SliceSequence seq;
  try {
    seq.sequence_id = doc.at("sequence_id").get<std::string>();
    for (const json& entry : doc.at("slices")) {
      Slice s;
      s.image = read_raster(dir / entry.at("image").get<std::string>());
      if (entry.contains("mask") && !entry["mask"].is_null()) {
        Tensor m = read_raster(dir / entry["mask"].get<std::string>());
        if (m.shape()[2] != 1) throw IoError("mask rasters must have one channel");
        for (double& v : m.data()) {
          if (v != 0.0 && v != 1.0) throw IoError("mask " + entry["mask"].get<std::string>() + " is not binary");
        }
        s.mask = m.reshaped({m.shape()[0], m.shape()[1]});
      }
      if (entry.contains("z_position_um") && !entry["z_position_um"].is_null()) {
        s.z_position_um = entry["z_position_um"].get<double>();
      }
      s.corrupted = entry.value("corrupted", false);
      seq.slices.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed " + doc_path.string() + ": " + e.what());
  }
  seq.validate();
  return seq;
}

std::vector<SliceSequence> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory " + root.string() + " not found");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / kSequenceDocument)) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<SliceSequence> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) out.push_back(load_sequence(d));
  return out;
}

}  // namespace slicemem
