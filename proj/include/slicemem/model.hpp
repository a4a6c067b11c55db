#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "slicemem/autograd.hpp"
#include "slicemem/checkpoint.hpp"
#include "slicemem/memory_bank.hpp"
#include "slicemem/sequence.hpp"

namespace slicemem {

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t encoder_blocks = 2;
  std::size_t mlp_hidden = 128;
  std::size_t lora_rank = 8;
  double lora_alpha = 8.0;
  /// Memory slices attended per query slice; 0 disables the memory path.
  std::size_t memory_size = kDefaultMemorySize;
  std::size_t decoder_hidden = 64;
  /// Estimate distances from embeddings when z positions are missing.
  bool estimate_distances = false;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys raise ConfigError naming the key.
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Tiny configuration used by gradient checks: 8x8 images, 4x4 patches, d_model 8.
ModelConfig micro_model_config();

/// Parameter-group label used by reports and gradient checks.
std::string parameter_group(const std::string& name);

/// Named parameters of the model. Frozen attention bases never require grad.
class ModelParams {
 public:
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ModelConfig& config() noexcept { return config_; }

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::map<std::string, Tensor>& tensors() noexcept { return tensors_; }
  const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }

  std::vector<std::string> trainable_names() const;
  std::vector<std::string> frozen_names() const;
  void zero_grad();

  CheckpointData to_checkpoint() const;
  static ModelParams from_checkpoint(const CheckpointData& data);

 private:
  ModelConfig config_;
  std::map<std::string, Tensor> tensors_;
};

/// Graph leaves for the parameters, created on first use within one graph.
class BoundParams {
 public:
  BoundParams(Graph& graph, ModelParams& params) : graph_(graph), params_(params) {}

  Var operator()(const std::string& name);
  Graph& graph() noexcept { return graph_; }
  const ModelConfig& config() const noexcept { return params_.config(); }

 private:
  Graph& graph_;
  ModelParams& params_;
  std::map<std::string, Var> leaves_;
};

/// Non-overlapping patches of an [H x W x C] image as rows [P x p*p*C].
Tensor extract_patches(const Tensor& image, const ModelConfig& config);

struct EncodedSlice {
  Var patch_features;  // [P x d_model]
  Var pooled;          // [d_model]
};

EncodedSlice encode_slice(BoundParams& params, const Tensor& image);
/// Per-patch two-layer MLP to p*p logits, reassembled to [H x W].
Var decode_mask(BoundParams& params, Var fused_features);

struct SliceOutput {
  Var logits;
  Var probabilities;
  Var pooled;
  Var patch_features;
  Var fused;
  Var attention_weights;              // [1 + |M_t|], self first
  std::vector<std::size_t> memory;    // selected slice indices, best first
  std::vector<double> distances;      // to each selected slice
  double confidence = 0;
};

struct SequenceOutput {
  std::vector<SliceOutput> slices;
  MemoryBank bank;
};

/// Processes slices in order: encode, select memory, weight by similarity and
/// distance, fuse, decode, then store the slice in a fresh per-sequence bank.
SequenceOutput forward_sequence(BoundParams& params, const SliceSequence& seq);

/// Detached per-slice result.
struct SlicePrediction {
  Tensor logits;
  Tensor probabilities;
  double confidence = 0;
  Tensor pooled_embedding;
};

std::vector<SlicePrediction> predict_sequence(const ModelParams& params, const SliceSequence& seq);

}  // namespace slicemem
