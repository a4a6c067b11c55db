#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "slicemem/losses.hpp"
#include "slicemem/model.hpp"
#include "slicemem/sequence.hpp"

namespace slicemem {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One bias-corrected Adam update of `param` given its gradient. `step` is
/// the 1-based update count. Throws ContractError on size mismatch.
void adam_update(std::span<double> param, std::span<const double> grad, std::vector<double>& m,
                 std::vector<double>& v, std::size_t step, const AdamConfig& config);

/// Updates every trainable tensor from its accumulated gradient, then
/// clamps lambda to be non-negative. Frozen tensors are never touched.
void adam_step(ModelParams& params, AdamState& state, const AdamConfig& config);

struct TrainConfig {
  std::size_t steps = 2000;
  AdamConfig adam;
  std::uint64_t seed = 1;
  LossWeights loss;
  ModelConfig model;
  std::size_t checkpoint_every = 0;  // 0 = only the final checkpoint

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys raise ConfigError naming the key.
  static TrainConfig from_json(const nlohmann::json& j);
};

TrainConfig load_train_config(const std::filesystem::path& path);

struct TraceRecord {
  std::size_t step = 0;
  std::string sequence_id;
  double loss = 0;
  double dice = 0;
  double bce = 0;
  double consistency = 0;
  double lambda = 0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  ModelParams params;
  std::vector<TraceRecord> trace;
};

/// Gradient of the composite loss on one sequence, accumulated into the
/// parameter gradients. Returns the trace values (step left at 0).
TraceRecord accumulate_sequence_gradient(ModelParams& params, const SliceSequence& seq,
                                         const LossWeights& weights);

using CheckpointHook = std::function<void(std::size_t step, const ModelParams&)>;

/// One sequence per optimizer step; sequences are visited in a fresh
/// seeded permutation each epoch.
TrainResult train(const TrainConfig& config, const std::vector<SliceSequence>& data,
                  const CheckpointHook& on_checkpoint = {});

/// Reads the dataset, trains, and writes `out_ckpt`, `out_ckpt.trace.jsonl`
/// and, when checkpoint_every > 0, `out_ckpt.step<N>`.
TrainResult train_to_files(const TrainConfig& config, const std::filesystem::path& data_dir,
                           const std::filesystem::path& out_ckpt);

void save_model(const std::filesystem::path& path, const ModelParams& params,
                const nlohmann::json& extra = nlohmann::json::object());
ModelParams load_model(const std::filesystem::path& path);

struct SliceScore {
  std::string sequence_id;
  std::size_t index = 0;
  double dice = 0;
  bool corrupted = false;
};

struct DiceSummary {
  std::size_t count = 0;
  double mean = 0;
  double sd = 0;  // population SD
};

DiceSummary summarize(const std::vector<double>& values);

struct EvalReport {
  std::vector<SliceScore> slices;
  DiceSummary overall;
  DiceSummary corrupted;
  DiceSummary clean;
  nlohmann::json config;

  nlohmann::json to_json() const;
};

/// Thresholds predictions at 0.5 and scores every slice. Throws
/// EvaluationError if any slice lacks a mask.
EvalReport evaluate(const ModelParams& params, const std::vector<SliceSequence>& data);

/// Binary {0,1} masks for each slice.
std::vector<Tensor> infer_masks(const ModelParams& params, const SliceSequence& seq);

struct GroupCheck {
  std::string group;
  std::size_t checked = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::uint64_t seed = 0;
  double step = 1e-4;
  double tolerance = 1e-3;
  std::vector<GroupCheck> groups;
  bool passed = false;

  nlohmann::json to_json() const;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline constexpr double kGradCheckFloor = 1e-6;
double gradient_relative_error(double analytic, double numeric);

/// Central-difference check of every trainable parameter of a two-slice
/// micro model against backpropagated gradients.
GradCheckReport grad_check(std::uint64_t seed);

}  // namespace slicemem
