#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "slicemem/errors.hpp"
#include "slicemem/raster.hpp"
#include "slicemem/synth.hpp"
#include "slicemem/train.hpp"
#include "test_util.hpp"

namespace slicemem {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::small_model_config;
using testing::TempDir;
using testing::tiny_dataset;

TrainConfig small_train_config(std::size_t steps) {
  TrainConfig cfg;
  cfg.model = small_model_config();
  cfg.steps = steps;
  return cfg;
}

void write_small_dataset(const fs::path& dir, std::size_t sequences, std::size_t slices,
                         std::uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.image_size = 16;
  cfg.num_sequences = sequences;
  cfg.slices_per_sequence = slices;
  cfg.seed = seed;
  generate_dataset(cfg, dir);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> theta{0.3}, m, v;
  const std::vector<double> g{1.0};
  AdamConfig cfg;
  adam_update(theta, g, m, v, 1, cfg);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(theta[0], 0.3 - cfg.learning_rate / (1.0 + cfg.epsilon), 1e-15);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ModelParams p = ModelParams::init(small_model_config(), 1);
  const ModelParams before = p;
  p.zero_grad();
  AdamState state;
  adam_step(p, state, {});
  for (const auto& [name, t] : before.tensors()) EXPECT_TRUE(bitwise_equal(t, p.at(name))) << name;
}

TEST(Adam, LambdaIsClampedAtZero) {
  ModelParams p = ModelParams::init(small_model_config(), 1);
  p.zero_grad();
  p.at("lambda")[0] = 1e-4;
  p.at("lambda").grad()[0] = 5.0;
  AdamState state;
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  adam_step(p, state, cfg);
  EXPECT_EQ(p.at("lambda")[0], 0.0);
}

TEST(Adam, SizeMismatchIsContractError) {
  std::vector<double> theta{1.0, 2.0}, m, v;
  const std::vector<double> g{1.0};
  EXPECT_THROW(adam_update(theta, g, m, v, 1, {}), ContractError);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    TrainConfig::from_json({{"steps", 3}, {"learnin_rate", 0.1}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learnin_rate"), std::string::npos);
  }
  EXPECT_THROW(TrainConfig::from_json({{"loss_weights", {{"w_foo", 1}}}}), ConfigError);
}

TEST(Config, RoundTripAndTopLevelK) {
  const TrainConfig c = TrainConfig::from_json({{"steps", 7}, {"K", 0}, {"learning_rate", 0.01}});
  EXPECT_EQ(c.steps, 7u);
  EXPECT_EQ(c.model.memory_size, 0u);
  EXPECT_EQ(c.adam.learning_rate, 0.01);
  EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json({{"steps", 0}}), ConfigError);
}

TEST(Train, OneStepOneRecord) {
  const auto data = tiny_dataset(2, 3, 16, 1);
  const TrainResult r = train(small_train_config(1), data);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].step, 1u);
  EXPECT_TRUE(std::isfinite(r.trace[0].loss));
}

TEST(Train, EmptyDatasetIsConfigError) {
  EXPECT_THROW(train(small_train_config(1), {}), ConfigError);
}

TEST(Train, VisitsEverySequenceEachEpoch) {
  const auto data = tiny_dataset(3, 2, 16, 1);
  const TrainResult r = train(small_train_config(6), data);
  for (std::size_t epoch = 0; epoch < 2; ++epoch) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < 3; ++i) seen.insert(r.trace[epoch * 3 + i].sequence_id);
    EXPECT_EQ(seen.size(), 3u);
  }
}

TEST(Train, LossDecreasesOnTinyProblem) {
  const auto data = tiny_dataset(1, 3, 16, 2);
  TrainConfig cfg = small_train_config(60);
  cfg.adam.learning_rate = 3e-3;
  const TrainResult r = train(cfg, data);
  EXPECT_LT(r.trace.back().loss, 0.8 * r.trace.front().loss);
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
  TempDir dir("train_det");
  write_small_dataset(dir.path() / "data", 2, 3);
  const TrainConfig cfg = small_train_config(5);
  train_to_files(cfg, dir.path() / "data", dir.path() / "a.ckpt");
  train_to_files(cfg, dir.path() / "data", dir.path() / "b.ckpt");
  EXPECT_EQ(read_file_bytes(dir.path() / "a.ckpt"), read_file_bytes(dir.path() / "b.ckpt"));
  EXPECT_EQ(read_file_bytes(dir.path() / "a.ckpt.trace.jsonl"),
            read_file_bytes(dir.path() / "b.ckpt.trace.jsonl"));

  TrainConfig other = cfg;
  other.seed = 2;
  train_to_files(other, dir.path() / "data", dir.path() / "c.ckpt");
  EXPECT_NE(read_file_bytes(dir.path() / "a.ckpt"), read_file_bytes(dir.path() / "c.ckpt"));
}

TEST(Train, FilesHoldTraceAndPeriodicCheckpoints) {
  TempDir dir("train_files");
  write_small_dataset(dir.path() / "data", 2, 2);
  TrainConfig cfg = small_train_config(4);
  cfg.checkpoint_every = 2;
  train_to_files(cfg, dir.path() / "data", dir.path() / "m.ckpt");
  EXPECT_TRUE(fs::exists(dir.path() / "m.ckpt.step2"));
  EXPECT_TRUE(fs::exists(dir.path() / "m.ckpt.step4"));

  std::ifstream in(dir.path() / "m.ckpt.trace.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const json rec = json::parse(line);
    EXPECT_EQ(rec.at("step").get<std::size_t>(), lines + 1);
    for (const char* key : {"loss", "dice", "bce", "consistency", "lambda", "sequence_id"})
      EXPECT_TRUE(rec.contains(key)) << key;
  }
  EXPECT_EQ(lines, 4u);

  const ModelParams loaded = load_model(dir.path() / "m.ckpt");
  EXPECT_EQ(loaded.config().to_json(), cfg.model.to_json());
}

TEST(Evaluate, SingleSliceHasZeroSpread) {
  const ModelParams p = ModelParams::init(small_model_config(), 1);
  const EvalReport r = evaluate(p, tiny_dataset(1, 1, 16, 3));
  ASSERT_EQ(r.slices.size(), 1u);
  EXPECT_EQ(r.overall.count, 1u);
  EXPECT_EQ(r.overall.sd, 0.0);
  EXPECT_EQ(r.overall.mean, r.slices[0].dice);
}

TEST(Evaluate, AggregatesMatchPerSliceList) {
  const ModelParams p = ModelParams::init(small_model_config(), 1);
  const auto data = tiny_dataset(3, 4, 16, 5, 0.4);
  const json doc = evaluate(p, data).to_json();
  std::vector<double> all;
  for (const auto& s : doc.at("sequences"))
    for (const auto& sl : s.at("slices")) all.push_back(sl.at("dice").get<double>());
  ASSERT_EQ(all.size(), 12u);
  double mean = 0;
  for (double d : all) mean += d;
  mean /= static_cast<double>(all.size());
  double var = 0;
  for (double d : all) var += (d - mean) * (d - mean);
  const double sd = std::sqrt(var / static_cast<double>(all.size()));
  EXPECT_NEAR(doc.at("mean").get<double>(), mean, 1e-9);
  EXPECT_NEAR(doc.at("sd").get<double>(), sd, 1e-9);
  EXPECT_EQ(doc.at("count").get<std::size_t>(), 12u);
  EXPECT_EQ(doc.at("corrupted").at("count").get<std::size_t>() +
                doc.at("clean").at("count").get<std::size_t>(),
            12u);
}

TEST(Evaluate, MissingMasksIsEvaluationError) {
  const ModelParams p = ModelParams::init(small_model_config(), 1);
  auto data = tiny_dataset(1, 2, 16, 3);
  data[0].slices[1].mask = std::nullopt;
  EXPECT_THROW(evaluate(p, data), EvaluationError);
}

TEST(Evaluate, DoesNotTouchFiles) {
  TempDir dir("eval_ro");
  write_small_dataset(dir.path() / "data", 2, 2);
  save_model(dir.path() / "m.ckpt", ModelParams::init(small_model_config(), 1));
  auto snapshot = [&] {
    std::map<std::string, std::pair<std::vector<std::uint8_t>, fs::file_time_type>> out;
    for (const auto& e : fs::recursive_directory_iterator(dir.path())) {
      if (e.is_regular_file())
        out[e.path().string()] = {read_file_bytes(e.path()), fs::last_write_time(e.path())};
    }
    return out;
  };
  const auto before = snapshot();
  evaluate(load_model(dir.path() / "m.ckpt"), load_dataset(dir.path() / "data"));
  EXPECT_EQ(snapshot(), before);
}

TEST(Evaluate, ReportIsDeterministic) {
  const ModelParams p = ModelParams::init(small_model_config(), 1);
  const auto data = tiny_dataset(2, 3, 16, 5);
  EXPECT_EQ(evaluate(p, data).to_json().dump(), evaluate(p, data).to_json().dump());
}

TEST(Infer, MasksAreBinary) {
  const ModelParams p = ModelParams::init(small_model_config(), 1);
  const auto masks = infer_masks(p, tiny_dataset(1, 3, 16, 5)[0]);
  ASSERT_EQ(masks.size(), 3u);
  for (const Tensor& m : masks) {
    EXPECT_EQ(m.shape(), (Shape{16, 16}));
    for (double v : m.data()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  }
}

TEST(GradCheck, RelativeErrorFloor) {
  EXPECT_EQ(gradient_relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(gradient_relative_error(1e-9, 0.0), 1e-3);
  EXPECT_DOUBLE_EQ(gradient_relative_error(2.0, 1.0), 0.5);
}

}  // namespace
}  // namespace slicemem
