#include <gtest/gtest.h>

#include "slicemem/errors.hpp"
#include "slicemem/lora.hpp"
#include "slicemem/rng.hpp"
#include "slicemem/train.hpp"
#include "test_util.hpp"

namespace slicemem {
namespace {

TEST(Lora, FreshAdapterIsExactlyTheBase) {
  const LoraAdapter adapter = init_lora(12, 9, 3, 3.0, 11);
  Rng rng(2);
  const Tensor x = rng.normal_tensor({5, 12}, 1.0);
  EXPECT_TRUE(bitwise_equal(lora_forward(x, adapter), matmul(x, transpose(adapter.base))));
  EXPECT_EQ(merge(adapter), adapter.base);
}

TEST(Lora, ZeroInputGivesZeroOutput) {
  LoraAdapter adapter = init_lora(6, 6, 2, 2.0, 1);
  Rng rng(8);
  adapter.b = rng.normal_tensor({6, 2}, 1.0);
  const Tensor y = lora_forward(Tensor({3, 6}), adapter);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lora, ForwardMatchesMergedWeightSeed7) {
  Rng rng(7);
  LoraAdapter adapter;
  adapter.rank = 2;
  adapter.alpha = 2.0;
  adapter.base = rng.normal_tensor({5, 4}, 1.0);
  adapter.a = rng.normal_tensor({2, 4}, 1.0);
  adapter.b = rng.normal_tensor({5, 2}, 1.0);
  const Tensor x = rng.normal_tensor({3, 4}, 1.0);
  EXPECT_LE(max_abs_diff(lora_forward(x, adapter), matmul(x, transpose(merge(adapter)))), 1e-10);
}

TEST(Lora, DualPathAgreementOverRandomAdapters) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t d_in = 1 + rng.below(16), d_out = 1 + rng.below(16);
    const std::size_t rank = 1 + rng.below(std::min(d_in, d_out));
    LoraAdapter adapter = init_lora(d_in, d_out, rank, rng.uniform(0.5, 16.0), seed);
    adapter.b = rng.normal_tensor({d_out, rank}, 1.0);
    const Tensor x = rng.normal_tensor({1 + rng.below(6), d_in}, 1.0);
    EXPECT_LE(max_abs_diff(lora_forward(x, adapter), matmul(x, transpose(merge(adapter)))), 1e-10)
        << "seed " << seed;
  }
}

TEST(Lora, RankOneOuterProduct) {
  LoraAdapter adapter;
  adapter.rank = 1;
  adapter.alpha = 1.0;
  adapter.base = Tensor::matrix(2, 2, {1, 2, 3, 4});
  adapter.a = Tensor::matrix(1, 2, {1, 0});
  adapter.b = Tensor::matrix(2, 1, {0, 1});
  // B A has a single one at row 1, column 0.
  EXPECT_EQ(merge(adapter), Tensor::matrix(2, 2, {1, 2, 4, 4}));
}

TEST(Lora, RankEightShapes) {
  const LoraAdapter adapter = init_lora(64, 64, 8, 8.0, 3);
  EXPECT_EQ(adapter.a.shape(), (Shape{8, 64}));
  EXPECT_EQ(adapter.b.shape(), (Shape{64, 8}));
  for (double v : adapter.b.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(trainable_parameter_count(adapter), 8u * (64 + 64));
  EXPECT_DOUBLE_EQ(adapter.scaling(), 1.0);
}

TEST(Lora, InitIsDeterministic) {
  const LoraAdapter a1 = init_lora(10, 7, 4, 4.0, 99);
  const LoraAdapter a2 = init_lora(10, 7, 4, 4.0, 99);
  EXPECT_TRUE(bitwise_equal(a1.base, a2.base));
  EXPECT_TRUE(bitwise_equal(a1.a, a2.a));
  EXPECT_TRUE(bitwise_equal(a1.b, a2.b));
  EXPECT_FALSE(bitwise_equal(a1.a, init_lora(10, 7, 4, 4.0, 100).a));
}

TEST(Lora, InitialFactorSpread) {
  const LoraAdapter adapter = init_lora(64, 64, 8, 8.0, 5);
  double sq = 0.0;
  for (double v : adapter.a.data()) sq += v * v;
  const double sd = std::sqrt(sq / static_cast<double>(adapter.a.numel()));
  EXPECT_NEAR(sd, kLoraInitStd, 0.003);
}

TEST(Lora, RankBoundIsEnforced) {
  EXPECT_THROW(init_lora(6, 4, 5, 1.0, 1), ContractError);
  EXPECT_THROW(init_lora(6, 4, 0, 1.0, 1), ContractError);
  EXPECT_NO_THROW(init_lora(6, 4, 4, 1.0, 1));
}

TEST(Lora, GradientsReachFactorsButNotBase) {
  Rng rng(13);
  Tensor base = rng.normal_tensor({4, 5}, 1.0);
  Tensor a = rng.normal_tensor({2, 5}, 1.0);
  Tensor b = rng.normal_tensor({4, 2}, 1.0);
  const Tensor x = rng.normal_tensor({3, 5}, 1.0);
  const Tensor readout = rng.normal_tensor({3, 4}, 1.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto loss = [&](Graph& g) {
    const Var y = lora_forward(g.constant(x), g.leaf(base), g.leaf(a), g.leaf(b), 0.75);
    return sum(mul(square(y), g.constant(readout)));
  };
  {
    Graph g;
    g.backward(loss(g));
  }
  EXPECT_TRUE(base.grad().empty());
  for (Tensor* t : {&a, &b}) {
    const auto numeric = testing::numeric_gradient(*t, [&] {
      Graph g;
      return loss(g).value()[0];
    });
    EXPECT_LE(testing::max_relative_error(t->grad(), numeric), 1e-3);
  }
}

TEST(Lora, ModelBasesStayFrozenThroughTraining) {
  TrainConfig cfg;
  cfg.model = testing::small_model_config();
  cfg.steps = 100;
  const auto data = testing::tiny_dataset(2, 3, cfg.model.image_size, 4);
  const ModelParams before = ModelParams::init(cfg.model, cfg.seed);
  const TrainResult result = train(cfg, data);

  const auto frozen = before.frozen_names();
  ASSERT_FALSE(frozen.empty());
  for (const auto& name : frozen) {
    EXPECT_TRUE(bitwise_equal(before.at(name), result.params.at(name))) << name;
  }
  // The adapters themselves did move.
  bool moved = false;
  for (const auto& name : before.trainable_names()) {
    if (parameter_group(name) == "lora_B" && !bitwise_equal(before.at(name), result.params.at(name)))
      moved = true;
  }
  EXPECT_TRUE(moved);
}

}  // namespace
}  // namespace slicemem
