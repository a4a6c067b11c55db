#include <gtest/gtest.h>

#include <cmath>

#include "slicemem/attention.hpp"
#include "slicemem/errors.hpp"
#include "slicemem/rng.hpp"
#include "test_util.hpp"

namespace slicemem {
namespace {

// Unit vector in the plane whose cosine with [1, 0] is `c`.
Tensor with_cosine(double c) { return Tensor::vector({c, std::sqrt(1.0 - c * c)}); }

TEST(DistanceModulation, ZeroDistanceIsOne) {
  for (double lambda : {0.0, 0.1, 3.0}) EXPECT_EQ(distance_modulation(0.0, lambda), 1.0);
}

TEST(DistanceModulation, ZeroLambdaIsOne) {
  for (double d : {0.0, 1.0, 40.0}) EXPECT_EQ(distance_modulation(d, 0.0), 1.0);
}

TEST(DistanceModulation, KnownValue) {
  EXPECT_NEAR(distance_modulation(2.0, 0.1), 0.670320046035639, 1e-15);
}

TEST(DistanceModulation, NegativeInputsRejected) {
  EXPECT_THROW(distance_modulation(-1.0, 0.1), DomainError);
  EXPECT_THROW(distance_modulation(1.0, -0.1), DomainError);
  Graph g;
  EXPECT_THROW(distance_modulation(-1.0, g.constant(Tensor::scalar(0.1))), DomainError);
}

TEST(DistanceModulation, LambdaInitialValue) {
  const Tensor lambda = make_lambda();
  EXPECT_EQ(lambda.numel(), 1u);
  EXPECT_EQ(lambda[0], 0.1);
  EXPECT_TRUE(lambda.requires_grad());
}

TEST(CrossSliceWeights, SymmetricMemoryIsUniform) {
  Graph g;
  const Var q = g.constant(Tensor::vector({1, 0}));
  const Var key = g.constant(with_cosine(0.4));
  const AttentionContext ctx{q, {key, key}, {3.0, 3.0}};
  const Tensor w = cross_slice_weights(ctx, g.constant(Tensor::scalar(0.1))).value();
  EXPECT_DOUBLE_EQ(w[0], 0.5);
  EXPECT_DOUBLE_EQ(w[1], 0.5);
}

TEST(CrossSliceWeights, ZeroLambdaIsPlainSoftmax) {
  Graph g;
  const Var q = g.constant(Tensor::vector({1, 0}));
  const AttentionContext ctx{q, {g.constant(with_cosine(0.2)), g.constant(with_cosine(0.9))},
                             {5.0, 17.0}};
  const Tensor w = cross_slice_weights(ctx, g.constant(Tensor::scalar(0.0))).value();
  EXPECT_NEAR(w[0], 0.331812227831834, 1e-12);
  EXPECT_NEAR(w[1], 0.668187772168166, 1e-12);
}

TEST(CrossSliceWeights, DistantSliceIsDiscounted) {
  Graph g;
  const Var q = g.constant(Tensor::vector({0.3, -0.7, 1.1}));
  const AttentionContext ctx{q, {q, q}, {0.0, 10.0}};
  const Tensor w = cross_slice_weights(ctx, g.constant(Tensor::scalar(0.1))).value();
  EXPECT_NEAR(w[0], 0.731049652368410, 1e-9);
  EXPECT_NEAR(w[1], 0.268950347631590, 1e-9);
}

TEST(CrossSliceWeights, EmptyContextIsContractError) {
  Graph g;
  const AttentionContext ctx{g.constant(Tensor::vector({1, 0})), {}, {}};
  EXPECT_THROW(cross_slice_weights(ctx, g.constant(Tensor::scalar(0.1))), ContractError);
}

TEST(CrossSliceWeights, NegativeDistanceIsDomainError) {
  Graph g;
  const Var q = g.constant(Tensor::vector({1, 0}));
  const AttentionContext ctx{q, {q}, {-2.0}};
  EXPECT_THROW(cross_slice_weights(ctx, g.constant(Tensor::scalar(0.1))), DomainError);
}

TEST(CrossSliceWeights, ContextWithSelfPrependsQuery) {
  Graph g;
  const Var q = g.constant(Tensor::vector({1, 2}));
  const Var m = g.constant(Tensor::vector({2, 1}));
  const AttentionContext ctx = context_with_self(q, {m}, {4.0});
  ASSERT_EQ(ctx.keys.size(), 2u);
  EXPECT_EQ(ctx.keys[0].id(), q.id());
  EXPECT_EQ(ctx.distances[0], 0.0);
  EXPECT_EQ(ctx.distances[1], 4.0);
}

struct RandomContext {
  Tensor query;
  std::vector<Tensor> keys;
  std::vector<double> distances;
};

RandomContext random_context(std::uint64_t seed) {
  Rng rng(seed);
  RandomContext c;
  const std::size_t dim = 2 + rng.below(6);
  const std::size_t n = 1 + rng.below(6);
  c.query = rng.normal_tensor({dim}, 1.0);
  for (std::size_t j = 0; j < n; ++j) {
    c.keys.push_back(rng.normal_tensor({dim}, 1.0));
    c.distances.push_back(rng.uniform(0.0, 30.0));
  }
  return c;
}

Tensor weights_of(const RandomContext& c, double lambda) {
  Graph g;
  AttentionContext ctx{g.constant(c.query), {}, c.distances};
  for (const Tensor& k : c.keys) ctx.keys.push_back(g.constant(k));
  return cross_slice_weights(ctx, g.constant(Tensor::scalar(lambda))).value();
}

TEST(CrossSliceWeights, InvariantsOverRandomContexts) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const RandomContext c = random_context(seed);
    const Tensor w = weights_of(c, 0.05);
    double total = 0.0;
    for (double v : w.data()) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12) << "seed " << seed;

    // lambda = 0 is the plain similarity softmax, bit for bit.
    std::vector<double> sims;
    for (const Tensor& k : c.keys) sims.push_back(cosine_similarity(c.query.data(), k.data()));
    const Tensor plain = softmax(Tensor({sims.size()}, sims));
    EXPECT_TRUE(bitwise_equal(weights_of(c, 0.0), plain)) << "seed " << seed;
  }
}

TEST(CrossSliceWeights, PositiveSimilarityLogitDecaysWithDistance) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(500 + seed);
    const double lambda = rng.uniform(0.001, 0.5);
    const double d1 = rng.uniform(0.0, 10.0);
    const double d2 = d1 + rng.uniform(0.0, 10.0);
    EXPECT_LE(distance_modulation(d2, lambda), distance_modulation(d1, lambda));

    // A positively similar key loses weight as it moves away.
    RandomContext c = random_context(seed);
    c.keys[0] = c.query;
    c.distances[0] = d1;
    const double near = weights_of(c, lambda)[0];
    c.distances[0] = d2;
    EXPECT_LE(weights_of(c, lambda)[0], near + 1e-15) << "seed " << seed;
  }
}

TEST(CrossSliceWeights, PermutationEquivariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RandomContext c = random_context(seed);
    if (c.keys.size() < 2) continue;
    const Tensor w = weights_of(c, 0.1);
    std::swap(c.keys.front(), c.keys.back());
    std::swap(c.distances.front(), c.distances.back());
    const Tensor ws = weights_of(c, 0.1);
    EXPECT_NEAR(w[0], ws[c.keys.size() - 1], 1e-15);
    EXPECT_NEAR(w[c.keys.size() - 1], ws[0], 1e-15);
  }
}

TEST(CrossSliceWeights, LambdaGradientMatchesFiniteDifference) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RandomContext c = random_context(seed);
    Rng rng(900 + seed);
    const Tensor readout = rng.normal_tensor({c.keys.size()}, 1.0);
    Tensor lambda = Tensor::scalar(0.05);
    lambda.set_requires_grad(true);
    auto loss = [&](Graph& g) {
      AttentionContext ctx{g.constant(c.query), {}, c.distances};
      for (const Tensor& k : c.keys) ctx.keys.push_back(g.constant(k));
      return sum(mul(cross_slice_weights(ctx, g.leaf(lambda)), g.constant(readout)));
    };
    {
      Graph g;
      g.backward(loss(g));
    }
    const auto numeric = testing::numeric_gradient(lambda, [&] {
      Graph g;
      return loss(g).value()[0];
    }, 1e-6);
    EXPECT_LE(testing::max_relative_error(lambda.grad(), numeric), 1e-3) << "seed " << seed;
  }
}

TEST(ClampLambda, NegativeBecomesZero) {
  Tensor lambda = Tensor::scalar(-0.3);
  clamp_lambda(lambda);
  EXPECT_EQ(lambda[0], 0.0);
  lambda[0] = 0.2;
  clamp_lambda(lambda);
  EXPECT_EQ(lambda[0], 0.2);
}

TEST(FuseMemory, EmptyMemoryIsLayerNormOfSelf) {
  Rng rng(4);
  const Tensor self = rng.normal_tensor({5, 6}, 1.0);
  Graph g;
  const Var fused = fuse_memory(g.constant(self), {}, g.constant(Tensor::vector({1.0})));
  EXPECT_TRUE(bitwise_equal(fused.value(), layer_norm_rows(g.constant(self)).value()));
}

TEST(FuseMemory, IdenticalGridsGiveLayerNormOfSelf) {
  Rng rng(5);
  const Tensor self = rng.normal_tensor({4, 8}, 1.0);
  Graph g;
  const Var s = g.constant(self);
  const Var fused = fuse_memory(s, {s, s}, g.constant(Tensor::vector({0.2, 0.3, 0.5})));
  EXPECT_LE(max_abs_diff(fused.value(), layer_norm_rows(s).value()), 1e-12);
}

TEST(FuseMemory, HalfwayBetweenZerosAndOnes) {
  Graph g;
  const Var fused = fuse_memory(g.constant(Tensor({3, 4})), {g.constant(Tensor({3, 4}, 1.0))},
                                g.constant(Tensor::vector({0.5, 0.5})));
  const Var expected = layer_norm_rows(g.constant(Tensor({3, 4}, 0.5)));
  EXPECT_TRUE(bitwise_equal(fused.value(), expected.value()));
  // Constant rows normalize to zero.
  for (double v : fused.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(FuseMemory, MismatchedGridIsDimensionError) {
  Graph g;
  const Var weights = g.constant(Tensor::vector({0.5, 0.5}));
  EXPECT_THROW(fuse_memory(g.constant(Tensor({3, 4})), {g.constant(Tensor({3, 5}))}, weights),
               DimensionError);
  EXPECT_THROW(fuse_memory(g.constant(Tensor({3, 4})), {}, weights), DimensionError);
}

}  // namespace
}  // namespace slicemem
