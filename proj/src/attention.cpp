#include "slicemem/attention.hpp"

#include <cmath>

#include "slicemem/errors.hpp"

namespace slicemem {

Tensor make_lambda() {
  Tensor t = Tensor::scalar(kLambdaInit);
  t.set_requires_grad(true);
  return t;
}

void clamp_lambda(Tensor& lambda) {
  for (auto& v : lambda.data()) {
    if (v < 0.0) v = 0.0;
  }
}

namespace {

void check_distance(double distance) {
  if (!(distance >= 0.0) || !std::isfinite(distance)) {
    throw DomainError("distance must be finite and non-negative, got " + std::to_string(distance));
  }
}

}  // namespace

double distance_modulation(double distance, double lambda) {
  check_distance(distance);
  if (!(lambda >= 0.0)) throw DomainError("lambda must be non-negative, got " + std::to_string(lambda));
  return std::exp(-lambda * distance * distance);
}

Var distance_modulation(double distance, Var lambda) {
  check_distance(distance);
  if (lambda.numel() != 1) throw DimensionError("lambda must be a scalar, got " + shape_str(lambda.shape()));
  if (!(lambda.value()[0] >= 0.0)) {
    throw DomainError("lambda must be non-negative, got " + std::to_string(lambda.value()[0]));
  }
  return exp(scale(lambda, -distance * distance));
}

AttentionContext context_with_self(Var query, const std::vector<Var>& memory,
                                   const std::vector<double>& memory_distances) {
  AttentionContext ctx{query, {query}, {0.0}};
  ctx.keys.insert(ctx.keys.end(), memory.begin(), memory.end());
  ctx.distances.insert(ctx.distances.end(), memory_distances.begin(), memory_distances.end());
  return ctx;
}

Var cross_slice_weights(const AttentionContext& ctx, Var lambda) {
  if (ctx.keys.empty()) throw ContractError("cross_slice_weights: empty attention context");
  if (ctx.keys.size() != ctx.distances.size()) {
    throw ContractError("cross_slice_weights: " + std::to_string(ctx.keys.size()) + " keys but " +
                        std::to_string(ctx.distances.size()) + " distances");
  }
  std::vector<Var> logits;
  logits.reserve(ctx.keys.size());
  for (std::size_t j = 0; j < ctx.keys.size(); ++j) {
    const Var sim = cosine_sim(ctx.query, ctx.keys[j]);
    logits.push_back(mul(sim, distance_modulation(ctx.distances[j], lambda)));
  }
  return softmax(concat(logits));
}

Var fuse_memory(Var self_features, const std::vector<Var>& memory_features, Var weights) {
  if (weights.numel() != memory_features.size() + 1) {
    throw DimensionError("fuse_memory: " + std::to_string(weights.numel()) + " weights for " +
                         std::to_string(memory_features.size()) + " memory grids plus self");
  }
  Var fused = mul_scalar(self_features, index(weights, 0));
  for (std::size_t j = 0; j < memory_features.size(); ++j) {
    if (memory_features[j].shape() != self_features.shape()) {
      throw DimensionError("fuse_memory: memory grid " + shape_str(memory_features[j].shape()) +
                           " differs from " + shape_str(self_features.shape()));
    }
    fused = add(fused, mul_scalar(memory_features[j], index(weights, j + 1)));
  }
  return layer_norm_rows(fused);
}

}  // namespace slicemem
