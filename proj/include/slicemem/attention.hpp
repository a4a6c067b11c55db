#pragma once

#include <vector>

#include "slicemem/autograd.hpp"

namespace slicemem {

/// Initial value of the learned distance decay rate (units 1/um^2).
inline constexpr double kLambdaInit = 0.1;

/// Scalar parameter tensor holding the decay rate, initialized to 0.1.
Tensor make_lambda();
/// Projects the decay rate back onto [0, inf) after an optimizer update.
void clamp_lambda(Tensor& lambda);

/// exp(-lambda * d^2). Throws DomainError for negative d or lambda.
double distance_modulation(double distance, double lambda);
/// Differentiable in lambda (shape [1]).
Var distance_modulation(double distance, Var lambda);

/// Query slice against the candidate slices it may attend to.
///
/// The forward pipeline always lists the query itself first (distance 0),
/// so the softmax denominator never runs empty.
struct AttentionContext {
  Var query;
  std::vector<Var> keys;
  std::vector<double> distances;
};

/// Builds the context used by the pipeline: the query followed by `memory`.
AttentionContext context_with_self(Var query, const std::vector<Var>& memory,
                                   const std::vector<double>& memory_distances);

/// Softmax over entries j of cos(query, key_j) * exp(-lambda * d_j^2).
/// Throws ContractError on an empty context and DomainError on a negative
/// or non-finite distance.
Var cross_slice_weights(const AttentionContext& ctx, Var lambda);

/// Convex combination weights[0] * self + sum_j weights[j+1] * memory[j],
/// then per-patch layer normalization.
Var fuse_memory(Var self_features, const std::vector<Var>& memory_features, Var weights);

}  // namespace slicemem
