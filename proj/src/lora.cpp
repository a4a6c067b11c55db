#include "slicemem/lora.hpp"

#include <algorithm>
#include <cmath>

#include "slicemem/errors.hpp"
#include "slicemem/rng.hpp"

namespace slicemem {

namespace {

void check_rank(std::size_t d_in, std::size_t d_out, std::size_t rank) {
  if (rank < 1 || rank > std::min(d_in, d_out)) {
    throw ContractError("LoRA rank " + std::to_string(rank) + " invalid for " +
                        std::to_string(d_out) + "x" + std::to_string(d_in) + " projection");
  }
}

}  // namespace

void init_lora_factors(Tensor& a, Tensor& b, std::size_t d_in, std::size_t d_out,
                       std::size_t rank, Rng& rng) {
  check_rank(d_in, d_out, rank);
  a = rng.normal_tensor({rank, d_in}, kLoraInitStd);
  b = Tensor({d_out, rank}, 0.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
}

LoraAdapter init_lora(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha,
                      std::uint64_t seed) {
  check_rank(d_in, d_out, rank);
  LoraAdapter adapter;
  adapter.rank = rank;
  adapter.alpha = alpha;
  Rng base_rng = Rng::substream(seed, "lora-base");
  adapter.base = base_rng.normal_tensor({d_out, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)));
  Rng factor_rng = Rng::substream(seed, "lora-factors");
  init_lora_factors(adapter.a, adapter.b, d_in, d_out, rank, factor_rng);
  return adapter;
}

Var lora_forward(Var x, Var base, Var a, Var b, double scaling) {
  const std::size_t d_in = base.shape().at(1);
  if (x.value().rank() != 2 || x.shape()[1] != d_in) {
    throw DimensionError("lora_forward: input " + shape_str(x.shape()) +
                         " does not match projection " + shape_str(base.shape()));
  }
  if (a.shape() != Shape{a.shape().at(0), d_in} ||
      b.shape() != Shape{base.shape()[0], a.shape()[0]}) {
    throw DimensionError("lora_forward: factors " + shape_str(a.shape()) + ", " +
                         shape_str(b.shape()) + " do not match projection " +
                         shape_str(base.shape()));
  }
  const Var frozen = matmul(x, transpose(base));
  const Var low_rank = matmul(matmul(x, transpose(a)), transpose(b));
  return add(frozen, scale(low_rank, scaling));
}

Tensor lora_forward(const Tensor& x, const LoraAdapter& adapter) {
  Graph g;
  // Copies so the caller's adapter never picks up gradients.
  Tensor base = adapter.base, a = adapter.a, b = adapter.b;
  base.set_requires_grad(false);
  a.set_requires_grad(false);
  b.set_requires_grad(false);
  return lora_forward(g.constant(x), g.leaf(base), g.leaf(a), g.leaf(b), adapter.scaling()).value();
}

Tensor merge(const LoraAdapter& adapter) {
  Tensor merged = adapter.base;
  merged.set_requires_grad(false);
  const Tensor delta = matmul(adapter.b, adapter.a);
  const double s = adapter.scaling();
  for (std::size_t i = 0; i < merged.numel(); ++i) merged[i] += s * delta[i];
  return merged;
}

std::size_t trainable_parameter_count(const LoraAdapter& adapter) {
  return adapter.a.numel() + adapter.b.numel();
}

}  // namespace slicemem
