#pragma once

#include <cstddef>
#include <cstdint>

#include "slicemem/autograd.hpp"

namespace slicemem {

inline constexpr std::size_t kDefaultLoraRank = 8;
/// Standard deviation of the random down-projection at initialization.
inline constexpr double kLoraInitStd = 0.02;

/// Low-rank update of a frozen projection:
///   W_eff = W + (alpha / rank) * B * A
/// with W [d_out x d_in], A [rank x d_in], B [d_out x rank].
struct LoraAdapter {
  Tensor base;
  Tensor a;
  Tensor b;
  std::size_t rank = kDefaultLoraRank;
  double alpha = static_cast<double>(kDefaultLoraRank);

  double scaling() const { return alpha / static_cast<double>(rank); }
  std::size_t d_in() const { return base.shape()[1]; }
  std::size_t d_out() const { return base.shape()[0]; }
};

/// Fresh adapter: base W ~ N(0, 1/d_in) frozen, A ~ N(0, 0.02^2), B = 0.
/// Deterministic in `seed`. Throws ContractError unless 1 <= rank <= min(d_in, d_out).
LoraAdapter init_lora(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha,
                      std::uint64_t seed);

/// Fills A and B for an existing frozen base. Same rank rules as init_lora.
void init_lora_factors(Tensor& a, Tensor& b, std::size_t d_in, std::size_t d_out,
                       std::size_t rank, class Rng& rng);

/// y = x W^T + s (x A^T) B^T on graph nodes. Gradients reach A and B; the
/// base receives one only if its tensor requires it (it never does in the model).
Var lora_forward(Var x, Var base, Var a, Var b, double scaling);

/// Convenience evaluation on plain tensors.
Tensor lora_forward(const Tensor& x, const LoraAdapter& adapter);

/// W + (alpha / rank) B A.
Tensor merge(const LoraAdapter& adapter);

/// r * (d_in + d_out).
std::size_t trainable_parameter_count(const LoraAdapter& adapter);

}  // namespace slicemem
