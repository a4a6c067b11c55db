#pragma once

#include <vector>

#include "slicemem/autograd.hpp"

namespace slicemem {

/// Weights of the composite objective and the constants of its terms.
struct LossWeights {
  double w_dice = 1.0;
  double w_bce = 0.5;
  double w_consistency = 0.2;
  double smooth = 1.0;       // soft Dice smoothing
  double tau = 0.7;          // similarity threshold for consistency pairs

  void validate() const;
};

inline constexpr double kBceClip = 1e-7;
inline constexpr double kMaskThreshold = 0.5;

/// 1 - (2 sum(p y) + eps) / (sum(p) + sum(y) + eps).
Var dice_loss(Var probabilities, const Tensor& target, double smooth = 1.0);
/// Mean binary cross-entropy with p clipped to [1e-7, 1 - 1e-7].
Var bce_loss(Var probabilities, const Tensor& target);

/// Mean over slice pairs (i < j) with cos(F_i, F_j) > tau of
/// cos(F_i, F_j) * mean((p_i - p_j)^2). Embeddings are plain values, so no
/// gradient flows through the similarity. Zero when no pair qualifies.
Var consistency_loss(const std::vector<Var>& probabilities, const std::vector<Tensor>& embeddings,
                     double tau);

struct LossBreakdown {
  Var total;
  Var dice;         // mean over slices
  Var bce;          // mean over slices
  Var consistency;
};

/// mean_t(w_dice dice_t + w_bce bce_t) + w_consistency consistency.
LossBreakdown combined_loss(const std::vector<Var>& probabilities,
                            const std::vector<Tensor>& targets,
                            const std::vector<Tensor>& embeddings, const LossWeights& weights);

/// Thresholds probabilities into a {0, 1} mask (p > 0.5).
Tensor threshold_mask(const Tensor& probabilities, double threshold = kMaskThreshold);

/// 2|A and B| / (|A| + |B|), 1 when both masks are empty. Throws
/// ContractError for non-binary input and DimensionError on shape mismatch.
double dice_score(const Tensor& prediction, const Tensor& truth);

}  // namespace slicemem
