#include "slicemem/losses.hpp"

#include "slicemem/errors.hpp"

namespace slicemem {

void LossWeights::validate() const {
  if (w_dice < 0 || w_bce < 0 || w_consistency < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(smooth > 0)) throw ConfigError("dice smoothing must be positive");
  if (!(tau > -1.0 && tau <= 1.0)) throw ConfigError("consistency threshold must lie in (-1, 1]");
}

namespace {

void require_match(const char* op, Var p, const Tensor& y) {
  if (p.shape() != y.shape()) {
    throw DimensionError(std::string(op) + ": prediction " + shape_str(p.shape()) +
                         " vs target " + shape_str(y.shape()));
  }
}

}  // namespace

Var dice_loss(Var probabilities, const Tensor& target, double smooth) {
  require_match("dice_loss", probabilities, target);
  Graph& g = probabilities.graph();
  double target_sum = 0.0;
  for (double v : target.data()) target_sum += v;
  const Var overlap = sum(mul(probabilities, g.constant(target)));
  const Var numerator = add_scalar(scale(overlap, 2.0), smooth);
  const Var denominator = add_scalar(sum(probabilities), target_sum + smooth);
  return add_scalar(scale(div(numerator, denominator), -1.0), 1.0);
}

Var bce_loss(Var probabilities, const Tensor& target) {
  require_match("bce_loss", probabilities, target);
  Graph& g = probabilities.graph();
  Tensor complement(target.shape());
  for (std::size_t i = 0; i < target.numel(); ++i) complement[i] = 1.0 - target[i];
  const Var p = clamp(probabilities, kBceClip, 1.0 - kBceClip);
  const Var log_p = log(p);
  const Var log_q = log(add_scalar(scale(p, -1.0), 1.0));
  const Var per_pixel = add(mul(g.constant(target), log_p), mul(g.constant(complement), log_q));
  return scale(mean(per_pixel), -1.0);
}

Var consistency_loss(const std::vector<Var>& probabilities, const std::vector<Tensor>& embeddings,
                     double tau) {
  if (probabilities.size() != embeddings.size()) {
    throw ContractError("consistency_loss: " + std::to_string(probabilities.size()) +
                        " predictions but " + std::to_string(embeddings.size()) + " embeddings");
  }
  if (probabilities.empty()) throw ContractError("consistency_loss: empty sequence");
  Graph& g = probabilities[0].graph();

  std::vector<Var> terms;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    for (std::size_t j = i + 1; j < probabilities.size(); ++j) {
      const double sim = cosine_similarity(embeddings[i].data(), embeddings[j].data());
      if (!(sim > tau)) continue;
      const Var discrepancy = mean(square(sub(probabilities[i], probabilities[j])));
      terms.push_back(scale(discrepancy, sim));
    }
  }
  if (terms.empty()) return g.constant(Tensor::scalar(0.0));
  return mean(concat(terms));
}

LossBreakdown combined_loss(const std::vector<Var>& probabilities,
                            const std::vector<Tensor>& targets,
                            const std::vector<Tensor>& embeddings, const LossWeights& weights) {
  if (probabilities.empty()) throw ContractError("combined_loss: empty sequence");
  if (targets.size() != probabilities.size()) {
    throw ContractError("combined_loss: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(probabilities.size()) + " predictions");
  }
  std::vector<Var> dice_terms, bce_terms, per_slice;
  for (std::size_t t = 0; t < probabilities.size(); ++t) {
    const Var d = dice_loss(probabilities[t], targets[t], weights.smooth);
    const Var b = bce_loss(probabilities[t], targets[t]);
    dice_terms.push_back(d);
    bce_terms.push_back(b);
    per_slice.push_back(add(scale(d, weights.w_dice), scale(b, weights.w_bce)));
  }
  LossBreakdown out;
  out.dice = mean(concat(dice_terms));
  out.bce = mean(concat(bce_terms));
  out.consistency = consistency_loss(probabilities, embeddings, weights.tau);
  out.total = add(mean(concat(per_slice)), scale(out.consistency, weights.w_consistency));
  return out;
}

Tensor threshold_mask(const Tensor& probabilities, double threshold) {
  Tensor out(probabilities.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = probabilities[i] > threshold ? 1.0 : 0.0;
  return out;
}

double dice_score(const Tensor& prediction, const Tensor& truth) {
  if (prediction.shape() != truth.shape()) {
    throw DimensionError("dice_score: " + shape_str(prediction.shape()) + " vs " +
                         shape_str(truth.shape()));
  }
  double inter = 0.0, size_a = 0.0, size_b = 0.0;
  for (std::size_t i = 0; i < prediction.numel(); ++i) {
    const double a = prediction[i], b = truth[i];
    if ((a != 0.0 && a != 1.0) || (b != 0.0 && b != 1.0)) {
      throw ContractError("dice_score: masks must be binary");
    }
    inter += a * b;
    size_a += a;
    size_b += b;
  }
  if (size_a + size_b == 0.0) return 1.0;
  return 2.0 * inter / (size_a + size_b);
}

}  // namespace slicemem
