#include "slicemem/memory_bank.hpp"

#include <algorithm>
#include <cmath>

#include "slicemem/errors.hpp"

namespace slicemem {

double prediction_confidence(const Tensor& probabilities) {
  if (probabilities.numel() == 0) throw DomainError("prediction_confidence: empty map");
  double total = 0.0;
  for (double p : probabilities.data()) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DomainError("prediction_confidence: probability " + std::to_string(p) +
                        " outside [0, 1]");
    }
    total += std::abs(2.0 * p - 1.0);
  }
  return total / static_cast<double>(probabilities.numel());
}

void MemoryBank::insert(MemoryEntry entry) {
  if (!entries_.empty() && entry.slice_index <= entries_.back().slice_index) {
    throw ContractError("memory bank insert out of order: slice " +
                        std::to_string(entry.slice_index) + " after slice " +
                        std::to_string(entries_.back().slice_index));
  }
  if (!(entry.confidence >= 0.0 && entry.confidence <= 1.0)) {
    throw ContractError("memory entry confidence " + std::to_string(entry.confidence) +
                        " outside [0, 1]");
  }
  entries_.push_back(std::move(entry));
}

double memory_score(const MemoryEntry& entry, std::span<const double> query) {
  return cosine_similarity(entry.pooled_embedding.value().data(), query) * entry.confidence;
}

std::vector<MemoryEntry> select_memory(const MemoryBank& bank, std::span<const double> query,
                                       std::size_t k) {
  if (k < 1) throw ContractError("select_memory: K must be at least 1");

  struct Ranked {
    double score;
    std::size_t pos;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    ranked.push_back({memory_score(bank.entries()[i], query), i});
  }
  // Bank order is ascending slice index, so a larger position is more recent.
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.pos > b.pos;
  });
  ranked.resize(std::min(k, ranked.size()));

  std::vector<MemoryEntry> out;
  out.reserve(ranked.size());
  for (const Ranked& r : ranked) out.push_back(bank.entries()[r.pos]);
  return out;
}

}  // namespace slicemem
