#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "slicemem/autograd.hpp"

namespace slicemem {

/// Default number of prior slices kept as attention context.
inline constexpr std::size_t kDefaultMemorySize = 5;

/// Everything the pipeline remembers about one processed slice.
struct MemoryEntry {
  std::size_t slice_index = 0;
  Var pooled_embedding;   // [d_model]
  Var patch_features;     // [P x d_model]
  double confidence = 0;  // in [0, 1]
  std::optional<double> z_position_um;
};

/// Mean pixel margin |2p - 1| of a probability map, in [0, 1].
/// Throws DomainError if any value lies outside [0, 1].
double prediction_confidence(const Tensor& probabilities);

/// Per-sequence store of processed slices, ordered by strictly increasing
/// slice index. Owned by one sequence pass; call clear() between subjects.
class MemoryBank {
 public:
  /// Throws ContractError unless `entry.slice_index` exceeds every stored
  /// index, or if the confidence lies outside [0, 1].
  void insert(MemoryEntry entry);
  void clear() noexcept { entries_.clear(); }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<MemoryEntry>& entries() const noexcept { return entries_; }

 private:
  std::vector<MemoryEntry> entries_;
};

/// Selection score of one entry: cos(entry embedding, query) * confidence.
/// Embeddings are read as plain values, so selection carries no gradient.
double memory_score(const MemoryEntry& entry, std::span<const double> query);

/// The (at most) k entries with the largest scores, best first. Equal scores
/// prefer the larger slice index. Throws ContractError when k < 1.
std::vector<MemoryEntry> select_memory(const MemoryBank& bank, std::span<const double> query,
                                       std::size_t k);

}  // namespace slicemem
