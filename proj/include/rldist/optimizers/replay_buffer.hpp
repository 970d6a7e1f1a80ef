#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rldist/evaluation/sample_batch.hpp"

namespace rldist::optimizers {

// Buffer slot of each sampled row; feed it back to update_priorities().
inline constexpr const char* kBatchIndexes = "batch_indexes";

struct ReplayConfig {
  std::size_t capacity = 50000;
  double alpha = 0.6;
  double eps_p = 1e-6;
  std::uint64_t seed = 0;
};

// Prioritized FIFO ring of transitions. Row i is drawn with probability
// (p_i + eps_p)^alpha / sum_j (p_j + eps_p)^alpha.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(ReplayConfig cfg = {});

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return cfg_.capacity; }
  const ReplayConfig& config() const { return cfg_; }
  // Rows ever inserted.
  std::uint64_t inserted() const { return inserted_; }

  // New rows get the current max priority (1.0 when empty). The first batch
  // fixes the schema.
  void add(const SampleBatch& batch);
  void add_with_priority(const SampleBatch& batch, double priority);

  // Throws BufferEmpty when nothing is stored.
  std::vector<std::size_t> sample_indices(std::size_t n);
  // Rows plus a kBatchIndexes column.
  SampleBatch sample(std::size_t n);

  // p_i <- |td_i|
  void update_priorities(std::span<const std::int64_t> indices, std::span<const double> td_errors);

  double priority(std::size_t slot) const { return priority_.at(slot); }
  double max_priority() const;
  // Insertion number (0-based) of the row held in `slot`.
  std::uint64_t insert_id(std::size_t slot) const { return insert_id_.at(slot); }
  // Sampling probability of every occupied slot.
  std::vector<double> probabilities() const;

 private:
  double weight_of(double p) const;
  void set_priority(std::size_t slot, double p);

  ReplayConfig cfg_;
  std::mt19937_64 rng_;
  std::size_t size_ = 0;
  std::size_t next_ = 0;
  std::uint64_t inserted_ = 0;
  bool has_schema_ = false;
  std::vector<std::string> names_;
  std::vector<Column> storage_;  // capacity rows per column
  std::vector<double> priority_;
  std::vector<std::uint64_t> insert_id_;
  // Binary trees over slots: sums of sampling weights and maxima of raw
  // priorities. Leaves start at tree_base_.
  std::size_t tree_base_ = 1;
  std::vector<double> sum_tree_;
  std::vector<double> max_tree_;
};

}  // namespace rldist::optimizers
