#include "rldist/optimizers/replay_buffer.hpp"

#include <algorithm>
#include <cmath>

#include "rldist/common/error.hpp"

namespace rldist::optimizers {

ReplayBuffer::ReplayBuffer(ReplayConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
  if (cfg_.capacity == 0) throw ConfigError("replay capacity must be >= 1");
  if (cfg_.alpha < 0.0) throw ConfigError("replay alpha must be >= 0");
  while (tree_base_ < cfg_.capacity) tree_base_ *= 2;
  sum_tree_.assign(2 * tree_base_, 0.0);
  max_tree_.assign(2 * tree_base_, 0.0);
  priority_.assign(cfg_.capacity, 0.0);
  insert_id_.assign(cfg_.capacity, 0);
}

double ReplayBuffer::weight_of(double p) const {
  if (cfg_.alpha == 0.0) return 1.0;
  return std::pow(p + cfg_.eps_p, cfg_.alpha);
}

void ReplayBuffer::set_priority(std::size_t slot, double p) {
  priority_[slot] = p;
  std::size_t i = tree_base_ + slot;
  sum_tree_[i] = weight_of(p);
  max_tree_[i] = p;
  for (i /= 2; i >= 1; i /= 2) {
    sum_tree_[i] = sum_tree_[2 * i] + sum_tree_[2 * i + 1];
    max_tree_[i] = std::max(max_tree_[2 * i], max_tree_[2 * i + 1]);
  }
}

double ReplayBuffer::max_priority() const { return size_ == 0 ? 1.0 : max_tree_[1]; }

void ReplayBuffer::add(const SampleBatch& batch) { add_with_priority(batch, max_priority()); }

void ReplayBuffer::add_with_priority(const SampleBatch& batch, double priority) {
  if (batch.empty()) return;
  if (!has_schema_) {
    for (const auto& [name, c] : batch.columns()) {
      names_.push_back(name);
      Column s;
      s.width = c.width;
      if (c.type() == ColumnType::f64) {
        s.values = std::vector<double>(cfg_.capacity * c.width, 0.0);
      } else {
        s.values = std::vector<std::int64_t>(cfg_.capacity * c.width, 0);
      }
      storage_.push_back(std::move(s));
    }
    has_schema_ = true;
  }
  if (batch.column_count() != names_.size()) throw SchemaMismatch("replay batch columns differ from buffer schema");
  for (std::size_t c = 0; c < names_.size(); ++c) {
    if (!batch.has(names_[c])) throw SchemaMismatch("replay batch lacks column '" + names_[c] + "'");
    const Column& in = batch.column(names_[c]);
    if (in.width != storage_[c].width || in.type() != storage_[c].type()) {
      throw SchemaMismatch("replay column '" + names_[c] + "' changed shape");
    }
  }
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const std::size_t slot = next_;
    for (std::size_t c = 0; c < names_.size(); ++c) {
      const Column& in = batch.column(names_[c]);
      Column& out = storage_[c];
      const std::size_t w = out.width;
      std::visit(
          [&](auto& dst) {
            const auto& src = std::get<std::remove_reference_t<decltype(dst)>>(in.values);
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                        dst.begin() + static_cast<std::ptrdiff_t>(slot * w));
          },
          out.values);
    }
    insert_id_[slot] = inserted_++;
    set_priority(slot, priority);
    next_ = (next_ + 1) % cfg_.capacity;
    size_ = std::min(size_ + 1, cfg_.capacity);
  }
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n) {
  if (size_ == 0) throw BufferEmpty("cannot sample from an empty replay buffer");
  std::vector<std::size_t> out;
  out.reserve(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < n; ++k) {
    double target = u(rng_) * sum_tree_[1];
    std::size_t i = 1;
    while (i < tree_base_) {
      if (target < sum_tree_[2 * i] || sum_tree_[2 * i + 1] == 0.0) {
        i = 2 * i;
      } else {
        target -= sum_tree_[2 * i];
        i = 2 * i + 1;
      }
    }
    out.push_back(std::min(i - tree_base_, size_ - 1));
  }
  return out;
}

SampleBatch ReplayBuffer::sample(std::size_t n) {
  const auto idx = sample_indices(n);
  SampleBatch out;
  for (std::size_t c = 0; c < names_.size(); ++c) {
    const Column& s = storage_[c];
    const std::size_t w = s.width;
    Column picked;
    picked.width = w;
    std::visit(
        [&](const auto& src) {
          std::remove_cvref_t<decltype(src)> dst;
          dst.reserve(idx.size() * w);
          for (std::size_t i : idx) {
            dst.insert(dst.end(), src.begin() + static_cast<std::ptrdiff_t>(i * w),
                       src.begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
          }
          picked.values = std::move(dst);
        },
        s.values);
    out.set_column(names_[c], std::move(picked));
  }
  out.set_i64(kBatchIndexes, 1, {idx.begin(), idx.end()});
  return out;
}

void ReplayBuffer::update_priorities(std::span<const std::int64_t> indices, std::span<const double> td_errors) {
  if (indices.size() != td_errors.size()) throw ShapeMismatch("one td error per index expected");
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto slot = static_cast<std::size_t>(indices[k]);
    if (indices[k] < 0 || slot >= size_) throw ShapeMismatch("priority index out of range");
    set_priority(slot, std::abs(td_errors[k]));
  }
}

std::vector<double> ReplayBuffer::probabilities() const {
  std::vector<double> p(size_);
  for (std::size_t i = 0; i < size_; ++i) p[i] = sum_tree_[tree_base_ + i] / sum_tree_[1];
  return p;
}

}  // namespace rldist::optimizers
