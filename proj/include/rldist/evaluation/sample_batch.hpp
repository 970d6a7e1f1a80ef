#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rldist/taskrt/framing.hpp"
#include "rldist/tensor/matrix.hpp"

namespace rldist {

// Standard column names. Aux outputs of a policy graph use their own names
// (logp, vf_preds, q_values, td_errors, ...).
namespace col {
inline constexpr const char* kObs = "obs";
inline constexpr const char* kActions = "actions";
inline constexpr const char* kRewards = "rewards";
inline constexpr const char* kDones = "dones";
inline constexpr const char* kNewObs = "new_obs";
inline constexpr const char* kHidden = "h";
inline constexpr const char* kHiddenNext = "h_next";
inline constexpr const char* kEpsId = "eps_id";
inline constexpr const char* kAgentId = "agent_id";
inline constexpr const char* kTIndex = "t_index";
inline constexpr const char* kLogp = "logp";
inline constexpr const char* kVfPreds = "vf_preds";
inline constexpr const char* kAdvantages = "advantages";
inline constexpr const char* kValueTargets = "value_targets";
inline constexpr const char* kTdErrors = "td_errors";
inline constexpr const char* kDiscount = "discount";  // per-row bootstrap factor for n-step targets
inline constexpr const char* kWeights = "weights";    // importance weights from prioritized replay
}  // namespace col

enum class ColumnType : std::uint8_t { f64 = 0, i64 = 1 };

struct Column {
  std::size_t width = 1;
  std::variant<std::vector<double>, std::vector<std::int64_t>> values;

  ColumnType type() const { return values.index() == 0 ? ColumnType::f64 : ColumnType::i64; }
  std::size_t element_count() const;
  std::size_t byte_size() const { return element_count() * 8; }

  friend bool operator==(const Column&, const Column&) = default;
};

// Columnar experience container. All columns share one row count; a column
// of width w holds w values per row.
class SampleBatch {
 public:
  SampleBatch() = default;

  std::size_t rows() const { return rows_; }
  bool empty() const { return rows_ == 0; }
  std::size_t column_count() const { return columns_.size(); }
  std::vector<std::string> column_names() const;
  bool has(const std::string& name) const { return columns_.count(name) != 0; }

  void set_f64(const std::string& name, std::size_t width, std::vector<double> values);
  void set_i64(const std::string& name, std::size_t width, std::vector<std::int64_t> values);
  void set_column(const std::string& name, Column column);
  void drop(const std::string& name) { columns_.erase(name); }

  const Column& column(const std::string& name) const;
  const std::vector<double>& f64(const std::string& name) const;
  const std::vector<std::int64_t>& i64(const std::string& name) const;
  std::vector<double>& f64_mut(const std::string& name);
  std::size_t width(const std::string& name) const { return column(name).width; }

  // rows() x width view of an f64 column.
  tensor::Matrix matrix(const std::string& name) const;

  SampleBatch slice(std::size_t begin, std::size_t end) const;
  SampleBatch gather(std::span<const std::size_t> rows) const;

  std::size_t byte_size() const;
  const std::map<std::string, Column>& columns() const { return columns_; }

  friend bool operator==(const SampleBatch&, const SampleBatch&) = default;

 private:
  void check_length(const std::string& name, std::size_t width, std::size_t n);

  std::size_t rows_ = 0;
  std::map<std::string, Column> columns_;
};

// Rows concatenated in argument order. Empty batches (no rows) are skipped;
// the rest must share column names, types and widths.
SampleBatch concat_batches(std::span<const SampleBatch> batches);

// First row of each contiguous eps_id run.
std::vector<std::size_t> episode_starts(const SampleBatch& batch);

// --- compression -------------------------------------------------------------

enum class BatchCodec : std::uint32_t { none = 0, lz4_block = 1 };

struct CompressedBatch {
  BatchCodec codec = BatchCodec::lz4_block;
  std::uint64_t original_bytes = 0;
  taskrt::Bytes payload;
};

CompressedBatch compress_batch(const SampleBatch& batch);
SampleBatch decompress_batch(const CompressedBatch& compressed);

// obs-column size above which batches are compressed when framed.
std::size_t compression_threshold();
void set_compression_threshold(std::size_t bytes);

// --- dump files ----------------------------------------------------------------
//
// One file per batch: a header frame (tag kSampleBatch: u64 rows, u64 column
// count) followed by one kBatchColumn frame per column, in name order:
//   string name | u8 type (0=f64, 1=i64) | u64 width | array<values>

taskrt::Bytes encode_batch_records(const SampleBatch& batch);
SampleBatch decode_batch_records(std::span<const std::uint8_t> bytes);
void dump_batch(const std::string& path, const SampleBatch& batch);
SampleBatch load_batch(const std::string& path);

}  // namespace rldist

namespace rldist::taskrt {

// Object-store encoding: u8 flag then either the dump records (flag 0) or a
// compressed batch (flag 1: u64 original bytes, array<payload>). Batches
// whose obs column exceeds compression_threshold() take the second form.
template <>
struct Codec<SampleBatch> {
  static constexpr std::uint32_t tag = tags::kCompressedBatch;
  static void encode(const SampleBatch& b, ByteWriter& w);
  static SampleBatch decode(ByteReader& r);
};

}  // namespace rldist::taskrt
