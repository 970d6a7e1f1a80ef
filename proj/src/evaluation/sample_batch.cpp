#include "rldist/evaluation/sample_batch.hpp"

#include <atomic>

#include "rldist/evaluation/lz4.hpp"

namespace rldist {

std::size_t Column::element_count() const {
  return std::visit([](const auto& v) { return v.size(); }, values);
}

std::vector<std::string> SampleBatch::column_names() const {
  std::vector<std::string> names;
  names.reserve(columns_.size());
  for (const auto& [name, _] : columns_) names.push_back(name);
  return names;
}

void SampleBatch::check_length(const std::string& name, std::size_t width, std::size_t n) {
  if (width == 0) throw ShapeMismatch("column '" + name + "' has zero width");
  if (n % width != 0) throw ShapeMismatch("column '" + name + "' length is not a multiple of its width");
  const std::size_t rows = n / width;
  const bool replacing_only = columns_.size() == 1 && columns_.count(name) != 0;
  if (columns_.empty() || replacing_only) {
    rows_ = rows;
  } else if (rows != rows_) {
    throw ShapeMismatch("column '" + name + "' has " + std::to_string(rows) + " rows, batch has " +
                        std::to_string(rows_));
  }
}

void SampleBatch::set_f64(const std::string& name, std::size_t width, std::vector<double> values) {
  check_length(name, width, values.size());
  columns_[name] = Column{width, std::move(values)};
}

void SampleBatch::set_i64(const std::string& name, std::size_t width, std::vector<std::int64_t> values) {
  check_length(name, width, values.size());
  columns_[name] = Column{width, std::move(values)};
}

void SampleBatch::set_column(const std::string& name, Column column) {
  check_length(name, column.width, column.element_count());
  columns_[name] = std::move(column);
}

const Column& SampleBatch::column(const std::string& name) const {
  auto it = columns_.find(name);
  if (it == columns_.end()) throw MissingColumn("'" + name + "'");
  return it->second;
}

const std::vector<double>& SampleBatch::f64(const std::string& name) const {
  const Column& c = column(name);
  if (c.type() != ColumnType::f64) throw SchemaMismatch("column '" + name + "' is not f64");
  return std::get<0>(c.values);
}

const std::vector<std::int64_t>& SampleBatch::i64(const std::string& name) const {
  const Column& c = column(name);
  if (c.type() != ColumnType::i64) throw SchemaMismatch("column '" + name + "' is not i64");
  return std::get<1>(c.values);
}

std::vector<double>& SampleBatch::f64_mut(const std::string& name) {
  auto it = columns_.find(name);
  if (it == columns_.end()) throw MissingColumn("'" + name + "'");
  if (it->second.type() != ColumnType::f64) throw SchemaMismatch("column '" + name + "' is not f64");
  return std::get<0>(it->second.values);
}

tensor::Matrix SampleBatch::matrix(const std::string& name) const {
  const Column& c = column(name);
  return tensor::Matrix(rows_, c.width, f64(name));
}

namespace {

template <class T>
std::vector<T> take_rows(const std::vector<T>& v, std::size_t width, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size() * width);
  for (std::size_t r : rows) out.insert(out.end(), v.begin() + r * width, v.begin() + (r + 1) * width);
  return out;
}

}  // namespace

SampleBatch SampleBatch::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows_) throw ShapeMismatch("slice out of range");
  SampleBatch out;
  out.rows_ = end - begin;
  for (const auto& [name, c] : columns_) {
    Column nc{c.width, {}};
    std::visit(
        [&](const auto& v) {
          using V = std::decay_t<decltype(v)>;
          nc.values = V(v.begin() + begin * c.width, v.begin() + end * c.width);
        },
        c.values);
    out.columns_.emplace(name, std::move(nc));
  }
  return out;
}

SampleBatch SampleBatch::gather(std::span<const std::size_t> rows) const {
  for (std::size_t r : rows) {
    if (r >= rows_) throw ShapeMismatch("gather index out of range");
  }
  SampleBatch out;
  out.rows_ = rows.size();
  for (const auto& [name, c] : columns_) {
    Column nc{c.width, {}};
    std::visit([&](const auto& v) { nc.values = take_rows(v, c.width, rows); }, c.values);
    out.columns_.emplace(name, std::move(nc));
  }
  return out;
}

std::size_t SampleBatch::byte_size() const {
  std::size_t n = 0;
  for (const auto& [_, c] : columns_) n += c.byte_size();
  return n;
}

SampleBatch concat_batches(std::span<const SampleBatch> batches) {
  const SampleBatch* first = nullptr;
  std::size_t total = 0;
  for (const auto& b : batches) {
    if (b.empty()) continue;
    if (first == nullptr) {
      first = &b;
    } else {
      if (b.column_count() != first->column_count()) throw SchemaMismatch("column sets differ");
      for (const auto& [name, c] : first->columns()) {
        if (!b.has(name)) throw SchemaMismatch("missing column '" + name + "'");
        const Column& o = b.column(name);
        if (o.type() != c.type() || o.width != c.width) throw SchemaMismatch("column '" + name + "' differs");
      }
    }
    total += b.rows();
  }
  if (first == nullptr) return batches.empty() ? SampleBatch{} : batches.front();
  SampleBatch out;
  for (const auto& [name, c] : first->columns()) {
    Column nc{c.width, {}};
    std::visit(
        [&](const auto& proto) {
          using V = std::decay_t<decltype(proto)>;
          V merged;
          merged.reserve(total * c.width);
          for (const auto& b : batches) {
            if (b.empty()) continue;
            const auto& v = std::get<V>(b.column(name).values);
            merged.insert(merged.end(), v.begin(), v.end());
          }
          nc.values = std::move(merged);
        },
        c.values);
    out.set_column(name, std::move(nc));
  }
  return out;
}

std::vector<std::size_t> episode_starts(const SampleBatch& batch) {
  std::vector<std::size_t> starts;
  if (batch.empty()) return starts;
  const auto& eps = batch.i64(col::kEpsId);
  starts.push_back(0);
  for (std::size_t i = 1; i < eps.size(); ++i) {
    if (eps[i] != eps[i - 1]) starts.push_back(i);
  }
  return starts;
}

// --- compression -------------------------------------------------------------

namespace {

std::atomic<std::size_t> g_threshold{64 * 1024};

std::span<const std::uint8_t> column_bytes(const Column& c) {
  return std::visit(
      [](const auto& v) { return std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(v.data()),
                                                               v.size() * 8); },
      c.values);
}

}  // namespace

std::size_t compression_threshold() { return g_threshold.load(); }
void set_compression_threshold(std::size_t bytes) { g_threshold.store(bytes); }

// Payload: u64 rows | u64 columns | per column:
//   string name | u8 type | u64 width | u64 raw bytes | array<u8 lz4 block>
CompressedBatch compress_batch(const SampleBatch& batch) {
  CompressedBatch out;
  out.codec = BatchCodec::lz4_block;
  if (batch.empty() && batch.column_count() == 0) return out;
  taskrt::ByteWriter w(out.payload);
  w.put<std::uint64_t>(batch.rows());
  w.put<std::uint64_t>(batch.column_count());
  for (const auto& [name, c] : batch.columns()) {
    const auto raw = column_bytes(c);
    out.original_bytes += raw.size();
    w.put_string(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.type()));
    w.put<std::uint64_t>(c.width);
    w.put<std::uint64_t>(raw.size());
    w.put_array<std::uint8_t>(lz4::compress(raw));
  }
  return out;
}

SampleBatch decompress_batch(const CompressedBatch& compressed) {
  if (compressed.codec != BatchCodec::lz4_block) throw CorruptPayload("unsupported batch codec");
  SampleBatch batch;
  if (compressed.payload.empty()) {
    if (compressed.original_bytes != 0) throw CorruptPayload("empty payload with nonzero size");
    return batch;
  }
  taskrt::ByteReader r(compressed.payload);
  const auto rows = r.get<std::uint64_t>();
  const auto ncols = r.get<std::uint64_t>();
  std::uint64_t total = 0;
  for (std::uint64_t i = 0; i < ncols; ++i) {
    const std::string name = r.get_string();
    const auto type = r.get<std::uint8_t>();
    const auto width = r.get<std::uint64_t>();
    const auto raw_size = r.get<std::uint64_t>();
    if (type > 1) throw CorruptPayload("unknown column type");
    if (width == 0 || raw_size != rows * width * 8) throw CorruptPayload("column size mismatch");
    const auto block = r.get_array<std::uint8_t>();
    const auto raw = lz4::decompress(block, raw_size);
    total += raw_size;
    Column c{width, {}};
    if (type == 0) {
      std::vector<double> v(raw_size / 8);
      std::memcpy(v.data(), raw.data(), raw_size);
      c.values = std::move(v);
    } else {
      std::vector<std::int64_t> v(raw_size / 8);
      std::memcpy(v.data(), raw.data(), raw_size);
      c.values = std::move(v);
    }
    batch.set_column(name, std::move(c));
  }
  if (!r.done()) throw CorruptPayload("trailing bytes in compressed batch");
  if (total != compressed.original_bytes) throw CorruptPayload("original size mismatch");
  if (ncols == 0 && rows != 0) throw CorruptPayload("rows without columns");
  return batch;
}

// --- dump files ----------------------------------------------------------------

taskrt::Bytes encode_batch_records(const SampleBatch& batch) {
  taskrt::Bytes out;
  taskrt::Bytes header;
  taskrt::ByteWriter hw(header);
  hw.put<std::uint64_t>(batch.rows());
  hw.put<std::uint64_t>(batch.column_count());
  taskrt::append_frame(out, taskrt::tags::kSampleBatch, header);
  for (const auto& [name, c] : batch.columns()) {
    taskrt::Bytes rec;
    taskrt::ByteWriter w(rec);
    w.put_string(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.type()));
    w.put<std::uint64_t>(c.width);
    std::visit([&](const auto& v) { w.put_array<typename std::decay_t<decltype(v)>::value_type>(v); }, c.values);
    taskrt::append_frame(out, taskrt::tags::kBatchColumn, rec);
  }
  return out;
}

SampleBatch decode_batch_records(std::span<const std::uint8_t> bytes) {
  const auto frames = taskrt::read_frames(bytes);
  if (frames.empty() || frames[0].tag != taskrt::tags::kSampleBatch) throw CorruptPayload("missing batch header");
  taskrt::ByteReader hr(frames[0].payload);
  const auto rows = hr.get<std::uint64_t>();
  const auto ncols = hr.get<std::uint64_t>();
  if (!hr.done() || frames.size() != ncols + 1) throw CorruptPayload("batch header does not match records");
  SampleBatch batch;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].tag != taskrt::tags::kBatchColumn) throw CorruptPayload("unexpected record tag");
    taskrt::ByteReader r(frames[i].payload);
    const std::string name = r.get_string();
    const auto type = r.get<std::uint8_t>();
    const auto width = r.get<std::uint64_t>();
    Column c{width, {}};
    if (type == 0) {
      c.values = r.get_array<double>();
    } else if (type == 1) {
      c.values = r.get_array<std::int64_t>();
    } else {
      throw CorruptPayload("unknown column type");
    }
    if (!r.done()) throw CorruptPayload("trailing bytes in column record");
    if (width == 0 || c.element_count() != rows * width) throw CorruptPayload("column '" + name + "' size mismatch");
    batch.set_column(name, std::move(c));
  }
  if (ncols == 0 && rows != 0) throw CorruptPayload("rows without columns");
  return batch;
}

void dump_batch(const std::string& path, const SampleBatch& batch) {
  taskrt::write_file(path, encode_batch_records(batch));
}

SampleBatch load_batch(const std::string& path) { return decode_batch_records(taskrt::read_file(path)); }

}  // namespace rldist

namespace rldist::taskrt {

void Codec<SampleBatch>::encode(const SampleBatch& b, ByteWriter& w) {
  const bool compress = b.has(col::kObs) && b.column(col::kObs).byte_size() > compression_threshold();
  if (!compress) {
    w.put<std::uint8_t>(0);
    w.put_raw(encode_batch_records(b));
    return;
  }
  const CompressedBatch c = compress_batch(b);
  w.put<std::uint8_t>(1);
  w.put<std::uint64_t>(c.original_bytes);
  w.put_array<std::uint8_t>(c.payload);
}

SampleBatch Codec<SampleBatch>::decode(ByteReader& r) {
  const auto flag = r.get<std::uint8_t>();
  if (flag == 0) return decode_batch_records(r.get_raw(r.remaining()));
  if (flag != 1) throw CorruptPayload("unknown batch encoding flag");
  CompressedBatch c;
  c.original_bytes = r.get<std::uint64_t>();
  c.payload = r.get_array<std::uint8_t>();
  return decompress_batch(c);
}

}  // namespace rldist::taskrt
