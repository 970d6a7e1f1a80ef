#include <cstdio>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "rldist/envs/env.hpp"
#include "rldist/evaluation/lz4.hpp"
#include "rldist/evaluation/sample_batch.hpp"

#ifdef RLDIST_HAVE_SYSTEM_LZ4
extern "C" {
int LZ4_compress_default(const char* src, char* dst, int src_size, int dst_capacity);
int LZ4_decompress_safe(const char* src, char* dst, int compressed_size, int dst_capacity);
int LZ4_compressBound(int input_size);
}
#endif

using namespace rldist;

namespace {

SampleBatch random_batch(std::uint64_t seed, std::size_t rows, std::size_t obs_dim = 3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> a(0, 3);
  std::vector<double> obs(rows * obs_dim), rew(rows);
  std::vector<std::int64_t> act(rows), eps(rows), t(rows);
  for (auto& v : obs) v = n(rng);
  for (std::size_t i = 0; i < rows; ++i) {
    rew[i] = n(rng);
    act[i] = a(rng);
    eps[i] = static_cast<std::int64_t>(i / 4);
    t[i] = static_cast<std::int64_t>(i % 4);
  }
  SampleBatch b;
  b.set_f64(col::kObs, obs_dim, obs);
  b.set_f64(col::kRewards, 1, rew);
  b.set_i64(col::kActions, 1, act);
  b.set_i64(col::kEpsId, 1, eps);
  b.set_i64(col::kTIndex, 1, t);
  return b;
}

SampleBatch image_batch(std::size_t rows) {
  std::vector<double> obs;
  for (std::size_t i = 0; i < rows; ++i) {
    auto img = envs::synthetic_image(i);
    obs.insert(obs.end(), img.begin(), img.end());
  }
  SampleBatch b;
  b.set_f64(col::kObs, envs::GridWorld::kImageSide * envs::GridWorld::kImageSide, obs);
  b.set_f64(col::kRewards, 1, std::vector<double>(rows, 0.0));
  return b;
}

std::vector<std::uint8_t> random_bytes(std::uint64_t seed, std::size_t n, int alphabet) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, alphabet - 1);
  std::vector<std::uint8_t> v(n);
  for (auto& b : v) b = static_cast<std::uint8_t>(d(rng));
  return v;
}

}  // namespace

TEST_CASE("columns share one row count") {
  SampleBatch b;
  b.set_f64("x", 2, {1, 2, 3, 4});
  CHECK(b.rows() == 2);
  CHECK_THROWS_AS(b.set_f64("y", 1, {1, 2, 3}), ShapeMismatch);
  CHECK_THROWS_AS(b.set_f64("z", 2, {1, 2, 3}), ShapeMismatch);
  CHECK_THROWS_AS(b.f64("missing"), MissingColumn);
  CHECK_THROWS_AS(b.i64("x"), SchemaMismatch);
  auto m = b.matrix("x");
  CHECK(m.rows == 2);
  CHECK(m(1, 0) == 3.0);
}

TEST_CASE("concat matches a row-by-row copy") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<SampleBatch> parts = {random_batch(seed, 3 + seed), SampleBatch{}, random_batch(seed + 100, 5)};
    auto merged = concat_batches(parts);
    REQUIRE(merged.rows() == parts[0].rows() + parts[2].rows());
    for (const auto& name : merged.column_names()) {
      const std::size_t w = merged.width(name);
      std::size_t out_row = 0;
      for (const auto& p : parts) {
        for (std::size_t r = 0; r < p.rows(); ++r, ++out_row) {
          for (std::size_t k = 0; k < w; ++k) {
            if (p.column(name).type() == ColumnType::f64) {
              CHECK(merged.f64(name)[out_row * w + k] == p.f64(name)[r * w + k]);
            } else {
              CHECK(merged.i64(name)[out_row * w + k] == p.i64(name)[r * w + k]);
            }
          }
        }
      }
    }
  }
}

TEST_CASE("concat with an empty batch is the identity") {
  auto b = random_batch(1, 6);
  std::vector<SampleBatch> parts = {b, SampleBatch{}};
  CHECK(concat_batches(parts) == b);
  std::vector<SampleBatch> none;
  CHECK(concat_batches(none).empty());
}

TEST_CASE("concat rejects mismatched schemas") {
  auto a = random_batch(1, 2);
  auto b = random_batch(2, 2, 4);
  std::vector<SampleBatch> parts = {a, b};
  CHECK_THROWS_AS(concat_batches(parts), SchemaMismatch);
  b = random_batch(2, 2);
  b.drop(col::kTIndex);
  parts = {a, b};
  CHECK_THROWS_AS(concat_batches(parts), SchemaMismatch);
}

TEST_CASE("slice, gather and episode starts") {
  auto b = random_batch(3, 10);
  auto s = b.slice(2, 5);
  CHECK(s.rows() == 3);
  CHECK(s.f64(col::kRewards)[0] == b.f64(col::kRewards)[2]);
  std::vector<std::size_t> idx = {9, 0, 9};
  auto g = b.gather(idx);
  CHECK(g.i64(col::kActions)[0] == b.i64(col::kActions)[9]);
  CHECK(g.f64(col::kObs)[3] == b.f64(col::kObs)[0]);
  CHECK(episode_starts(b) == std::vector<std::size_t>{0, 4, 8});
}

TEST_CASE("lz4 round trips edge inputs") {
  for (std::size_t n : {0, 1, 4, 5, 11, 12, 13, 16, 64, 255, 256, 1000, 70000}) {
    for (int alphabet : {1, 2, 256}) {
      auto in = random_bytes(n * 7 + alphabet, n, alphabet);
      auto block = lz4::compress(in);
      CHECK(block.size() <= lz4::compress_bound(n));
      CHECK(lz4::decompress(block, n) == in);
    }
  }
}

TEST_CASE("lz4 rejects malformed blocks") {
  auto in = random_bytes(5, 4000, 3);
  auto block = lz4::compress(in);
  CHECK_THROWS_AS(lz4::decompress(block, in.size() + 1), CorruptPayload);
  CHECK_THROWS_AS(lz4::decompress(std::span(block).first(block.size() / 2), in.size()), CorruptPayload);
  std::vector<std::uint8_t> bad_offset = {0x10, 'a', 0x05, 0x00};  // offset beyond output
  CHECK_THROWS_AS(lz4::decompress(bad_offset, 10), CorruptPayload);
  CHECK_THROWS_AS(lz4::decompress(std::vector<std::uint8_t>{}, 0), CorruptPayload);
}

#ifdef RLDIST_HAVE_SYSTEM_LZ4
TEST_CASE("lz4 blocks interoperate with the reference library") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t n = 1 + seed * 997;
    auto in = random_bytes(seed, n, 1 + static_cast<int>(seed % 5));
    auto ours = lz4::compress(in);
    std::vector<std::uint8_t> back(n);
    const int got = LZ4_decompress_safe(reinterpret_cast<const char*>(ours.data()),
                                        reinterpret_cast<char*>(back.data()), static_cast<int>(ours.size()),
                                        static_cast<int>(n));
    CHECK(got == static_cast<int>(n));
    CHECK(back == in);

    std::vector<std::uint8_t> theirs(static_cast<std::size_t>(LZ4_compressBound(static_cast<int>(n))));
    const int clen = LZ4_compress_default(reinterpret_cast<const char*>(in.data()),
                                          reinterpret_cast<char*>(theirs.data()), static_cast<int>(n),
                                          static_cast<int>(theirs.size()));
    REQUIRE(clen > 0);
    theirs.resize(static_cast<std::size_t>(clen));
    CHECK(lz4::decompress(theirs, n) == in);
  }
}
#endif

TEST_CASE("batch compression round trips bitwise") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto b = random_batch(seed, 1 + seed * 13);
    auto c = compress_batch(b);
    CHECK(c.original_bytes == b.byte_size());
    CHECK(decompress_batch(c) == b);
  }
  CompressedBatch empty = compress_batch(SampleBatch{});
  CHECK(empty.payload.empty());
  CHECK(decompress_batch(empty) == SampleBatch{});
}

TEST_CASE("image-like observations compress at least five fold") {
  auto b = image_batch(32);
  auto c = compress_batch(b);
  const double ratio = static_cast<double>(c.original_bytes) / static_cast<double>(c.payload.size());
  CHECK(ratio >= 5.0);
  CHECK(decompress_batch(c) == b);
}

TEST_CASE("corrupted compressed batches are rejected") {
  auto c = compress_batch(random_batch(4, 20));
  c.payload.resize(c.payload.size() - 3);
  CHECK_THROWS_AS(decompress_batch(c), CorruptPayload);
}

TEST_CASE("dump files round trip and follow the record layout") {
  auto b = random_batch(9, 7);
  const auto path = (std::filesystem::temp_directory_path() / "rldist_batch_dump.bin").string();
  dump_batch(path, b);
  CHECK(load_batch(path) == b);
  const auto bytes = taskrt::read_file(path);
  const auto frames = taskrt::read_frames(bytes);
  REQUIRE(frames.size() == 1 + b.column_count());
  CHECK(frames[0].tag == taskrt::tags::kSampleBatch);
  CHECK(frames[1].tag == taskrt::tags::kBatchColumn);
  std::remove(path.c_str());
}

TEST_CASE("object-store codec compresses large observation columns only") {
  auto small = random_batch(2, 8);
  auto small_bytes = taskrt::encode_framed(small);
  CHECK(small_bytes[taskrt::kFrameHeaderBytes] == 0);
  CHECK(taskrt::decode_framed<SampleBatch>(small_bytes) == small);

  auto big = image_batch(4);
  auto big_bytes = taskrt::encode_framed(big);
  CHECK(big_bytes[taskrt::kFrameHeaderBytes] == 1);
  CHECK(big_bytes.size() * 5 < big.byte_size());
  CHECK(taskrt::decode_framed<SampleBatch>(big_bytes) == big);
}
