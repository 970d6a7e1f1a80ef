#pragma once

// LZ4 block format (no frame header). Output of lz4_compress is decodable by
// any conforming LZ4 block decoder and vice versa.

#include <cstdint>
#include <span>
#include <vector>

namespace rldist::lz4 {

std::vector<std::uint8_t> compress(std::span<const std::uint8_t> input);

// `original_size` must be the exact decompressed length. Throws
// CorruptPayload on malformed input.
std::vector<std::uint8_t> decompress(std::span<const std::uint8_t> block, std::size_t original_size);

// Worst-case compressed size for `n` input bytes.
constexpr std::size_t compress_bound(std::size_t n) { return n + n / 255 + 16; }

}  // namespace rldist::lz4
