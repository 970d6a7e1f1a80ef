#include "rldist/evaluation/lz4.hpp"

#include <cstring>

#include "rldist/common/error.hpp"

namespace rldist::lz4 {

namespace {

constexpr std::size_t kMinMatch = 4;
constexpr std::size_t kLastLiterals = 5;
constexpr std::size_t kMatchStartLimit = 12;  // a match may not start in the last 12 bytes
constexpr std::size_t kMaxOffset = 65535;
constexpr int kHashBits = 16;

std::uint32_t read32(const std::uint8_t* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

std::uint32_t hash4(std::uint32_t v) { return (v * 2654435761u) >> (32 - kHashBits); }

void put_length(std::vector<std::uint8_t>& out, std::size_t n) {
  while (n >= 255) {
    out.push_back(255);
    n -= 255;
  }
  out.push_back(static_cast<std::uint8_t>(n));
}

void emit(std::vector<std::uint8_t>& out, const std::uint8_t* literals, std::size_t lit_len, std::size_t offset,
          std::size_t match_len, bool last) {
  const std::size_t ml = last ? 0 : match_len - kMinMatch;
  const auto token = static_cast<std::uint8_t>(((lit_len >= 15 ? 15 : lit_len) << 4) | (ml >= 15 ? 15 : ml));
  out.push_back(token);
  if (lit_len >= 15) put_length(out, lit_len - 15);
  out.insert(out.end(), literals, literals + lit_len);
  if (last) return;
  out.push_back(static_cast<std::uint8_t>(offset & 0xFF));
  out.push_back(static_cast<std::uint8_t>(offset >> 8));
  if (ml >= 15) put_length(out, ml - 15);
}

}  // namespace

std::vector<std::uint8_t> compress(std::span<const std::uint8_t> input) {
  const std::size_t n = input.size();
  const std::uint8_t* src = input.data();
  std::vector<std::uint8_t> out;
  out.reserve(compress_bound(n));
  std::size_t anchor = 0;
  if (n > kMatchStartLimit) {
    std::vector<std::int64_t> table(std::size_t{1} << kHashBits, -1);
    const std::size_t last_start = n - kMatchStartLimit;
    const std::size_t match_end_limit = n - kLastLiterals;
    std::size_t ip = 0;
    while (ip <= last_start) {
      const std::uint32_t seq = read32(src + ip);
      const std::uint32_t h = hash4(seq);
      const std::int64_t ref = table[h];
      table[h] = static_cast<std::int64_t>(ip);
      if (ref >= 0 && ip - static_cast<std::size_t>(ref) <= kMaxOffset && read32(src + ref) == seq) {
        std::size_t len = kMinMatch;
        while (ip + len < match_end_limit && src[static_cast<std::size_t>(ref) + len] == src[ip + len]) ++len;
        emit(out, src + anchor, ip - anchor, ip - static_cast<std::size_t>(ref), len, false);
        ip += len;
        anchor = ip;
        if (ip >= 2 && ip - 2 <= last_start) table[hash4(read32(src + ip - 2))] = static_cast<std::int64_t>(ip - 2);
      } else {
        ++ip;
      }
    }
  }
  emit(out, src + anchor, n - anchor, 0, 0, true);
  return out;
}

std::vector<std::uint8_t> decompress(std::span<const std::uint8_t> block, std::size_t original_size) {
  std::vector<std::uint8_t> out(original_size);
  std::size_t ip = 0;
  std::size_t op = 0;
  auto read_length = [&](std::size_t base) {
    if (base != 15) return base;
    std::size_t n = base;
    for (;;) {
      if (ip >= block.size()) throw CorruptPayload("lz4: truncated length");
      const std::uint8_t b = block[ip++];
      n += b;
      if (b != 255) return n;
    }
  };
  for (;;) {
    if (ip >= block.size()) throw CorruptPayload("lz4: missing token");
    const std::uint8_t token = block[ip++];
    const std::size_t lit = read_length(token >> 4);
    if (lit > block.size() - ip || lit > original_size - op) throw CorruptPayload("lz4: literal overrun");
    std::memcpy(out.data() + op, block.data() + ip, lit);
    ip += lit;
    op += lit;
    if (ip == block.size()) break;
    if (block.size() - ip < 2) throw CorruptPayload("lz4: truncated offset");
    const std::size_t offset = block[ip] | (static_cast<std::size_t>(block[ip + 1]) << 8);
    ip += 2;
    if (offset == 0 || offset > op) throw CorruptPayload("lz4: bad offset");
    const std::size_t len = read_length(token & 0x0F) + kMinMatch;
    if (len > original_size - op) throw CorruptPayload("lz4: match overrun");
    for (std::size_t i = 0; i < len; ++i, ++op) out[op] = out[op - offset];
  }
  if (op != original_size) throw CorruptPayload("lz4: decompressed size mismatch");
  return out;
}

}  // namespace rldist::lz4
