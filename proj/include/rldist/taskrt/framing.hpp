#pragma once

// Self-describing binary framing shared by the object store, weight
// checkpoints and batch dumps:
//
//   [u64 little-endian payload length][u32 little-endian type tag][payload]
//
// Payload encodings are little-endian regardless of host order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "rldist/common/error.hpp"

namespace rldist::taskrt {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kFrameHeaderBytes = 12;

// Well-known type tags. User codecs should pick values >= 0x1000.
namespace tags {
inline constexpr std::uint32_t kUnit = 0x0001;
inline constexpr std::uint32_t kF64 = 0x0002;
inline constexpr std::uint32_t kI64 = 0x0003;
inline constexpr std::uint32_t kF64Vec = 0x0004;
inline constexpr std::uint32_t kI64Vec = 0x0005;
inline constexpr std::uint32_t kString = 0x0006;
inline constexpr std::uint32_t kBytes = 0x0007;
inline constexpr std::uint32_t kMatrix = 0x0100;
inline constexpr std::uint32_t kMlpParams = 0x0101;
inline constexpr std::uint32_t kSampleBatch = 0x0200;
inline constexpr std::uint32_t kBatchColumn = 0x0201;
inline constexpr std::uint32_t kCompressedBatch = 0x0202;
inline constexpr std::uint32_t kTrainerCheckpoint = 0x0300;
inline constexpr std::uint32_t kGradientPacket = 0x0400;
inline constexpr std::uint32_t kEpisodeStats = 0x0401;
}  // namespace tags

class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  template <class T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    U bits;
    std::memcpy(&bits, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
  }

  template <class T>
    requires std::is_arithmetic_v<T>
  void put_array(std::span<const T> values) {
    put<std::uint64_t>(values.size());
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
      out_.insert(out_.end(), p, p + values.size_bytes());
    } else {
      for (T v : values) put(v);
    }
  }

  void put_string(std::string_view s) {
    put<std::uint64_t>(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }

  void put_raw(std::span<const std::uint8_t> raw) { out_.insert(out_.end(), raw.begin(), raw.end()); }

 private:
  Bytes& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  template <class T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(in_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
  }

  template <class T>
    requires std::is_arithmetic_v<T>
  std::vector<T> get_array() {
    const auto n = get<std::uint64_t>();
    if (n > remaining() / sizeof(T)) throw CorruptPayload("array length exceeds payload");
    std::vector<T> out(n);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), in_.data() + pos_, n * sizeof(T));
      pos_ += n * sizeof(T);
    } else {
      for (auto& v : out) v = get<T>();
    }
    return out;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::span<const std::uint8_t> get_raw(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return in_.size() - pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw CorruptPayload("truncated payload");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

struct FrameView {
  std::uint32_t tag = 0;
  std::span<const std::uint8_t> payload;
};

// Appends one frame to `out`.
void append_frame(Bytes& out, std::uint32_t tag, std::span<const std::uint8_t> payload);
Bytes make_frame(std::uint32_t tag, std::span<const std::uint8_t> payload);

// Parses the frame at the start of `in`. `consumed` receives header+payload
// length so callers can walk a sequence of frames.
FrameView read_frame(std::span<const std::uint8_t> in, std::size_t* consumed = nullptr);

// All frames in a buffer, in order. Throws CorruptPayload on trailing garbage.
std::vector<FrameView> read_frames(std::span<const std::uint8_t> in);

void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
Bytes read_file(const std::string& path);

// Codec<T> supplies `tag`, `encode(const T&, ByteWriter&)` and
// `decode(ByteReader&) -> T`. Specialize it for payload types that travel
// through the object store.
template <class T>
struct Codec;

template <class T>
concept Encodable = requires(const T& v, ByteWriter& w, ByteReader& r) {
  { Codec<T>::tag } -> std::convertible_to<std::uint32_t>;
  Codec<T>::encode(v, w);
  { Codec<T>::decode(r) } -> std::same_as<T>;
};

template <Encodable T>
Bytes encode_framed(const T& value) {
  Bytes payload;
  ByteWriter w(payload);
  Codec<T>::encode(value, w);
  return make_frame(Codec<T>::tag, payload);
}

template <Encodable T>
T decode_framed(std::span<const std::uint8_t> bytes) {
  const auto frame = read_frame(bytes);
  if (frame.tag != Codec<T>::tag) throw CorruptPayload("unexpected type tag");
  ByteReader r(frame.payload);
  T value = Codec<T>::decode(r);
  if (!r.done()) throw CorruptPayload("trailing bytes in payload");
  return value;
}

struct Unit {
  friend bool operator==(Unit, Unit) { return true; }
};

template <>
struct Codec<Unit> {
  static constexpr std::uint32_t tag = tags::kUnit;
  static void encode(const Unit&, ByteWriter&) {}
  static Unit decode(ByteReader&) { return {}; }
};

template <>
struct Codec<double> {
  static constexpr std::uint32_t tag = tags::kF64;
  static void encode(const double& v, ByteWriter& w) { w.put(v); }
  static double decode(ByteReader& r) { return r.get<double>(); }
};

template <>
struct Codec<std::int64_t> {
  static constexpr std::uint32_t tag = tags::kI64;
  static void encode(const std::int64_t& v, ByteWriter& w) { w.put(v); }
  static std::int64_t decode(ByteReader& r) { return r.get<std::int64_t>(); }
};

template <>
struct Codec<std::vector<double>> {
  static constexpr std::uint32_t tag = tags::kF64Vec;
  static void encode(const std::vector<double>& v, ByteWriter& w) { w.put_array<double>(v); }
  static std::vector<double> decode(ByteReader& r) { return r.get_array<double>(); }
};

template <>
struct Codec<std::vector<std::int64_t>> {
  static constexpr std::uint32_t tag = tags::kI64Vec;
  static void encode(const std::vector<std::int64_t>& v, ByteWriter& w) { w.put_array<std::int64_t>(v); }
  static std::vector<std::int64_t> decode(ByteReader& r) { return r.get_array<std::int64_t>(); }
};

template <>
struct Codec<std::string> {
  static constexpr std::uint32_t tag = tags::kString;
  static void encode(const std::string& v, ByteWriter& w) { w.put_string(v); }
  static std::string decode(ByteReader& r) { return r.get_string(); }
};

template <>
struct Codec<Bytes> {
  static constexpr std::uint32_t tag = tags::kBytes;
  static void encode(const Bytes& v, ByteWriter& w) { w.put_array<std::uint8_t>(v); }
  static Bytes decode(ByteReader& r) { return r.get_array<std::uint8_t>(); }
};

}  // namespace rldist::taskrt
