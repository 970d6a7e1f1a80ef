#include "rldist/taskrt/framing.hpp"

#include <fstream>
#include <iterator>

namespace rldist::taskrt {

void append_frame(Bytes& out, std::uint32_t tag, std::span<const std::uint8_t> payload) {
  out.reserve(out.size() + kFrameHeaderBytes + payload.size());
  ByteWriter w(out);
  w.put<std::uint64_t>(payload.size());
  w.put<std::uint32_t>(tag);
  w.put_raw(payload);
}

Bytes make_frame(std::uint32_t tag, std::span<const std::uint8_t> payload) {
  Bytes out;
  append_frame(out, tag, payload);
  return out;
}

FrameView read_frame(std::span<const std::uint8_t> in, std::size_t* consumed) {
  ByteReader r(in);
  const auto len = r.get<std::uint64_t>();
  const auto tag = r.get<std::uint32_t>();
  if (len > r.remaining()) throw CorruptPayload("frame length exceeds buffer");
  FrameView view{tag, r.get_raw(len)};
  if (consumed != nullptr) *consumed = kFrameHeaderBytes + len;
  return view;
}

std::vector<FrameView> read_frames(std::span<const std::uint8_t> in) {
  std::vector<FrameView> frames;
  while (!in.empty()) {
    std::size_t used = 0;
    frames.push_back(read_frame(in, &used));
    in = in.subspan(used);
  }
  return frames;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path);
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace rldist::taskrt
