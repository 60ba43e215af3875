#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "srnn/errors.hpp"
#include "srnn/tensor.hpp"

namespace srnn {

// Standard CRC-32 (IEEE, reflected, poly 0xEDB88320).
inline std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i)
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

struct NamedTensorF {
  std::string name;
  Tensor<float> tensor;
};

// Layout (all little-endian):
//   "SRNN" | version u32 | tensor count u32 |
//   per tensor: name_len u16, name bytes, rank u8, dims u32 each,
//               payload f32 row-major |
//   CRC32 of all preceding bytes, u32
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
  const std::vector<unsigned char>& bytes;
  std::size_t at = 0;

  void need(std::size_t n, const char* what) const {
    if (at + n > bytes.size())
      throw CheckpointError(std::string("checkpoint truncated reading ") +
                            what + " at byte " + std::to_string(at));
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes[at]) |
                      static_cast<std::uint16_t>(bytes[at + 1]) << 8;
    at += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    at += 4;
    return v;
  }
  unsigned char u8(const char* what) {
    need(1, what);
    return bytes[at++];
  }
};

}  // namespace detail

inline std::vector<unsigned char> checkpoint_bytes(
    const std::vector<NamedTensorF>& tensors) {
  std::vector<unsigned char> out;
  out.insert(out.end(), {'S', 'R', 'N', 'N'});
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    detail::put_u16(out, static_cast<std::uint16_t>(nt.name.size()));
    out.insert(out.end(), nt.name.begin(), nt.name.end());
    out.push_back(static_cast<unsigned char>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape)
      detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : nt.tensor.data)
      detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  detail::put_u32(out, crc32(out.data(), out.size()));
  return out;
}

inline std::vector<NamedTensorF> checkpoint_parse(
    const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16)
    throw CheckpointError("checkpoint too short (" +
                          std::to_string(bytes.size()) + " bytes)");
  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
      static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  if (crc32(bytes.data(), bytes.size() - 4) != stored_crc)
    throw CheckpointError("checkpoint CRC mismatch");

  detail::ByteReader r{bytes};
  if (r.u8("magic") != 'S' || r.u8("magic") != 'R' || r.u8("magic") != 'N' ||
      r.u8("magic") != 'N')
    throw CheckpointError("bad checkpoint magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  const std::uint32_t count = r.u32("tensor count");
  std::vector<NamedTensorF> tensors;
  tensors.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint16_t name_len = r.u16("name length");
    r.need(name_len, "name");
    std::string name(bytes.begin() + static_cast<long>(r.at),
                     bytes.begin() + static_cast<long>(r.at + name_len));
    r.at += name_len;
    const unsigned char rank = r.u8("rank");
    Shape shape(rank);
    for (unsigned char d = 0; d < rank; ++d) shape[d] = r.u32("dim");
    std::vector<float> data(shape_numel(shape));
    for (auto& f : data) f = std::bit_cast<float>(r.u32("payload"));
    tensors.push_back({std::move(name), Tensor<float>(std::move(shape),
                                                      std::move(data))});
  }
  if (r.at != bytes.size() - 4)
    throw CheckpointError("checkpoint has trailing bytes at " +
                          std::to_string(r.at));
  return tensors;
}

inline void checkpoint_save(const std::string& path,
                            const std::vector<NamedTensorF>& tensors) {
  const auto bytes = checkpoint_bytes(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to " + path);
}

inline std::vector<NamedTensorF> checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return checkpoint_parse(bytes);
}

}  // namespace srnn
