// SPDX-License-Identifier: Apache-2.0
#include "srdepth/snapshot.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace srdepth {

namespace {

constexpr char kMagic[4] = {'S', 'R', 'D', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  require(in.gcount() == 4, "bad-format", path + ": truncated snapshot");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// float32 payloads are written through explicit byte packing so the file is
// little-endian regardless of host order.
void put_f32(std::ostream& out, const float* data, long long count) {
  static_assert(sizeof(float) == 4);
  for (long long i = 0; i < count; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, data + i, 4);
    put_u32(out, bits);
  }
}

}  // namespace

void save_snapshot(const std::string& path, const WeightSnapshot& snap) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "io-error", "cannot write " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(snap.epoch));
  put_u32(out, static_cast<std::uint32_t>(snap.entries.size()));
  for (const auto& [name, tensor] : snap.entries) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape s = tensor.shape();
    put_u32(out, static_cast<std::uint32_t>(s.n));
    put_u32(out, static_cast<std::uint32_t>(s.c));
    put_u32(out, static_cast<std::uint32_t>(s.h));
    put_u32(out, static_cast<std::uint32_t>(s.w));
    put_f32(out, tensor.data(), tensor.numel());
  }
  require(out.good(), "io-error", "short write to " + path);
}

WeightSnapshot load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "missing-file", "cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  require(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0, "bad-format",
          path + ": not a weight snapshot");
  const std::uint32_t version = get_u32(in, path);
  require(version == kVersion, "bad-format",
          path + ": unsupported snapshot version " + std::to_string(version));
  WeightSnapshot snap;
  snap.epoch = static_cast<int>(get_u32(in, path));
  const std::uint32_t count = get_u32(in, path);
  snap.entries.reserve(count);
  for (std::uint32_t p = 0; p < count; ++p) {
    const std::uint32_t name_len = get_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    require(in.gcount() == static_cast<std::streamsize>(name_len), "bad-format",
            path + ": truncated snapshot");
    Shape s;
    s.n = static_cast<int>(get_u32(in, path));
    s.c = static_cast<int>(get_u32(in, path));
    s.h = static_cast<int>(get_u32(in, path));
    s.w = static_cast<int>(get_u32(in, path));
    Buffer<float> data(s.numel());
    for (long long i = 0; i < s.numel(); ++i) {
      const std::uint32_t bits = get_u32(in, path);
      float v;
      std::memcpy(&v, &bits, 4);
      data[i] = v;
    }
    snap.entries.emplace_back(std::move(name), Tensor<float>(s, std::move(data)));
  }
  return snap;
}

}  // namespace srdepth
