// SPDX-License-Identifier: Apache-2.0
#include "srdepth/image_io.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace srdepth {

namespace {

// Reads one whitespace-delimited token, skipping comment lines (# ...).
std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(in, rest);
  }
  return {};
}

int parse_int(const std::string& tok, const std::string& path, const char* what) {
  try {
    std::size_t pos = 0;
    int v = std::stoi(tok, &pos);
    require(pos == tok.size(), "bad-format", "");
    return v;
  } catch (...) {
    fail("bad-format", path + ": malformed " + what + " field '" + tok + "'");
  }
}

void swap4(char* p) {
  std::swap(p[0], p[3]);
  std::swap(p[1], p[2]);
}

}  // namespace

Tensor<float> read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "missing-file", "cannot open " + path);
  std::string magic = next_token(in);
  require(magic == "Pf", "bad-format", path + ": expected grayscale PFM magic 'Pf', got '" + magic + "'");
  const int w = parse_int(next_token(in), path, "width");
  const int h = parse_int(next_token(in), path, "height");
  require(w > 0 && h > 0, "bad-format", path + ": non-positive PFM dimensions");
  std::string scale_tok = next_token(in);
  double scale = 0.0;
  try {
    scale = std::stod(scale_tok);
  } catch (...) {
    fail("bad-format", path + ": malformed scale field '" + scale_tok + "'");
  }
  require(scale != 0.0, "bad-format", path + ": zero PFM scale field");
  in.get();  // single whitespace byte terminating the header
  const long long count = static_cast<long long>(w) * h;
  std::vector<char> raw(static_cast<std::size_t>(count) * 4);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  require(in.gcount() == static_cast<std::streamsize>(raw.size()), "bad-format",
          path + ": truncated PFM payload");
  const bool big_endian = scale > 0.0;
  if (big_endian)
    for (long long i = 0; i < count; ++i) swap4(raw.data() + i * 4);
  Buffer<float> data(count);
  // rows are stored bottom-up
  for (int y = 0; y < h; ++y) {
    const char* src = raw.data() + static_cast<long long>(h - 1 - y) * w * 4;
    std::memcpy(data.data() + static_cast<long long>(y) * w, src,
                static_cast<std::size_t>(w) * 4);
  }
  return Tensor<float>(Shape(1, 1, h, w), std::move(data));
}

void write_pfm(const std::string& path, const Tensor<float>& map) {
  const Shape s = map.shape();
  require(s.n == 1 && s.c == 1, "bad-shape", "PFM writer expects a 1x1xHxW map, got " + s.str());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "io-error", "cannot write " + path);
  out << "Pf\n" << s.w << " " << s.h << "\n-1.0\n";
  for (int y = s.h - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(map.data() + static_cast<long long>(y) * s.w),
              static_cast<std::streamsize>(s.w) * 4);
  require(out.good(), "io-error", "short write to " + path);
}

Tensor<float> read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "missing-file", "cannot open " + path);
  std::string magic = next_token(in);
  require(magic == "P6", "bad-format", path + ": expected binary PPM magic 'P6', got '" + magic + "'");
  const int w = parse_int(next_token(in), path, "width");
  const int h = parse_int(next_token(in), path, "height");
  const int maxval = parse_int(next_token(in), path, "maxval");
  require(w > 0 && h > 0, "bad-format", path + ": non-positive PPM dimensions");
  require(maxval == 255, "bad-format",
          path + ": only maxval 255 is supported, got " + std::to_string(maxval));
  in.get();
  const long long count = static_cast<long long>(w) * h * 3;
  std::vector<unsigned char> raw(static_cast<std::size_t>(count));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(in.gcount() == static_cast<std::streamsize>(raw.size()), "bad-format",
          path + ": truncated PPM payload");
  const Shape shape(1, 3, h, w);
  Buffer<float> data(shape.numel());
  long long i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x, i += 3)
      for (int c = 0; c < 3; ++c)
        data[shape.index(0, c, y, x)] = static_cast<float>(raw[static_cast<std::size_t>(i + c)]) / 255.0f;
  return Tensor<float>(shape, std::move(data));
}

void write_ppm(const std::string& path, const Tensor<float>& image) {
  const Shape s = image.shape();
  require(s.n == 1 && s.c == 3, "bad-shape", "PPM writer expects a 1x3xHxW image, got " + s.str());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "io-error", "cannot write " + path);
  out << "P6\n" << s.w << " " << s.h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(s.w) * s.h * 3);
  long long i = 0;
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x, i += 3)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(0, c, y, x), 0.0f, 1.0f);
        raw[static_cast<std::size_t>(i + c)] =
            static_cast<unsigned char>(v * 255.0f + 0.5f);
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  require(out.good(), "io-error", "short write to " + path);
}

}  // namespace srdepth
