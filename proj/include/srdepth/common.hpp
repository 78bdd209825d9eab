// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace srdepth {

// Error with a short machine-parseable class tag. The CLI prints failures as
// "error: <code>: <message>" and exits nonzero; library code throws these.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool ok, const std::string& code, const std::string& message) {
  if (!ok) fail(code, message);
}

// Dense rank-4 extents in (batch, channel, height, width) order. Every
// image-like quantity in the library is carried at this rank; vectors and
// scalars use singleton dims.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  constexpr Shape() = default;
  constexpr Shape(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {}

  long long numel() const {
    return static_cast<long long>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) +
           "x" + std::to_string(w);
  }

  long long index(int in, int ic, int iy, int ix) const {
    return ((static_cast<long long>(in) * c + ic) * h + iy) * w + ix;
  }
};

inline void check_nonnegative_shape(const Shape& s) {
  require(s.n >= 0 && s.c >= 0 && s.h >= 0 && s.w >= 0, "bad-shape",
          "negative extent in shape " + s.str());
}

}  // namespace srdepth
