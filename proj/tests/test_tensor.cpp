// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "srdepth/ops.hpp"
#include "srdepth/rng.hpp"

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace srdepth;
using namespace srdepth::testing;

namespace {

Parameter<double> make_param(const std::string& name, const Shape& s, Rng& rng, double lo,
                             double hi) {
  Parameter<double> p(name, s);
  randomize(p, rng, lo, hi);
  return p;
}

// mean(out * fixed_random_weights): non-uniform upstream gradients.
Tensor<double> weighted_mean(const Tensor<double>& out, Rng& rng) {
  Tensor<double> w = random_tensor(out.shape(), rng, 0.3, 1.7);
  return mean(mul(out, w));
}

}  // namespace

TEST_CASE("shape bookkeeping and invariants") {
  Shape s(2, 3, 4, 5);
  CHECK(s.numel() == 120);
  CHECK(s.index(1, 2, 3, 4) == 119);
  CHECK_THROWS_AS(Tensor<float>::from(Shape(1, 1, 2, 2), {1.f, 2.f, 3.f}), Error);
}

TEST_CASE("conv2d zero input gives zero output") {
  Rng rng(7);
  Tensor<double> x = Tensor<double>::zeros(Shape(1, 1, 3, 3));
  Tensor<double> w = random_tensor(Shape(1, 1, 3, 3), rng, -1, 1);
  Tensor<double> b = Tensor<double>::zeros(Shape(1, 1, 1, 1));
  Tensor<double> y = conv2d(x, w, b, 1, 1);
  for (long long i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("conv2d identity kernel reproduces the input") {
  Rng rng(8);
  Tensor<double> x = random_tensor(Shape(1, 1, 4, 4), rng, -1, 1);
  Buffer<double> wv = Buffer<double>::Zero(9);
  wv[4] = 1.0;  // center tap
  Tensor<double> w(Shape(1, 1, 3, 3), std::move(wv));
  Tensor<double> y = conv2d(x, w, Tensor<double>::zeros(Shape(1, 1, 1, 1)), 1, 1);
  for (long long i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("conv2d all-ones kernel equals 3x3 neighborhood sums via oracle") {
  Rng rng(9);
  Tensor<double> x = random_tensor(Shape(1, 1, 3, 3), rng, -1, 1);
  Tensor<double> w = Tensor<double>::full(Shape(1, 1, 3, 3), 1.0);
  Tensor<double> b = Tensor<double>::zeros(Shape(1, 1, 1, 1));
  Tensor<double> y = conv2d(x, w, b, 1, 1);
  Tensor<double> ref = conv2d_oracle(x, w, b, 1, 1);
  for (long long i = 0; i < y.numel(); ++i) CHECK(y[i] == ref[i]);
  // the center output pixel is the sum of everything
  double total = 0;
  for (long long i = 0; i < x.numel(); ++i) total += x[i];
  CHECK(y.at(0, 0, 1, 1) == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("conv2d rejects channel mismatch with a shape error") {
  Tensor<double> x = Tensor<double>::zeros(Shape(1, 2, 4, 4));
  Tensor<double> w = Tensor<double>::zeros(Shape(1, 3, 3, 3));
  CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor<double>(), 1, 1),
                       doctest::Contains("channels"), Error);
}

TEST_CASE("conv2d and upsample match scalar oracles exactly on small inputs") {
  Rng rng(10);
  for (int h = 1; h <= 4; ++h)
    for (int w = 1; w <= 4; ++w) {
      Tensor<float> x = random_tensor_f(Shape(1, 2, h, w), rng, -1.f, 1.f);
      Tensor<float> kw = random_tensor_f(Shape(2, 2, 3, 3), rng, -1.f, 1.f);
      Tensor<float> kb = random_tensor_f(Shape(1, 2, 1, 1), rng, -1.f, 1.f);
      for (int stride : {1, 2}) {
        Tensor<float> y = conv2d(x, kw, kb, stride, 1);
        Tensor<float> ref = conv2d_oracle(x, kw, kb, stride, 1);
        REQUIRE(y.shape() == ref.shape());
        for (long long i = 0; i < y.numel(); ++i) CHECK(y[i] == ref[i]);
      }
      for (int factor : {1, 2, 3}) {
        Tensor<float> up = upsample_bilinear(x, factor);
        Tensor<float> ref = upsample_oracle(x, factor);
        REQUIRE(up.shape() == ref.shape());
        for (long long i = 0; i < up.numel(); ++i) CHECK(up[i] == ref[i]);
      }
    }
}

TEST_CASE("upsample keeps constants and factor 1 is the identity") {
  Tensor<double> c = Tensor<double>::full(Shape(1, 1, 2, 3), 0.7);
  Tensor<double> up = upsample_bilinear(c, 3);
  CHECK(up.shape() == Shape(1, 1, 6, 9));
  for (long long i = 0; i < up.numel(); ++i) CHECK(up[i] == 0.7);
  Rng rng(3);
  Tensor<double> x = random_tensor(Shape(1, 2, 3, 3), rng, -1, 1);
  Tensor<double> same = upsample_bilinear(x, 1);
  for (long long i = 0; i < x.numel(); ++i) CHECK(same[i] == x[i]);
  CHECK_THROWS_AS(upsample_bilinear(x, 0), Error);
}

TEST_CASE("upsample of the 2x2 ramp matches the scalar bilinear oracle") {
  Tensor<double> x = Tensor<double>::from(Shape(1, 1, 2, 2), {0, 1, 2, 3});
  Tensor<double> up = upsample_bilinear(x, 2);
  Tensor<double> ref = upsample_oracle(x, 2);
  for (long long i = 0; i < up.numel(); ++i) CHECK(up[i] == ref[i]);
  // corners sample at clamped (-0.25) -> original corner values survive
  CHECK(up.at(0, 0, 0, 0) == 0.0);
  CHECK(up.at(0, 0, 3, 3) == 3.0);
}

TEST_CASE("grid_sample identity grid is the identity with full validity") {
  Rng rng(4);
  Tensor<double> x = random_tensor(Shape(1, 3, 5, 6), rng, -1, 1);
  auto [gx, gy] = coord_maps<double>(1, 5, 6);
  Sampled<double> s = grid_sample(x, concat_channels(gx, gy));
  for (long long i = 0; i < x.numel(); ++i) CHECK(s.values[i] == x[i]);
  for (long long i = 0; i < s.mask.numel(); ++i) CHECK(s.mask[i] == 1.0);
}

TEST_CASE("grid_sample outside the source yields zeros with zero mask") {
  Rng rng(5);
  Tensor<double> x = random_tensor(Shape(1, 1, 4, 4), rng, 1, 2);
  Tensor<double> grid = concat_channels(Tensor<double>::full(Shape(1, 1, 2, 2), -7.0),
                                        Tensor<double>::full(Shape(1, 1, 2, 2), 9.0));
  Sampled<double> s = grid_sample(x, grid);
  for (long long i = 0; i < s.values.numel(); ++i) CHECK(s.values[i] == 0.0);
  for (long long i = 0; i < s.mask.numel(); ++i) CHECK(s.mask[i] == 0.0);
}

TEST_CASE("grid_sample at (0.5, 0.5) of the 2x2 ramp is the 4-neighbor average") {
  Tensor<double> x = Tensor<double>::from(Shape(1, 1, 2, 2), {0, 1, 2, 3});
  Tensor<double> grid = concat_channels(Tensor<double>::full(Shape(1, 1, 1, 1), 0.5),
                                        Tensor<double>::full(Shape(1, 1, 1, 1), 0.5));
  Sampled<double> s = grid_sample(x, grid);
  CHECK(s.values.value() == doctest::Approx((0.0 + 1.0 + 2.0 + 3.0) / 4.0).epsilon(1e-12));
  CHECK(s.mask.value() == 1.0);
  CHECK(s.values.value() == bilinear_at(x, 0, 0, 0.5, 0.5));
}

TEST_CASE("grid_sample rejects grids without 2 channels") {
  Tensor<double> x = Tensor<double>::zeros(Shape(1, 1, 2, 2));
  Tensor<double> bad = Tensor<double>::zeros(Shape(1, 3, 2, 2));
  CHECK_THROWS_AS(grid_sample(x, bad), Error);
}

TEST_CASE("elementwise trivials") {
  Tensor<double> zero = Tensor<double>::scalar(0.0);
  CHECK(sigmoid(zero).value() == 0.5);
  Rng rng(11);
  Tensor<double> a = random_tensor(Shape(1, 2, 2, 2), rng, -1, 1);
  Tensor<double> b = random_tensor(Shape(1, 3, 2, 2), rng, -1, 1);
  Tensor<double> cat = concat_channels(a, b);
  CHECK(cat.shape() == Shape(1, 5, 2, 2));
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) CHECK(cat.at(0, c, y, x) == a.at(0, c, y, x));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) CHECK(cat.at(0, c + 2, y, x) == b.at(0, c, y, x));
}

TEST_CASE("spatial min over a set equals the scalar min loop") {
  Rng rng(12);
  Tensor<double> a = random_tensor(Shape(1, 1, 4, 4), rng, -1, 1);
  Tensor<double> b = random_tensor(Shape(1, 1, 4, 4), rng, -1, 1);
  Tensor<double> m = spatial_min_over_set(std::vector<Tensor<double>>{a, b});
  for (long long i = 0; i < m.numel(); ++i) CHECK(m[i] == std::min(a[i], b[i]));
  CHECK_THROWS_AS(min_over_set(std::vector<Tensor<double>>{}), Error);
}

TEST_CASE("broadcasting with gradient reduction over broadcast dims") {
  Rng rng(13);
  Parameter<double> bias("bias", Shape(1, 3, 1, 1));
  randomize(bias, rng, -1, 1);
  Tensor<double> x = random_tensor(Shape(2, 3, 4, 4), rng, -1, 1);
  Tape<double> tape;
  Tensor<double> out = add(x, tape.leaf(bias));
  CHECK(out.shape() == Shape(2, 3, 4, 4));
  tape.backward(mean(out));
  // each bias channel feeds 2*4*4 of 96 outputs
  for (int c = 0; c < 3; ++c)
    CHECK(bias.grad[c] == doctest::Approx(32.0 / 96.0).epsilon(1e-12));
  CHECK_THROWS_AS(add(Tensor<double>::zeros(Shape(1, 2, 2, 2)),
                      Tensor<double>::zeros(Shape(1, 3, 2, 2))),
                  Error);
}

TEST_CASE("backward of mean gives 1/N on every entry") {
  Rng rng(14);
  Parameter<double> p("p", Shape(1, 2, 3, 4));
  randomize(p, rng, -2, 2);
  Tape<double> tape;
  tape.backward(mean(tape.leaf(p)));
  for (Eigen::Index i = 0; i < p.grad.size(); ++i)
    CHECK(p.grad[i] == doctest::Approx(1.0 / 24.0).epsilon(1e-12));
}

TEST_CASE("backward of mean of squares gives 2v/N") {
  Rng rng(15);
  Parameter<double> p("p", Shape(1, 1, 2, 3));
  randomize(p, rng, -2, 2);
  Tape<double> tape;
  Tensor<double> leaf = tape.leaf(p);
  tape.backward(mean(mul(leaf, leaf)));
  for (Eigen::Index i = 0; i < p.grad.size(); ++i)
    CHECK(p.grad[i] == doctest::Approx(2.0 * p.value[i] / 6.0).epsilon(1e-12));
}

TEST_CASE("backward replay without re-recording is idempotent") {
  Rng rng(16);
  Parameter<double> p("p", Shape(1, 1, 2, 2));
  randomize(p, rng, 0.5, 1.5);
  Tape<double> tape;
  Tensor<double> leaf = tape.leaf(p);
  Tensor<double> loss = mean(mul(sigmoid(leaf), leaf));
  tape.backward(loss);
  Buffer<double> first = p.grad;
  tape.backward(loss);
  for (Eigen::Index i = 0; i < first.size(); ++i) CHECK(p.grad[i] == first[i]);
}

TEST_CASE("backward rejects non-scalar losses") {
  Parameter<double> p("p", Shape(1, 1, 2, 2));
  Tape<double> tape;
  Tensor<double> leaf = tape.leaf(p);
  CHECK_THROWS_AS(tape.backward(leaf), Error);
}

TEST_CASE("parameter reuse accumulates through a single leaf") {
  Parameter<double> p("p", Shape(1, 1, 1, 1));
  p.value[0] = 3.0;
  Tape<double> tape;
  Tensor<double> a = tape.leaf(p);
  Tensor<double> b = tape.leaf(p);  // same leaf node
  tape.backward(mean(add(a, b)));
  CHECK(p.grad[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("finite differences confirm every elementwise gradient") {
  Rng rng(17);
  struct Case {
    const char* name;
    double lo, hi;
    std::function<Tensor<double>(const Tensor<double>&)> op;
  };
  const std::vector<Case> cases = {
      {"abs+", 0.2, 1.5, [](const Tensor<double>& t) { return abs(t); }},
      {"abs-", -1.5, -0.2, [](const Tensor<double>& t) { return abs(t); }},
      {"exp", -1, 1, [](const Tensor<double>& t) { return exp(t); }},
      {"log", 0.5, 2.0, [](const Tensor<double>& t) { return log(t); }},
      {"sqrt", 0.5, 2.0, [](const Tensor<double>& t) { return sqrt(t); }},
      {"sin", -2, 2, [](const Tensor<double>& t) { return sin(t); }},
      {"cos", -2, 2, [](const Tensor<double>& t) { return cos(t); }},
      {"sigmoid", -2, 2, [](const Tensor<double>& t) { return sigmoid(t); }},
      {"elu+", 0.2, 1.5, [](const Tensor<double>& t) { return elu(t); }},
      {"elu-", -1.5, -0.2, [](const Tensor<double>& t) { return elu(t); }},
      {"clamp-in", 0.3, 0.7, [](const Tensor<double>& t) { return clamp(t, 0.2, 0.8); }},
      {"clamp-out", 0.9, 1.4, [](const Tensor<double>& t) { return clamp(t, 0.2, 0.8); }},
      {"scale", -1, 1, [](const Tensor<double>& t) { return scale(t, -2.5); }},
      {"offset", -1, 1, [](const Tensor<double>& t) { return offset(t, 0.3); }},
  };
  for (const Case& c : cases) {
    CAPTURE(c.name);
    Parameter<double> p("x", Shape(1, 2, 3, 3));
    randomize(p, rng, c.lo, c.hi);
    Rng wrng(101);
    auto check = gradcheck(
        [&](Tape<double>& tape) {
          Rng local(101);
          return weighted_mean(c.op(tape.leaf(p)), local);
        },
        {&p});
    CHECK_MESSAGE(check.pass(), c.name, " max_err=", check.max_err);
  }
}

TEST_CASE("finite differences confirm binary op gradients incl. broadcast") {
  Rng rng(18);
  Parameter<double> a("a", Shape(1, 2, 3, 3));
  Parameter<double> b("b", Shape(1, 2, 3, 3));
  Parameter<double> s("s", Shape(1, 2, 1, 1));  // broadcast operand
  randomize(a, rng, 0.5, 1.5);
  randomize(b, rng, 0.7, 2.0);
  randomize(s, rng, 0.5, 1.5);
  auto run = [&](const char* name, const LossFn& fn) {
    auto check = gradcheck(fn, {&a, &b, &s});
    CHECK_MESSAGE(check.pass(), name, " max_err=", check.max_err, " worst=",
                  check.worst_param);
  };
  run("add", [&](Tape<double>& t) {
    Rng local(55);
    return weighted_mean(add(t.leaf(a), t.leaf(b)), local);
  });
  run("sub", [&](Tape<double>& t) {
    Rng local(55);
    return weighted_mean(sub(t.leaf(a), t.leaf(b)), local);
  });
  run("mul", [&](Tape<double>& t) {
    Rng local(55);
    return weighted_mean(mul(t.leaf(a), t.leaf(b)), local);
  });
  run("div", [&](Tape<double>& t) {
    Rng local(55);
    return weighted_mean(div(t.leaf(a), t.leaf(b)), local);
  });
  run("mul-broadcast", [&](Tape<double>& t) {
    Rng local(55);
    return weighted_mean(mul(t.leaf(a), t.leaf(s)), local);
  });
  run("div-broadcast", [&](Tape<double>& t) {
    Rng local(55);
    return weighted_mean(div(t.leaf(a), t.leaf(s)), local);
  });
}

TEST_CASE("finite differences confirm structural op gradients") {
  Rng rng(19);
  Parameter<double> a("a", Shape(1, 2, 4, 4));
  Parameter<double> b("b", Shape(1, 3, 4, 4));
  randomize(a, rng, -1, 1);
  randomize(b, rng, -1, 1);
  auto check_concat = gradcheck(
      [&](Tape<double>& t) {
        Rng local(66);
        return weighted_mean(concat_channels(t.leaf(a), t.leaf(b)), local);
      },
      {&a, &b});
  CHECK_MESSAGE(check_concat.pass(), "concat max_err=", check_concat.max_err);
  auto check_slice = gradcheck(
      [&](Tape<double>& t) {
        Rng local(67);
        return weighted_mean(slice_channels(t.leaf(b), 1, 3), local);
      },
      {&b});
  CHECK_MESSAGE(check_slice.pass(), "slice max_err=", check_slice.max_err);
  auto check_spatial_mean = gradcheck(
      [&](Tape<double>& t) {
        Rng local(68);
        return weighted_mean(spatial_mean(t.leaf(a)), local);
      },
      {&a});
  CHECK_MESSAGE(check_spatial_mean.pass(), "spatial_mean max_err=", check_spatial_mean.max_err);
}

TEST_CASE("finite differences confirm conv2d gradients") {
  Rng rng(20);
  Parameter<double> x("x", Shape(1, 3, 6, 6));
  Parameter<double> w("w", Shape(2, 3, 3, 3));
  Parameter<double> b("b", Shape(1, 2, 1, 1));
  randomize(x, rng, -1, 1);
  randomize(w, rng, -0.6, 0.6);
  randomize(b, rng, -0.3, 0.3);
  for (int stride : {1, 2}) {
    auto check = gradcheck(
        [&](Tape<double>& t) {
          Rng local(77);
          return weighted_mean(conv2d(t.leaf(x), t.leaf(w), t.leaf(b), stride, 1), local);
        },
        {&x, &w, &b});
    CHECK_MESSAGE(check.pass(), "conv stride=", stride, " max_err=", check.max_err,
                  " worst=", check.worst_param);
  }
}

TEST_CASE("finite differences confirm upsample gradients") {
  Rng rng(21);
  Parameter<double> x("x", Shape(1, 2, 3, 4));
  randomize(x, rng, -1, 1);
  auto check = gradcheck(
      [&](Tape<double>& t) {
        Rng local(78);
        return weighted_mean(upsample_bilinear(t.leaf(x), 2), local);
      },
      {&x});
  CHECK_MESSAGE(check.pass(), "upsample max_err=", check.max_err);
}

TEST_CASE("finite differences confirm grid_sample gradients in input and grid") {
  Rng rng(22);
  Parameter<double> x("x", Shape(1, 2, 6, 6));
  Parameter<double> g("g", Shape(1, 2, 4, 4));
  randomize(x, rng, -1, 1);
  // fractional parts in [0.2, 0.8], at least one pixel from the border:
  // keeps finite differencing away from cell and validity boundaries
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 4; ++xx) {
      g.value[Shape(1, 2, 4, 4).index(0, 0, y, xx)] = 1 + (xx % 3) + rng.uniform(0.2, 0.8);
      g.value[Shape(1, 2, 4, 4).index(0, 1, y, xx)] = 1 + (y % 3) + rng.uniform(0.2, 0.8);
    }
  auto check = gradcheck(
      [&](Tape<double>& t) {
        Rng local(79);
        return weighted_mean(grid_sample(t.leaf(x), t.leaf(g)).values, local);
      },
      {&x, &g});
  CHECK_MESSAGE(check.pass(), "grid_sample max_err=", check.max_err, " worst=",
                check.worst_param);
}

TEST_CASE("finite differences confirm min_over_set subgradients") {
  Rng rng(23);
  Parameter<double> a("a", Shape(1, 1, 4, 4));
  Parameter<double> b("b", Shape(1, 1, 4, 4));
  randomize(a, rng, 0, 1);
  // keep candidates separated by more than the FD step everywhere
  for (Eigen::Index i = 0; i < b.value.size(); ++i)
    b.value[i] = a.value[i] + (rng.uniform() < 0.5 ? 1 : -1) * rng.uniform(0.05, 0.4);
  auto check = gradcheck(
      [&](Tape<double>& t) {
        Rng local(80);
        return weighted_mean(
            spatial_min_over_set(std::vector<Tensor<double>>{t.leaf(a), t.leaf(b)}), local);
      },
      {&a, &b});
  CHECK_MESSAGE(check.pass(), "min max_err=", check.max_err);
}

TEST_CASE("operations are deterministic given identical inputs") {
  Rng rng1(42);
  Rng rng2(42);
  Tensor<double> a1 = random_tensor(Shape(2, 3, 5, 5), rng1, -1, 1);
  Tensor<double> a2 = random_tensor(Shape(2, 3, 5, 5), rng2, -1, 1);
  for (long long i = 0; i < a1.numel(); ++i) REQUIRE(a1[i] == a2[i]);
  Tensor<double> r1 = sigmoid(mul(a1, exp(scale(a1, 0.5))));
  Tensor<double> r2 = sigmoid(mul(a2, exp(scale(a2, 0.5))));
  for (long long i = 0; i < r1.numel(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("decimate keeps the top-left sample of each block") {
  Tensor<double> x = Tensor<double>::from(Shape(1, 1, 2, 4), {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor<double> d = decimate(x, 2);
  CHECK(d.shape() == Shape(1, 1, 1, 2));
  CHECK(d[0] == 1.0);
  CHECK(d[1] == 3.0);
}

TEST_CASE("validation pass flags non-finite division results") {
  Tensor<double> num = Tensor<double>::scalar(1.0);
  Tensor<double> den = Tensor<double>::scalar(0.0);
  Tensor<double> bad = div(num, den);
  CHECK_THROWS_AS(validate_finite(bad, "division"), Error);
}
