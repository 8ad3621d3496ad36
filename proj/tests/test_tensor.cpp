#include <doctest.h>

#include <cmath>

#include "dce/autograd.hpp"
#include "dce/ops.hpp"
#include "dce/parallel.hpp"
#include "oracles.hpp"

using namespace dce;

TEST_CASE("tensor factories and accessors") {
  Tensor t = Tensor::from({1, 2, 2, 3}, std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  CHECK(t.dtype() == Dtype::kF32);
  CHECK(t.numel() == 12);
  CHECK(t.at(0, 1, 0, 2) == 8.0);
  CHECK(Tensor::scalar(2.5, Dtype::kF64).item() == 2.5);
  CHECK_THROWS_AS(t.item(), Error);
  CHECK_THROWS_AS(Tensor::from({1, 1, 1, 2}, std::vector<float>{1}), Error);
  CHECK_THROWS_AS(t.data<double>(), Error);

  Tensor c = t.clone();
  CHECK_FALSE(c.same_storage(t));
  CHECK(c.to_vector() == t.to_vector());
  CHECK(t.to(Dtype::kF64).to(Dtype::kF32).to_vector() == t.to_vector());
}

TEST_CASE("conv2d matches a direct loop for stride, padding and dilation") {
  Rng rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    const int stride = 1 + trial % 2, pad = trial % 3, dil = 1 + (trial / 3);
    Tensor in = oracle::random_tensor(rng, {2, 3, 7, 6}, Dtype::kF64);
    Tensor w = oracle::random_tensor(rng, {4, 3, 3, 3}, Dtype::kF64);
    Tensor b = oracle::random_tensor(rng, {1, 4, 1, 1}, Dtype::kF64);
    Tensor out = conv2d(in, w, b, {stride, pad, dil});
    const Shape s = out.shape();
    CHECK(s.h == (7 + 2 * pad - dil * 2 - 1) / stride + 1);
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t o = 0; o < s.c; ++o)
        for (int64_t y = 0; y < s.h; ++y)
          for (int64_t x = 0; x < s.w; ++x) {
            const double ref = oracle::conv2d_at(in, w, n, o, y, x, stride, pad, dil) + b.at(0, o, 0, 0);
            CHECK(out.at(n, o, y, x) == doctest::Approx(ref).epsilon(1e-12));
          }
  }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  // <conv(x), y> == <x, conv_t(y)> for the same weight and geometry.
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = oracle::random_tensor(rng, {1, 3, 8, 8}, Dtype::kF64);
    Tensor w = oracle::random_tensor(rng, {2, 3, 4, 4}, Dtype::kF64);
    Tensor y = conv2d(x, w, {}, {2, 1, 1});
    Tensor r = oracle::random_tensor(rng, y.shape(), Dtype::kF64);
    // conv_transpose2d takes (in_c, out_c, k, k): reading r (2 channels) back to 3.
    Tensor xt = conv_transpose2d(r, w, {}, 2, 1);
    REQUIRE(xt.shape() == x.shape());
    double lhs = 0.0, rhs = 0.0;
    const auto yv = y.to_vector(), rv = r.to_vector(), xv = x.to_vector(), xtv = xt.to_vector();
    for (size_t i = 0; i < yv.size(); ++i) lhs += yv[i] * rv[i];
    for (size_t i = 0; i < xv.size(); ++i) rhs += xv[i] * xtv[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("transposed conv with kernel 4, stride 2, pad 1 doubles the extent") {
  Tensor x = Tensor::zeros({1, 5, 6, 7});
  Tensor w = Tensor::zeros({5, 2, 4, 4});
  CHECK(conv_transpose2d(x, w, {}, 2, 1).shape() == Shape{1, 2, 12, 14});
}

TEST_CASE("batch norm normalizes in training and uses running stats in eval") {
  Rng rng(9);
  Tensor x = oracle::random_tensor(rng, {4, 2, 3, 3}, Dtype::kF64, -2.0, 5.0);
  Tensor scale = Tensor::full({1, 2, 1, 1}, 1.0, Dtype::kF64);
  Tensor shift = Tensor::zeros({1, 2, 1, 1}, Dtype::kF64);
  RunningStats stats = RunningStats::init(2, Dtype::kF64);
  Tensor y = batch_norm(x, scale, shift, stats, true);
  for (int64_t c = 0; c < 2; ++c) {
    double mean = 0.0, sq = 0.0, xmean = 0.0, xsq = 0.0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 9; ++i) {
        const double v = y.at(n, c, i / 3, i % 3), u = x.at(n, c, i / 3, i % 3);
        mean += v;
        sq += v * v;
        xmean += u;
        xsq += u * u;
      }
    CHECK(mean / 36 == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(sq / 36 == doctest::Approx(1.0).epsilon(1e-3));
    xmean /= 36;
    const double unbiased = (xsq - 36 * xmean * xmean) / 35;
    CHECK(stats.mean.at(0, c, 0, 0) == doctest::Approx(0.1 * xmean).epsilon(1e-12));
    CHECK(stats.var.at(0, c, 0, 0) == doctest::Approx(0.9 + 0.1 * unbiased).epsilon(1e-12));
  }
  Tensor e = batch_norm(x, scale, shift, stats, false);
  const double m = stats.mean.at(0, 1, 0, 0), v = stats.var.at(0, 1, 0, 0);
  CHECK(e.at(2, 1, 1, 1) == doctest::Approx((x.at(2, 1, 1, 1) - m) / std::sqrt(v + 1e-5)).epsilon(1e-12));
}

TEST_CASE("bilinear resize keeps identical extents bit-exact and uses align corners") {
  Rng rng(2);
  Tensor x = oracle::random_tensor(rng, {1, 2, 5, 4}, Dtype::kF32);
  CHECK(bilinear_resize(x, 5, 4).to_vector() == x.to_vector());
  Tensor up = bilinear_resize(x, 9, 7);
  CHECK(up.at(0, 1, 0, 0) == x.at(0, 1, 0, 0));
  CHECK(up.at(0, 1, 8, 6) == x.at(0, 1, 4, 3));
  // Output row 2 of 9 sits at input row 1, column 3 of 7 at input column 1.5.
  CHECK(up.at(0, 0, 2, 3) == doctest::Approx(0.5 * (x.at(0, 0, 1, 1) + x.at(0, 0, 1, 2))).epsilon(1e-6));
}

TEST_CASE("l2 normalization divides by max(eps, norm)") {
  Tensor x = Tensor::from({1, 2, 1, 2}, std::vector<double>{3, 0, 4, 0});
  Tensor y = l2_normalize_channels(x, 1e-6);
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx(0.6));
  CHECK(y.at(0, 1, 0, 0) == doctest::Approx(0.8));
  CHECK(y.at(0, 0, 0, 1) == 0.0);
}

TEST_CASE("endpoint error map and reductions") {
  Tensor p = Tensor::from({1, 2, 1, 2}, std::vector<double>{3, 0, 4, 0});
  Tensor g = Tensor::zeros({1, 2, 1, 2}, Dtype::kF64);
  Tensor e = endpoint_error_map(p, g, 0.0);
  CHECK(e.at(0, 0, 0, 0) == 5.0);
  CHECK(e.at(0, 0, 0, 1) == 0.0);
  CHECK(sum_all(e).item() == 5.0);
  CHECK(mul_scalar(e, 2.0).at(0, 0, 0, 0) == 10.0);
}

TEST_CASE("concat and slice round-trip") {
  Rng rng(4);
  Tensor a = oracle::random_tensor(rng, {2, 1, 3, 3}, Dtype::kF32);
  Tensor b = oracle::random_tensor(rng, {2, 2, 3, 3}, Dtype::kF32);
  Tensor c = concat_channels({a, b});
  CHECK(c.shape() == Shape{2, 3, 3, 3});
  CHECK(c.at(1, 2, 2, 1) == b.at(1, 1, 2, 1));
  Tensor d = concat_batch({a, a});
  CHECK(slice_batch(d, 2, 2).to_vector() == a.to_vector());
}

TEST_CASE("forward ops are bit-identical across worker counts") {
  Rng rng(11);
  Tensor x = oracle::random_tensor(rng, {3, 4, 9, 9}, Dtype::kF32);
  Tensor w = oracle::random_tensor(rng, {5, 4, 3, 3}, Dtype::kF32);
  set_worker_count(1);
  const auto a = conv2d(x, w, {}, {1, 1, 1}).to_vector();
  set_worker_count(4);
  const auto b = conv2d(x, w, {}, {1, 1, 1}).to_vector();
  set_worker_count(0);
  CHECK(a == b);
}

TEST_CASE("backward on a loss that does not require grad is a no-op") {
  GradientTape tape;
  Tensor loss = Tensor::scalar(1.0);
  CHECK_NOTHROW(backward(loss, tape));
  Tensor big = Tensor::zeros({1, 1, 1, 2});
  big.set_requires_grad(true);
  CHECK_THROWS_AS(backward(big, tape), Error);
}
