#include <doctest.h>

#include <cmath>

#include "dce/flow.hpp"
#include "dce/ops.hpp"
#include "oracles.hpp"

using namespace dce;

TEST_CASE("zero-flow warp is bit-identical") {
  Rng rng(1);
  Tensor f = oracle::random_tensor(rng, {2, 3, 6, 7}, Dtype::kF32);
  CHECK(warp(f, zero_flow(2, 6, 7)).to_vector() == f.to_vector());
}

TEST_CASE("integer translation warp is exact on the interior and zero outside") {
  Rng rng(2);
  Tensor f = oracle::random_tensor(rng, {1, 2, 8, 8}, Dtype::kF32);
  std::vector<float> v(2 * 64);
  for (int i = 0; i < 64; ++i) {
    v[i] = 2.0f;
    v[64 + i] = -1.0f;
  }
  const Tensor out = warp(f, {Tensor::from({1, 2, 8, 8}, v), 8, 8});
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x < 8; ++x) {
      const bool inside = x + 2 < 8 && y - 1 >= 0;
      CHECK(out.at(0, 1, y, x) == (inside ? f.at(0, 1, y - 1, x + 2) : 0.0));
    }
}

TEST_CASE("warp samples bilinearly in frame units") {
  Rng rng(3);
  Tensor f = oracle::random_tensor(rng, {1, 1, 5, 6}, Dtype::kF64);
  Tensor flow = oracle::random_tensor(rng, {1, 2, 5, 6}, Dtype::kF64, -2.0, 2.0);
  // Frame 4x finer than the grid: values are divided by 4 before sampling.
  const Tensor out = warp(f, {mul_scalar(flow, 4.0), 20, 24});
  for (int64_t y = 0; y < 5; ++y)
    for (int64_t x = 0; x < 6; ++x) {
      const double ref = oracle::bilinear(f, 0, 0, x + flow.at(0, 0, y, x), y + flow.at(0, 1, y, x));
      CHECK(out.at(0, 0, y, x) == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("map and flow conversions invert each other") {
  Rng rng(4);
  Tensor w = oracle::random_tensor(rng, {1, 2, 4, 6}, Dtype::kF64, -3, 3);
  const FlowField f{w, 4, 6};
  const CorrespondenceMap m = flow_to_map(f);
  // m = x + w(x) in [-1, 1] align-corners units.
  CHECK(m.values.at(0, 0, 2, 3) == doctest::Approx(2.0 * (3 + w.at(0, 0, 2, 3)) / 5.0 - 1.0));
  CHECK(m.values.at(0, 1, 2, 3) == doctest::Approx(2.0 * (2 + w.at(0, 1, 2, 3)) / 3.0 - 1.0));
  const FlowField back = map_to_flow(m, 4, 6);
  const auto a = back.values.to_vector(), b = w.to_vector();
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("flow resizing tracks the frame") {
  Tensor w = Tensor::full({1, 2, 4, 4}, 1.0, Dtype::kF32);
  const FlowField up = upsample_flow({w, 4, 4}, 8, 8, 2.0, 2.0);
  CHECK(up.frame_h == 8);
  CHECK(up.values.at(0, 0, 5, 5) == 2.0f);
  const FlowField same = upsample_flow({w, 16, 16}, 8, 8, 1.0, 1.0);
  CHECK(same.frame_w == 16);
  CHECK(same.ratio_x() == 2.0);
  const FlowField down = downsample_gt({Tensor::full({1, 2, 16, 16}, 4.0), 16, 16}, 4, 4, true);
  CHECK(down.frame_h == 4);
  CHECK(down.values.at(0, 1, 2, 2) == 1.0f);
  const FlowField kept = downsample_gt({Tensor::full({1, 2, 16, 16}, 4.0), 16, 16}, 4, 4, false);
  CHECK(kept.frame_h == 16);
  CHECK(kept.values.at(0, 1, 2, 2) == 4.0f);
  CHECK_THROWS_AS(downsample_gt({w, 4, 4}, 8, 8, true), Error);
}

TEST_CASE("sample_bilinear offsets shift only the corner indices") {
  Rng rng(6);
  Tensor img = oracle::random_tensor(rng, {1, 1, 10, 10}, Dtype::kF32);
  CHECK(sample_bilinear(img, 0, 0, 1.25, 2.5, 3, 4) == doctest::Approx(oracle::bilinear(img, 0, 0, 4.25, 6.5)));
  CHECK(sample_bilinear(img, 0, 0, -0.5, 2.0) == doctest::Approx(oracle::bilinear(img, 0, 0, -0.5, 2.0)));
}
