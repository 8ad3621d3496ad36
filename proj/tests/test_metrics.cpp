#include <doctest.h>

#include <cmath>

#include "dce/metrics.hpp"
#include "dce/ops.hpp"
#include "oracles.hpp"

using namespace dce;

namespace {

FlowField constant(int64_t h, int64_t w, float u, float v) {
  std::vector<float> d(static_cast<size_t>(2 * h * w));
  std::fill(d.begin(), d.begin() + h * w, u);
  std::fill(d.begin() + h * w, d.end(), v);
  return {Tensor::from({1, 2, h, w}, d), h, w};
}

}  // namespace

TEST_CASE("aepe trivial cases") {
  const FlowField g = constant(5, 6, 1, -2);
  CHECK(aepe(g, g) == 0.0);
  CHECK(aepe(constant(5, 6, 4, 2), g) == 5.0);
  CHECK_THROWS_AS(aepe(g, g, Tensor::zeros({1, 1, 5, 6})), Error);
  CHECK_THROWS_AS(aepe(g, constant(5, 5, 0, 0)), Error);
}

TEST_CASE("pck trivial cases") {
  const FlowField g = constant(4, 4, 0, 0);
  CHECK(pck(g, g, {}, 0.5) == 100.0);
  const FlowField e = constant(4, 4, 2, 0);
  CHECK(pck(e, g, {}, 1.0) == 0.0);
  CHECK(pck(e, g, {}, 5.0) == 100.0);
  CHECK_THROWS_AS(pck(e, g, {}, 0.0), Error);
}

TEST_CASE("relative pck threshold") {
  // alpha = 0.05 on a 400 x 300 source gives 20 px.
  const FlowField g = constant(3, 3, 0, 0);
  CHECK(pck_relative(constant(3, 3, 20, 0), g, {}, 0.05, 300, 400) == 100.0);
  CHECK(pck_relative(constant(3, 3, 20.01f, 0), g, {}, 0.05, 300, 400) == 0.0);
  CHECK(pck_relative(g, g, {}, 0.05, 300, 400) == 100.0);
}

TEST_CASE("f1-all trivial cases") {
  const FlowField g = constant(2, 2, 100, 0);
  CHECK(f1_all(g, g) == 0.0);
  CHECK(f1_all(constant(2, 2, 104, 0), g) == 0.0);  // 4 px < 5% of 100
  CHECK(f1_all(constant(2, 2, 106, 0), g) == 100.0);
  const FlowField s = constant(2, 2, 10, 0);
  CHECK(f1_all(constant(2, 2, 12.9f, 0), s) == 0.0);  // under 3 px
}

TEST_CASE("dense metrics match counting oracles on random fields") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor p = oracle::random_tensor(rng, {2, 2, 7, 5}, Dtype::kF32, -10, 10);
    Tensor g = oracle::random_tensor(rng, {2, 2, 7, 5}, Dtype::kF32, -10, 10);
    std::vector<float> mv(70);
    for (auto& m : mv) m = rng.uniform() < 0.8 ? 1.0f : 0.0f;
    mv[0] = 1.0f;
    Tensor mask = Tensor::from({2, 1, 7, 5}, mv);
    const auto pv = p.to_vector(), gv = g.to_vector();
    std::vector<double> pu, pw, gu, gw;
    std::vector<int> mk;
    for (int64_t n = 0; n < 2; ++n)
      for (int64_t i = 0; i < 35; ++i) {
        pu.push_back(pv[n * 70 + i]);
        pw.push_back(pv[n * 70 + 35 + i]);
        gu.push_back(gv[n * 70 + i]);
        gw.push_back(gv[n * 70 + 35 + i]);
        mk.push_back(mv[n * 35 + i] != 0.0f);
      }
    const double delta = rng.uniform(1, 12);
    const auto ref = oracle::dense_metrics(pu, pw, gu, gw, mk, delta);
    const FlowField fp{p, 7, 5}, fg{g, 7, 5};
    CHECK(aepe(fp, fg, mask) == doctest::Approx(ref.aepe).epsilon(1e-12));
    CHECK(pck(fp, fg, mask, delta) == doctest::Approx(ref.pck).epsilon(1e-12));
    CHECK(f1_all(fp, fg, mask) == doctest::Approx(ref.f1).epsilon(1e-12));
  }
}

TEST_CASE("metric invariants") {
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor p = oracle::random_tensor(rng, {1, 2, 6, 6}, Dtype::kF64, -5, 5);
    Tensor g = oracle::random_tensor(rng, {1, 2, 6, 6}, Dtype::kF64, -5, 5);
    const FlowField fp{p, 6, 6}, fg{g, 6, 6};
    double prev = -1.0;
    for (double d = 0.25; d < 16; d *= 1.5) {
      const double v = pck(fp, fg, {}, d);
      CHECK(v >= prev);
      prev = v;
    }
    Tensor c = Tensor::full({1, 2, 6, 6}, rng.uniform(-50, 50), Dtype::kF64);
    CHECK(aepe({add(p, c), 6, 6}, {add(g, c), 6, 6}) == doctest::Approx(aepe(fp, fg)).epsilon(1e-9));
  }
  const FlowField g = constant(3, 3, 40, 0);
  const FlowField near = constant(3, 3, 42.9f, 0);
  CHECK(pck(near, g, {}, 2.999) == 100.0);
  CHECK(f1_all(near, g) == 0.0);
}

TEST_CASE("sparse evaluation") {
  const FlowField f = constant(8, 8, 2, -1);
  const std::vector<Correspondence> exact = {{1, 1, 3, 0}, {5.5, 2.25, 7.5, 1.25}};
  const MetricReport r = eval_sparse(f, exact);
  CHECK(r.aepe == 0.0);
  CHECK(r.pck.at("1") == 100.0);
  CHECK(r.count == 2);
  const MetricReport off = eval_sparse(f, {{4, 4, 9, 7}});
  CHECK(off.aepe == 5.0);
  CHECK_THROWS_AS(eval_sparse(f, {}), Error);
  CHECK_THROWS_AS(eval_sparse(f, {{9, 0, 0, 0}}), Error);

  Rng rng(40);
  Tensor w = oracle::random_tensor(rng, {1, 2, 6, 7}, Dtype::kF32, -3, 3);
  std::vector<Correspondence> pts;
  double sum = 0.0;
  for (int i = 0; i < 30; ++i) {
    Correspondence c{rng.uniform(0, 6), rng.uniform(0, 5), rng.uniform(0, 7), rng.uniform(0, 6)};
    pts.push_back(c);
    const double u = oracle::bilinear(w, 0, 0, c.tx, c.ty), v = oracle::bilinear(w, 0, 1, c.tx, c.ty);
    sum += std::hypot(c.tx + u - c.sx, c.ty + v - c.sy);
  }
  CHECK(eval_sparse({w, 6, 7}, pts).aepe == doctest::Approx(sum / 30).epsilon(1e-6));
}

TEST_CASE("report json layout") {
  MetricReport r;
  r.aepe = 1.5;
  r.pck = {{"1", 50.0}, {"5", 100.0}};
  r.f1_all = 0.0;
  r.count = 4;
  const std::string j = report_to_json(r);
  CHECK(j.find("\"aepe\": 1.5") != std::string::npos);
  CHECK(j.find("\"5\": 100.0") != std::string::npos);
  CHECK(j.find("\"count\": 4") != std::string::npos);
}
