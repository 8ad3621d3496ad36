#include <doctest.h>

#include <cmath>

#include "dce/autograd.hpp"
#include "dce/ops.hpp"
#include "dce/optim.hpp"
#include "grad_cases.hpp"

using namespace dce;

TEST_CASE("finite-difference gradient checks, three instances per op") {
  Rng rng(17);
  for (const auto& gc : gradient_cases()) {
    for (int k = 0; k < 3; ++k) {
      const double err = gc.run(rng);
      INFO(gc.name << " instance " << k << " rel err " << err);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("gradients accumulate over shared inputs") {
  Tensor x = Tensor::from({1, 1, 1, 2}, std::vector<double>{2, -1});
  x.set_requires_grad(true);
  GradientTape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum_all(add(mul(x, x), x));
  }
  backward(loss, tape);
  CHECK(x.grad().to_vector() == std::vector<double>{5, -1});
}

TEST_CASE("ops outside a tape record nothing") {
  Tensor x = Tensor::zeros({1, 1, 2, 2});
  x.set_requires_grad(true);
  GradientTape tape;
  Tensor y = relu(x);
  CHECK(tape.empty());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam matches a hand-computed step and skips frozen weights") {
  Tensor p = Tensor::from({1, 1, 1, 1}, std::vector<float>{1.0f});
  Tensor frozen = Tensor::from({1, 1, 1, 1}, std::vector<float>{3.0f});
  p.set_requires_grad(true);
  p.grad_data<float>()[0] = 0.5f;
  ModelParams params = {{"p", p}, {"frozen", frozen}};
  AdamOptions o;
  o.learning_rate = 0.1;
  o.weight_decay = 0.01;
  AdamState st = AdamState::init(params, o);
  adam_step(params, st);
  const double g = 0.5 + 0.01 * 1.0;
  const double m = 0.1 * g / (1 - 0.9), v = 0.001 * g * g / (1 - 0.999);
  CHECK(p.item() == doctest::Approx(1.0 - 0.1 * m / (std::sqrt(v) + 1e-8)).epsilon(1e-6));
  CHECK(frozen.item() == 3.0);

  Tensor q = Tensor::zeros({1, 1, 1, 1});
  q.set_requires_grad(true);
  ModelParams missing = {{"q", q}};
  AdamState st2 = AdamState::init(missing, o);
  CHECK_THROWS_AS(adam_step(missing, st2), Error);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  Tensor p = Tensor::from({1, 1, 1, 3}, std::vector<float>{1, -2, 3});
  p.set_requires_grad(true);
  for (auto& g : p.grad_data<float>()) g = 7.0f;
  ModelParams params = {{"p", p}};
  AdamOptions o;
  o.learning_rate = 0.0;
  AdamState st = AdamState::init(params, o);
  adam_step(params, st);
  CHECK(p.to_vector() == std::vector<double>{1, -2, 3});
}
