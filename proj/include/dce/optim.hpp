#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dce/tensor.hpp"

namespace dce {

// Named, ordered collection of parameter tensors. Entries alias the model's
// storage, so updating a tensor here updates the model.
using NamedTensor = std::pair<std::string, Tensor>;
using ModelParams = std::vector<NamedTensor>;

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 4e-4;  // L2 coefficient folded into the gradient
};

struct AdamState {
  AdamOptions options;
  int64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;

  static AdamState init(const ModelParams& params, AdamOptions options);
};

// One Adam update over every parameter that requires grad. Frozen parameters
// (requires_grad == false) are skipped. A trainable parameter without a
// gradient buffer is an error.
void adam_step(ModelParams& params, AdamState& state);

}  // namespace dce
