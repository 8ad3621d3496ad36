#include "dce/optim.hpp"

#include <cmath>

namespace dce {

AdamState AdamState::init(const ModelParams& params, AdamOptions options) {
  AdamState state;
  state.options = options;
  for (const auto& [name, p] : params) {
    state.first_moment.push_back(Tensor::zeros(p.shape(), p.dtype()));
    state.second_moment.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
  return state;
}

void adam_step(ModelParams& params, AdamState& state) {
  require(params.size() == state.first_moment.size() && params.size() == state.second_moment.size(),
          ErrorKind::kShape, "adam_step: optimizer state has " + std::to_string(state.first_moment.size()) +
                                 " entries for " + std::to_string(params.size()) + " parameters");
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    require(state.first_moment[i].shape() == p.shape(), ErrorKind::kShape,
            "adam_step: moment shape mismatch for " + name);
    if (p.requires_grad()) {
      require(p.has_grad(), ErrorKind::kValue, "adam_step: missing gradient for parameter " + name);
    }
  }
  const auto& o = state.options;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    if (!p.requires_grad()) continue;
    dispatch(p.dtype(), [&](auto zero) {
      using T = decltype(zero);
      auto theta = p.mutable_data<T>();
      auto g = p.grad_data<T>();
      auto m = state.first_moment[i].mutable_data<T>();
      auto v = state.second_moment[i].mutable_data<T>();
      for (size_t k = 0; k < theta.size(); ++k) {
        const double grad = static_cast<double>(g[k]) + o.weight_decay * theta[k];
        const double mk = o.beta1 * m[k] + (1.0 - o.beta1) * grad;
        const double vk = o.beta2 * v[k] + (1.0 - o.beta2) * grad * grad;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        const double update = o.learning_rate * (mk / bc1) / (std::sqrt(vk / bc2) + o.eps);
        theta[k] = static_cast<T>(theta[k] - update);
      }
    });
  }
}

}  // namespace dce
