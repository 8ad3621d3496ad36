#include "dce/autograd.hpp"

namespace dce {
namespace {

thread_local GradientTape* t_active = nullptr;

}  // namespace

TapeScope::TapeScope(GradientTape& tape) : previous_(t_active) { t_active = &tape; }
TapeScope::~TapeScope() { t_active = previous_; }

GradientTape* active_tape() { return t_active; }

GradientTape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  if (t_active == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->requires_grad()) return t_active;
  }
  return nullptr;
}

void backward(Tensor& loss, GradientTape& tape) {
  require(loss.shape() == Shape{1, 1, 1, 1}, ErrorKind::kShape,
          "backward needs a scalar loss, got shape " + loss.shape().str());
  if (!loss.requires_grad()) return;
  dispatch(loss.dtype(), [&](auto zero) {
    using T = decltype(zero);
    loss.grad_data<T>()[0] += T(1);
  });
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) (*it)();
}

}  // namespace dce
