#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "dce/tensor.hpp"

namespace dce {

// Ordered record of differentiable ops executed while the tape is active.
// Entries are replayed newest-first by backward(). A tape belongs to one
// thread; activate it with TapeScope.
class GradientTape {
 public:
  using Entry = std::function<void()>;

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

 private:
  friend void backward(Tensor& loss, GradientTape& tape);
  std::vector<Entry> entries_;
};

// Makes `tape` the active tape of the calling thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(GradientTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradientTape* previous_;
};

GradientTape* active_tape();

// Tape to record onto when any input needs a gradient, else nullptr.
GradientTape* recording_tape(std::initializer_list<const Tensor*> inputs);

// Seeds d(loss)/d(loss) = 1 and replays the tape. The loss must be 1x1x1x1.
// A loss that does not require grad makes this a no-op.
void backward(Tensor& loss, GradientTape& tape);

}  // namespace dce
