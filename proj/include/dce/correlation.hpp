#pragma once

#include <cstdint>

#include "dce/tensor.hpp"

namespace dce {

// All-pairs similarity. volume has shape (N, Hs*Ws, H, W): channel index
// y' * W + x' addresses the source location, the spatial position is the
// target location.
struct GlobalCostVolume {
  Tensor volume;
  int64_t source_h = 0;
  int64_t source_w = 0;
};

// Similarity inside an l-infinity ball of radius `radius`. Channel
// (dy + R) * (2R + 1) + (dx + R) holds displacement (dx, dy).
struct LocalCostVolume {
  Tensor volume;
  int radius = 0;

  int64_t center_channel() const { return ((2 * radius + 1) * (2 * radius + 1) - 1) / 2; }
};

GlobalCostVolume global_correlation(const Tensor& target, const Tensor& source);
// Same values written into a preallocated (N, H*W, H, W) tensor; not recorded on a tape.
void global_correlation_into(const Tensor& target, const Tensor& source, Tensor& out);

// Source accesses outside the image read as zero.
LocalCostVolume local_correlation(const Tensor& target, const Tensor& source, int radius);

enum class CostNormOrder {
  kNormalizeThenRelu,  // channel-wise L2 normalization, then ReLU
  kReluThenNormalize,
};

GlobalCostVolume normalize_cost_volume(const GlobalCostVolume& cost,
                                       CostNormOrder order = CostNormOrder::kNormalizeThenRelu);

// Soft mutual nearest-neighbour filtering of a non-negative volume:
//   out(s, t) = C(s, t) * C(s, t) / max_t' C(s, t') * C(s, t) / max_s' C(s', t)
// A ratio whose max is zero is taken as zero.
GlobalCostVolume cyclic_consistency_filter(const GlobalCostVolume& cost);

// Analytic multiply-add counts.
int64_t global_correlation_macs(int64_t h, int64_t w, int64_t channels);
int64_t local_correlation_macs(int64_t h, int64_t w, int radius, int64_t channels);

}  // namespace dce
