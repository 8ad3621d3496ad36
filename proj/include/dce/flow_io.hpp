#pragma once

#include <filesystem>

#include "dce/tensor.hpp"

namespace dce {

// Middlebury .flo: float32 magic 202021.25, int32 width, int32 height, then
// row-major interleaved float32 (u, v), all little-endian.
inline constexpr float kFlowMagic = 202021.25f;
// Components above this magnitude mark unknown flow.
inline constexpr float kUnknownFlow = 1e9f;

void write_flow(const std::filesystem::path& path, const Tensor& flow);  // (1, 2, H, W)
Tensor read_flow(const std::filesystem::path& path);                     // (1, 2, H, W) float32

// 1 where both components are known, else 0. (1, 1, H, W)
Tensor known_flow_mask(const Tensor& flow);

}  // namespace dce
