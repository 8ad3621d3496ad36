#pragma once

#include <cstdint>

#include "dce/tensor.hpp"

namespace dce {

// Per-pixel displacement (channel 0 horizontal, channel 1 vertical) from a
// target location to its match in the source image. Values are pixels of the
// declared frame, which may be finer than the field's own grid: a field at
// 16x16 in a 256x256 frame stores displacements in 256-pixel units.
struct FlowField {
  Tensor values;  // (N, 2, H_l, W_l)
  int64_t frame_h = 0;
  int64_t frame_w = 0;

  int64_t level_h() const { return values.shape().h; }
  int64_t level_w() const { return values.shape().w; }
  // Frame pixels per level pixel along each axis.
  double ratio_x() const { return static_cast<double>(frame_w) / static_cast<double>(level_w()); }
  double ratio_y() const { return static_cast<double>(frame_h) / static_cast<double>(level_h()); }
};

// Matched coordinates normalized to [-1, 1] (align-corners: -1 and +1 are the
// centers of the border pixels). Values may leave the interval for
// out-of-view matches.
struct CorrespondenceMap {
  Tensor values;  // (N, 2, H_l, W_l)
};

FlowField zero_flow(int64_t batch, int64_t h, int64_t w, Dtype dtype = Dtype::kF32);
void check_flow(const FlowField& flow, const char* op);

// out(x) = feature(x + w(x)), align-corners bilinear sampling, zero outside.
// Flow values are converted from frame to feature pixels first.
Tensor warp(const Tensor& feature, const FlowField& flow);

FlowField map_to_flow(const CorrespondenceMap& map, int64_t level_h, int64_t level_w);
CorrespondenceMap flow_to_map(const FlowField& flow);

// Bilinear resize, then values multiplied per axis. The frame scales with the
// values, so value_scale (1, 1) keeps it.
FlowField upsample_flow(const FlowField& flow, int64_t out_h, int64_t out_w, double scale_x, double scale_y);

// Bilinear downsample. With rescale_values the displacements are scaled by
// (target_w / W, target_h / H) and the frame becomes the target grid.
FlowField downsample_gt(const FlowField& gt, int64_t target_h, int64_t target_w, bool rescale_values);

// Align-corners bilinear sample of plane (n, c) at continuous (x, y); corners
// outside the image contribute zero. The offsets shift the integer corner
// indices only, so interpolation weights match an unshifted sample exactly.
double sample_bilinear(const Tensor& image, int64_t n, int64_t c, double x, double y, int64_t offset_x = 0,
                       int64_t offset_y = 0);

}  // namespace dce
