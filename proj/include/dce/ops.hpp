#pragma once

#include <span>
#include <vector>

#include "dce/tensor.hpp"

namespace dce {

// Differentiable tensor operations. Each op records a backward closure on the
// active GradientTape when one of its inputs requires grad.

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

// weight: (out_c, in_c, kh, kw). bias may be undefined or (1, out_c, 1, 1).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts = {});

// weight: (in_c, out_c, k, k); output extent (in - 1) * stride - 2 * padding + k.
// Adjoint of conv2d with the same weight tensor and geometry.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

struct RunningStats {
  Tensor mean;  // (1, C, 1, 1)
  Tensor var;   // (1, C, 1, 1), unbiased
  static RunningStats init(int64_t channels, Dtype dtype = Dtype::kF32);
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

// Per-channel normalization. Training mode normalizes with the batch
// statistics and updates `stats`; eval mode normalizes with `stats`.
Tensor batch_norm(const Tensor& input, const Tensor& scale, const Tensor& shift, RunningStats& stats, bool training,
                  BatchNormOptions opts = {});

Tensor relu(const Tensor& input);

Tensor concat_channels(const std::vector<Tensor>& tensors);
Tensor concat_batch(const std::vector<Tensor>& tensors);
Tensor slice_batch(const Tensor& input, int64_t start, int64_t count);

// Align-corners bilinear interpolation of every plane to out_h x out_w.
Tensor bilinear_resize(const Tensor& input, int64_t out_h, int64_t out_w);

// Divides each location's channel vector by max(eps, its Euclidean norm).
Tensor l2_normalize_channels(const Tensor& input, double eps = 1e-6);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, double factor);
// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
// Multiplies channel c by factors[c].
Tensor scale_channels(const Tensor& a, std::span<const double> factors);
// Sum of every element as a 1x1x1x1 tensor.
Tensor sum_all(const Tensor& a);

// sqrt(du^2 + dv^2 + smooth) per pixel of two 2-channel fields -> (N, 1, H, W).
Tensor endpoint_error_map(const Tensor& pred, const Tensor& target, double smooth = 1e-8);

}  // namespace dce
