#include "dce/flow.hpp"

#include <cmath>
#include <vector>

#include "dce/autograd.hpp"
#include "dce/ops.hpp"
#include "dce/parallel.hpp"

namespace dce {

FlowField zero_flow(int64_t batch, int64_t h, int64_t w, Dtype dtype) {
  return {Tensor::zeros({batch, 2, h, w}, dtype), h, w};
}

void check_flow(const FlowField& flow, const char* op) {
  require(flow.values.defined() && flow.values.shape().c == 2, ErrorKind::kShape,
          std::string(op) + ": flow must have channel dimension 2");
  require(flow.frame_h > 0 && flow.frame_w > 0, ErrorKind::kValue, std::string(op) + ": flow frame must be positive");
}

namespace {

// Corner taps of one sampling position.
struct Taps {
  int64_t x0, y0;
  double fx, fy;
};

inline Taps taps_at(double x, double y) {
  const double xf = std::floor(x), yf = std::floor(y);
  return {static_cast<int64_t>(xf), static_cast<int64_t>(yf), x - xf, y - yf};
}

// Sum of weight * value over in-bounds corners with nonzero weight. The first
// contributing term seeds the accumulator, so integer positions reproduce the
// stored value bit-for-bit.
template <class T>
inline T sample(const T* plane, int64_t h, int64_t w, const Taps& tp) {
  const T fx = static_cast<T>(tp.fx), fy = static_cast<T>(tp.fy);
  const T wts[4] = {(T(1) - fx) * (T(1) - fy), fx * (T(1) - fy), (T(1) - fx) * fy, fx * fy};
  const int64_t xs[4] = {tp.x0, tp.x0 + 1, tp.x0, tp.x0 + 1};
  const int64_t ys[4] = {tp.y0, tp.y0, tp.y0 + 1, tp.y0 + 1};
  bool seeded = false;
  T acc = T(0);
  for (int k = 0; k < 4; ++k) {
    if (wts[k] == T(0) || xs[k] < 0 || xs[k] >= w || ys[k] < 0 || ys[k] >= h) continue;
    const T term = wts[k] * plane[ys[k] * w + xs[k]];
    if (seeded) {
      acc += term;
    } else {
      acc = term;
      seeded = true;
    }
  }
  return acc;
}

template <class T>
inline T value_or_zero(const T* plane, int64_t h, int64_t w, int64_t x, int64_t y) {
  return (x >= 0 && x < w && y >= 0 && y < h) ? plane[y * w + x] : T(0);
}

}  // namespace

double sample_bilinear(const Tensor& image, int64_t n, int64_t c, double x, double y, int64_t offset_x,
                       int64_t offset_y) {
  const Shape s = image.shape();
  require(n >= 0 && n < s.n && c >= 0 && c < s.c, ErrorKind::kShape, "sample_bilinear: plane index out of range");
  Taps tp = taps_at(x, y);
  tp.x0 += offset_x;
  tp.y0 += offset_y;
  return dispatch(image.dtype(), [&](auto zero) -> double {
    using T = decltype(zero);
    const T* plane = image.data<T>().data() + (n * s.c + c) * s.h * s.w;
    return static_cast<double>(sample(plane, s.h, s.w, tp));
  });
}

Tensor warp(const Tensor& feature, const FlowField& flow) {
  check_flow(flow, "warp");
  const Shape s = feature.shape();
  const Shape fs = flow.values.shape();
  require(fs.n == s.n, ErrorKind::kShape, "warp: batch dimension " + std::to_string(fs.n) + " vs " + std::to_string(s.n));
  require(fs.h == s.h && fs.w == s.w, ErrorKind::kShape,
          "warp: flow spatial dims " + fs.str() + " do not match feature " + s.str());
  require_same_dtype(feature, flow.values, "warp");
  const double rx = flow.ratio_x(), ry = flow.ratio_y();
  const int64_t plane = s.h * s.w;
  Tensor out = Tensor::zeros(s, feature.dtype());
  const Tensor fv = flow.values;

  dispatch(feature.dtype(), [&](auto zero) {
    using T = decltype(zero);
    const T* f = feature.data<T>().data();
    const T* w = fv.data<T>().data();
    T* y = out.mutable_data<T>().data();
    parallel_for(s.n, [&](int64_t n) {
      const T* u = w + n * 2 * plane;
      const T* v = u + plane;
      for (int64_t yy = 0; yy < s.h; ++yy) {
        for (int64_t xx = 0; xx < s.w; ++xx) {
          const int64_t i = yy * s.w + xx;
          const Taps tp = taps_at(static_cast<double>(xx) + u[i] / rx, static_cast<double>(yy) + v[i] / ry);
          for (int64_t c = 0; c < s.c; ++c) {
            y[(n * s.c + c) * plane + i] = sample(f + (n * s.c + c) * plane, s.h, s.w, tp);
          }
        }
      }
    });
  });

  if (auto* tape = recording_tape({&feature, &fv})) {
    out.set_requires_grad(true);
    tape->record([feature, fv, out, rx, ry]() mutable {
      if (!out.has_grad()) return;
      const Shape s = feature.shape();
      const int64_t plane = s.h * s.w;
      dispatch(feature.dtype(), [&](auto zero) {
        using T = decltype(zero);
        const T* f = feature.data<T>().data();
        const T* w = fv.data<T>().data();
        const T* g = out.grad_data<T>().data();
        T* df = feature.requires_grad() ? feature.grad_data<T>().data() : nullptr;
        T* dw = fv.requires_grad() ? fv.grad_data<T>().data() : nullptr;
        parallel_for(s.n, [&](int64_t n) {
          const T* u = w + n * 2 * plane;
          const T* v = u + plane;
          for (int64_t yy = 0; yy < s.h; ++yy) {
            for (int64_t xx = 0; xx < s.w; ++xx) {
              const int64_t i = yy * s.w + xx;
              const Taps tp = taps_at(static_cast<double>(xx) + u[i] / rx, static_cast<double>(yy) + v[i] / ry);
              const double wts[4] = {(1 - tp.fx) * (1 - tp.fy), tp.fx * (1 - tp.fy), (1 - tp.fx) * tp.fy, tp.fx * tp.fy};
              const int64_t xs[4] = {tp.x0, tp.x0 + 1, tp.x0, tp.x0 + 1};
              const int64_t ys[4] = {tp.y0, tp.y0, tp.y0 + 1, tp.y0 + 1};
              double gx = 0.0, gy = 0.0;
              for (int64_t c = 0; c < s.c; ++c) {
                const int64_t base = (n * s.c + c) * plane;
                const double go = g[base + i];
                if (go == 0.0) continue;
                if (df != nullptr) {
                  for (int k = 0; k < 4; ++k) {
                    if (xs[k] < 0 || xs[k] >= s.w || ys[k] < 0 || ys[k] >= s.h) continue;
                    df[base + ys[k] * s.w + xs[k]] += static_cast<T>(wts[k] * go);
                  }
                }
                if (dw != nullptr) {
                  const T* fp = f + base;
                  const double v00 = value_or_zero(fp, s.h, s.w, xs[0], ys[0]);
                  const double v10 = value_or_zero(fp, s.h, s.w, xs[1], ys[1]);
                  const double v01 = value_or_zero(fp, s.h, s.w, xs[2], ys[2]);
                  const double v11 = value_or_zero(fp, s.h, s.w, xs[3], ys[3]);
                  gx += go * ((1 - tp.fy) * (v10 - v00) + tp.fy * (v11 - v01));
                  gy += go * ((1 - tp.fx) * (v01 - v00) + tp.fx * (v11 - v10));
                }
              }
              if (dw != nullptr) {
                dw[n * 2 * plane + i] += static_cast<T>(gx / rx);
                dw[n * 2 * plane + plane + i] += static_cast<T>(gy / ry);
              }
            }
          }
        });
      });
    });
  }
  return out;
}

namespace {

// out = a_c * in + b_c(x, y): the affine per-axis maps between normalized
// coordinates and displacements. offset(c, x, y) supplies b.
template <class Offset>
Tensor affine_axes(const Tensor& in, const double (&scale)[2], Offset offset) {
  const Shape s = in.shape();
  const int64_t plane = s.h * s.w;
  Tensor out = Tensor::zeros(s, in.dtype());
  dispatch(in.dtype(), [&](auto zero) {
    using T = decltype(zero);
    const T* x = in.data<T>().data();
    T* y = out.mutable_data<T>().data();
    for (int64_t n = 0; n < s.n; ++n) {
      for (int64_t c = 0; c < 2; ++c) {
        const int64_t base = (n * 2 + c) * plane;
        for (int64_t yy = 0; yy < s.h; ++yy) {
          for (int64_t xx = 0; xx < s.w; ++xx) {
            const int64_t i = yy * s.w + xx;
            y[base + i] = static_cast<T>(scale[c] * x[base + i] + offset(c, xx, yy));
          }
        }
      }
    }
  });
  if (auto* tape = recording_tape({&in})) {
    out.set_requires_grad(true);
    const double a0 = scale[0], a1 = scale[1];
    tape->record([in, out, a0, a1]() mutable {
      if (!out.has_grad()) return;
      const Shape s = in.shape();
      const int64_t plane = s.h * s.w;
      dispatch(in.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto g = out.grad_data<T>();
        auto d = in.grad_data<T>();
        for (int64_t n = 0; n < s.n; ++n) {
          for (int64_t c = 0; c < 2; ++c) {
            const double a = c == 0 ? a0 : a1;
            const int64_t base = (n * 2 + c) * plane;
            for (int64_t i = 0; i < plane; ++i) d[base + i] += static_cast<T>(a * g[base + i]);
          }
        }
      });
    });
  }
  return out;
}

}  // namespace

FlowField map_to_flow(const CorrespondenceMap& map, int64_t level_h, int64_t level_w) {
  const Shape s = map.values.shape();
  require(s.c == 2, ErrorKind::kShape, "map_to_flow: channel dimension must be 2");
  require(s.h == level_h && s.w == level_w, ErrorKind::kShape,
          "map_to_flow: map spatial dims " + s.str() + " differ from level dims");
  // pixel = (norm + 1) * (size - 1) / 2, flow = pixel - identity.
  const double half[2] = {static_cast<double>(level_w - 1) / 2.0, static_cast<double>(level_h - 1) / 2.0};
  Tensor v = affine_axes(map.values, half, [&](int64_t c, int64_t x, int64_t y) {
    return c == 0 ? half[0] - static_cast<double>(x) : half[1] - static_cast<double>(y);
  });
  return {v, level_h, level_w};
}

CorrespondenceMap flow_to_map(const FlowField& flow) {
  check_flow(flow, "flow_to_map");
  const int64_t h = flow.level_h(), w = flow.level_w();
  // norm = 2 * (x + u / ratio) / (size - 1) - 1; a single-pixel axis maps to 0.
  const double kx = w > 1 ? 2.0 / static_cast<double>(w - 1) : 0.0;
  const double ky = h > 1 ? 2.0 / static_cast<double>(h - 1) : 0.0;
  const double scale[2] = {kx / flow.ratio_x(), ky / flow.ratio_y()};
  Tensor v = affine_axes(flow.values, scale, [&](int64_t c, int64_t x, int64_t y) {
    if (c == 0) return w > 1 ? kx * static_cast<double>(x) - 1.0 : 0.0;
    return h > 1 ? ky * static_cast<double>(y) - 1.0 : 0.0;
  });
  return {v};
}

FlowField upsample_flow(const FlowField& flow, int64_t out_h, int64_t out_w, double scale_x, double scale_y) {
  check_flow(flow, "upsample_flow");
  require(scale_x > 0.0 && scale_y > 0.0, ErrorKind::kValue, "upsample_flow: value scale factors must be positive");
  Tensor v = bilinear_resize(flow.values, out_h, out_w);
  if (scale_x != 1.0 || scale_y != 1.0) {
    const double f[2] = {scale_x, scale_y};
    v = scale_channels(v, f);
  }
  return {v, static_cast<int64_t>(std::llround(static_cast<double>(flow.frame_h) * scale_y)),
          static_cast<int64_t>(std::llround(static_cast<double>(flow.frame_w) * scale_x))};
}

FlowField downsample_gt(const FlowField& gt, int64_t target_h, int64_t target_w, bool rescale_values) {
  check_flow(gt, "downsample_gt");
  const int64_t h = gt.level_h(), w = gt.level_w();
  require(target_h >= 1 && target_w >= 1 && target_h <= h && target_w <= w, ErrorKind::kShape,
          "downsample_gt: target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
              " must not exceed source " + std::to_string(h) + "x" + std::to_string(w));
  Tensor v = bilinear_resize(gt.values, target_h, target_w);
  if (!rescale_values) return {v, gt.frame_h, gt.frame_w};
  const double f[2] = {static_cast<double>(target_w) / static_cast<double>(w),
                       static_cast<double>(target_h) / static_cast<double>(h)};
  v = scale_channels(v, f);
  return {v, static_cast<int64_t>(std::llround(static_cast<double>(gt.frame_h) * f[1])),
          static_cast<int64_t>(std::llround(static_cast<double>(gt.frame_w) * f[0]))};
}

}  // namespace dce
