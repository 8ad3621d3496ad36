#include <Eigen/Core>

#include <vector>

#include "dce/autograd.hpp"
#include "dce/ops.hpp"
#include "dce/parallel.hpp"

namespace dce {
namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

// Geometry of a convolution over one image: (channels, in_h, in_w) -> (out_h, out_w).
struct Geometry {
  int64_t channels, in_h, in_w;
  int64_t kh, kw;
  int64_t stride, padding, dilation;
  int64_t out_h, out_w;

  int64_t rows() const { return channels * kh * kw; }
  int64_t cols() const { return out_h * out_w; }
};

template <class T>
void im2col(const T* image, const Geometry& g, T* col) {
  const int64_t cols = g.cols();
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.padding + i * g.dilation;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = image + (c * g.in_h + iy) * g.in_w;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.padding + j * g.dilation;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Accumulates col entries back onto image (image is not cleared).
template <class T>
void col2im(const T* col, const Geometry& g, T* image) {
  const int64_t cols = g.cols();
  for (int64_t c = 0; c < g.channels; ++c) {
    for (int64_t i = 0; i < g.kh; ++i) {
      for (int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * cols;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          const int64_t iy = oy * g.stride - g.padding + i * g.dilation;
          if (iy < 0 || iy >= g.in_h) continue;
          const T* src = row + oy * g.out_w;
          T* dst = image + (c * g.in_h + iy) * g.in_w;
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            const int64_t ix = ox * g.stride - g.padding + j * g.dilation;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Geometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.padding == 0;
}

void check_bias(const Tensor& bias, int64_t channels, const char* op) {
  if (!bias.defined()) return;
  require(bias.shape() == Shape{1, channels, 1, 1}, ErrorKind::kShape,
          std::string(op) + ": bias shape " + bias.shape().str() + " must be (1," + std::to_string(channels) + ",1,1)");
}

// Sums per-sample partial buffers in sample order into dst.
template <class T>
void reduce_partials(const std::vector<std::vector<T>>& partials, std::span<T> dst) {
  for (const auto& part : partials) {
    for (size_t i = 0; i < part.size(); ++i) dst[i] += part[i];
  }
}

template <class T>
void add_bias(T* out, const T* bias, int64_t channels, int64_t plane) {
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t p = 0; p < plane; ++p) out[c * plane + p] += bias[c];
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  require_same_dtype(input, weight, "conv2d");
  require(opts.stride >= 1 && opts.dilation >= 1 && opts.padding >= 0, ErrorKind::kValue,
          "conv2d: stride and dilation must be >= 1 and padding >= 0");
  require(xs.c == ws.c, ErrorKind::kShape,
          "conv2d: input channel dimension " + std::to_string(xs.c) + " does not match weight in_c " +
              std::to_string(ws.c));
  check_bias(bias, ws.n, "conv2d");
  if (bias.defined()) require_same_dtype(input, bias, "conv2d");

  Geometry g{xs.c, xs.h, xs.w, ws.h, ws.w, opts.stride, opts.padding, opts.dilation, 0, 0};
  const int64_t span_h = opts.dilation * (ws.h - 1) + 1;
  const int64_t span_w = opts.dilation * (ws.w - 1) + 1;
  require(xs.h + 2 * opts.padding >= span_h, ErrorKind::kShape,
          "conv2d: height dimension " + std::to_string(xs.h) + " too small for kernel");
  require(xs.w + 2 * opts.padding >= span_w, ErrorKind::kShape,
          "conv2d: width dimension " + std::to_string(xs.w) + " too small for kernel");
  g.out_h = (xs.h + 2 * opts.padding - span_h) / opts.stride + 1;
  g.out_w = (xs.w + 2 * opts.padding - span_w) / opts.stride + 1;
  const int64_t out_c = ws.n;
  const Shape ys{xs.n, out_c, g.out_h, g.out_w};

  Tensor out = Tensor::zeros(ys, input.dtype());
  dispatch(input.dtype(), [&](auto zero) {
    using T = decltype(zero);
    const T* x = input.data<T>().data();
    const T* b = bias.defined() ? bias.data<T>().data() : nullptr;
    T* y = out.mutable_data<T>().data();
    CMapR<T> wm(weight.data<T>().data(), out_c, g.rows());
    const bool pointwise = is_pointwise(g);
    parallel_for(xs.n, [&](int64_t n) {
      const T* xn = x + n * xs.c * xs.h * xs.w;
      MapR<T> yn(y + n * out_c * g.cols(), out_c, g.cols());
      if (pointwise) {
        yn.noalias() = wm * CMapR<T>(xn, g.rows(), g.cols());
      } else {
        std::vector<T> col(static_cast<size_t>(g.rows() * g.cols()));
        im2col(xn, g, col.data());
        yn.noalias() = wm * CMapR<T>(col.data(), g.rows(), g.cols());
      }
      if (b != nullptr) add_bias(yn.data(), b, out_c, g.cols());
    });
  });

  if (auto* tape = recording_tape({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record([input, weight, bias, out, g, out_c]() mutable {
      if (!out.has_grad()) return;
      const Shape xs = input.shape();
      dispatch(input.dtype(), [&](auto zero) {
        using T = decltype(zero);
        const T* dy = out.grad_data<T>().data();
        const T* x = input.data<T>().data();
        CMapR<T> wm(weight.data<T>().data(), out_c, g.rows());
        const bool pointwise = is_pointwise(g);
        const bool need_x = input.requires_grad();
        const bool need_w = weight.requires_grad();
        std::vector<std::vector<T>> w_partials(need_w ? static_cast<size_t>(xs.n) : 0);
        T* dx = need_x ? input.grad_data<T>().data() : nullptr;
        parallel_for(xs.n, [&](int64_t n) {
          CMapR<T> dyn(dy + n * out_c * g.cols(), out_c, g.cols());
          const T* xn = x + n * xs.c * xs.h * xs.w;
          if (need_x) {
            T* dxn = dx + n * xs.c * xs.h * xs.w;
            if (pointwise) {
              MapR<T>(dxn, g.rows(), g.cols()).noalias() += wm.transpose() * dyn;
            } else {
              std::vector<T> dcol(static_cast<size_t>(g.rows() * g.cols()));
              MapR<T>(dcol.data(), g.rows(), g.cols()).noalias() = wm.transpose() * dyn;
              col2im(dcol.data(), g, dxn);
            }
          }
          if (need_w) {
            auto& part = w_partials[static_cast<size_t>(n)];
            part.assign(static_cast<size_t>(out_c * g.rows()), T(0));
            MapR<T> dw(part.data(), out_c, g.rows());
            if (pointwise) {
              dw.noalias() = dyn * CMapR<T>(xn, g.rows(), g.cols()).transpose();
            } else {
              std::vector<T> col(static_cast<size_t>(g.rows() * g.cols()));
              im2col(xn, g, col.data());
              dw.noalias() = dyn * CMapR<T>(col.data(), g.rows(), g.cols()).transpose();
            }
          }
        });
        if (need_w) reduce_partials(w_partials, weight.grad_data<T>());
        if (bias.requires_grad()) {
          auto db = bias.grad_data<T>();
          for (int64_t n = 0; n < xs.n; ++n) {
            for (int64_t c = 0; c < out_c; ++c) {
              const T* row = dy + (n * out_c + c) * g.cols();
              T acc = 0;
              for (int64_t p = 0; p < g.cols(); ++p) acc += row[p];
              db[c] += acc;
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  require_same_dtype(input, weight, "conv_transpose2d");
  require(stride >= 1 && padding >= 0, ErrorKind::kValue, "conv_transpose2d: stride must be >= 1 and padding >= 0");
  require(xs.c == ws.n, ErrorKind::kShape,
          "conv_transpose2d: input channel dimension " + std::to_string(xs.c) + " does not match weight in_c " +
              std::to_string(ws.n));
  const int64_t out_c = ws.c;
  check_bias(bias, out_c, "conv_transpose2d");
  if (bias.defined()) require_same_dtype(input, bias, "conv_transpose2d");
  const int64_t out_h = (xs.h - 1) * stride - 2 * padding + ws.h;
  const int64_t out_w = (xs.w - 1) * stride - 2 * padding + ws.w;
  require(out_h >= 1 && out_w >= 1, ErrorKind::kShape, "conv_transpose2d: padding leaves an empty output");

  // The equivalent forward convolution maps the output image back to the input grid.
  const Geometry g{out_c, out_h, out_w, ws.h, ws.w, stride, padding, 1, xs.h, xs.w};
  const Shape ys{xs.n, out_c, out_h, out_w};
  const int64_t in_c = xs.c;

  Tensor out = Tensor::zeros(ys, input.dtype());
  dispatch(input.dtype(), [&](auto zero) {
    using T = decltype(zero);
    const T* x = input.data<T>().data();
    const T* b = bias.defined() ? bias.data<T>().data() : nullptr;
    T* y = out.mutable_data<T>().data();
    CMapR<T> wm(weight.data<T>().data(), in_c, g.rows());
    parallel_for(xs.n, [&](int64_t n) {
      std::vector<T> col(static_cast<size_t>(g.rows() * g.cols()));
      MapR<T>(col.data(), g.rows(), g.cols()).noalias() =
          wm.transpose() * CMapR<T>(x + n * in_c * g.cols(), in_c, g.cols());
      T* yn = y + n * out_c * out_h * out_w;
      col2im(col.data(), g, yn);
      if (b != nullptr) add_bias(yn, b, out_c, out_h * out_w);
    });
  });

  if (auto* tape = recording_tape({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record([input, weight, bias, out, g, in_c]() mutable {
      if (!out.has_grad()) return;
      const Shape xs = input.shape();
      const Shape ys = out.shape();
      dispatch(input.dtype(), [&](auto zero) {
        using T = decltype(zero);
        const T* dy = out.grad_data<T>().data();
        const T* x = input.data<T>().data();
        CMapR<T> wm(weight.data<T>().data(), in_c, g.rows());
        const bool need_x = input.requires_grad();
        const bool need_w = weight.requires_grad();
        std::vector<std::vector<T>> w_partials(need_w ? static_cast<size_t>(xs.n) : 0);
        T* dx = need_x ? input.grad_data<T>().data() : nullptr;
        parallel_for(xs.n, [&](int64_t n) {
          std::vector<T> dcol(static_cast<size_t>(g.rows() * g.cols()));
          im2col(dy + n * ys.c * ys.h * ys.w, g, dcol.data());
          CMapR<T> dcm(dcol.data(), g.rows(), g.cols());
          if (need_x) MapR<T>(dx + n * in_c * g.cols(), in_c, g.cols()).noalias() += wm * dcm;
          if (need_w) {
            auto& part = w_partials[static_cast<size_t>(n)];
            part.assign(static_cast<size_t>(in_c * g.rows()), T(0));
            MapR<T>(part.data(), in_c, g.rows()).noalias() =
                CMapR<T>(x + n * in_c * g.cols(), in_c, g.cols()) * dcm.transpose();
          }
        });
        if (need_w) reduce_partials(w_partials, weight.grad_data<T>());
        if (bias.requires_grad()) {
          auto db = bias.grad_data<T>();
          const int64_t plane = ys.h * ys.w;
          for (int64_t n = 0; n < ys.n; ++n) {
            for (int64_t c = 0; c < ys.c; ++c) {
              const T* row = dy + (n * ys.c + c) * plane;
              T acc = 0;
              for (int64_t p = 0; p < plane; ++p) acc += row[p];
              db[c] += acc;
            }
          }
        }
      });
    });
  }
  return out;
}

}  // namespace dce
