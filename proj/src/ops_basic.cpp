#include <cmath>
#include <vector>

#include "dce/autograd.hpp"
#include "dce/ops.hpp"

namespace dce {

RunningStats RunningStats::init(int64_t channels, Dtype dtype) {
  return {Tensor::zeros({1, channels, 1, 1}, dtype), Tensor::full({1, channels, 1, 1}, 1.0, dtype)};
}

// ---------------------------------------------------------------------------
// batch norm

Tensor batch_norm(const Tensor& input, const Tensor& scale, const Tensor& shift, RunningStats& stats, bool training,
                  BatchNormOptions opts) {
  const Shape s = input.shape();
  require(s.n > 0 && s.h * s.w > 0, ErrorKind::kShape, "batch_norm: empty batch " + s.str());
  require(scale.numel() == s.c && shift.numel() == s.c, ErrorKind::kShape,
          "batch_norm: scale/shift length must equal channel dimension " + std::to_string(s.c));
  require(stats.mean.numel() == s.c && stats.var.numel() == s.c, ErrorKind::kShape,
          "batch_norm: running stats do not match channel dimension " + std::to_string(s.c));
  require_same_dtype(input, scale, "batch_norm");
  require_same_dtype(input, shift, "batch_norm");

  const int64_t plane = s.h * s.w;
  const int64_t count = s.n * plane;
  Tensor out = Tensor::zeros(s, input.dtype());
  // Per-channel mean and 1/sqrt(var + eps) actually used for normalization.
  std::vector<double> mean(static_cast<size_t>(s.c)), inv_std(static_cast<size_t>(s.c));

  dispatch(input.dtype(), [&](auto zero) {
    using T = decltype(zero);
    const T* x = input.data<T>().data();
    const T* g = scale.data<T>().data();
    const T* b = shift.data<T>().data();
    T* y = out.mutable_data<T>().data();
    auto rm = stats.mean.mutable_data<T>();
    auto rv = stats.var.mutable_data<T>();
    for (int64_t c = 0; c < s.c; ++c) {
      double mu = 0.0, var = 0.0;
      if (training) {
        for (int64_t n = 0; n < s.n; ++n) {
          const T* p = x + (n * s.c + c) * plane;
          for (int64_t i = 0; i < plane; ++i) mu += p[i];
        }
        mu /= static_cast<double>(count);
        for (int64_t n = 0; n < s.n; ++n) {
          const T* p = x + (n * s.c + c) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            const double d = p[i] - mu;
            var += d * d;
          }
        }
        const double biased = var / static_cast<double>(count);
        const double unbiased = count > 1 ? var / static_cast<double>(count - 1) : biased;
        rm[c] = static_cast<T>((1.0 - opts.momentum) * rm[c] + opts.momentum * mu);
        rv[c] = static_cast<T>((1.0 - opts.momentum) * rv[c] + opts.momentum * unbiased);
        var = biased;
      } else {
        mu = rm[c];
        var = rv[c];
      }
      const double is = 1.0 / std::sqrt(var + opts.eps);
      mean[c] = mu;
      inv_std[c] = is;
      for (int64_t n = 0; n < s.n; ++n) {
        const T* p = x + (n * s.c + c) * plane;
        T* q = y + (n * s.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i) q[i] = static_cast<T>(g[c] * ((p[i] - mu) * is) + b[c]);
      }
    }
  });

  if (auto* tape = recording_tape({&input, &scale, &shift})) {
    out.set_requires_grad(true);
    tape->record([input, scale, shift, out, mean, inv_std, training]() mutable {
      if (!out.has_grad()) return;
      const Shape s = input.shape();
      const int64_t plane = s.h * s.w;
      const double count = static_cast<double>(s.n * plane);
      dispatch(input.dtype(), [&](auto zero) {
        using T = decltype(zero);
        const T* x = input.data<T>().data();
        const T* g = scale.data<T>().data();
        const T* dy = out.grad_data<T>().data();
        T* dx = input.requires_grad() ? input.grad_data<T>().data() : nullptr;
        T* dg = scale.requires_grad() ? scale.grad_data<T>().data() : nullptr;
        T* db = shift.requires_grad() ? shift.grad_data<T>().data() : nullptr;
        for (int64_t c = 0; c < s.c; ++c) {
          const double mu = mean[c], is = inv_std[c];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int64_t n = 0; n < s.n; ++n) {
            const T* p = x + (n * s.c + c) * plane;
            const T* q = dy + (n * s.c + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              sum_dy += q[i];
              sum_dy_xhat += q[i] * ((p[i] - mu) * is);
            }
          }
          if (dg != nullptr) dg[c] += static_cast<T>(sum_dy_xhat);
          if (db != nullptr) db[c] += static_cast<T>(sum_dy);
          if (dx == nullptr) continue;
          const double gc = g[c];
          for (int64_t n = 0; n < s.n; ++n) {
            const T* p = x + (n * s.c + c) * plane;
            const T* q = dy + (n * s.c + c) * plane;
            T* r = dx + (n * s.c + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              if (training) {
                const double xhat = (p[i] - mu) * is;
                r[i] += static_cast<T>(gc * is * (q[i] - sum_dy / count - xhat * sum_dy_xhat / count));
              } else {
                r[i] += static_cast<T>(gc * is * q[i]);
              }
            }
          }
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

Tensor relu(const Tensor& input) {
  Tensor out = Tensor::zeros(input.shape(), input.dtype());
  dispatch(input.dtype(), [&](auto zero) {
    using T = decltype(zero);
    auto x = input.data<T>();
    auto y = out.mutable_data<T>();
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  });
  if (auto* tape = recording_tape({&input})) {
    out.set_requires_grad(true);
    tape->record([input, out]() mutable {
      if (!out.has_grad()) return;
      dispatch(input.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto x = input.data<T>();
        auto dy = out.grad_data<T>();
        auto dx = input.grad_data<T>();
        for (size_t i = 0; i < x.size(); ++i) {
          if (x[i] > T(0)) dx[i] += dy[i];
        }
      });
    });
  }
  return out;
}

namespace {

Tensor binary(const Tensor& a, const Tensor& b, double sign_b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::kShape,
          std::string(op) + ": shape " + a.shape().str() + " vs " + b.shape().str());
  require_same_dtype(a, b, op);
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto zero) {
    using T = decltype(zero);
    auto x = a.data<T>();
    auto z = b.data<T>();
    auto y = out.mutable_data<T>();
    if (sign_b > 0) {
      for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] + z[i];
    } else {
      for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] - z[i];
    }
  });
  if (auto* tape = recording_tape({&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, sign_b]() mutable {
      if (!out.has_grad()) return;
      dispatch(a.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto dy = out.grad_data<T>();
        if (a.requires_grad()) {
          auto da = a.grad_data<T>();
          for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (b.requires_grad()) {
          auto db = b.grad_data<T>();
          const T sb = static_cast<T>(sign_b);
          for (size_t i = 0; i < dy.size(); ++i) db[i] += sb * dy[i];
        }
      });
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::kShape, "mul: shape " + a.shape().str() + " vs " + b.shape().str());
  require_same_dtype(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  dispatch(a.dtype(), [&](auto zero) {
    using T = decltype(zero);
    auto x = a.data<T>();
    auto z = b.data<T>();
    auto y = out.mutable_data<T>();
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] * z[i];
  });
  if (auto* tape = recording_tape({&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      dispatch(a.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto dy = out.grad_data<T>();
        auto x = a.data<T>();
        auto z = b.data<T>();
        if (a.requires_grad()) {
          auto da = a.grad_data<T>();
          for (size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * z[i];
        }
        if (b.requires_grad()) {
          auto db = b.grad_data<T>();
          for (size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * x[i];
        }
      });
    });
  }
  return out;
}

Tensor scale_channels(const Tensor& a, std::span<const double> factors) {
  const Shape s = a.shape();
  require(static_cast<int64_t>(factors.size()) == s.c, ErrorKind::kShape,
          "scale_channels: factor count must equal channel dimension " + std::to_string(s.c));
  std::vector<double> f(factors.begin(), factors.end());
  Tensor out = Tensor::zeros(s, a.dtype());
  const int64_t plane = s.h * s.w;
  dispatch(a.dtype(), [&](auto zero) {
    using T = decltype(zero);
    auto x = a.data<T>();
    auto y = out.mutable_data<T>();
    for (int64_t n = 0; n < s.n; ++n) {
      for (int64_t c = 0; c < s.c; ++c) {
        const T k = static_cast<T>(f[c]);
        const int64_t base = (n * s.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i) y[base + i] = x[base + i] * k;
      }
    }
  });
  if (auto* tape = recording_tape({&a})) {
    out.set_requires_grad(true);
    tape->record([a, out, f]() mutable {
      if (!out.has_grad()) return;
      const Shape s = a.shape();
      const int64_t plane = s.h * s.w;
      dispatch(a.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto dy = out.grad_data<T>();
        auto dx = a.grad_data<T>();
        for (int64_t n = 0; n < s.n; ++n) {
          for (int64_t c = 0; c < s.c; ++c) {
            const T k = static_cast<T>(f[c]);
            const int64_t base = (n * s.c + c) * plane;
            for (int64_t i = 0; i < plane; ++i) dx[base + i] += dy[base + i] * k;
          }
        }
      });
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, double factor) {
  std::vector<double> f(static_cast<size_t>(a.shape().c), factor);
  return scale_channels(a, f);
}

Tensor sum_all(const Tensor& a) {
  Tensor out = Tensor::zeros({1, 1, 1, 1}, a.dtype());
  dispatch(a.dtype(), [&](auto zero) {
    using T = decltype(zero);
    double acc = 0.0;
    for (T v : a.data<T>()) acc += v;
    out.mutable_data<T>()[0] = static_cast<T>(acc);
  });
  if (auto* tape = recording_tape({&a})) {
    out.set_requires_grad(true);
    tape->record([a, out]() mutable {
      if (!out.has_grad()) return;
      dispatch(a.dtype(), [&](auto zero) {
        using T = decltype(zero);
        const T g = out.grad_data<T>()[0];
        for (T& v : a.grad_data<T>()) v += g;
      });
    });
  }
  return out;
}

Tensor endpoint_error_map(const Tensor& pred, const Tensor& target, double smooth) {
  const Shape s = pred.shape();
  require(s == target.shape(), ErrorKind::kShape,
          "endpoint_error_map: shape " + s.str() + " vs " + target.shape().str());
  require(s.c == 2, ErrorKind::kShape, "endpoint_error_map: channel dimension must be 2, got " + std::to_string(s.c));
  require_same_dtype(pred, target, "endpoint_error_map");
  const int64_t plane = s.h * s.w;
  Tensor out = Tensor::zeros({s.n, 1, s.h, s.w}, pred.dtype());
  dispatch(pred.dtype(), [&](auto zero) {
    using T = decltype(zero);
    auto p = pred.data<T>();
    auto t = target.data<T>();
    auto y = out.mutable_data<T>();
    for (int64_t n = 0; n < s.n; ++n) {
      for (int64_t i = 0; i < plane; ++i) {
        const double du = p[(n * 2) * plane + i] - t[(n * 2) * plane + i];
        const double dv = p[(n * 2 + 1) * plane + i] - t[(n * 2 + 1) * plane + i];
        y[n * plane + i] = static_cast<T>(std::sqrt(du * du + dv * dv + smooth));
      }
    }
  });
  if (auto* tape = recording_tape({&pred, &target})) {
    out.set_requires_grad(true);
    tape->record([pred, target, out]() mutable {
      if (!out.has_grad()) return;
      const Shape s = pred.shape();
      const int64_t plane = s.h * s.w;
      dispatch(pred.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto p = pred.data<T>();
        auto t = target.data<T>();
        auto y = out.data<T>();
        auto dy = out.grad_data<T>();
        T* dp = pred.requires_grad() ? pred.grad_data<T>().data() : nullptr;
        T* dt = target.requires_grad() ? target.grad_data<T>().data() : nullptr;
        for (int64_t n = 0; n < s.n; ++n) {
          for (int64_t i = 0; i < plane; ++i) {
            const int64_t iu = (n * 2) * plane + i, iv = (n * 2 + 1) * plane + i;
            const double g = dy[n * plane + i] / static_cast<double>(y[n * plane + i]);
            const double gu = g * (p[iu] - t[iu]);
            const double gv = g * (p[iv] - t[iv]);
            if (dp != nullptr) {
              dp[iu] += static_cast<T>(gu);
              dp[iv] += static_cast<T>(gv);
            }
            if (dt != nullptr) {
              dt[iu] -= static_cast<T>(gu);
              dt[iv] -= static_cast<T>(gv);
            }
          }
        }
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layout

Tensor concat_channels(const std::vector<Tensor>& tensors) {
  require(!tensors.empty(), ErrorKind::kValue, "concat_channels: empty input list");
  const Shape first = tensors.front().shape();
  int64_t channels = 0;
  for (const auto& t : tensors) {
    const Shape s = t.shape();
    require(s.n == first.n, ErrorKind::kShape, "concat_channels: batch dimension mismatch " + s.str() + " vs " + first.str());
    require(s.h == first.h && s.w == first.w, ErrorKind::kShape,
            "concat_channels: spatial dimension mismatch " + s.str() + " vs " + first.str());
    require_same_dtype(t, tensors.front(), "concat_channels");
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  const int64_t plane = first.h * first.w;
  Tensor out = Tensor::zeros(os, tensors.front().dtype());
  dispatch(out.dtype(), [&](auto zero) {
    using T = decltype(zero);
    auto y = out.mutable_data<T>();
    for (int64_t n = 0; n < os.n; ++n) {
      int64_t offset = 0;
      for (const auto& t : tensors) {
        const int64_t block = t.shape().c * plane;
        auto x = t.data<T>();
        std::copy(x.begin() + n * block, x.begin() + (n + 1) * block, y.begin() + (n * os.c + offset) * plane);
        offset += t.shape().c;
      }
    }
  });
  GradientTape* tape = nullptr;
  for (const auto& t : tensors) {
    if (auto* tp = recording_tape({&t})) tape = tp;
  }
  if (tape != nullptr) {
    out.set_requires_grad(true);
    tape->record([tensors, out]() mutable {
      if (!out.has_grad()) return;
      const Shape os = out.shape();
      const int64_t plane = os.h * os.w;
      dispatch(out.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto dy = out.grad_data<T>();
        int64_t offset = 0;
        for (auto& t : tensors) {
          const int64_t block = t.shape().c * plane;
          if (t.requires_grad()) {
            auto dx = t.grad_data<T>();
            for (int64_t n = 0; n < os.n; ++n) {
              const T* src = dy.data() + (n * os.c + offset) * plane;
              T* dst = dx.data() + n * block;
              for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          offset += t.shape().c;
        }
      });
    });
  }
  return out;
}

Tensor concat_batch(const std::vector<Tensor>& tensors) {
  require(!tensors.empty(), ErrorKind::kValue, "concat_batch: empty input list");
  const Shape first = tensors.front().shape();
  int64_t batch = 0;
  for (const auto& t : tensors) {
    const Shape s = t.shape();
    require(s.c == first.c && s.h == first.h && s.w == first.w, ErrorKind::kShape,
            "concat_batch: shape mismatch " + s.str() + " vs " + first.str());
    require_same_dtype(t, tensors.front(), "concat_batch");
    batch += s.n;
  }
  Tensor out = Tensor::zeros({batch, first.c, first.h, first.w}, tensors.front().dtype());
  dispatch(out.dtype(), [&](auto zero) {
    using T = decltype(zero);
    auto y = out.mutable_data<T>();
    size_t offset = 0;
    for (const auto& t : tensors) {
      auto x = t.data<T>();
      std::copy(x.begin(), x.end(), y.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += x.size();
    }
  });
  GradientTape* tape = nullptr;
  for (const auto& t : tensors) {
    if (auto* tp = recording_tape({&t})) tape = tp;
  }
  if (tape != nullptr) {
    out.set_requires_grad(true);
    tape->record([tensors, out]() mutable {
      if (!out.has_grad()) return;
      dispatch(out.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto dy = out.grad_data<T>();
        size_t offset = 0;
        for (auto& t : tensors) {
          const auto count = static_cast<size_t>(t.numel());
          if (t.requires_grad()) {
            auto dx = t.grad_data<T>();
            for (size_t i = 0; i < count; ++i) dx[i] += dy[offset + i];
          }
          offset += count;
        }
      });
    });
  }
  return out;
}

Tensor slice_batch(const Tensor& input, int64_t start, int64_t count) {
  const Shape s = input.shape();
  require(start >= 0 && count >= 0 && start + count <= s.n, ErrorKind::kShape,
          "slice_batch: range [" + std::to_string(start) + "," + std::to_string(start + count) +
              ") exceeds batch dimension " + std::to_string(s.n));
  const int64_t block = s.c * s.h * s.w;
  Tensor out = Tensor::zeros({count, s.c, s.h, s.w}, input.dtype());
  dispatch(input.dtype(), [&](auto zero) {
    using T = decltype(zero);
    auto x = input.data<T>();
    std::copy(x.begin() + start * block, x.begin() + (start + count) * block, out.mutable_data<T>().begin());
  });
  if (auto* tape = recording_tape({&input})) {
    out.set_requires_grad(true);
    tape->record([input, out, start, block]() mutable {
      if (!out.has_grad()) return;
      dispatch(input.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto dy = out.grad_data<T>();
        auto dx = input.grad_data<T>();
        for (size_t i = 0; i < dy.size(); ++i) dx[static_cast<size_t>(start * block) + i] += dy[i];
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// resampling

namespace {

struct AxisTaps {
  std::vector<int64_t> lo, hi;
  std::vector<double> frac;
};

// Align-corners source positions for each output index along one axis.
AxisTaps axis_taps(int64_t in, int64_t out) {
  AxisTaps taps;
  taps.lo.resize(static_cast<size_t>(out));
  taps.hi.resize(static_cast<size_t>(out));
  taps.frac.resize(static_cast<size_t>(out));
  const double step = out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  for (int64_t i = 0; i < out; ++i) {
    const double pos = static_cast<double>(i) * step;
    int64_t lo = static_cast<int64_t>(std::floor(pos));
    lo = std::min(std::max<int64_t>(lo, 0), in - 1);
    const double frac = std::min(std::max(pos - static_cast<double>(lo), 0.0), 1.0);
    taps.lo[i] = lo;
    taps.hi[i] = std::min(lo + 1, in - 1);
    taps.frac[i] = frac;
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& input, int64_t out_h, int64_t out_w) {
  const Shape s = input.shape();
  require(out_h >= 1 && out_w >= 1, ErrorKind::kValue, "bilinear_resize: output extents must be >= 1");
  require(s.h >= 1 && s.w >= 1, ErrorKind::kShape, "bilinear_resize: empty input " + s.str());
  const Shape os{s.n, s.c, out_h, out_w};
  const bool same = out_h == s.h && out_w == s.w;
  Tensor out = same ? input.clone() : Tensor::zeros(os, input.dtype());
  const AxisTaps ty = axis_taps(s.h, out_h);
  const AxisTaps tx = axis_taps(s.w, out_w);
  if (!same) {
    dispatch(input.dtype(), [&](auto zero) {
      using T = decltype(zero);
      auto x = input.data<T>();
      auto y = out.mutable_data<T>();
      for (int64_t p = 0; p < s.n * s.c; ++p) {
        const T* src = x.data() + p * s.h * s.w;
        T* dst = y.data() + p * out_h * out_w;
        for (int64_t oy = 0; oy < out_h; ++oy) {
          const T fy = static_cast<T>(ty.frac[oy]);
          const T* r0 = src + ty.lo[oy] * s.w;
          const T* r1 = src + ty.hi[oy] * s.w;
          for (int64_t ox = 0; ox < out_w; ++ox) {
            const T fx = static_cast<T>(tx.frac[ox]);
            const int64_t x0 = tx.lo[ox], x1 = tx.hi[ox];
            const T top = (T(1) - fx) * r0[x0] + fx * r0[x1];
            const T bottom = (T(1) - fx) * r1[x0] + fx * r1[x1];
            dst[oy * out_w + ox] = (T(1) - fy) * top + fy * bottom;
          }
        }
      }
    });
  }
  if (auto* tape = recording_tape({&input})) {
    out.set_requires_grad(true);
    tape->record([input, out, ty, tx]() mutable {
      if (!out.has_grad()) return;
      const Shape s = input.shape();
      const Shape os = out.shape();
      dispatch(input.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto dy = out.grad_data<T>();
        auto dx = input.grad_data<T>();
        for (int64_t p = 0; p < s.n * s.c; ++p) {
          const T* src = dy.data() + p * os.h * os.w;
          T* dst = dx.data() + p * s.h * s.w;
          for (int64_t oy = 0; oy < os.h; ++oy) {
            const T fy = static_cast<T>(ty.frac[oy]);
            T* r0 = dst + ty.lo[oy] * s.w;
            T* r1 = dst + ty.hi[oy] * s.w;
            for (int64_t ox = 0; ox < os.w; ++ox) {
              const T fx = static_cast<T>(tx.frac[ox]);
              const T g = src[oy * os.w + ox];
              const int64_t x0 = tx.lo[ox], x1 = tx.hi[ox];
              r0[x0] += (T(1) - fy) * (T(1) - fx) * g;
              r0[x1] += (T(1) - fy) * fx * g;
              r1[x0] += fy * (T(1) - fx) * g;
              r1[x1] += fy * fx * g;
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor l2_normalize_channels(const Tensor& input, double eps) {
  require(eps > 0.0, ErrorKind::kValue, "l2_normalize_channels: eps must be positive");
  const Shape s = input.shape();
  const int64_t plane = s.h * s.w;
  Tensor out = Tensor::zeros(s, input.dtype());
  std::vector<double> norms(static_cast<size_t>(s.n * plane));
  dispatch(input.dtype(), [&](auto zero) {
    using T = decltype(zero);
    auto x = input.data<T>();
    auto y = out.mutable_data<T>();
    for (int64_t n = 0; n < s.n; ++n) {
      const T* xn = x.data() + n * s.c * plane;
      T* yn = y.data() + n * s.c * plane;
      for (int64_t i = 0; i < plane; ++i) {
        double sq = 0.0;
        for (int64_t c = 0; c < s.c; ++c) sq += static_cast<double>(xn[c * plane + i]) * xn[c * plane + i];
        const double norm = std::sqrt(sq);
        norms[n * plane + i] = norm;
        const double d = std::max(eps, norm);
        for (int64_t c = 0; c < s.c; ++c) yn[c * plane + i] = static_cast<T>(xn[c * plane + i] / d);
      }
    }
  });
  if (auto* tape = recording_tape({&input})) {
    out.set_requires_grad(true);
    tape->record([input, out, norms, eps]() mutable {
      if (!out.has_grad()) return;
      const Shape s = input.shape();
      const int64_t plane = s.h * s.w;
      dispatch(input.dtype(), [&](auto zero) {
        using T = decltype(zero);
        auto y = out.data<T>();
        auto dy = out.grad_data<T>();
        auto dx = input.grad_data<T>();
        for (int64_t n = 0; n < s.n; ++n) {
          const int64_t base = n * s.c * plane;
          for (int64_t i = 0; i < plane; ++i) {
            const double norm = norms[n * plane + i];
            if (norm > eps) {
              double dot = 0.0;
              for (int64_t c = 0; c < s.c; ++c) dot += static_cast<double>(y[base + c * plane + i]) * dy[base + c * plane + i];
              for (int64_t c = 0; c < s.c; ++c) {
                const int64_t k = base + c * plane + i;
                dx[k] += static_cast<T>((dy[k] - y[k] * dot) / norm);
              }
            } else {
              for (int64_t c = 0; c < s.c; ++c) {
                const int64_t k = base + c * plane + i;
                dx[k] += static_cast<T>(dy[k] / eps);
              }
            }
          }
        }
      });
    });
  }
  return out;
}

}  // namespace dce
