#include "dce/correlation.hpp"

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

void check_pair(const Tensor& target, const Tensor& source, const char* op) {
  require(target.shape() == source.shape(), ErrorKind::kShape,
          std::string(op) + ": target " + target.shape().str() + " and source " + source.shape().str() + " differ");
  require_same_dtype(target, source, op);
}

}  // namespace

void global_correlation_into(const Tensor& target, const Tensor& source, Tensor& out) {
  check_pair(target, source, "global_correlation");
  const Shape s = target.shape();
  const int64_t plane = s.h * s.w;
  require(out.shape() == Shape{s.n, plane, s.h, s.w} && out.dtype() == target.dtype(), ErrorKind::kShape,
          "global_correlation: output tensor has the wrong shape or dtype");
  dispatch(target.dtype(), [&](auto zero) {
    using T = decltype(zero);
    const T* ft = target.data<T>().data();
    const T* fs = source.data<T>().data();
    T* y = out.mutable_data<T>().data();
    parallel_for(s.n, [&](int64_t n) {
      CMapR<T> t(ft + n * s.c * plane, s.c, plane);
      CMapR<T> src(fs + n * s.c * plane, s.c, plane);
      MapR<T>(y + n * plane * plane, plane, plane).noalias() = src.transpose() * t;
    });
  });
}

GlobalCostVolume global_correlation(const Tensor& target, const Tensor& source) {
  check_pair(target, source, "global_correlation");
  const Shape s = target.shape();
  const int64_t plane = s.h * s.w;
  Tensor out = Tensor::zeros({s.n, plane, s.h, s.w}, target.dtype());
  global_correlation_into(target, source, out);
  if (auto* tape = recording_tape({&target, &source})) {
    out.set_requires_grad(true);
    tape->record([target, source, out]() mutable {
      if (!out.has_grad()) return;
      const Shape s = target.shape();
      const int64_t plane = s.h * s.w;
      dispatch(target.dtype(), [&](auto zero) {
        using T = decltype(zero);
        const T* ft = target.data<T>().data();
        const T* fs = source.data<T>().data();
        const T* dy = out.grad_data<T>().data();
        T* dt = target.requires_grad() ? target.grad_data<T>().data() : nullptr;
        T* ds = source.requires_grad() ? source.grad_data<T>().data() : nullptr;
        parallel_for(s.n, [&](int64_t n) {
          CMapR<T> g(dy + n * plane * plane, plane, plane);
          if (dt != nullptr) {
            MapR<T>(dt + n * s.c * plane, s.c, plane).noalias() += CMapR<T>(fs + n * s.c * plane, s.c, plane) * g;
          }
          if (ds != nullptr) {
            MapR<T>(ds + n * s.c * plane, s.c, plane).noalias() +=
                CMapR<T>(ft + n * s.c * plane, s.c, plane) * g.transpose();
          }
        });
      });
    });
  }
  return {out, s.h, s.w};
}

LocalCostVolume local_correlation(const Tensor& target, const Tensor& source, int radius) {
  check_pair(target, source, "local_correlation");
  require(radius >= 1, ErrorKind::kValue, "local_correlation: radius must be >= 1");
  const Shape s = target.shape();
  const int64_t side = 2 * radius + 1;
  const int64_t plane = s.h * s.w;
  Tensor out = Tensor::zeros({s.n, side * side, s.h, s.w}, target.dtype());

  // For displacement (dx, dy), the valid target rows/cols whose source lies inside the image.
  struct Range {
    int64_t y0, y1, x0, x1;
  };
  auto valid = [s](int64_t dy, int64_t dx) {
    return Range{std::max<int64_t>(0, -dy), std::min(s.h, s.h - dy), std::max<int64_t>(0, -dx), std::min(s.w, s.w - dx)};
  };

  dispatch(target.dtype(), [&](auto zero) {
    using T = decltype(zero);
    const T* ft = target.data<T>().data();
    const T* fs = source.data<T>().data();
    T* y = out.mutable_data<T>().data();
    parallel_for(s.n, [&](int64_t n) {
      for (int64_t dy = -radius; dy <= radius; ++dy) {
        for (int64_t dx = -radius; dx <= radius; ++dx) {
          const Range r = valid(dy, dx);
          T* dst = y + (n * side * side + (dy + radius) * side + (dx + radius)) * plane;
          for (int64_t c = 0; c < s.c; ++c) {
            const T* t = ft + (n * s.c + c) * plane;
            const T* src = fs + (n * s.c + c) * plane;
            for (int64_t yy = r.y0; yy < r.y1; ++yy) {
              const T* trow = t + yy * s.w;
              const T* srow = src + (yy + dy) * s.w + dx;
              T* drow = dst + yy * s.w;
              for (int64_t xx = r.x0; xx < r.x1; ++xx) drow[xx] += trow[xx] * srow[xx];
            }
          }
        }
      }
    });
  });

  if (auto* tape = recording_tape({&target, &source})) {
    out.set_requires_grad(true);
    tape->record([target, source, out, radius, valid]() mutable {
      if (!out.has_grad()) return;
      const Shape s = target.shape();
      const int64_t side = 2 * radius + 1;
      const int64_t plane = s.h * s.w;
      dispatch(target.dtype(), [&](auto zero) {
        using T = decltype(zero);
        const T* ft = target.data<T>().data();
        const T* fs = source.data<T>().data();
        const T* g = out.grad_data<T>().data();
        T* dt = target.requires_grad() ? target.grad_data<T>().data() : nullptr;
        T* ds = source.requires_grad() ? source.grad_data<T>().data() : nullptr;
        parallel_for(s.n, [&](int64_t n) {
          for (int64_t dy = -radius; dy <= radius; ++dy) {
            for (int64_t dx = -radius; dx <= radius; ++dx) {
              const auto r = valid(dy, dx);
              const T* grow0 = g + (n * side * side + (dy + radius) * side + (dx + radius)) * plane;
              for (int64_t c = 0; c < s.c; ++c) {
                const int64_t base = (n * s.c + c) * plane;
                for (int64_t yy = r.y0; yy < r.y1; ++yy) {
                  const T* grow = grow0 + yy * s.w;
                  const int64_t trow = base + yy * s.w;
                  const int64_t srow = base + (yy + dy) * s.w + dx;
                  for (int64_t xx = r.x0; xx < r.x1; ++xx) {
                    if (dt != nullptr) dt[trow + xx] += grow[xx] * fs[srow + xx];
                    if (ds != nullptr) ds[srow + xx] += grow[xx] * ft[trow + xx];
                  }
                }
              }
            }
          }
        });
      });
    });
  }
  return {out, radius};
}

GlobalCostVolume normalize_cost_volume(const GlobalCostVolume& cost, CostNormOrder order) {
  Tensor v = order == CostNormOrder::kNormalizeThenRelu ? relu(l2_normalize_channels(cost.volume))
                                                        : l2_normalize_channels(relu(cost.volume));
  return {v, cost.source_h, cost.source_w};
}

GlobalCostVolume cyclic_consistency_filter(const GlobalCostVolume& cost) {
  const Tensor& in = cost.volume;
  const Shape s = in.shape();
  const int64_t rows = s.c;         // source locations
  const int64_t cols = s.h * s.w;   // target locations
  Tensor out = Tensor::zeros(s, in.dtype());
  // Row (per-source) and column (per-target) maxima with their arg positions.
  std::vector<double> row_max(static_cast<size_t>(s.n * rows)), col_max(static_cast<size_t>(s.n * cols));
  std::vector<int64_t> row_arg(row_max.size()), col_arg(col_max.size());

  dispatch(in.dtype(), [&](auto zero) {
    using T = decltype(zero);
    const T* c = in.data<T>().data();
    T* y = out.mutable_data<T>().data();
    for (int64_t i = 0; i < s.numel(); ++i) {
      require(c[i] >= T(0), ErrorKind::kValue, "cyclic_consistency_filter: volume has a negative entry");
    }
    for (int64_t n = 0; n < s.n; ++n) {
      const T* m = c + n * rows * cols;
      double* rmax = row_max.data() + n * rows;
      double* cmax = col_max.data() + n * cols;
      int64_t* rarg = row_arg.data() + n * rows;
      int64_t* carg = col_arg.data() + n * cols;
      for (int64_t t = 0; t < cols; ++t) {
        cmax[t] = -1.0;
        carg[t] = 0;
      }
      for (int64_t r = 0; r < rows; ++r) {
        rmax[r] = -1.0;
        rarg[r] = 0;
        for (int64_t t = 0; t < cols; ++t) {
          const double v = m[r * cols + t];
          if (v > rmax[r]) {
            rmax[r] = v;
            rarg[r] = t;
          }
          if (v > cmax[t]) {
            cmax[t] = v;
            carg[t] = r;
          }
        }
      }
      T* o = y + n * rows * cols;
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t t = 0; t < cols; ++t) {
          const double v = m[r * cols + t];
          const double rt = rmax[r] > 0.0 ? v / rmax[r] : 0.0;
          const double rs = cmax[t] > 0.0 ? v / cmax[t] : 0.0;
          o[r * cols + t] = static_cast<T>(rt * rs * v);
        }
      }
    }
  });

  if (auto* tape = recording_tape({&in})) {
    out.set_requires_grad(true);
    tape->record([in, out, row_max, col_max, row_arg, col_arg]() mutable {
      if (!out.has_grad()) return;
      const Shape s = in.shape();
      const int64_t rows = s.c;
      const int64_t cols = s.h * s.w;
      dispatch(in.dtype(), [&](auto zero) {
        using T = decltype(zero);
        const T* c = in.data<T>().data();
        const T* g = out.grad_data<T>().data();
        T* dc = in.grad_data<T>().data();
        for (int64_t n = 0; n < s.n; ++n) {
          const int64_t off = n * rows * cols;
          const double* rmax = row_max.data() + n * rows;
          const double* cmax = col_max.data() + n * cols;
          std::vector<double> d_rmax(static_cast<size_t>(rows), 0.0), d_cmax(static_cast<size_t>(cols), 0.0);
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t t = 0; t < cols; ++t) {
              if (rmax[r] <= 0.0 || cmax[t] <= 0.0) continue;
              const double v = c[off + r * cols + t];
              const double gv = g[off + r * cols + t];
              const double denom = rmax[r] * cmax[t];
              const double cube = v * v * v;
              dc[off + r * cols + t] += static_cast<T>(gv * 3.0 * v * v / denom);
              d_rmax[r] -= gv * cube / (rmax[r] * denom);
              d_cmax[t] -= gv * cube / (cmax[t] * denom);
            }
          }
          for (int64_t r = 0; r < rows; ++r) dc[off + r * cols + row_arg[n * rows + r]] += static_cast<T>(d_rmax[r]);
          for (int64_t t = 0; t < cols; ++t) dc[off + col_arg[n * cols + t] * cols + t] += static_cast<T>(d_cmax[t]);
        }
      });
    });
  }
  return {out, cost.source_h, cost.source_w};
}

int64_t global_correlation_macs(int64_t h, int64_t w, int64_t channels) { return (h * w) * (h * w) * channels; }

int64_t local_correlation_macs(int64_t h, int64_t w, int radius, int64_t channels) {
  const int64_t side = 2 * static_cast<int64_t>(radius) + 1;
  return h * w * side * side * channels;
}

}  // namespace dce
