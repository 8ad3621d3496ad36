#include "oracles.hpp"

#include <algorithm>
#include <cmath>

#include "dce/autograd.hpp"
#include "dce/ops.hpp"

namespace oracle {

using dce::Shape;

Tensor random_tensor(dce::Rng& rng, Shape shape, dce::Dtype dtype, double lo, double hi) {
  std::vector<double> v(static_cast<size_t>(shape.numel()));
  for (auto& x : v) x = rng.uniform(lo, hi);
  Tensor t = Tensor::from(shape, std::move(v));
  return dtype == dce::Dtype::kF64 ? t : t.to(dtype);
}

std::vector<double> global_correlation(const Tensor& target, const Tensor& source) {
  const Shape s = target.shape();
  const int64_t plane = s.h * s.w;
  std::vector<double> out(static_cast<size_t>(s.n * plane * plane), 0.0);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t ys = 0; ys < s.h; ++ys)
      for (int64_t xs = 0; xs < s.w; ++xs)
        for (int64_t y = 0; y < s.h; ++y)
          for (int64_t x = 0; x < s.w; ++x) {
            double acc = 0.0;
            for (int64_t c = 0; c < s.c; ++c) acc += target.at(n, c, y, x) * source.at(n, c, ys, xs);
            out[((n * plane + ys * s.w + xs) * s.h + y) * s.w + x] = acc;
          }
  return out;
}

std::vector<double> local_correlation(const Tensor& target, const Tensor& source, int radius) {
  const Shape s = target.shape();
  const int64_t side = 2 * radius + 1;
  std::vector<double> out(static_cast<size_t>(s.n * side * side * s.h * s.w), 0.0);
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t dy = -radius; dy <= radius; ++dy)
      for (int64_t dx = -radius; dx <= radius; ++dx)
        for (int64_t y = 0; y < s.h; ++y)
          for (int64_t x = 0; x < s.w; ++x) {
            const int64_t sy = y + dy, sx = x + dx;
            double acc = 0.0;
            if (sy >= 0 && sy < s.h && sx >= 0 && sx < s.w) {
              for (int64_t c = 0; c < s.c; ++c) acc += target.at(n, c, y, x) * source.at(n, c, sy, sx);
            }
            const int64_t k = (dy + radius) * side + dx + radius;
            out[((n * side * side + k) * s.h + y) * s.w + x] = acc;
          }
  return out;
}

std::vector<double> cyclic_filter(const Tensor& volume, int64_t hs, int64_t ws) {
  const Shape s = volume.shape();
  const int64_t src = hs * ws, tgt = s.h * s.w;
  const auto v = volume.to_vector();
  std::vector<double> out(v.size(), 0.0);
  for (int64_t n = 0; n < s.n; ++n) {
    auto at = [&](int64_t i, int64_t t) { return v[(n * src + i) * tgt + t]; };
    for (int64_t i = 0; i < src; ++i) {
      for (int64_t t = 0; t < tgt; ++t) {
        double row = 0.0, col = 0.0;
        for (int64_t t2 = 0; t2 < tgt; ++t2) row = std::max(row, at(i, t2));
        for (int64_t i2 = 0; i2 < src; ++i2) col = std::max(col, at(i2, t));
        const double c = at(i, t);
        const double r1 = row > 0.0 ? c / row : 0.0;
        const double r2 = col > 0.0 ? c / col : 0.0;
        out[(n * src + i) * tgt + t] = c * r1 * r2;
      }
    }
  }
  return out;
}

double bilinear(const Tensor& image, int64_t n, int64_t c, double x, double y) {
  const Shape s = image.shape();
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const auto xi = static_cast<int64_t>(fx) + dx, yi = static_cast<int64_t>(fy) + dy;
      const double wgt = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
      if (xi < 0 || yi < 0 || xi >= s.w || yi >= s.h) continue;
      acc += wgt * image.at(n, c, yi, xi);
    }
  }
  return acc;
}

double multi_scale_loss(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                        const std::vector<double>& alpha) {
  double total = 0.0;
  for (size_t l = 0; l < preds.size(); ++l) {
    const Shape s = preds[l].shape();
    double sum = 0.0;
    for (int64_t n = 0; n < s.n; ++n)
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t x = 0; x < s.w; ++x) {
          const double du = preds[l].at(n, 0, y, x) - gts[l].at(n, 0, y, x);
          const double dv = preds[l].at(n, 1, y, x) - gts[l].at(n, 1, y, x);
          sum += std::sqrt(du * du + dv * dv + 1e-8);
        }
    total += alpha[l] * sum / static_cast<double>(s.n);
  }
  return total;
}

double conv2d_at(const Tensor& in, const Tensor& w, int64_t n, int64_t o, int64_t y, int64_t x, int stride, int pad,
                 int dilation) {
  const Shape is = in.shape(), ws = w.shape();
  double acc = 0.0;
  for (int64_t c = 0; c < ws.c; ++c)
    for (int64_t ky = 0; ky < ws.h; ++ky)
      for (int64_t kx = 0; kx < ws.w; ++kx) {
        const int64_t iy = y * stride - pad + ky * dilation, ix = x * stride - pad + kx * dilation;
        if (iy < 0 || ix < 0 || iy >= is.h || ix >= is.w) continue;
        acc += in.at(n, c, iy, ix) * w.at(o, c, ky, kx);
      }
  return acc;
}

Counts dense_metrics(const std::vector<double>& pu, const std::vector<double>& pv, const std::vector<double>& gu,
                     const std::vector<double>& gv, const std::vector<int>& mask, double delta) {
  double sum = 0.0;
  int64_t n = 0, hit = 0, bad = 0;
  for (size_t i = 0; i < pu.size(); ++i) {
    if (!mask[i]) continue;
    const double e = std::hypot(pu[i] - gu[i], pv[i] - gv[i]);
    const double mag = std::hypot(gu[i], gv[i]);
    sum += e;
    ++n;
    if (e <= delta) ++hit;
    if (e >= 3.0 && e >= 0.05 * mag) ++bad;
  }
  return {sum / static_cast<double>(n), 100.0 * static_cast<double>(hit) / static_cast<double>(n),
          100.0 * static_cast<double>(bad) / static_cast<double>(n)};
}

namespace {

double projected(const Fn& f, const std::vector<Tensor>& inputs, const std::vector<double>& r) {
  const auto y = f(inputs).to_vector();
  double acc = 0.0;
  for (size_t i = 0; i < y.size(); ++i) acc += y[i] * r[i];
  return acc;
}

}  // namespace

double gradcheck(const Fn& f, const std::vector<Tensor>& inputs, dce::Rng& rng, double h) {
  const Tensor probe = f(inputs);
  std::vector<double> r(static_cast<size_t>(probe.numel()));
  for (auto& x : r) x = rng.normal();

  std::vector<Tensor> live = inputs;
  for (auto& t : live) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  dce::GradientTape tape;
  Tensor loss;
  {
    dce::TapeScope scope(tape);
    Tensor rt = Tensor::from(probe.shape(), std::vector<double>(r));
    loss = dce::sum_all(dce::mul(f(live), rt.to(probe.dtype())));
  }
  dce::backward(loss, tape);

  double worst = 0.0, scale = 1e-6;
  for (auto& t : live) {
    const auto analytic = t.grad().to_vector();
    t.set_requires_grad(false);
    auto data = t.mutable_data<double>();
    for (size_t k = 0; k < data.size(); ++k) {
      const double keep = data[k];
      data[k] = keep + h;
      const double up = projected(f, live, r);
      data[k] = keep - h;
      const double down = projected(f, live, r);
      data[k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[k] - numeric));
      scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric)});
    }
    t.clear_grad();
  }
  return worst / scale;
}

}  // namespace oracle
