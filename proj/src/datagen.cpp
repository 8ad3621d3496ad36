#include "dce/datagen.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "dce/flow_io.hpp"
#include "dce/image_io.hpp"
#include "dce/random.hpp"

namespace dce {

const char* to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::kAffine: return "affine";
    case TransformKind::kHomography: return "homography";
    case TransformKind::kTps: return "tps";
  }
  return "affine";
}

TransformKind parse_transform_kind(const std::string& name) {
  if (name == "affine") return TransformKind::kAffine;
  if (name == "homography") return TransformKind::kHomography;
  if (name == "tps") return TransformKind::kTps;
  fail(ErrorKind::kValue, "unknown transform kind '" + name + "'");
}

namespace {

double tps_kernel(double r2) { return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0; }  // r^2 log r

}  // namespace

std::array<double, 2> TransformSpec::apply(double x, double y) const {
  switch (kind) {
    case TransformKind::kAffine:
      return {affine[0] * x + affine[1] * y + affine[2], affine[3] * x + affine[4] * y + affine[5]};
    case TransformKind::kHomography: {
      const auto& h = homography;
      const double w = h[6] * x + h[7] * y + h[8];
      return {(h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w};
    }
    case TransformKind::kTps: {
      const double u = x / tps_scale, v = y / tps_scale;
      double sx = tps_ax[0] + tps_ax[1] * u + tps_ax[2] * v;
      double sy = tps_ay[0] + tps_ay[1] * u + tps_ay[2] * v;
      for (size_t i = 0; i < tps_control.size(); ++i) {
        const double du = u - tps_control[i][0] / tps_scale, dv = v - tps_control[i][1] / tps_scale;
        const double k = tps_kernel(du * du + dv * dv);
        sx += tps_wx[i] * k;
        sy += tps_wy[i] * k;
      }
      return {sx * tps_scale, sy * tps_scale};
    }
  }
  return {x, y};
}

TransformSpec TransformSpec::identity() { return {}; }

TransformSpec TransformSpec::translation(double dx, double dy) {
  TransformSpec t;
  t.affine = {1, 0, dx, 0, 1, dy};
  return t;
}

TransformSpec TransformSpec::from_homography(const std::array<double, 9>& h) {
  require(h[8] != 0.0, ErrorKind::kValue, "homography bottom-right entry must be nonzero");
  TransformSpec t;
  t.kind = TransformKind::kHomography;
  for (int i = 0; i < 9; ++i) t.homography[i] = h[i] / h[8];
  return t;
}

TransformSpec TransformSpec::fit_tps(const std::vector<std::array<double, 2>>& control,
                                     const std::vector<std::array<double, 2>>& target, double scale,
                                     double regularization) {
  require(control.size() == target.size() && control.size() >= 3, ErrorKind::kValue,
          "fit_tps: need at least 3 matching control points");
  require(scale > 0.0, ErrorKind::kValue, "fit_tps: scale must be positive");
  const auto k = static_cast<Eigen::Index>(control.size());
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(k + 3, k + 3);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(k + 3, 2);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double ui = control[i][0] / scale, vi = control[i][1] / scale;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double du = ui - control[j][0] / scale, dv = vi - control[j][1] / scale;
      l(i, j) = tps_kernel(du * du + dv * dv);
    }
    l(i, i) += regularization;
    l(i, k) = 1.0;
    l(i, k + 1) = ui;
    l(i, k + 2) = vi;
    l(k, i) = 1.0;
    l(k + 1, i) = ui;
    l(k + 2, i) = vi;
    rhs(i, 0) = target[i][0] / scale;
    rhs(i, 1) = target[i][1] / scale;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(l);
  require(lu.isInvertible(), ErrorKind::kNumeric, "fit_tps: singular kernel system");
  const Eigen::MatrixXd sol = lu.solve(rhs);
  TransformSpec t;
  t.kind = TransformKind::kTps;
  t.tps_control = control;
  t.tps_target = target;
  t.tps_scale = scale;
  t.tps_wx.resize(static_cast<size_t>(k));
  t.tps_wy.resize(static_cast<size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) {
    t.tps_wx[i] = sol(i, 0);
    t.tps_wy[i] = sol(i, 1);
  }
  t.tps_ax = {sol(k, 0), sol(k + 1, 0), sol(k + 2, 0)};
  t.tps_ay = {sol(k, 1), sol(k + 1, 1), sol(k + 2, 1)};
  return t;
}

void validate(const TransformConfig& c) {
  require(!c.kinds.empty(), ErrorKind::kValue, "transform config: at least one kind is required");
  require(c.rotation_deg >= 0 && c.shear >= 0 && c.translation >= 0 && c.corner_jitter >= 0 && c.tps_jitter >= 0,
          ErrorKind::kValue, "transform config: ranges must be non-negative");
  require(c.scale_min > 0 && c.scale_min <= c.scale_max, ErrorKind::kValue,
          "transform config: need 0 < scale_min <= scale_max");
  require(c.tps_grid >= 2, ErrorKind::kValue, "transform config: tps_grid must be >= 2");
  require(c.tps_regularization >= 0 && c.max_retries >= 1, ErrorKind::kValue,
          "transform config: tps_regularization >= 0 and max_retries >= 1 required");
}

namespace {

std::array<double, 9> solve_homography(const std::array<std::array<double, 2>, 4>& from,
                                       const std::array<std::array<double, 2>, 4>& to) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = from[i][0], y = from[i][1], xp = to[i][0], yp = to[i][1];
    a.row(2 * i) << x, y, 1, 0, 0, 0, -x * xp, -y * xp;
    a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -x * yp, -y * yp;
    b(2 * i) = xp;
    b(2 * i + 1) = yp;
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  require(lu.isInvertible(), ErrorKind::kNumeric, "degenerate homography correspondences");
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  return {h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0};
}

bool homography_ok(const std::array<double, 9>& h, int64_t height, int64_t width) {
  Eigen::Matrix3d m;
  m << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  if (!(std::abs(m.determinant()) > 1e-8)) return false;
  // The projective denominator must stay positive over the whole crop.
  for (double x : {0.0, static_cast<double>(width - 1)}) {
    for (double y : {0.0, static_cast<double>(height - 1)}) {
      if (!(h[6] * x + h[7] * y + h[8] > 1e-6)) return false;
    }
  }
  return true;
}

TransformSpec draw(Rng& rng, TransformKind kind, const TransformConfig& c, int64_t height, int64_t width) {
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  const double cx = (w - 1.0) / 2.0, cy = (h - 1.0) / 2.0;
  switch (kind) {
    case TransformKind::kAffine: {
      const double theta = rng.uniform(-c.rotation_deg, c.rotation_deg) * std::numbers::pi / 180.0;
      const double s = rng.uniform(c.scale_min, c.scale_max);
      const double sh = rng.uniform(-c.shear, c.shear);
      const double tx = rng.uniform(-c.translation, c.translation) * w;
      const double ty = rng.uniform(-c.translation, c.translation) * h;
      const double cs = std::cos(theta), sn = std::sin(theta);
      // s * R(theta) * [[1, sh], [0, 1]] about the crop center.
      const double m00 = s * cs, m01 = s * (cs * sh - sn), m10 = s * sn, m11 = s * (sn * sh + cs);
      TransformSpec t;
      t.kind = TransformKind::kAffine;
      t.affine = {m00, m01, cx - m00 * cx - m01 * cy + tx, m10, m11, cy - m10 * cx - m11 * cy + ty};
      return t;
    }
    case TransformKind::kHomography: {
      const std::array<std::array<double, 2>, 4> corners = {{{0, 0}, {w - 1, 0}, {w - 1, h - 1}, {0, h - 1}}};
      auto moved = corners;
      for (auto& p : moved) {
        p[0] += rng.uniform(-c.corner_jitter, c.corner_jitter) * w;
        p[1] += rng.uniform(-c.corner_jitter, c.corner_jitter) * h;
      }
      return TransformSpec::from_homography(solve_homography(corners, moved));
    }
    case TransformKind::kTps: {
      std::vector<std::array<double, 2>> control, target;
      for (int gy = 0; gy < c.tps_grid; ++gy) {
        for (int gx = 0; gx < c.tps_grid; ++gx) {
          const double px = (w - 1.0) * gx / (c.tps_grid - 1), py = (h - 1.0) * gy / (c.tps_grid - 1);
          control.push_back({px, py});
          target.push_back({px + rng.uniform(-c.tps_jitter, c.tps_jitter) * w,
                            py + rng.uniform(-c.tps_jitter, c.tps_jitter) * h});
        }
      }
      return TransformSpec::fit_tps(control, target, std::max(w, h), c.tps_regularization);
    }
  }
  return TransformSpec::identity();
}

}  // namespace

TransformSpec sample_transform(uint64_t seed, const TransformConfig& config, int64_t height, int64_t width) {
  validate(config);
  require(height >= 2 && width >= 2, ErrorKind::kValue, "sample_transform: extents must be >= 2");
  Rng rng(seed);
  const TransformKind kind = config.kinds[rng.below(config.kinds.size())];
  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    try {
      TransformSpec t = draw(rng, kind, config, height, width);
      if (t.kind == TransformKind::kHomography && !homography_ok(t.homography, height, width)) continue;
      if (t.kind == TransformKind::kAffine &&
          !(std::abs(t.affine[0] * t.affine[4] - t.affine[1] * t.affine[3]) > 1e-8)) {
        continue;
      }
      return t;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
    }
  }
  fail(ErrorKind::kNumeric, "sample_transform: no invertible draw after " + std::to_string(config.max_retries) + " tries");
}

FlowWithMask transform_to_flow(const TransformSpec& spec, int64_t height, int64_t width) {
  const int64_t plane = height * width;
  std::vector<float> flow(static_cast<size_t>(2 * plane));
  std::vector<float> mask(static_cast<size_t>(plane));
  for (int64_t y = 0; y < height; ++y) {
    for (int64_t x = 0; x < width; ++x) {
      const auto p = spec.apply(static_cast<double>(x), static_cast<double>(y));
      const auto u = static_cast<float>(p[0] - static_cast<double>(x));
      const auto v = static_cast<float>(p[1] - static_cast<double>(y));
      require(std::isfinite(u) && std::isfinite(v), ErrorKind::kNumeric, "transform_to_flow: non-finite mapping");
      flow[y * width + x] = u;
      flow[plane + y * width + x] = v;
      const double sx = static_cast<double>(x) + u, sy = static_cast<double>(y) + v;
      mask[y * width + x] = (sx >= 0.0 && sx <= static_cast<double>(width - 1) && sy >= 0.0 &&
                             sy <= static_cast<double>(height - 1))
                                ? 1.0f
                                : 0.0f;
    }
  }
  return {{Tensor::from({1, 2, height, width}, std::move(flow)), height, width},
          Tensor::from({1, 1, height, width}, std::move(mask))};
}

SamplePair render_pair(const Tensor& image, const TransformSpec& spec, int64_t crop) {
  const Shape s = image.shape();
  require(s.n == 1 && s.c == 3, ErrorKind::kShape, "render_pair: expected a (1,3,H,W) image, got " + s.str());
  require(crop >= 2 && s.h >= crop && s.w >= crop, ErrorKind::kValue,
          "render_pair: image " + std::to_string(s.h) + "x" + std::to_string(s.w) + " smaller than crop " +
              std::to_string(crop));
  const Tensor img = image.dtype() == Dtype::kF32 ? image : image.to(Dtype::kF32);
  const int64_t oy = (s.h - crop) / 2, ox = (s.w - crop) / 2;
  const int64_t plane = crop * crop;
  FlowWithMask fm = transform_to_flow(spec, crop, crop);
  auto src = img.data<float>();
  auto flow = fm.flow.values.data<float>();
  std::vector<float> source(static_cast<size_t>(3 * plane)), target(static_cast<size_t>(3 * plane));
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t y = 0; y < crop; ++y) {
      for (int64_t x = 0; x < crop; ++x) {
        source[c * plane + y * crop + x] = src[(c * s.h + y + oy) * s.w + x + ox];
        const double px = static_cast<double>(x) + flow[y * crop + x];
        const double py = static_cast<double>(y) + flow[plane + y * crop + x];
        target[c * plane + y * crop + x] = static_cast<float>(sample_bilinear(img, 0, c, px, py, ox, oy));
      }
    }
  }
  return {Tensor::from({1, 3, crop, crop}, std::move(source)), Tensor::from({1, 3, crop, crop}, std::move(target)),
          fm.flow, fm.mask, spec};
}

Tensor synthetic_image(uint64_t seed, int64_t height, int64_t width) {
  require(height >= 1 && width >= 1, ErrorKind::kValue, "synthetic_image: extents must be positive");
  Rng rng(seed);
  const int64_t plane = height * width;
  std::vector<double> img(static_cast<size_t>(3 * plane), 0.0);

  // Layered value noise with smoothstep interpolation.
  const int cells[] = {3, 6, 12, 24};
  const double amps[] = {0.35, 0.25, 0.18, 0.12};
  for (int o = 0; o < 4; ++o) {
    const int g = cells[o];
    std::vector<double> lattice(static_cast<size_t>(3 * (g + 1) * (g + 1)));
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);
    for (int64_t y = 0; y < height; ++y) {
      const double fy = static_cast<double>(y) * g / static_cast<double>(std::max<int64_t>(height - 1, 1));
      const int iy = std::min(static_cast<int>(fy), g - 1);
      double ty = fy - iy;
      ty = ty * ty * (3 - 2 * ty);
      for (int64_t x = 0; x < width; ++x) {
        const double fx = static_cast<double>(x) * g / static_cast<double>(std::max<int64_t>(width - 1, 1));
        const int ix = std::min(static_cast<int>(fx), g - 1);
        double tx = fx - ix;
        tx = tx * tx * (3 - 2 * tx);
        for (int c = 0; c < 3; ++c) {
          auto at = [&](int yy, int xx) { return lattice[(c * (g + 1) + yy) * (g + 1) + xx]; };
          const double top = at(iy, ix) * (1 - tx) + at(iy, ix + 1) * tx;
          const double bot = at(iy + 1, ix) * (1 - tx) + at(iy + 1, ix + 1) * tx;
          img[c * plane + y * width + x] += amps[o] * (top * (1 - ty) + bot * ty);
        }
      }
    }
  }
  for (auto& v : img) v += 0.5;

  // Soft-edged ellipses and rectangles with random colors.
  const double size = static_cast<double>(std::min(height, width));
  const int shapes = 12 + static_cast<int>(rng.below(12));
  for (int k = 0; k < shapes; ++k) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cx = rng.uniform(0, static_cast<double>(width)), cy = rng.uniform(0, static_cast<double>(height));
    const double rx = rng.uniform(0.03, 0.15) * size, ry = rng.uniform(0.03, 0.15) * size;
    const double ang = rng.uniform(0, std::numbers::pi);
    const double color[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
    const double ca = std::cos(ang), sa = std::sin(ang);
    for (int64_t y = 0; y < height; ++y) {
      for (int64_t x = 0; x < width; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const double u = (ca * dx + sa * dy) / rx, v = (-sa * dx + ca * dy) / ry;
        const double d = ellipse ? std::sqrt(u * u + v * v) : std::max(std::abs(u), std::abs(v));
        // About a 1.5-pixel soft edge.
        const double alpha = std::clamp((1.0 - d) * std::min(rx, ry) / 1.5, 0.0, 1.0);
        if (alpha <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          double& p = img[c * plane + y * width + x];
          p = (1 - alpha) * p + alpha * color[c];
        }
      }
    }
  }
  std::vector<float> out(img.size());
  for (size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
  return Tensor::from({1, 3, height, width}, std::move(out));
}

std::vector<SamplePair> generate_pairs(const std::vector<Tensor>& images, int64_t count, int64_t crop, uint64_t seed,
                                       const TransformConfig& config) {
  require(count == 0 || !images.empty(), ErrorKind::kValue, "generate_pairs: no source images");
  std::vector<SamplePair> pairs;
  pairs.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    const Tensor& image = images[static_cast<size_t>(i) % images.size()];
    const TransformSpec spec = sample_transform(derive_seed(seed, static_cast<uint64_t>(i)), config, crop, crop);
    pairs.push_back(render_pair(image, spec, crop));
  }
  return pairs;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ManifestRecord r;
    std::string kind;
    ss >> std::quoted(r.image) >> r.seed >> kind;
    require(!ss.fail(), ErrorKind::kFormat, path.string() + ":" + std::to_string(lineno) + ": malformed manifest record");
    r.kind = parse_transform_kind(kind);
    out.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write manifest " + path.string());
  for (const auto& r : records) out << std::quoted(r.image) << ' ' << r.seed << ' ' << to_string(r.kind) << '\n';
  require(out.good(), ErrorKind::kIo, "write failed for " + path.string());
}

std::string pair_file(int64_t index, const std::string& suffix) {
  std::ostringstream ss;
  ss << "pair_" << std::setw(5) << std::setfill('0') << index << '_' << suffix;
  return ss.str();
}

void write_dataset(const std::filesystem::path& dir, const std::vector<SamplePair>& pairs,
                   const std::vector<ManifestRecord>& records) {
  require(pairs.size() == records.size(), ErrorKind::kValue, "write_dataset: pair and record counts differ");
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < pairs.size(); ++i) {
    const auto idx = static_cast<int64_t>(i);
    write_image(dir / pair_file(idx, "source.ppm"), pairs[i].source);
    write_image(dir / pair_file(idx, "target.ppm"), pairs[i].target);
    write_flow(dir / pair_file(idx, "flow.flo"), pairs[i].gt_flow.values);
    write_mask(dir / pair_file(idx, "mask.pgm"), pairs[i].valid_mask);
  }
  write_manifest(dir / kManifestName, records);
}

std::vector<SamplePair> load_dataset(const std::filesystem::path& dir) {
  const auto records = read_manifest(dir / kManifestName);
  std::vector<SamplePair> pairs;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto idx = static_cast<int64_t>(i);
    SamplePair p;
    p.source = read_image(dir / pair_file(idx, "source.ppm"));
    p.target = read_image(dir / pair_file(idx, "target.ppm"));
    const Tensor flow = read_flow(dir / pair_file(idx, "flow.flo"));
    p.gt_flow = {flow, flow.shape().h, flow.shape().w};
    p.valid_mask = read_mask(dir / pair_file(idx, "mask.pgm"));
    p.spec.kind = records[i].kind;
    require(p.source.shape() == p.target.shape() && p.source.shape().h == flow.shape().h &&
                p.source.shape().w == flow.shape().w,
            ErrorKind::kFormat, "dataset pair " + std::to_string(i) + " has inconsistent extents");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace dce
