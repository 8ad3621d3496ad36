#include "dce/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace dce {
namespace {

struct PixelError {
  double epe;
  double magnitude;  // |gt|
};

std::vector<PixelError> dense_errors(const FlowField& pred, const FlowField& gt, const Tensor& mask, const char* op) {
  check_flow(pred, op);
  check_flow(gt, op);
  const Shape ps = pred.values.shape(), gs = gt.values.shape();
  require(ps == gs, ErrorKind::kShape, std::string(op) + ": prediction " + ps.str() + " and ground truth " + gs.str() +
                                           " differ");
  require(pred.frame_h == gt.frame_h && pred.frame_w == gt.frame_w, ErrorKind::kShape,
          std::string(op) + ": prediction and ground truth frames differ");
  const int64_t plane = gs.h * gs.w;
  std::vector<double> m;
  if (mask.defined()) {
    require(mask.shape() == Shape{gs.n, 1, gs.h, gs.w}, ErrorKind::kShape,
            std::string(op) + ": mask " + mask.shape().str() + " does not match " + gs.str());
    m = mask.to_vector();
  }
  const auto p = pred.values.to_vector();
  const auto g = gt.values.to_vector();
  std::vector<PixelError> out;
  for (int64_t n = 0; n < gs.n; ++n) {
    for (int64_t i = 0; i < plane; ++i) {
      if (!m.empty() && m[n * plane + i] == 0.0) continue;
      const double gu = g[2 * n * plane + i], gv = g[(2 * n + 1) * plane + i];
      const double du = p[2 * n * plane + i] - gu, dv = p[(2 * n + 1) * plane + i] - gv;
      out.push_back({std::sqrt(du * du + dv * dv), std::sqrt(gu * gu + gv * gv)});
    }
  }
  require(!out.empty(), ErrorKind::kValue, std::string(op) + ": mask selects no pixels");
  return out;
}

double mean_epe(const std::vector<PixelError>& e) {
  double sum = 0.0;
  for (const auto& x : e) sum += x.epe;
  return sum / static_cast<double>(e.size());
}

double within(const std::vector<PixelError>& e, double delta) {
  int64_t hits = 0;
  for (const auto& x : e) hits += x.epe <= delta ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(e.size());
}

double outliers(const std::vector<PixelError>& e) {
  int64_t bad = 0;
  for (const auto& x : e) bad += (x.epe >= 3.0 && x.epe >= 0.05 * x.magnitude) ? 1 : 0;
  return 100.0 * static_cast<double>(bad) / static_cast<double>(e.size());
}

MetricReport summarize(const std::vector<PixelError>& e, const std::vector<double>& thresholds) {
  MetricReport r;
  r.aepe = mean_epe(e);
  for (double d : thresholds) {
    require(d > 0.0, ErrorKind::kValue, "pck threshold must be positive");
    r.pck[format_threshold(d)] = within(e, d);
  }
  r.f1_all = outliers(e);
  r.count = static_cast<int64_t>(e.size());
  return r;
}

}  // namespace

std::string format_threshold(double delta) {
  std::ostringstream ss;
  ss << delta;
  return ss.str();
}

double aepe(const FlowField& pred, const FlowField& gt, const Tensor& mask) {
  return mean_epe(dense_errors(pred, gt, mask, "aepe"));
}

double pck(const FlowField& pred, const FlowField& gt, const Tensor& mask, double delta) {
  require(delta > 0.0, ErrorKind::kValue, "pck: threshold must be positive");
  return within(dense_errors(pred, gt, mask, "pck"), delta);
}

double pck_relative(const FlowField& pred, const FlowField& gt, const Tensor& mask, double alpha, int64_t source_h,
                    int64_t source_w) {
  require(alpha > 0.0, ErrorKind::kValue, "pck_relative: alpha must be positive");
  require(source_h > 0 && source_w > 0, ErrorKind::kValue, "pck_relative: source extent must be positive");
  return pck(pred, gt, mask, alpha * static_cast<double>(std::max(source_h, source_w)));
}

double f1_all(const FlowField& pred, const FlowField& gt, const Tensor& mask) {
  return outliers(dense_errors(pred, gt, mask, "f1_all"));
}

MetricReport evaluate_dense(const FlowField& pred, const FlowField& gt, const Tensor& mask,
                            const std::vector<double>& thresholds) {
  return summarize(dense_errors(pred, gt, mask, "evaluate_dense"), thresholds);
}

MetricReport eval_sparse(const FlowField& pred, const std::vector<Correspondence>& points,
                         const std::vector<double>& thresholds) {
  check_flow(pred, "eval_sparse");
  require(!points.empty(), ErrorKind::kValue, "eval_sparse: no correspondences");
  const int64_t h = pred.level_h(), w = pred.level_w();
  std::vector<PixelError> e;
  for (const auto& c : points) {
    require(c.tx >= 0.0 && c.ty >= 0.0 && c.tx <= static_cast<double>(pred.frame_w - 1) &&
                c.ty <= static_cast<double>(pred.frame_h - 1),
            ErrorKind::kValue, "eval_sparse: target point outside the image");
    // Target coordinates in frame pixels -> grid pixels (align corners).
    const double gx = w > 1 && pred.frame_w > 1 ? c.tx * static_cast<double>(w - 1) / static_cast<double>(pred.frame_w - 1) : 0.0;
    const double gy = h > 1 && pred.frame_h > 1 ? c.ty * static_cast<double>(h - 1) / static_cast<double>(pred.frame_h - 1) : 0.0;
    const double u = sample_bilinear(pred.values, 0, 0, gx, gy);
    const double v = sample_bilinear(pred.values, 0, 1, gx, gy);
    const double gu = c.sx - c.tx, gv = c.sy - c.ty;
    const double du = u - gu, dv = v - gv;
    e.push_back({std::sqrt(du * du + dv * dv), std::sqrt(gu * gu + gv * gv)});
  }
  return summarize(e, thresholds);
}

std::vector<Correspondence> read_correspondences(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open " + path);
  std::vector<Correspondence> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Correspondence c;
    ss >> c.tx >> c.ty >> c.sx >> c.sy;
    require(!ss.fail(), ErrorKind::kFormat, path + ":" + std::to_string(lineno) + ": expected 'tx ty sx sy'");
    out.push_back(c);
  }
  return out;
}

std::string report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["aepe"] = r.aepe;
  nlohmann::ordered_json p = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.pck) p[k] = v;
  j["pck"] = p;
  j["f1_all"] = r.f1_all;
  j["count"] = r.count;
  return j.dump(2);
}

}  // namespace dce
