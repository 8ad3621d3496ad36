#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dce/flow.hpp"

namespace dce {

// Dense metrics over (N, 2, H, W) fields in the same frame. `mask` is
// (N, 1, H, W), nonzero = evaluated; an undefined mask selects every pixel.
double aepe(const FlowField& pred, const FlowField& gt, const Tensor& mask = {});
// Percentage of evaluated pixels with EPE <= delta.
double pck(const FlowField& pred, const FlowField& gt, const Tensor& mask, double delta);
// pck with delta = alpha * max(source_h, source_w).
double pck_relative(const FlowField& pred, const FlowField& gt, const Tensor& mask, double alpha, int64_t source_h,
                    int64_t source_w);
// Percentage of outliers: EPE >= 3 px and EPE >= 5% of the GT magnitude.
double f1_all(const FlowField& pred, const FlowField& gt, const Tensor& mask = {});

struct MetricReport {
  double aepe = 0.0;
  std::map<std::string, double> pck;  // threshold label -> percentage
  double f1_all = 0.0;
  int64_t count = 0;
};

MetricReport evaluate_dense(const FlowField& pred, const FlowField& gt, const Tensor& mask = {},
                            const std::vector<double>& thresholds = {1.0, 5.0});

// Target point (tx, ty) matches source point (sx, sy), in pixels.
struct Correspondence {
  double tx = 0.0;
  double ty = 0.0;
  double sx = 0.0;
  double sy = 0.0;
};

// Samples pred (batch item 0) bilinearly at each target point and compares
// x + w(x) to the source point.
MetricReport eval_sparse(const FlowField& pred, const std::vector<Correspondence>& points,
                         const std::vector<double>& thresholds = {1.0, 5.0});

std::vector<Correspondence> read_correspondences(const std::string& path);

std::string report_to_json(const MetricReport& report);

std::string format_threshold(double delta);

}  // namespace dce
